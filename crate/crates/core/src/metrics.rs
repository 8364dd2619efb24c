//! Representation quality measures: silhouette scores, latent grids and
//! code-conditional sample diversity.

use crate::analytic::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::ScoreModel;
use crate::numcore::Tensor;
use crate::objectives::TimeWeighting;
use crate::rng::Rng;
use crate::scalar::Real;
use crate::sde::{reverse_sample, SdeConfig};
use crate::train::{train, TrainSpec, Trained};

#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteReport<T> {
    pub mean_score: T,
    pub per_point: Vec<T>,
    pub n_clusters: usize,
}

fn euclid<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt()
}

/// Silhouette coefficients under Euclidean distance. Points in singleton
/// clusters score 0, as do points with `a = b = 0`.
pub fn silhouette<T: Real>(points: &Tensor<T>, labels: &[usize]) -> Result<SilhouetteReport<T>> {
    let n = points.rows();
    if labels.len() != n {
        return Err(Error::dim("silhouette", format!("{n} points, {} labels", labels.len())));
    }
    if n < 2 {
        return Err(Error::Contract("silhouette needs at least two points".into()));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Contract("silhouette needs at least two clusters".into()));
    }
    let cluster_of: Vec<usize> = labels.iter().map(|l| ids.binary_search(l).expect("present")).collect();
    let k = ids.len();
    let mut sizes = vec![0usize; k];
    cluster_of.iter().for_each(|&c| sizes[c] += 1);

    let mut per_point = Vec::with_capacity(n);
    let mut sums = vec![T::zero(); k];
    for i in 0..n {
        sums.fill(T::zero());
        for j in 0..n {
            if j != i {
                sums[cluster_of[j]] += euclid(points.row(i), points.row(j));
            }
        }
        let own = cluster_of[i];
        if sizes[own] == 1 {
            per_point.push(T::zero());
            continue;
        }
        let a = sums[own] / T::of_usize(sizes[own] - 1);
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / T::of_usize(sizes[c]))
            .fold(T::infinity(), T::min);
        let denom = a.max(b);
        per_point.push(if denom > T::zero() { (b - a) / denom } else { T::zero() });
    }
    let mean_score = per_point.iter().copied().sum::<T>() / T::of_usize(n);
    Ok(SilhouetteReport {
        mean_score,
        per_point,
        n_clusters: k,
    })
}

/// `steps²` codes on the uniform grid over `[lo, hi]²`, first coordinate
/// slowest.
pub fn latent_grid<T: Real>(lo: T, hi: T, steps: usize, latent_dim: usize) -> Result<Vec<Vec<T>>> {
    if latent_dim != 2 {
        return Err(Error::Unsupported(format!("latent grids are only generated for d_z = 2, got {latent_dim}")));
    }
    if steps < 2 {
        return Err(Error::Contract("latent grid needs at least two steps".into()));
    }
    let n = steps - 1;
    // Mirrored evaluation keeps the grid exactly symmetric about its midpoint.
    let at = |i: usize| {
        if 2 * i <= n {
            lo + (hi - lo) * T::of_usize(i) / T::of_usize(n)
        } else {
            hi - (hi - lo) * T::of_usize(n - i) / T::of_usize(n)
        }
    };
    let mut out = Vec::with_capacity(steps * steps);
    for i in 0..steps {
        for j in 0..steps {
            out.push(vec![at(i), at(j)]);
        }
    }
    Ok(out)
}

/// Draws `k_samples` reverse-SDE samples per code; rows of code `c` occupy
/// `c * k_samples .. (c + 1) * k_samples`.
pub fn sample_for_codes<T: Real>(
    model: &ScoreModel<T>,
    codes: &[Vec<T>],
    k_samples: usize,
    cfg: &SdeConfig<T>,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let dz = model.arch().latent_dim;
    if codes.iter().any(|c| c.len() != dz) {
        return Err(Error::dim("sample_for_codes", format!("codes must have length {dz}")));
    }
    let rows: Vec<Vec<T>> = codes.iter().flat_map(|c| std::iter::repeat_n(c.clone(), k_samples)).collect();
    let n = rows.len();
    let z = if dz > 0 { Some(Tensor::from_rows(&rows)?) } else { None };
    let d = model.arch().data_dim;
    reverse_sample(cfg, |x, t| model.score(x, &vec![t; n], z.as_ref()), n_steps, n, d, rng)
}

/// Mean pairwise Euclidean distance among `k_samples` samples generated
/// for each code.
pub fn conditional_diversity<T: Real>(
    model: &ScoreModel<T>,
    codes: &[Vec<T>],
    k_samples: usize,
    cfg: &SdeConfig<T>,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<Vec<T>> {
    if k_samples < 2 {
        return Err(Error::Contract("diversity needs at least two samples per code".into()));
    }
    let samples = sample_for_codes(model, codes, k_samples, cfg, n_steps, rng)?;
    Ok((0..codes.len())
        .map(|c| {
            let base = c * k_samples;
            let mut total = T::zero();
            let mut pairs = 0;
            for i in 0..k_samples {
                for j in i + 1..k_samples {
                    total += euclid(samples.row(base + i), samples.row(base + j));
                    pairs += 1;
                }
            }
            total / T::of_usize(pairs)
        })
        .collect())
}

/// What to read out of a (possibly stochastic) encoder for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeReadout {
    /// The code the score model is conditioned on (a sample when
    /// probabilistic).
    Sample,
    /// The code mean.
    Mean,
}

impl CodeReadout {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Self::Sample),
            "mean" => Ok(Self::Mean),
            _ => Err(Error::Config(format!("unknown code readout '{s}' (expected sample or mean)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sample => "sample",
            Self::Mean => "mean",
        }
    }
}

pub fn read_codes<T: Real>(trained: &Trained<T>, x0: &Tensor<T>, readout: CodeReadout, rng: &mut Rng) -> Result<Tensor<T>> {
    match (&trained.encoder, readout) {
        (Some(e), CodeReadout::Mean) => e.means(x0),
        _ => trained
            .codes(x0, rng)?
            .ok_or_else(|| Error::Contract("unconditional model has no codes".into())),
    }
}

/// One row of an aggregated sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow<T> {
    pub param: T,
    pub mean: T,
    pub std: T,
    /// Runs that completed.
    pub runs: usize,
    /// Set when at least one run failed.
    pub flagged: bool,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std<T: Real>(values: &[T]) -> (T, T) {
    if values.is_empty() {
        return (T::nan(), T::nan());
    }
    let n = T::of_usize(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    if values.len() == 1 {
        return (mean, T::zero());
    }
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (n - T::one());
    (mean, var.sqrt())
}

pub fn aggregate<T: Real>(param: T, results: &[Result<T>]) -> SweepRow<T> {
    let ok: Vec<T> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let (mean, std) = mean_std(&ok);
    SweepRow {
        param,
        mean,
        std,
        runs: ok.len(),
        flagged: ok.len() != results.len(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteSweep {
    pub runs: usize,
    /// Fraction of points held out for encoding.
    pub holdout: f64,
    pub readout: CodeReadout,
    pub seed: u64,
}

impl Default for SilhouetteSweep {
    fn default() -> Self {
        Self {
            runs: 3,
            holdout: 0.2,
            readout: CodeReadout::Sample,
            seed: 0,
        }
    }
}

/// Default sweep grid: 10 log-spaced σ values, i.e. evenly spaced times on
/// `[t_floor, T]`.
pub fn default_t_values<T: Real>(cfg: &SdeConfig<T>) -> Vec<T> {
    (0..10)
        .map(|i| cfg.t_floor + (cfg.horizon - cfg.t_floor) * T::of_usize(i) / T::of(9.0))
        .collect()
}

/// Silhouette of held-out codes from one representation model trained with
/// all weight on time `t`.
pub fn silhouette_at_t<T: Real>(dataset: &LabeledDataset<T>, t: T, spec: &TrainSpec<T>, sweep: &SilhouetteSweep, run: usize) -> Result<T> {
    let master = Rng::new(sweep.seed);
    let (train_set, test_set) = dataset.split(sweep.holdout, &mut master.derive(0));
    let mut rng = master.derive(1 + run as u64);
    let mut s = spec.clone();
    s.weighting = TimeWeighting::fixed(t);
    let trained = train(&s, &train_set.points, &mut rng)?;
    let codes = read_codes(&trained, &test_set.points, sweep.readout, &mut rng)?;
    if !codes.is_finite() {
        return Err(Error::Numerical(format!("non-finite codes at t = {t}")));
    }
    Ok(silhouette(&codes, &test_set.labels)?.mean_score)
}

/// Aggregated silhouette per training time over `sweep.runs` independent
/// runs. Failed runs are excluded from the statistics and flag their row.
pub fn silhouette_vs_t<T: Real>(dataset: &LabeledDataset<T>, t_values: &[T], spec: &TrainSpec<T>, sweep: &SilhouetteSweep) -> Result<Vec<SweepRow<T>>> {
    if sweep.runs == 0 {
        return Err(Error::Contract("need at least one run".into()));
    }
    if spec.latent_dim == 0 || spec.ablate_code {
        return Err(Error::Config("silhouette sweep needs an encoder".into()));
    }
    Ok(t_values
        .iter()
        .map(|&t| {
            let results: Vec<Result<T>> = (0..sweep.runs).map(|r| silhouette_at_t(dataset, t, spec, sweep, r)).collect();
            aggregate(t, &results)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiversitySweep {
    pub runs: usize,
    /// Fraction of points held out; codes are read from the first
    /// `n_codes` held-out points.
    pub holdout: f64,
    pub n_codes: usize,
    pub k_samples: usize,
    pub n_steps: usize,
    pub readout: CodeReadout,
    pub seed: u64,
}

impl Default for DiversitySweep {
    fn default() -> Self {
        Self {
            runs: 3,
            holdout: 0.2,
            n_codes: 16,
            k_samples: 8,
            n_steps: 500,
            readout: CodeReadout::Mean,
            seed: 0,
        }
    }
}

/// Mean conditional diversity over held-out codes of one representation
/// model with latent dimension `latent_dim`.
pub fn diversity_at_dz<T: Real>(dataset: &LabeledDataset<T>, latent_dim: usize, spec: &TrainSpec<T>, sweep: &DiversitySweep, run: usize) -> Result<T> {
    if latent_dim == 0 {
        return Err(Error::Config("diversity sweep needs d_z > 0".into()));
    }
    let master = Rng::new(sweep.seed);
    let (train_set, test_set) = dataset.split(sweep.holdout, &mut master.derive(0));
    if test_set.len() < sweep.n_codes {
        return Err(Error::Config(format!("{} held-out points for {} codes", test_set.len(), sweep.n_codes)));
    }
    let mut rng = master.derive(1 + run as u64);
    let mut s = spec.clone();
    s.latent_dim = latent_dim;
    s.ablate_code = false;
    let trained = train(&s, &train_set.points, &mut rng)?;
    let idx: Vec<usize> = (0..sweep.n_codes).collect();
    let codes = read_codes(&trained, &test_set.points.select_rows(&idx), sweep.readout, &mut rng)?;
    let codes: Vec<Vec<T>> = (0..codes.rows()).map(|i| codes.row(i).to_vec()).collect();
    let div = conditional_diversity(&trained.score, &codes, sweep.k_samples, &s.sde, sweep.n_steps, &mut rng)?;
    let mean = div.iter().copied().sum::<T>() / T::of_usize(div.len());
    if !mean.is_finite() {
        return Err(Error::Numerical(format!("non-finite diversity at d_z = {latent_dim}")));
    }
    Ok(mean)
}

/// Aggregated diversity per latent dimension over `sweep.runs` runs.
pub fn diversity_vs_dz<T: Real>(dataset: &LabeledDataset<T>, latent_dims: &[usize], spec: &TrainSpec<T>, sweep: &DiversitySweep) -> Result<Vec<SweepRow<T>>> {
    if sweep.runs == 0 {
        return Err(Error::Contract("need at least one run".into()));
    }
    Ok(latent_dims
        .iter()
        .map(|&dz| {
            let results: Vec<Result<T>> = (0..sweep.runs).map(|r| diversity_at_dz(dataset, dz, spec, sweep, r)).collect();
            aggregate(T::of_usize(dz), &results)
        })
        .collect())
}
