//! Score-matching objectives, time weighting and the DSM = ESM + C(t)
//! decomposition.

use crate::analytic::{mean_and_stderr, mixture_score_rows, GaussianMixture};
use crate::error::{Error, Result};
use crate::models::{Encoder, ScoreModel};
use crate::numcore::{Tape, Tensor, Var};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::sde::{perturb_rows, SdeConfig};

/// Anything that can be evaluated as a (possibly code-conditional) score.
pub trait ScoreFunction<T: Real> {
    fn score(&self, x_t: &Tensor<T>, t: &[T], z: Option<&Tensor<T>>) -> Result<Tensor<T>>;
}

impl<T: Real> ScoreFunction<T> for ScoreModel<T> {
    fn score(&self, x_t: &Tensor<T>, t: &[T], z: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        ScoreModel::score(self, x_t, t, z)
    }
}

/// Conditional oracle: with `z = x_0` it returns the kernel score exactly.
#[derive(Clone, Copy, Debug)]
pub struct KernelOracle<T> {
    pub sde: SdeConfig<T>,
}

impl<T: Real> ScoreFunction<T> for KernelOracle<T> {
    fn score(&self, x_t: &Tensor<T>, t: &[T], z: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let x0 = z.ok_or_else(|| Error::Contract("kernel oracle needs x_0 as its code".into()))?;
        if x0.shape() != x_t.shape() || t.len() != x_t.rows() {
            return Err(Error::dim("kernel_oracle", format!("{:?} vs {:?}", x_t.shape(), x0.shape())));
        }
        let mut out = Tensor::zeros(x_t.shape().to_vec());
        for (i, &ti) in t.iter().enumerate() {
            let v = self.sde.variance(ti)?;
            let (a, b) = (x_t.row(i), x0.row(i));
            out.row_mut(i).iter_mut().zip(a.iter().zip(b)).for_each(|(o, (&x, &y))| *o = -(x - y) / v);
        }
        Ok(out)
    }
}

/// Exact marginal score of a Gaussian mixture; ignores any code.
#[derive(Clone, Debug)]
pub struct MixtureOracle<T> {
    pub mixture: GaussianMixture<T>,
    pub sde: SdeConfig<T>,
}

impl<T: Real> ScoreFunction<T> for MixtureOracle<T> {
    fn score(&self, x_t: &Tensor<T>, t: &[T], _z: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        mixture_score_rows(&self.mixture, x_t, t, &self.sde)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ZeroScore;

impl<T: Real> ScoreFunction<T> for ZeroScore {
    fn score(&self, x_t: &Tensor<T>, _t: &[T], _z: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        Ok(Tensor::zeros(x_t.shape().to_vec()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeSampling {
    /// `t ~ U[t_floor, T]`.
    UniformT,
    /// `σ(t) ~ U[σ_min, σ_max]`.
    UniformSigma,
    /// A single time.
    FixedT,
}

impl TimeSampling {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform-t" => Ok(Self::UniformT),
            "uniform-sigma" => Ok(Self::UniformSigma),
            "fixed-t" => Ok(Self::FixedT),
            _ => Err(Error::Config(format!("unknown weighting '{s}' (expected uniform-t, uniform-sigma or fixed-t)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::UniformT => "uniform-t",
            Self::UniformSigma => "uniform-sigma",
            Self::FixedT => "fixed-t",
        }
    }
}

/// Sampling distribution over `t`; every regime weights by `λ(t) = σ²(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeWeighting<T> {
    pub mode: TimeSampling,
    pub fixed_t: Option<T>,
}

impl<T: Real> TimeWeighting<T> {
    pub fn uniform_t() -> Self {
        Self {
            mode: TimeSampling::UniformT,
            fixed_t: None,
        }
    }

    pub fn uniform_sigma() -> Self {
        Self {
            mode: TimeSampling::UniformSigma,
            fixed_t: None,
        }
    }

    pub fn fixed(t: T) -> Self {
        Self {
            mode: TimeSampling::FixedT,
            fixed_t: Some(t),
        }
    }

    pub fn lambda(&self, cfg: &SdeConfig<T>, t: T) -> Result<T> {
        cfg.lambda(t)
    }
}

/// Per-example training times.
pub fn sample_t<T: Real>(tw: &TimeWeighting<T>, cfg: &SdeConfig<T>, batch: usize, rng: &mut Rng) -> Result<Vec<T>> {
    if batch == 0 {
        return Err(Error::Contract("batch must be non-empty".into()));
    }
    match tw.mode {
        TimeSampling::UniformT => Ok((0..batch).map(|_| rng.uniform(cfg.t_floor, cfg.horizon)).collect()),
        TimeSampling::UniformSigma => Ok((0..batch)
            .map(|_| {
                let s = rng.uniform(cfg.sigma_min, cfg.sigma_max);
                cfg.time_of_sigma(s).max(cfg.t_floor).min(cfg.horizon)
            })
            .collect()),
        TimeSampling::FixedT => {
            let t = tw.fixed_t.ok_or_else(|| Error::Config("fixed-t weighting requires fixed_t".into()))?;
            if !(t >= cfg.t_floor && t <= cfg.horizon) {
                return Err(Error::Domain(format!("fixed_t = {t} outside [{}, {}]", cfg.t_floor, cfg.horizon)));
            }
            Ok(vec![t; batch])
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport<T> {
    pub total: T,
    pub dsm_term: T,
    pub reg_term: T,
    pub reg_weight: T,
    pub batch_t: Vec<T>,
}

/// A perturbed minibatch.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub x0: Tensor<T>,
    pub t: Vec<T>,
    pub x_t: Tensor<T>,
    pub eps: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn draw(x0: Tensor<T>, tw: &TimeWeighting<T>, cfg: &SdeConfig<T>, rng: &mut Rng) -> Result<Self> {
        let t = sample_t(tw, cfg, x0.rows(), rng)?;
        let (x_t, eps) = perturb_rows(cfg, &x0, &t, rng)?;
        Ok(Self { x0, t, x_t, eps })
    }

    /// Kernel score `−ε / sqrt(v(t))` per row.
    pub fn target(&self, cfg: &SdeConfig<T>) -> Result<Tensor<T>> {
        let mut out = self.eps.clone();
        for (i, &ti) in self.t.iter().enumerate() {
            let sd = cfg.variance(ti)?.sqrt();
            out.row_mut(i).iter_mut().for_each(|e| *e = -*e / sd);
        }
        Ok(out)
    }

    pub fn lambdas(&self, cfg: &SdeConfig<T>) -> Result<Vec<T>> {
        self.t.iter().map(|&t| cfg.lambda(t)).collect()
    }
}

fn check_finite<T: Real>(value: T, t: &[T]) -> Result<()> {
    if value.is_finite() {
        return Ok(());
    }
    let shown: Vec<String> = t.iter().take(8).map(|t| format!("{t:.4}")).collect();
    Err(Error::Numerical(format!(
        "non-finite loss {value} at t = [{}{}]",
        shown.join(", "),
        if t.len() > 8 { ", ..." } else { "" }
    )))
}

/// Mean over rows of `w_i ‖a_i − b_i‖²`.
fn weighted_sq_mean<T: Real>(a: &Tensor<T>, b: &Tensor<T>, w: &[T]) -> T {
    let total: T = (0..a.rows())
        .map(|i| w[i] * a.row(i).iter().zip(b.row(i)).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>())
        .sum();
    total / T::of_usize(a.rows())
}

/// Per-example `λ(t_i) ‖s(x_t, t_i, z_i) − ∇ log p_0t(x_t | x_0)‖²` on one
/// perturbed batch, with the sampled times.
pub fn dsm_terms<T: Real, S: ScoreFunction<T> + ?Sized>(
    score_fn: &S,
    x0: &Tensor<T>,
    tw: &TimeWeighting<T>,
    cfg: &SdeConfig<T>,
    rng: &mut Rng,
    z: Option<&Tensor<T>>,
) -> Result<(Vec<T>, Vec<T>)> {
    if x0.rows() == 0 {
        return Err(Error::Contract("batch must be non-empty".into()));
    }
    let batch = Batch::draw(x0.clone(), tw, cfg, rng)?;
    let s = score_fn.score(&batch.x_t, &batch.t, z)?;
    let target = batch.target(cfg)?;
    let lambdas = batch.lambdas(cfg)?;
    let terms = (0..s.rows())
        .map(|i| lambdas[i] * s.row(i).iter().zip(target.row(i)).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>())
        .collect();
    Ok((terms, batch.t))
}

/// λ-weighted denoising score matching loss of any score function.
pub fn dsm_loss<T: Real, S: ScoreFunction<T> + ?Sized>(
    score_fn: &S,
    x0: &Tensor<T>,
    tw: &TimeWeighting<T>,
    cfg: &SdeConfig<T>,
    rng: &mut Rng,
    z: Option<&Tensor<T>>,
) -> Result<LossReport<T>> {
    let (terms, batch_t) = dsm_terms(score_fn, x0, tw, cfg, rng, z)?;
    let dsm = terms.iter().copied().sum::<T>() / T::of_usize(terms.len());
    check_finite(dsm, &batch_t)?;
    Ok(LossReport {
        total: dsm,
        dsm_term: dsm,
        reg_term: T::zero(),
        reg_weight: T::zero(),
        batch_t,
    })
}

/// λ-weighted explicit score matching loss against the exact mixture score.
pub fn esm_loss<T: Real, S: ScoreFunction<T> + ?Sized>(
    score_fn: &S,
    gm: &GaussianMixture<T>,
    x0: &Tensor<T>,
    tw: &TimeWeighting<T>,
    cfg: &SdeConfig<T>,
    rng: &mut Rng,
) -> Result<T> {
    if x0.rows() == 0 {
        return Err(Error::Contract("batch must be non-empty".into()));
    }
    let batch = Batch::draw(x0.clone(), tw, cfg, rng)?;
    let s = score_fn.score(&batch.x_t, &batch.t, None)?;
    let m = mixture_score_rows(gm, &batch.x_t, &batch.t, cfg)?;
    let esm = weighted_sq_mean(&s, &m, &batch.lambdas(cfg)?);
    check_finite(esm, &batch.t)?;
    Ok(esm)
}

/// Handles of a loss recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    pub total: Var,
    pub dsm: Var,
    pub reg: Var,
}

/// Records `mean_i λ(t_i) ‖s(x_t, t, z) − ∇ log p_0t(x_t | x_0)‖²`.
pub fn dsm_graph<T: Real>(tape: &mut Tape<T>, model: &ScoreModel<T>, vars: &[Var], batch: &Batch<T>, cfg: &SdeConfig<T>, z: Option<Var>) -> Result<Var> {
    let m = batch.x0.rows();
    let x_t = tape.constant(batch.x_t.clone());
    let s = model.forward(tape, vars, x_t, &batch.t, z)?;
    let target = tape.constant(batch.target(cfg)?);
    let lambda = tape.constant(Tensor::column(batch.lambdas(cfg)?));
    let r = tape.sub(s, target)?;
    let r2 = tape.square(r);
    let w = tape.mul_col(r2, lambda)?;
    let total = tape.sum(w);
    Ok(tape.scale(total, T::one() / T::of_usize(m)))
}

/// Records the representation objective: conditional DSM with `z = E(x_0)`
/// plus `reg_weight` times the encoder regulariser.
#[allow(clippy::too_many_arguments)]
pub fn repr_graph<T: Real>(
    tape: &mut Tape<T>,
    model: &ScoreModel<T>,
    model_vars: &[Var],
    encoder: &Encoder<T>,
    encoder_vars: &[Var],
    batch: &Batch<T>,
    cfg: &SdeConfig<T>,
    reg_weight: T,
    rng: &mut Rng,
) -> Result<LossGraph> {
    if encoder.latent_dim() != model.arch().latent_dim {
        return Err(Error::dim(
            "repr_loss",
            format!("encoder d_z {} vs model d_z {}", encoder.latent_dim(), model.arch().latent_dim),
        ));
    }
    let x0 = tape.constant(batch.x0.clone());
    let enc = encoder.encode(tape, encoder_vars, x0, rng)?;
    let dsm = dsm_graph(tape, model, model_vars, batch, cfg, Some(enc.z))?;
    let wreg = tape.scale(enc.reg, reg_weight);
    let total = tape.add(dsm, wreg)?;
    Ok(LossGraph { total, dsm, reg: enc.reg })
}

pub fn report_from_graph<T: Real>(tape: &Tape<T>, g: &LossGraph, reg_weight: T, batch: &Batch<T>) -> Result<LossReport<T>> {
    let report = LossReport {
        total: tape.scalar_value(g.total),
        dsm_term: tape.scalar_value(g.dsm),
        reg_term: tape.scalar_value(g.reg),
        reg_weight,
        batch_t: batch.t.clone(),
    };
    check_finite(report.total, &batch.t)?;
    Ok(report)
}

/// Evaluates the representation objective on one perturbed batch.
pub fn repr_loss<T: Real>(
    model: &ScoreModel<T>,
    encoder: &Encoder<T>,
    x0: &Tensor<T>,
    tw: &TimeWeighting<T>,
    cfg: &SdeConfig<T>,
    reg_weight: T,
    rng: &mut Rng,
) -> Result<LossReport<T>> {
    if x0.rows() == 0 {
        return Err(Error::Contract("batch must be non-empty".into()));
    }
    let batch = Batch::draw(x0.clone(), tw, cfg, rng)?;
    let mut tape = Tape::new();
    let mv = model.params().bind_frozen(&mut tape);
    let ev = encoder.params().bind_frozen(&mut tape);
    let g = repr_graph(&mut tape, model, &mv, encoder, &ev, &batch, cfg, reg_weight, rng)?;
    report_from_graph(&tape, &g, reg_weight, &batch)
}

/// Monte-Carlo estimates behind the DSM = ESM + C(t) identity at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecompositionReport<T> {
    /// Unweighted `J_t^DSM − J_t^ESM`.
    pub gap: T,
    pub std_err: T,
    /// `E ‖kernel score − marginal score‖²` on the same draws.
    pub floor: T,
    pub floor_std_err: T,
    /// Paired `gap − floor` and its standard error.
    pub excess: T,
    pub excess_std_err: T,
    pub dsm: T,
    pub esm: T,
}

/// Estimates `J_t^DSM(θ) − J_t^ESM(θ)` and the constant with common random
/// numbers. The identity holds for any score function.
pub fn decomposition_check<T: Real, S: ScoreFunction<T> + ?Sized>(
    score_fn: &S,
    gm: &GaussianMixture<T>,
    t: T,
    cfg: &SdeConfig<T>,
    n_draws: usize,
    rng: &mut Rng,
) -> Result<DecompositionReport<T>> {
    let marginal = MixtureOracle {
        mixture: gm.clone(),
        sde: *cfg,
    };
    decomposition_check_against(score_fn, &marginal, gm, t, cfg, n_draws, rng)
}

/// [`decomposition_check`] with the marginal score supplied by `marginal`
/// instead of the mixture's closed form. Data are still drawn from `gm`.
pub fn decomposition_check_against<T: Real, S: ScoreFunction<T> + ?Sized, M: ScoreFunction<T> + ?Sized>(
    score_fn: &S,
    marginal: &M,
    gm: &GaussianMixture<T>,
    t: T,
    cfg: &SdeConfig<T>,
    n_draws: usize,
    rng: &mut Rng,
) -> Result<DecompositionReport<T>> {
    if n_draws < 2 {
        return Err(Error::Contract("decomposition check needs at least two draws".into()));
    }
    if t < cfg.t_floor {
        return Err(Error::Domain(format!("t = {t} below t_floor = {}", cfg.t_floor)));
    }
    let sd = cfg.variance(t)?.sqrt();
    let d = gm.dim();
    const CHUNK: usize = 8192;
    let mut gaps = Vec::with_capacity(n_draws);
    let mut floors = Vec::with_capacity(n_draws);
    let mut dsms = Vec::with_capacity(n_draws);
    let mut esms = Vec::with_capacity(n_draws);
    let mut done = 0;
    while done < n_draws {
        let n = CHUNK.min(n_draws - done);
        let (x0, _) = gm.sample(n, rng);
        let eps: Vec<T> = rng.normals(n * d);
        let xt_data = x0.data().iter().zip(&eps).map(|(&x, &e)| x + sd * e).collect();
        let x_t = Tensor::new(vec![n, d], xt_data)?;
        let times = vec![t; n];
        let s = score_fn.score(&x_t, &times, None)?;
        let m = marginal.score(&x_t, &times, None)?;
        for i in 0..n {
            let (mut dsm, mut esm, mut fl) = (T::zero(), T::zero(), T::zero());
            for j in 0..d {
                let k = -eps[i * d + j] / sd;
                let (si, mi) = (s.get(i, j), m.get(i, j));
                dsm += (si - k) * (si - k);
                esm += (si - mi) * (si - mi);
                fl += (k - mi) * (k - mi);
            }
            gaps.push(dsm - esm);
            floors.push(fl);
            dsms.push(dsm);
            esms.push(esm);
        }
        done += n;
    }
    let excess: Vec<T> = gaps.iter().zip(&floors).map(|(&g, &f)| g - f).collect();
    let (gap, gap_se) = mean_and_stderr(&gaps);
    let (floor, floor_se) = mean_and_stderr(&floors);
    let (ex, ex_se) = mean_and_stderr(&excess);
    let report = DecompositionReport {
        gap,
        std_err: gap_se.unwrap_or(T::nan()),
        floor,
        floor_std_err: floor_se.unwrap_or(T::nan()),
        excess: ex,
        excess_std_err: ex_se.unwrap_or(T::nan()),
        dsm: mean_and_stderr(&dsms).0,
        esm: mean_and_stderr(&esms).0,
    };
    check_finite(report.gap, &[t])?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{circle_mixture, DatasetParams};
    use crate::models::{EncoderArch, EncoderMode, ScoreArch};

    fn cfg() -> SdeConfig<f64> {
        SdeConfig::default()
    }

    fn random_model(latent_dim: usize, seed: u64) -> ScoreModel<f64> {
        let mut m = ScoreModel::new(ScoreArch::new(2, vec![8, 8], latent_dim), cfg(), &mut Rng::new(seed)).unwrap();
        let mut rng = Rng::new(seed + 100);
        for t in m.params_mut().tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.3 * rng.normal::<f64>());
        }
        m
    }

    fn encoder(mode: EncoderMode, seed: u64) -> Encoder<f64> {
        let arch = EncoderArch {
            data_dim: 2,
            widths: vec![8],
            latent_dim: 2,
            mode,
        };
        Encoder::new(arch, &mut Rng::new(seed)).unwrap()
    }

    fn standard_2d() -> GaussianMixture<f64> {
        GaussianMixture::isotropic(vec![1.0], vec![vec![0.0, 0.0]], vec![1.0]).unwrap()
    }

    fn data(n: usize, seed: u64) -> Tensor<f64> {
        circle_mixture::<f64>(2, &DatasetParams::default()).unwrap().sample(n, &mut Rng::new(seed)).0
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn uniform_sigma_times_have_the_right_sigma_mean() {
        let c = cfg();
        let t = sample_t(&TimeWeighting::uniform_sigma(), &c, 100_000, &mut Rng::new(1)).unwrap();
        let sigmas: Vec<f64> = t.iter().map(|&t| c.sigma(t).unwrap()).collect();
        assert!(t.iter().all(|&t| t >= c.t_floor && t <= 1.0));
        assert!((mean(&sigmas) - 25.005).abs() / 25.005 < 0.01);
    }

    #[test]
    fn uniform_and_fixed_times() {
        let c = cfg();
        let t = sample_t(&TimeWeighting::uniform_t(), &c, 100_000, &mut Rng::new(2)).unwrap();
        let expected = (c.t_floor + 1.0) / 2.0;
        assert!((mean(&t) - expected).abs() / expected < 0.01);
        let t = sample_t(&TimeWeighting::fixed(0.7), &c, 16, &mut Rng::new(0)).unwrap();
        assert!(t.iter().all(|&t| t == 0.7));
        let mut bad = TimeWeighting::uniform_t();
        bad.mode = TimeSampling::FixedT;
        assert!(matches!(sample_t(&bad, &c, 4, &mut Rng::new(0)), Err(Error::Config(_))));
        assert!(matches!(sample_t(&TimeWeighting::fixed(1e-5), &c, 4, &mut Rng::new(0)), Err(Error::Domain(_))));
        assert_eq!(TimeSampling::parse("uniform-sigma").unwrap(), TimeSampling::UniformSigma);
        assert!(TimeSampling::parse("log-t").is_err());
    }

    #[test]
    fn kernel_oracle_has_zero_dsm() {
        let c = cfg();
        let x0 = data(256, 3);
        let rep = dsm_loss(&KernelOracle { sde: c }, &x0, &TimeWeighting::uniform_t(), &c, &mut Rng::new(4), Some(&x0)).unwrap();
        assert!(rep.total.abs() < 1e-12, "{}", rep.total);
    }

    #[test]
    fn zero_score_dsm_matches_expected_norm() {
        let c = cfg();
        let t = 0.5;
        let x0 = data(100_000, 5);
        let (terms, _) = dsm_terms(&ZeroScore, &x0, &TimeWeighting::fixed(t), &c, &mut Rng::new(6), None).unwrap();
        // E[λ ‖ε‖² / v] = d σ²(t) / v(t)
        let expected = 2.0 * c.lambda(t).unwrap() / c.variance(t).unwrap();
        let (m, se) = mean_and_stderr(&terms);
        assert!((m - expected).abs() < 3.0 * se.unwrap(), "{m} vs {expected}");
    }

    #[test]
    fn losses_are_non_negative() {
        let c = cfg();
        let gm = circle_mixture::<f64>(2, &DatasetParams::default()).unwrap();
        for seed in 0..5 {
            let m = random_model(0, seed);
            let x0 = data(64, seed);
            let rep = dsm_loss(&m, &x0, &TimeWeighting::uniform_sigma(), &c, &mut Rng::new(seed), None).unwrap();
            assert!(rep.total >= 0.0);
            assert!(esm_loss(&m, &gm, &x0, &TimeWeighting::uniform_t(), &c, &mut Rng::new(seed)).unwrap() >= 0.0);
        }
    }

    #[test]
    fn mixture_oracle_has_zero_esm() {
        let c = cfg();
        let gm = circle_mixture::<f64>(3, &DatasetParams::default()).unwrap();
        let oracle = MixtureOracle { mixture: gm.clone(), sde: c };
        let x0 = gm.sample(128, &mut Rng::new(0)).0;
        assert_eq!(esm_loss(&oracle, &gm, &x0, &TimeWeighting::uniform_t(), &c, &mut Rng::new(1)).unwrap(), 0.0);
    }

    #[test]
    fn decomposition_gap_equals_closed_form_constant() {
        let c = cfg();
        let gm = standard_2d();
        let t = c.time_of_sigma((1.0f64 + 1e-4).sqrt());
        for seed in 0..3 {
            let m = random_model(0, seed);
            let rep = decomposition_check(&m, &gm, t, &c, 200_000, &mut Rng::new(seed)).unwrap();
            assert!((rep.gap - 1.0).abs() < 3.0 * rep.std_err, "seed {seed}: {} ± {}", rep.gap, rep.std_err);
            assert!(rep.excess.abs() < 3.0 * rep.excess_std_err);
        }
    }

    #[test]
    fn decomposition_gap_does_not_depend_on_parameters() {
        let c = cfg();
        let gm = circle_mixture::<f64>(2, &DatasetParams::default()).unwrap();
        let a = decomposition_check(&random_model(0, 1), &gm, 0.4, &c, 50_000, &mut Rng::new(9)).unwrap();
        let b = decomposition_check(&random_model(0, 2), &gm, 0.4, &c, 50_000, &mut Rng::new(9)).unwrap();
        let zero = decomposition_check(&ZeroScore, &gm, 0.4, &c, 50_000, &mut Rng::new(9)).unwrap();
        // Common random numbers: the floor is computed on identical draws.
        assert_eq!(a.floor, b.floor);
        for r in [a, b, zero] {
            assert!(r.excess.abs() < 3.0 * r.excess_std_err, "{} ± {}", r.excess, r.excess_std_err);
        }
        assert!(decomposition_check(&ZeroScore, &gm, 0.4, &c, 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn floor_vanishes_towards_the_prior() {
        let c = cfg();
        let gm = standard_2d();
        let near = decomposition_check(&ZeroScore, &gm, 0.95, &c, 20_000, &mut Rng::new(3)).unwrap();
        let far = decomposition_check(&ZeroScore, &gm, 0.3, &c, 20_000, &mut Rng::new(3)).unwrap();
        assert!(near.floor < far.floor);
        assert!(near.floor < 1e-3);
    }

    #[test]
    fn total_is_dsm_plus_weighted_reg_exactly() {
        let c = cfg();
        let m = random_model(2, 4);
        for mode in [EncoderMode::Deterministic, EncoderMode::Probabilistic] {
            let e = encoder(mode, 5);
            for w in [0.0, 1e-5, 0.37, 2.0] {
                let rep = repr_loss(&m, &e, &data(32, 6), &TimeWeighting::uniform_sigma(), &c, w, &mut Rng::new(7)).unwrap();
                assert_eq!(rep.total, rep.dsm_term + w * rep.reg_term);
                assert_eq!(rep.reg_weight, w);
                assert_eq!(rep.batch_t.len(), 32);
            }
        }
    }

    #[test]
    fn reg_term_matches_encoder_regulariser() {
        let c = cfg();
        let m = random_model(2, 4);
        let e = encoder(EncoderMode::Deterministic, 8);
        let x0 = data(16, 9);
        let rep = repr_loss(&m, &e, &x0, &TimeWeighting::uniform_t(), &c, 1e-5, &mut Rng::new(1)).unwrap();
        let codes = e.codes(&x0, &mut Rng::new(0)).unwrap();
        let l1 = codes.data().iter().map(|v| v.abs()).sum::<f64>() / 16.0;
        assert!((rep.reg_term - l1).abs() < 1e-14);
    }

    #[test]
    fn silent_encoder_reduces_to_unconditional_dsm() {
        let c = cfg();
        let mut m = random_model(2, 10);
        m.zero_latent_conditioning();
        let mut e = encoder(EncoderMode::Deterministic, 11);
        for name in ["enc.mean.w", "enc.mean.b"] {
            let slot = e.params().slot(name).unwrap();
            e.params_mut().get_mut(slot).data_mut().fill(0.0);
        }
        let x0 = data(64, 12);
        let tw = TimeWeighting::uniform_sigma();
        let rep = repr_loss(&m, &e, &x0, &tw, &c, 1e-5, &mut Rng::new(13)).unwrap();
        assert_eq!(rep.reg_term, 0.0);
        let zeros = Tensor::zeros(vec![64, 2]);
        let plain = dsm_loss(&m, &x0, &tw, &c, &mut Rng::new(13), Some(&zeros)).unwrap();
        assert!((rep.total - plain.total).abs() <= 1e-12 * plain.total.max(1.0));
    }

    #[test]
    fn mismatched_latent_dims_are_rejected() {
        let c = cfg();
        let m = random_model(3, 1);
        let e = encoder(EncoderMode::Deterministic, 2);
        assert!(matches!(
            repr_loss(&m, &e, &data(4, 0), &TimeWeighting::uniform_t(), &c, 0.0, &mut Rng::new(0)),
            Err(Error::Dimension { .. })
        ));
        assert!(dsm_loss(
            &ZeroScore,
            &Tensor::<f64>::zeros(vec![0, 2]),
            &TimeWeighting::uniform_t(),
            &c,
            &mut Rng::new(0),
            None
        )
        .is_err());
    }
}
