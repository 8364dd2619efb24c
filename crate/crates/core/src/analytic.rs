//! Closed-form data distributions and their exactly diffused scores.
//!
//! Under the VE kernel a component `N(μ, Σ)` diffuses to `N(μ, Σ + v(t) I)`,
//! so a Gaussian mixture stays a Gaussian mixture at every time and its
//! marginal score is available in closed form.

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng::Rng;
use crate::scalar::Real;
use crate::sde::SdeConfig;

/// Lower Cholesky factor of a symmetric positive definite `d x d` matrix.
fn cholesky<T: Real>(a: &[T], d: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solves `L y = b` in place.
fn forward_sub<T: Real>(l: &[T], d: usize, b: &mut [T]) {
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * b[k];
        }
        b[i] = s / l[i * d + i];
    }
}

/// Solves `L^T y = b` in place.
fn backward_sub<T: Real>(l: &[T], d: usize, b: &mut [T]) {
    for i in (0..d).rev() {
        let mut s = b[i];
        for k in i + 1..d {
            s -= l[k * d + i] * b[k];
        }
        b[i] = s / l[i * d + i];
    }
}

fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture<T> {
    weights: Vec<T>,
    means: Vec<Vec<T>>,
    /// Row-major `d x d` covariance per component.
    covariances: Vec<Vec<T>>,
    chol: Vec<Vec<T>>,
    dim: usize,
}

impl<T: Real> GaussianMixture<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, covariances: Vec<Vec<T>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::Config("mixture needs matching, non-empty weight/mean/covariance lists".into()));
        }
        if weights.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::Config("mixture weights must be positive".into()));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs().as_f64() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::dim("mixture", "means must share one positive dimension"));
        }
        let mut chol = Vec::with_capacity(k);
        for (i, c) in covariances.iter().enumerate() {
            if c.len() != dim * dim {
                return Err(Error::dim("mixture", format!("covariance {i} is not {dim}x{dim}")));
            }
            for r in 0..dim {
                for s in 0..r {
                    let (a, b) = (c[r * dim + s], c[s * dim + r]);
                    if (a - b).abs() > T::of(1e-12) * (a.abs() + b.abs() + T::one()) {
                        return Err(Error::Numerical(format!("covariance {i} is not symmetric")));
                    }
                }
            }
            chol.push(cholesky(c, dim).ok_or_else(|| Error::Numerical(format!("covariance {i} is not positive definite")))?);
        }
        Ok(Self {
            weights,
            means,
            covariances,
            chol,
            dim,
        })
    }

    /// Components with covariance `variance_i · I`.
    pub fn isotropic(weights: Vec<T>, means: Vec<Vec<T>>, variances: Vec<T>) -> Result<Self> {
        let d = means.first().map_or(0, Vec::len);
        let covs = variances
            .iter()
            .map(|&v| {
                let mut c = vec![T::zero(); d * d];
                (0..d).for_each(|i| c[i * d + i] = v);
                c
            })
            .collect();
        Self::new(weights, means, covs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<T>] {
        &self.covariances
    }

    /// The common variance if this is a single isotropic component.
    pub fn single_isotropic_variance(&self) -> Option<T> {
        if self.weights.len() != 1 {
            return None;
        }
        let d = self.dim;
        let c = &self.covariances[0];
        let v = c[0];
        let iso = (0..d).all(|i| (0..d).all(|j| c[i * d + j] == if i == j { v } else { T::zero() }));
        iso.then_some(v)
    }

    /// Overall mean and covariance of the mixture.
    pub fn moments(&self) -> (Vec<T>, Vec<T>) {
        let d = self.dim;
        let mut mean = vec![T::zero(); d];
        for (w, m) in self.weights.iter().zip(&self.means) {
            mean.iter_mut().zip(m).for_each(|(a, &b)| *a += *w * b);
        }
        let mut cov = vec![T::zero(); d * d];
        for ((w, m), c) in self.weights.iter().zip(&self.means).zip(&self.covariances) {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += *w * (c[i * d + j] + (m[i] - mean[i]) * (m[j] - mean[j]));
                }
            }
        }
        (mean, cov)
    }

    /// Draws `n` points and the index of the component that produced each.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> (Tensor<T>, Vec<usize>) {
        let d = self.dim;
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut z = vec![T::zero(); d];
        for _ in 0..n {
            let u: T = rng.uniform(T::zero(), T::one());
            let mut acc = T::zero();
            let mut k = self.weights.len() - 1;
            for (i, &w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = i;
                    break;
                }
            }
            z.iter_mut().for_each(|e| *e = rng.normal());
            let l = &self.chol[k];
            for i in 0..d {
                let mut s = self.means[k][i];
                for j in 0..=i {
                    s += l[i * d + j] * z[j];
                }
                data.push(s);
            }
            labels.push(k);
        }
        (Tensor::new(vec![n, d], data).expect("sized"), labels)
    }

    /// The mixture after adding independent `N(0, v I)` noise.
    pub fn diffused(&self, v: T) -> Result<DiffusedMixture<T>> {
        let d = self.dim;
        let half_log_2pi = T::of(0.5) * (T::of(2.0) * T::PI()).ln() * T::of_usize(d);
        let mut comps = Vec::with_capacity(self.weights.len());
        for (i, c) in self.covariances.iter().enumerate() {
            let mut s = c.clone();
            (0..d).for_each(|j| s[j * d + j] += v);
            let l = cholesky(&s, d).ok_or_else(|| Error::Numerical(format!("effective covariance {i} is not positive definite")))?;
            let logdet: T = (0..d).map(|j| l[j * d + j].ln()).sum::<T>() * T::of(2.0);
            comps.push(DiffusedComponent {
                log_norm: self.weights[i].ln() - half_log_2pi - T::of(0.5) * logdet,
                mean: self.means[i].clone(),
                chol: l,
            });
        }
        Ok(DiffusedMixture { comps, dim: d })
    }

    pub fn log_density(&self, x: &[T]) -> Result<T> {
        Ok(self.diffused(T::zero())?.log_density(x))
    }
}

#[derive(Clone, Debug)]
struct DiffusedComponent<T> {
    log_norm: T,
    mean: Vec<T>,
    chol: Vec<T>,
}

/// A [`GaussianMixture`] convolved with isotropic noise of fixed variance.
#[derive(Clone, Debug)]
pub struct DiffusedMixture<T> {
    comps: Vec<DiffusedComponent<T>>,
    dim: usize,
}

impl<T: Real> DiffusedMixture<T> {
    /// Per-component log joint `log w_i + log N(x; μ_i, S_i)` and the solved
    /// `S_i^{-1} (μ_i − x)`.
    fn components(&self, x: &[T]) -> (Vec<T>, Vec<Vec<T>>) {
        let d = self.dim;
        let mut logs = Vec::with_capacity(self.comps.len());
        let mut pulls = Vec::with_capacity(self.comps.len());
        for c in &self.comps {
            let mut r: Vec<T> = c.mean.iter().zip(x).map(|(&m, &xi)| m - xi).collect();
            forward_sub(&c.chol, d, &mut r);
            let quad: T = r.iter().map(|&e| e * e).sum();
            logs.push(c.log_norm - T::of(0.5) * quad);
            backward_sub(&c.chol, d, &mut r);
            pulls.push(r);
        }
        (logs, pulls)
    }

    pub fn log_density(&self, x: &[T]) -> T {
        log_sum_exp(&self.components(x).0)
    }

    /// `Σ_i r_i(x) S_i^{-1} (μ_i − x)` with responsibilities from a
    /// log-sum-exp normalisation.
    pub fn score(&self, x: &[T]) -> Vec<T> {
        let (logs, pulls) = self.components(x);
        let lse = log_sum_exp(&logs);
        let mut out = vec![T::zero(); self.dim];
        for (l, p) in logs.iter().zip(&pulls) {
            let r = (*l - lse).exp();
            out.iter_mut().zip(p).for_each(|(o, &pi)| *o += r * pi);
        }
        out
    }

    pub fn score_rows(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut data = Vec::with_capacity(x.numel());
        for i in 0..x.rows() {
            data.extend(self.score(x.row(i)));
        }
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }
}

/// Exact marginal score `∇ log p_t(x)` of the diffused mixture.
pub fn mixture_score<T: Real>(gm: &GaussianMixture<T>, x: &[T], t: T, cfg: &SdeConfig<T>) -> Result<Vec<T>> {
    if x.len() != gm.dim() {
        return Err(Error::dim(
            "mixture_score",
            format!("point of size {} for mixture of dim {}", x.len(), gm.dim()),
        ));
    }
    let v = cfg.variance(t)?;
    Ok(gm.diffused(v)?.score(x))
}

/// Row-wise marginal score with one time per row.
pub fn mixture_score_rows<T: Real>(gm: &GaussianMixture<T>, x: &Tensor<T>, t: &[T], cfg: &SdeConfig<T>) -> Result<Tensor<T>> {
    if x.cols() != gm.dim() || t.len() != x.rows() {
        return Err(Error::dim("mixture_score_rows", format!("{:?} with {} times", x.shape(), t.len())));
    }
    if let Some(&t0) = t.first() {
        if t.iter().all(|&ti| ti == t0) {
            return Ok(gm.diffused(cfg.variance(t0)?)?.score_rows(x));
        }
    }
    let mut data = Vec::with_capacity(x.numel());
    for (i, &ti) in t.iter().enumerate() {
        data.extend(mixture_score(gm, x.row(i), ti, cfg)?);
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// `C(t) = E ‖∇ log p_0t(x_t|x_0) − ∇ log p_t(x_t)‖²` for a single isotropic
/// Gaussian with variance `s`: `d s / (v (s + v))`.
pub fn dsm_constant<T: Real>(gm: &GaussianMixture<T>, t: T, cfg: &SdeConfig<T>) -> Result<T> {
    let s = gm
        .single_isotropic_variance()
        .ok_or_else(|| Error::Unsupported("closed-form constant needs a single isotropic Gaussian; use mc_dsm_constant".into()))?;
    if t < cfg.t_floor {
        return Err(Error::Domain(format!("t = {t} below t_floor = {}", cfg.t_floor)));
    }
    let v = cfg.variance(t)?;
    Ok(T::of_usize(gm.dim()) * s / (v * (s + v)))
}

/// Monte-Carlo estimate of `C(t)` with its standard error (`None` for a
/// single draw).
pub fn mc_dsm_constant<T: Real>(gm: &GaussianMixture<T>, t: T, cfg: &SdeConfig<T>, n_draws: usize, rng: &mut Rng) -> Result<(T, Option<T>)> {
    if n_draws == 0 {
        return Err(Error::Contract("need at least one draw".into()));
    }
    if t < cfg.t_floor {
        return Err(Error::Domain(format!("t = {t} below t_floor = {}", cfg.t_floor)));
    }
    let v = cfg.variance(t)?;
    let diffused = gm.diffused(v)?;
    let sd = v.sqrt();
    let (x0, _) = gm.sample(n_draws, rng);
    let mut values = Vec::with_capacity(n_draws);
    let mut xt = vec![T::zero(); gm.dim()];
    for i in 0..n_draws {
        let row = x0.row(i);
        let mut kernel = vec![T::zero(); gm.dim()];
        for j in 0..gm.dim() {
            let e: T = rng.normal();
            xt[j] = row[j] + sd * e;
            kernel[j] = -e / sd;
        }
        let m = diffused.score(&xt);
        values.push(kernel.iter().zip(&m).map(|(&a, &b)| (a - b) * (a - b)).sum());
    }
    Ok(mean_and_stderr(&values))
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr<T: Real>(values: &[T]) -> (T, Option<T>) {
    let n = T::of_usize(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (n - T::one());
    (mean, Some((var / n).sqrt()))
}

/// Toy 2D datasets.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetKind {
    /// `k` equal-weight isotropic Gaussians on a circle (`k = 1`: centred).
    Mixture(usize),
    TwoMoons,
    Rings,
}

impl DatasetKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "two-moons" => Ok(Self::TwoMoons),
            "rings" => Ok(Self::Rings),
            _ => name
                .strip_prefix("mixture-")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(Self::Mixture)
                .ok_or_else(|| Error::Config(format!("unknown dataset '{name}'"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Mixture(k) => format!("mixture-{k}"),
            Self::TwoMoons => "two-moons".into(),
            Self::Rings => "rings".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetParams<T> {
    /// Circle radius of mixture means; base radius of rings.
    pub radius: T,
    /// Per-axis standard deviation of mixture components.
    pub std: T,
    /// Additive noise scale for moons and rings.
    pub noise: T,
}

impl<T: Real> Default for DatasetParams<T> {
    fn default() -> Self {
        Self {
            radius: T::one(),
            std: T::of(0.2),
            noise: T::of(0.05),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T> {
    pub name: String,
    pub points: Tensor<T>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Generating distribution, when it has closed-form scores.
    pub mixture: Option<GaussianMixture<T>>,
}

impl<T: Real> LabeledDataset<T> {
    pub fn new(name: impl Into<String>, points: Tensor<T>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if points.rows() != labels.len() {
            return Err(Error::dim("dataset", format!("{} points, {} labels", points.rows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Contract(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Self {
            name: name.into(),
            points,
            labels,
            n_classes,
            mixture: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    /// Random split; the second part holds `round(frac · n)` points.
    pub fn split(&self, frac: f64, rng: &mut Rng) -> (Self, Self) {
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            idx.swap(i, rng.below(i + 1));
        }
        let n_hold = ((n as f64) * frac).round() as usize;
        let (hold, keep) = idx.split_at(n_hold.min(n));
        let part = |ids: &[usize]| Self {
            name: self.name.clone(),
            points: self.points.select_rows(ids),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            mixture: self.mixture.clone(),
        };
        (part(keep), part(hold))
    }
}

/// `k` equal-weight components with means evenly spaced on a circle.
pub fn circle_mixture<T: Real>(k: usize, params: &DatasetParams<T>) -> Result<GaussianMixture<T>> {
    if k == 0 {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    let means = if k == 1 {
        vec![vec![T::zero(), T::zero()]]
    } else {
        (0..k)
            .map(|i| {
                let a = T::of(2.0) * T::PI() * T::of_usize(i) / T::of_usize(k);
                vec![params.radius * a.cos(), params.radius * a.sin()]
            })
            .collect()
    };
    let w = T::one() / T::of_usize(k);
    let mut weights = vec![w; k];
    // Keep the sum within rounding of 1.
    let drift = T::one() - weights.iter().copied().sum::<T>();
    weights[k - 1] += drift;
    GaussianMixture::isotropic(weights, means, vec![params.std * params.std; k])
}

pub fn make_dataset<T: Real>(kind: &DatasetKind, n: usize, params: &DatasetParams<T>, rng: &mut Rng) -> Result<LabeledDataset<T>> {
    if n == 0 {
        return Err(Error::Config("dataset needs at least one point".into()));
    }
    match kind {
        DatasetKind::Mixture(k) => {
            let gm = circle_mixture(*k, params)?;
            let (points, labels) = gm.sample(n, rng);
            let mut ds = LabeledDataset::new(kind.name(), points, labels, *k)?;
            ds.mixture = Some(gm);
            Ok(ds)
        }
        DatasetKind::TwoMoons => {
            let mut data = Vec::with_capacity(2 * n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let label = rng.below(2);
                let theta: T = rng.uniform(T::zero(), T::PI());
                let (x, y) = moon_point(label, theta);
                data.push(x + params.noise * rng.normal::<T>());
                data.push(y + params.noise * rng.normal::<T>());
                labels.push(label);
            }
            LabeledDataset::new(kind.name(), Tensor::new(vec![n, 2], data)?, labels, 2)
        }
        DatasetKind::Rings => {
            let mut data = Vec::with_capacity(2 * n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let label = rng.below(2);
                let a: T = rng.uniform(T::zero(), T::of(2.0) * T::PI());
                let r = params.radius * T::of_usize(label + 1) + params.noise * rng.normal::<T>();
                data.push(r * a.cos());
                data.push(r * a.sin());
                labels.push(label);
            }
            LabeledDataset::new(kind.name(), Tensor::new(vec![n, 2], data)?, labels, 2)
        }
    }
}

/// Noise-free point on moon `label` at angle `theta ∈ [0, π]`.
pub fn moon_point<T: Real>(label: usize, theta: T) -> (T, T) {
    if label == 0 {
        (theta.cos(), theta.sin())
    } else {
        (T::one() - theta.cos(), T::of(0.5) - theta.sin())
    }
}
