//! Variance-exploding SDE: geometric noise schedule, closed-form
//! perturbation kernel and the Euler–Maruyama reverse-time sampler.
//!
//! The forward process has zero drift, `dx = g(t) dw` with
//! `g²(t) = d σ²(t) / dt`, so `x_t | x_0 ~ N(x_0, v(t) I)` where
//! `v(t) = σ²(t) − σ²(0)`.

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng::Rng;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdeConfig<T> {
    pub sigma_min: T,
    pub sigma_max: T,
    pub horizon: T,
    /// Smallest time used for training and as the sampler's end point.
    pub t_floor: T,
}

impl<T: Real> Default for SdeConfig<T> {
    fn default() -> Self {
        Self {
            sigma_min: T::of(0.01),
            sigma_max: T::of(50.0),
            horizon: T::one(),
            t_floor: T::of(1e-3),
        }
    }
}

impl<T: Real> SdeConfig<T> {
    pub fn new(sigma_min: T, sigma_max: T, horizon: T, t_floor: T) -> Result<Self> {
        let cfg = Self {
            sigma_min,
            sigma_max,
            horizon,
            t_floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.sigma_min, self.sigma_max, self.horizon, self.t_floor].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("schedule parameters must be finite".into()));
        }
        if self.sigma_min <= T::zero() || self.sigma_max <= self.sigma_min {
            return Err(Error::Config(format!(
                "need 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.horizon <= T::zero() {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.t_floor <= T::zero() || self.t_floor >= self.horizon {
            return Err(Error::Config(format!("t_floor must lie in (0, {}), got {}", self.horizon, self.t_floor)));
        }
        Ok(())
    }

    fn check_time(&self, t: T) -> Result<()> {
        if !(t >= T::zero() && t <= self.horizon) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    fn check_kernel_time(&self, t: T) -> Result<()> {
        self.check_time(t)?;
        if t < self.t_floor {
            return Err(Error::Domain(format!("t = {t} below t_floor = {}", self.t_floor)));
        }
        Ok(())
    }

    pub fn log_ratio(&self) -> T {
        (self.sigma_max / self.sigma_min).ln()
    }

    /// `σ(t) = σ_min (σ_max / σ_min)^(t / T)`.
    pub fn sigma(&self, t: T) -> Result<T> {
        self.check_time(t)?;
        Ok(self.sigma_unchecked(t))
    }

    pub(crate) fn sigma_unchecked(&self, t: T) -> T {
        self.sigma_min * (self.log_ratio() * t / self.horizon).exp()
    }

    /// Time at which the schedule reaches `sigma`.
    pub fn time_of_sigma(&self, sigma: T) -> T {
        (sigma / self.sigma_min).ln() / self.log_ratio() * self.horizon
    }

    /// Kernel variance `v(t) = σ²(t) − σ²(0)`.
    pub fn variance(&self, t: T) -> Result<T> {
        self.check_time(t)?;
        Ok(self.variance_unchecked(t))
    }

    pub(crate) fn variance_unchecked(&self, t: T) -> T {
        let s = self.sigma_unchecked(t);
        s * s - self.sigma_min * self.sigma_min
    }

    /// `g²(t) = d σ²(t) / dt = 2 ln(σ_max/σ_min) σ²(t) / T`.
    pub fn diffusion_sq(&self, t: T) -> Result<T> {
        self.check_time(t)?;
        let s = self.sigma_unchecked(t);
        Ok((T::one() + T::one()) * self.log_ratio() / self.horizon * s * s)
    }

    /// Weighting `λ(t) = σ²(t)`.
    pub fn lambda(&self, t: T) -> Result<T> {
        let s = self.sigma(t)?;
        Ok(s * s)
    }

    /// Drift of the forward SDE; identically zero for the VE process.
    pub fn drift(&self, _x: T, _t: T) -> T {
        T::zero()
    }
}

/// Draws `x_t = x_0 + sqrt(v(t)) ε`.
pub fn perturb<T: Real>(cfg: &SdeConfig<T>, x0: &Tensor<T>, t: T, rng: &mut Rng) -> Result<Tensor<T>> {
    cfg.check_kernel_time(t)?;
    let sd = cfg.variance_unchecked(t).sqrt();
    let data = x0.data().iter().map(|&x| x + sd * rng.normal::<T>()).collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Row-wise perturbation with one time per row. Returns `(x_t, ε)`.
pub fn perturb_rows<T: Real>(cfg: &SdeConfig<T>, x0: &Tensor<T>, t: &[T], rng: &mut Rng) -> Result<(Tensor<T>, Tensor<T>)> {
    if t.len() != x0.rows() {
        return Err(Error::dim("perturb_rows", format!("{} times for {} rows", t.len(), x0.rows())));
    }
    let d = x0.cols();
    let mut xt = Vec::with_capacity(x0.numel());
    let mut eps = Vec::with_capacity(x0.numel());
    for (i, &ti) in t.iter().enumerate() {
        cfg.check_kernel_time(ti)?;
        let sd = cfg.variance_unchecked(ti).sqrt();
        for &x in x0.row(i) {
            let e: T = rng.normal();
            eps.push(e);
            xt.push(x + sd * e);
        }
    }
    let shape = vec![x0.rows(), d];
    Ok((Tensor::new(shape.clone(), xt)?, Tensor::new(shape, eps)?))
}

/// `∇_{x_t} log p_0t(x_t | x_0) = −(x_t − x_0) / v(t)`.
pub fn kernel_score<T: Real>(cfg: &SdeConfig<T>, x_t: &Tensor<T>, x0: &Tensor<T>, t: T) -> Result<Tensor<T>> {
    cfg.check_time(t)?;
    let v = cfg.variance_unchecked(t);
    if !(v > T::zero()) {
        return Err(Error::Domain(format!("kernel variance {v} at t = {t} is not positive")));
    }
    if x_t.shape() != x0.shape() {
        return Err(Error::dim("kernel_score", format!("{:?} vs {:?}", x_t.shape(), x0.shape())));
    }
    let data = x_t.data().iter().zip(x0.data()).map(|(&a, &b)| -(a - b) / v).collect();
    Tensor::new(x_t.shape().to_vec(), data)
}

/// Euler–Maruyama integration of the reverse SDE from the prior
/// `N(0, σ²(T) I)` at `T` down to `t_floor` in `n_steps` uniform steps.
pub fn reverse_sample<T, F>(cfg: &SdeConfig<T>, score_fn: F, n_steps: usize, n_samples: usize, dim: usize, rng: &mut Rng) -> Result<Tensor<T>>
where
    T: Real,
    F: FnMut(&Tensor<T>, T) -> Result<Tensor<T>>,
{
    let s_max = cfg.sigma(cfg.horizon)?;
    let init: Vec<T> = (0..n_samples * dim).map(|_| s_max * rng.normal::<T>()).collect();
    let x = Tensor::new(vec![n_samples, dim], init)?;
    reverse_sample_from(cfg, score_fn, x, cfg.horizon, n_steps, rng)
}

/// Reverse-time integration from state `x` at time `t_start` down to
/// `t_floor`. Each step applies
/// `x ← x + g²(t) s(x, t) Δ + g(t) sqrt(Δ) ξ`.
pub fn reverse_sample_from<T, F>(cfg: &SdeConfig<T>, mut score_fn: F, mut x: Tensor<T>, t_start: T, n_steps: usize, rng: &mut Rng) -> Result<Tensor<T>>
where
    T: Real,
    F: FnMut(&Tensor<T>, T) -> Result<Tensor<T>>,
{
    if n_steps == 0 {
        return Err(Error::Contract("reverse sampling needs at least one step".into()));
    }
    cfg.check_kernel_time(t_start)?;
    let dt = (t_start - cfg.t_floor) / T::of_usize(n_steps);
    for k in 0..n_steps {
        let t = t_start - T::of_usize(k) * dt;
        let score = score_fn(&x, t)?;
        if score.shape() != x.shape() {
            return Err(Error::dim("reverse_sample", format!("score {:?} for state {:?}", score.shape(), x.shape())));
        }
        if !score.is_finite() {
            return Err(Error::Numerical(format!("non-finite score at step {k} (t = {t})")));
        }
        let g2 = cfg.diffusion_sq(t)?;
        let noise = (g2 * dt).sqrt();
        for (xi, &si) in x.data_mut().iter_mut().zip(score.data()) {
            *xi += g2 * si * dt + noise * rng.normal::<T>();
        }
    }
    Ok(x)
}
