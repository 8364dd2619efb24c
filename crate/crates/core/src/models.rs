//! Conditional score network `s(x_t, t, z)` and encoder `z = E(x_0)`.
//!
//! Both are small SiLU MLPs. The score trunk receives, at every hidden
//! layer, an additive bias projected from a sinusoidal time embedding and
//! from a re-expanded latent code.

use crate::error::{Error, Result};
use crate::numcore::{Linear, ParamStore, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::sde::SdeConfig;

/// Sinusoidal features `[sin(ω_0 t), cos(ω_0 t), sin(ω_1 t), ...]` over
/// geometrically spaced frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeEmbedding<T> {
    dim: usize,
    frequencies: Vec<T>,
}

impl<T: Real> TimeEmbedding<T> {
    pub const MIN_FREQUENCY: f64 = 1.0;
    pub const MAX_FREQUENCY: f64 = 100.0;

    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Config(format!("time embedding dimension must be even and positive, got {dim}")));
        }
        let k = dim / 2;
        let (lo, hi) = (Self::MIN_FREQUENCY.ln(), Self::MAX_FREQUENCY.ln());
        let frequencies = (0..k)
            .map(|i| {
                let f = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
                T::of((lo + f * (hi - lo)).exp())
            })
            .collect();
        Ok(Self { dim, frequencies })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frequencies(&self) -> &[T] {
        &self.frequencies
    }

    pub fn embed(&self, t: &[T]) -> Tensor<T> {
        let mut data = Vec::with_capacity(t.len() * self.dim);
        for &ti in t {
            for &w in &self.frequencies {
                data.push((w * ti).sin());
                data.push((w * ti).cos());
            }
        }
        Tensor::new(vec![t.len(), self.dim], data).expect("sized")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreArch {
    pub data_dim: usize,
    pub widths: Vec<usize>,
    pub time_embed_dim: usize,
    /// `0` builds an unconditional model.
    pub latent_dim: usize,
    /// Width of the latent re-expansion stack.
    pub latent_embed_dim: usize,
}

impl ScoreArch {
    pub fn new(data_dim: usize, widths: Vec<usize>, latent_dim: usize) -> Self {
        Self {
            data_dim,
            widths,
            time_embed_dim: 16,
            latent_dim,
            latent_embed_dim: 32,
        }
    }
}

/// Number of dense layers that lift a latent code before conditioning.
pub const LATENT_EXPANSION_LAYERS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreModel<T> {
    arch: ScoreArch,
    sde: SdeConfig<T>,
    embedding: TimeEmbedding<T>,
    params: ParamStore<T>,
    trunk: Vec<Linear>,
    time_proj: Vec<usize>,
    latent_proj: Vec<usize>,
    expander: Vec<Linear>,
    out: Linear,
}

impl<T: Real> ScoreModel<T> {
    pub fn new(arch: ScoreArch, sde: SdeConfig<T>, rng: &mut Rng) -> Result<Self> {
        if arch.data_dim == 0 || arch.widths.is_empty() || arch.widths.contains(&0) {
            return Err(Error::Config(format!("invalid score architecture {arch:?}")));
        }
        if arch.latent_dim > 0 && arch.latent_embed_dim == 0 {
            return Err(Error::Config("latent_embed_dim must be positive for a conditional model".into()));
        }
        sde.validate()?;
        let embedding = TimeEmbedding::new(arch.time_embed_dim)?;
        let mut params = ParamStore::new();
        let mut trunk = Vec::new();
        let mut time_proj = Vec::new();
        let mut latent_proj = Vec::new();
        let mut expander = Vec::new();

        if arch.latent_dim > 0 {
            let mut fan_in = arch.latent_dim;
            for i in 0..LATENT_EXPANSION_LAYERS {
                expander.push(Linear::register(&mut params, &format!("expand.{i}"), fan_in, arch.latent_embed_dim, rng));
                fan_in = arch.latent_embed_dim;
            }
        }
        let mut fan_in = arch.data_dim;
        for (i, &w) in arch.widths.iter().enumerate() {
            trunk.push(Linear::register(&mut params, &format!("trunk.{i}"), fan_in, w, rng));
            time_proj.push(register_matrix(&mut params, &format!("time.{i}.w"), arch.time_embed_dim, w, rng));
            if arch.latent_dim > 0 {
                latent_proj.push(register_matrix(&mut params, &format!("latent.{i}.w"), arch.latent_embed_dim, w, rng));
            }
            fan_in = w;
        }
        let out = Linear::register_zero(&mut params, "out", fan_in, arch.data_dim);
        Ok(Self {
            arch,
            sde,
            embedding,
            params,
            trunk,
            time_proj,
            latent_proj,
            expander,
            out,
        })
    }

    pub fn arch(&self) -> &ScoreArch {
        &self.arch
    }

    pub fn sde(&self) -> &SdeConfig<T> {
        &self.sde
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn embedding(&self) -> &TimeEmbedding<T> {
        &self.embedding
    }

    /// Zeroes every latent-to-layer projection, cutting the model off from
    /// its code input.
    pub fn zero_latent_conditioning(&mut self) {
        for &slot in &self.latent_proj {
            self.params.get_mut(slot).data_mut().fill(T::zero());
        }
    }

    /// Differentiable forward pass. `vars` comes from binding
    /// [`ScoreModel::params`] on the same tape.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x_t: Var, t: &[T], z: Option<Var>) -> Result<Var> {
        let shape = tape.shape(x_t).to_vec();
        if shape.len() != 2 || shape[1] != self.arch.data_dim {
            return Err(Error::dim("score_forward", format!("x_t {shape:?}, data dim {}", self.arch.data_dim)));
        }
        let m = shape[0];
        if t.len() != m {
            return Err(Error::dim("score_forward", format!("{} times for batch {m}", t.len())));
        }
        let latent = match (self.arch.latent_dim, z) {
            (0, None) => None,
            (0, Some(_)) => return Err(Error::dim("score_forward", "unconditional model given a code")),
            (_, None) => return Err(Error::dim("score_forward", "conditional model needs a code")),
            (dz, Some(z)) => {
                let zs = tape.shape(z);
                if zs != [m, dz] {
                    return Err(Error::dim("score_forward", format!("code {zs:?}, expected [{m}, {dz}]")));
                }
                let mut r = z;
                for (i, layer) in self.expander.iter().enumerate() {
                    r = layer.forward(tape, vars, r)?;
                    if i + 1 < self.expander.len() {
                        r = tape.silu(r);
                    }
                }
                Some(r)
            }
        };

        let mut c_in = Vec::with_capacity(m);
        let mut c_out = Vec::with_capacity(m);
        for &ti in t {
            let s = self.sde.sigma(ti)?;
            // Unit-scale input assuming data of roughly unit variance.
            c_in.push(T::one() / (T::one() + s * s).sqrt());
            c_out.push(T::one() / s);
        }
        let c_in = tape.constant(Tensor::column(c_in));
        let c_out = tape.constant(Tensor::column(c_out));
        let emb = tape.constant(self.embedding.embed(t));

        let mut h = tape.mul_col(x_t, c_in)?;
        for (i, layer) in self.trunk.iter().enumerate() {
            let mut a = layer.forward(tape, vars, h)?;
            let tb = tape.matmul(emb, vars[self.time_proj[i]])?;
            a = tape.add(a, tb)?;
            if let Some(r) = latent {
                let zb = tape.matmul(r, vars[self.latent_proj[i]])?;
                a = tape.add(a, zb)?;
            }
            h = tape.silu(a);
        }
        let raw = self.out.forward(tape, vars, h)?;
        tape.mul_col(raw, c_out)
    }

    /// Inference-only evaluation.
    pub fn score(&self, x_t: &Tensor<T>, t: &[T], z: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let x = tape.constant(x_t.clone());
        let z = z.map(|z| tape.constant(z.clone()));
        let out = self.forward(&mut tape, &vars, x, t, z)?;
        Ok(tape.to_tensor(out))
    }
}

fn register_matrix<T: Real>(store: &mut ParamStore<T>, name: &str, rows: usize, cols: usize, rng: &mut Rng) -> usize {
    let std = T::one() / T::of_usize(rows).sqrt();
    let w = (0..rows * cols).map(|_| rng.normal::<T>() * std).collect();
    store.insert(name, Tensor::new(vec![rows, cols], w).expect("sized"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderMode {
    /// Point code regularised by its L1 norm.
    Deterministic,
    /// Gaussian code `N(μ, diag(exp(logvar)))` regularised by KL to `N(0, I)`.
    Probabilistic,
}

impl EncoderMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l1" | "deterministic" => Ok(Self::Deterministic),
            "kl" | "probabilistic" => Ok(Self::Probabilistic),
            _ => Err(Error::Config(format!("unknown encoder mode '{s}' (expected l1 or kl)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Deterministic => "l1",
            Self::Probabilistic => "kl",
        }
    }

    pub fn default_reg_weight(&self) -> f64 {
        match self {
            Self::Deterministic => 1e-5,
            Self::Probabilistic => 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderArch {
    pub data_dim: usize,
    pub widths: Vec<usize>,
    pub latent_dim: usize,
    pub mode: EncoderMode,
}

/// Output of [`Encoder::encode`].
#[derive(Clone, Copy, Debug)]
pub struct Encoding {
    /// The code handed to the score model (a sample in probabilistic mode).
    pub z: Var,
    pub mean: Var,
    pub logvar: Option<Var>,
    /// Batch-mean L1 norm or KL divergence.
    pub reg: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    arch: EncoderArch,
    params: ParamStore<T>,
    trunk: Vec<Linear>,
    dense: [Linear; 2],
    mean_head: Linear,
    logvar_head: Option<Linear>,
}

impl<T: Real> Encoder<T> {
    pub fn new(arch: EncoderArch, rng: &mut Rng) -> Result<Self> {
        if arch.data_dim == 0 || arch.latent_dim == 0 || arch.widths.is_empty() || arch.widths.contains(&0) {
            return Err(Error::Config(format!("invalid encoder architecture {arch:?}")));
        }
        let mut params = ParamStore::new();
        let mut trunk = Vec::new();
        let mut fan_in = arch.data_dim;
        for (i, &w) in arch.widths.iter().enumerate() {
            trunk.push(Linear::register(&mut params, &format!("enc.trunk.{i}"), fan_in, w, rng));
            fan_in = w;
        }
        let dense = [
            Linear::register(&mut params, "enc.dense.0", fan_in, fan_in, rng),
            Linear::register(&mut params, "enc.dense.1", fan_in, fan_in, rng),
        ];
        let mean_head = Linear::register(&mut params, "enc.mean", fan_in, arch.latent_dim, rng);
        let logvar_head = match arch.mode {
            EncoderMode::Deterministic => None,
            EncoderMode::Probabilistic => Some(Linear::register_zero(&mut params, "enc.logvar", fan_in, arch.latent_dim)),
        };
        Ok(Self {
            arch,
            params,
            trunk,
            dense,
            mean_head,
            logvar_head,
        })
    }

    pub fn arch(&self) -> &EncoderArch {
        &self.arch
    }

    pub fn mode(&self) -> EncoderMode {
        self.arch.mode
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Differentiable encoding; `rng` drives the reparameterised sample.
    pub fn encode(&self, tape: &mut Tape<T>, vars: &[Var], x0: Var, rng: &mut Rng) -> Result<Encoding> {
        let shape = tape.shape(x0).to_vec();
        if shape.len() != 2 || shape[1] != self.arch.data_dim {
            return Err(Error::dim("encode", format!("x0 {shape:?}, data dim {}", self.arch.data_dim)));
        }
        let m = shape[0];
        let mut h = x0;
        for layer in self.trunk.iter().chain(&self.dense) {
            let a = layer.forward(tape, vars, h)?;
            h = tape.silu(a);
        }
        let mean = self.mean_head.forward(tape, vars, h)?;
        let inv_m = T::one() / T::of_usize(m);
        match &self.logvar_head {
            None => {
                let a = tape.abs(mean);
                let s = tape.sum(a);
                let reg = tape.scale(s, inv_m);
                Ok(Encoding {
                    z: mean,
                    mean,
                    logvar: None,
                    reg,
                })
            }
            Some(head) => {
                let logvar = head.forward(tape, vars, h)?;
                let half = tape.scale(logvar, T::of(0.5));
                let sd = tape.exp(half);
                let eps = Tensor::new(vec![m, self.arch.latent_dim], rng.normals(m * self.arch.latent_dim))?;
                let eps = tape.constant(eps);
                let noise = tape.mul(sd, eps)?;
                let z = tape.add(mean, noise)?;

                // KL(N(μ, σ²) || N(0, 1)) = ½ Σ (σ² + μ² − 1 − log σ²)
                let var = tape.exp(logvar);
                let mu2 = tape.square(mean);
                let a = tape.add(var, mu2)?;
                let b = tape.sub(a, logvar)?;
                let s = tape.sum(b);
                let s = tape.shift(s, -T::of_usize(m * self.arch.latent_dim));
                let reg = tape.scale(s, T::of(0.5) * inv_m);
                Ok(Encoding {
                    z,
                    mean,
                    logvar: Some(logvar),
                    reg,
                })
            }
        }
    }

    /// Inference-only codes: samples in probabilistic mode.
    pub fn codes(&self, x0: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let x = tape.constant(x0.clone());
        let enc = self.encode(&mut tape, &vars, x, rng)?;
        Ok(tape.to_tensor(enc.z))
    }

    /// Inference-only code means (equal to [`Encoder::codes`] when deterministic).
    pub fn means(&self, x0: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let x = tape.constant(x0.clone());
        let enc = self.encode(&mut tape, &vars, x, &mut Rng::new(0))?;
        Ok(tape.to_tensor(enc.mean))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randomize(store: &mut ParamStore<f64>, scale: f64, rng: &mut Rng) {
        for t in store.tensors_mut() {
            for v in t.data_mut() {
                *v = scale * rng.normal::<f64>();
            }
        }
    }

    fn tiny(latent_dim: usize) -> ScoreModel<f64> {
        let mut arch = ScoreArch::new(2, vec![6, 5], latent_dim);
        arch.time_embed_dim = 4;
        arch.latent_embed_dim = 3;
        ScoreModel::new(arch, SdeConfig::default(), &mut Rng::new(1)).unwrap()
    }

    fn encoder(mode: EncoderMode) -> Encoder<f64> {
        let arch = EncoderArch {
            data_dim: 2,
            widths: vec![4],
            latent_dim: 2,
            mode,
        };
        Encoder::new(arch, &mut Rng::new(2)).unwrap()
    }

    /// Forces the mean (and log-variance) heads to constant outputs.
    fn pin_heads(enc: &mut Encoder<f64>, mean: [f64; 2], logvar: Option<[f64; 2]>) {
        let p = enc.params_mut();
        for (name, bias) in [("enc.mean", Some(mean)), ("enc.logvar", logvar)] {
            let Some(bias) = bias else { continue };
            let w = p.slot(&format!("{name}.w")).unwrap();
            p.get_mut(w).data_mut().fill(0.0);
            let b = p.slot(&format!("{name}.b")).unwrap();
            p.get_mut(b).data_mut().copy_from_slice(&bias);
        }
    }

    fn reg_of(enc: &Encoder<f64>, x0: &Tensor<f64>) -> f64 {
        let mut tape = Tape::new();
        let vars = enc.params().bind_frozen(&mut tape);
        let x = tape.constant(x0.clone());
        let e = enc.encode(&mut tape, &vars, x, &mut Rng::new(0)).unwrap();
        tape.scalar_value(e.reg)
    }

    #[test]
    fn time_embedding_at_zero_and_distinctness() {
        let e = TimeEmbedding::<f64>::new(8).unwrap();
        let at0 = e.embed(&[0.0]);
        assert_eq!(at0.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(e.embed(&[0.3]), e.embed(&[0.3]));
        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let all = e.embed(&grid);
        for i in 0..100 {
            for j in 0..i {
                let d: f64 = all.row(i).iter().zip(all.row(j)).map(|(a, b)| (a - b).abs()).sum();
                assert!(d > 1e-6, "rows {i} and {j} coincide");
            }
        }
        assert!(TimeEmbedding::<f64>::new(5).is_err());
    }

    #[test]
    fn score_output_shape_and_finiteness() {
        let mut m = tiny(2);
        randomize(m.params_mut(), 0.5, &mut Rng::new(3));
        let mut rng = Rng::new(4);
        let x = Tensor::new(vec![5, 2], rng.normals(10)).unwrap();
        let z = Tensor::new(vec![5, 2], rng.normals(10)).unwrap();
        let out = m.score(&x, &[0.001, 0.2, 0.5, 0.9, 1.0], Some(&z)).unwrap();
        assert_eq!(out.shape(), &[5, 2]);
        assert!(out.is_finite());
    }

    #[test]
    fn fresh_model_outputs_zero() {
        let m = tiny(0);
        let x = Tensor::new(vec![3, 2], vec![1.0; 6]).unwrap();
        let out = m.score(&x, &[0.1, 0.5, 0.9], None).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_contracts() {
        let m = tiny(2);
        let x = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        let z3 = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(m.score(&x, &[0.5, 0.5], None), Err(Error::Dimension { .. })));
        assert!(matches!(m.score(&x, &[0.5, 0.5], Some(&z3)), Err(Error::Dimension { .. })));
        assert!(matches!(m.score(&x, &[0.5], Some(&x)), Err(Error::Dimension { .. })));
        let x3 = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(tiny(0).score(&x3, &[0.5], None), Err(Error::Dimension { .. })));
        assert!(matches!(tiny(0).score(&x, &[0.5, 0.5], Some(&x)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut m = tiny(2);
        randomize(m.params_mut(), 0.4, &mut Rng::new(5));
        let mut rng = Rng::new(6);
        let x = Tensor::new(vec![3, 2], rng.normals(6)).unwrap();
        let z = Tensor::new(vec![3, 2], rng.normals(6)).unwrap();
        let t = [0.2, 0.45, 0.7];
        let objective = |m: &ScoreModel<f64>| -> f64 { m.score(&x, &t, Some(&z)).unwrap().data().iter().map(|v| v * v).sum() };

        let mut tape = Tape::new();
        let vars = m.params().bind(&mut tape);
        let xv = tape.constant(x.clone());
        let zv = tape.constant(z.clone());
        let out = m.forward(&mut tape, &vars, xv, &t, Some(zv)).unwrap();
        let sq = tape.square(out);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();

        let h = 1e-6;
        for (slot, &var) in vars.iter().enumerate() {
            let analytic = grads.get(var).unwrap().to_vec();
            for (k, &an) in analytic.iter().enumerate() {
                let orig = m.params().get(slot).data()[k];
                m.params_mut().get_mut(slot).data_mut()[k] = orig + h;
                let fp = objective(&m);
                m.params_mut().get_mut(slot).data_mut()[k] = orig - h;
                let fm = objective(&m);
                m.params_mut().get_mut(slot).data_mut()[k] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let tol = 1e-5 * fd.abs().max(an.abs()).max(1e-2);
                assert!((fd - an).abs() < tol, "{} [{k}]: fd {fd} vs {an}", m.params().names()[slot]);
            }
        }
    }

    #[test]
    fn zeroed_conditioning_reduces_to_unconditional_net() {
        let mut cond = tiny(2);
        randomize(cond.params_mut(), 0.5, &mut Rng::new(7));
        cond.zero_latent_conditioning();
        let mut uncond = tiny(0);
        let shared: Vec<(String, Tensor<f64>)> = cond
            .params()
            .iter()
            .filter(|(n, _)| uncond.params().slot(n).is_some())
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        assert_eq!(shared.len(), uncond.params().len());
        uncond.params_mut().load_from(&shared).unwrap();

        let mut rng = Rng::new(8);
        let x = Tensor::new(vec![4, 2], rng.normals(8)).unwrap();
        let z = Tensor::new(vec![4, 2], rng.normals(8)).unwrap();
        let t = [0.1, 0.3, 0.6, 0.95];
        let a = cond.score(&x, &t, Some(&z)).unwrap();
        let b = uncond.score(&x, &t, None).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0));
        }
    }

    #[test]
    fn regulariser_examples() {
        let x0 = Tensor::new(vec![3, 2], vec![0.1, 0.2, -0.3, 0.4, 0.9, -1.0]).unwrap();
        let mut det = encoder(EncoderMode::Deterministic);
        pin_heads(&mut det, [0.5, -0.5], None);
        assert!((reg_of(&det, &x0) - 1.0).abs() < 1e-14);

        let mut prob = encoder(EncoderMode::Probabilistic);
        pin_heads(&mut prob, [0.0, 0.0], Some([0.0, 0.0]));
        assert!(reg_of(&prob, &x0).abs() < 1e-14);
        pin_heads(&mut prob, [1.0, 0.0], Some([0.0, 0.0]));
        assert!((reg_of(&prob, &x0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn reparameterised_codes_have_requested_moments() {
        let mut enc = encoder(EncoderMode::Probabilistic);
        let (mu, logvar) = ([0.7, -1.3], [(0.25f64).ln(), (2.0f64).ln()]);
        pin_heads(&mut enc, mu, Some(logvar));
        let n = 100_000;
        let x0 = Tensor::full(vec![n, 2], 0.3);
        let z = enc.codes(&x0, &mut Rng::new(9)).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..n).map(|i| z.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let true_var = logvar[j].exp();
            assert!((mean - mu[j]).abs() < 3.0 * (true_var / n as f64).sqrt());
            // sd of a sample variance: σ² √(2/(n-1))
            assert!((var - true_var).abs() < 3.0 * true_var * (2.0 / (n - 1) as f64).sqrt());
        }
        assert_eq!(enc.means(&x0).unwrap().row(0), &mu);
    }

    #[test]
    fn deterministic_codes_ignore_rng() {
        let enc = encoder(EncoderMode::Deterministic);
        let x0 = Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(enc.codes(&x0, &mut Rng::new(1)).unwrap(), enc.codes(&x0, &mut Rng::new(2)).unwrap());
        assert_eq!(EncoderMode::parse("kl").unwrap(), EncoderMode::Probabilistic);
        assert!(EncoderMode::parse("vq").is_err());
    }

    #[test]
    fn single_precision_forward() {
        let mut arch = ScoreArch::new(2, vec![8], 2);
        arch.time_embed_dim = 4;
        let m = ScoreModel::<f32>::new(arch, SdeConfig::default(), &mut Rng::new(0)).unwrap();
        let x = Tensor::new(vec![2, 2], vec![0.5f32, -0.5, 1.0, 0.0]).unwrap();
        let z = Tensor::new(vec![2, 2], vec![0.1f32, 0.2, 0.3, 0.4]).unwrap();
        let out = m.score(&x, &[0.3, 0.6], Some(&z)).unwrap();
        assert!(out.is_finite());
    }
}
