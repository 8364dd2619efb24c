//! Plain-text run configuration: one `key = value` per line, `#` starts a
//! comment, every key optional.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scorelab::analytic::DatasetKind;
use scorelab::metrics::{CodeReadout, DiversitySweep, SilhouetteSweep};
use scorelab::models::EncoderMode;
use scorelab::objectives::TimeSampling;
use scorelab::{DatasetParams, SdeConfig, TimeWeighting, TrainSpec};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("line {line}: expected `key = value`, got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("line {line}: key '{key}' given twice")]
    Duplicate { line: usize, key: String },
    #[error("invalid value '{value}' for {key}: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `mixture-<k>`, `two-moons`, `rings` or `idx`.
    pub dataset: String,
    pub n_points: usize,
    pub radius: f64,
    pub component_std: f64,
    pub noise: f64,
    pub idx_images: String,
    pub idx_labels: String,
    /// Target side length after mean pooling; `0` keeps the native size.
    pub idx_resolution: usize,
    /// Maximum number of IDX items to load; `0` loads all.
    pub idx_limit: usize,

    pub sigma_min: f64,
    pub sigma_max: f64,
    pub horizon: f64,
    pub t_floor: f64,

    pub widths: Vec<usize>,
    pub time_embed_dim: usize,
    pub latent_embed_dim: usize,
    pub latent_dim: usize,
    pub encoder: EncoderMode,
    pub ablate_code: bool,

    pub weighting: TimeSampling,
    pub fixed_t: f64,
    /// `None` selects the encoder family's default.
    pub reg_weight: Option<f64>,
    pub iterations: usize,
    /// Share of `iterations` spent in the frozen-encoder uniform-t phase.
    /// Ignored when the weighting already is uniform-t.
    pub phase2_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,

    pub sample_steps: usize,
    pub runs: usize,
    pub holdout: f64,
    pub readout: CodeReadout,
    pub check_draws: usize,
    pub diversity_codes: usize,
    pub diversity_k: usize,

    /// Seed of the toy dataset draw, independent of `seed` so that reruns
    /// with another seed see the same data.
    pub data_seed: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sde = SdeConfig::default();
        let data = DatasetParams::default();
        Self {
            dataset: "mixture-2".into(),
            n_points: 1000,
            radius: data.radius,
            component_std: data.std,
            noise: data.noise,
            idx_images: String::new(),
            idx_labels: String::new(),
            idx_resolution: 0,
            idx_limit: 0,
            sigma_min: sde.sigma_min,
            sigma_max: sde.sigma_max,
            horizon: sde.horizon,
            t_floor: sde.t_floor,
            widths: vec![128, 128, 128],
            time_embed_dim: 16,
            latent_embed_dim: 32,
            latent_dim: 2,
            encoder: EncoderMode::Deterministic,
            ablate_code: false,
            weighting: TimeSampling::UniformT,
            fixed_t: 0.5,
            reg_weight: None,
            iterations: 1000,
            phase2_fraction: 0.5,
            batch_size: 128,
            learning_rate: 2e-4,
            sample_steps: 1000,
            runs: 3,
            holdout: 0.2,
            readout: CodeReadout::Sample,
            check_draws: 100_000,
            diversity_codes: 16,
            diversity_k: 8,
            data_seed: 0,
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V, ConfigError>
where
    V::Err: Display,
{
    value.parse().map_err(|e: V::Err| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_with<V, E: Display>(key: &str, value: &str, f: impl FnOnce(&str) -> Result<V, E>) -> Result<V, ConfigError> {
    f(value).map_err(|e| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    pub const KEYS: [&'static str; 36] = [
        "dataset",
        "n_points",
        "radius",
        "component_std",
        "noise",
        "idx_images",
        "idx_labels",
        "idx_resolution",
        "idx_limit",
        "sigma_min",
        "sigma_max",
        "horizon",
        "t_floor",
        "widths",
        "time_embed_dim",
        "latent_embed_dim",
        "latent_dim",
        "encoder",
        "ablate_code",
        "weighting",
        "fixed_t",
        "reg_weight",
        "iterations",
        "phase2_fraction",
        "batch_size",
        "learning_rate",
        "sample_steps",
        "runs",
        "holdout",
        "readout",
        "check_draws",
        "diversity_codes",
        "diversity_k",
        "data_seed",
        "seed",
        "out_dir",
    ];

    /// Parses config text. Unknown keys are collected and reported together.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        let mut unknown = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.into() });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.into() });
            }
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::Duplicate { line: i + 1, key: key.into() });
            }
            seen.push(key.into());
            if !cfg.set(key, value)? {
                unknown.push(key.to_string());
            }
        }
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key; returns `false` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        match key {
            "dataset" => {
                if value != "idx" {
                    parse_with(key, value, DatasetKind::parse)?;
                }
                self.dataset = value.into();
            }
            "n_points" => self.n_points = parse_value(key, value)?,
            "radius" => self.radius = parse_value(key, value)?,
            "component_std" => self.component_std = parse_value(key, value)?,
            "noise" => self.noise = parse_value(key, value)?,
            "idx_images" => self.idx_images = value.into(),
            "idx_labels" => self.idx_labels = value.into(),
            "idx_resolution" => self.idx_resolution = parse_value(key, value)?,
            "idx_limit" => self.idx_limit = parse_value(key, value)?,
            "sigma_min" => self.sigma_min = parse_value(key, value)?,
            "sigma_max" => self.sigma_max = parse_value(key, value)?,
            "horizon" => self.horizon = parse_value(key, value)?,
            "t_floor" => self.t_floor = parse_value(key, value)?,
            "widths" => {
                self.widths = value.split(',').map(|w| parse_value(key, w.trim())).collect::<Result<_, _>>()?;
            }
            "time_embed_dim" => self.time_embed_dim = parse_value(key, value)?,
            "latent_embed_dim" => self.latent_embed_dim = parse_value(key, value)?,
            "latent_dim" => self.latent_dim = parse_value(key, value)?,
            "encoder" => self.encoder = parse_with(key, value, EncoderMode::parse)?,
            "ablate_code" => self.ablate_code = parse_value(key, value)?,
            "weighting" => self.weighting = parse_with(key, value, TimeSampling::parse)?,
            "fixed_t" => self.fixed_t = parse_value(key, value)?,
            "reg_weight" => self.reg_weight = if value == "auto" { None } else { Some(parse_value(key, value)?) },
            "iterations" => self.iterations = parse_value(key, value)?,
            "phase2_fraction" => self.phase2_fraction = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "sample_steps" => self.sample_steps = parse_value(key, value)?,
            "runs" => self.runs = parse_value(key, value)?,
            "holdout" => self.holdout = parse_value(key, value)?,
            "readout" => self.readout = parse_with(key, value, CodeReadout::parse)?,
            "check_draws" => self.check_draws = parse_value(key, value)?,
            "diversity_codes" => self.diversity_codes = parse_value(key, value)?,
            "diversity_k" => self.diversity_k = parse_value(key, value)?,
            "data_seed" => self.data_seed = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Rendered `(key, value)` pairs in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        vec![
            ("dataset", self.dataset.clone()),
            ("n_points", self.n_points.to_string()),
            ("radius", self.radius.to_string()),
            ("component_std", self.component_std.to_string()),
            ("noise", self.noise.to_string()),
            ("idx_images", self.idx_images.clone()),
            ("idx_labels", self.idx_labels.clone()),
            ("idx_resolution", self.idx_resolution.to_string()),
            ("idx_limit", self.idx_limit.to_string()),
            ("sigma_min", self.sigma_min.to_string()),
            ("sigma_max", self.sigma_max.to_string()),
            ("horizon", self.horizon.to_string()),
            ("t_floor", self.t_floor.to_string()),
            ("widths", widths.join(",")),
            ("time_embed_dim", self.time_embed_dim.to_string()),
            ("latent_embed_dim", self.latent_embed_dim.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("encoder", self.encoder.name().into()),
            ("ablate_code", self.ablate_code.to_string()),
            ("weighting", self.weighting.name().into()),
            ("fixed_t", self.fixed_t.to_string()),
            ("reg_weight", self.reg_weight.map_or_else(|| "auto".into(), |w| w.to_string())),
            ("iterations", self.iterations.to_string()),
            ("phase2_fraction", self.phase2_fraction.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("sample_steps", self.sample_steps.to_string()),
            ("runs", self.runs.to_string()),
            ("holdout", self.holdout.to_string()),
            ("readout", self.readout.name().into()),
            ("check_draws", self.check_draws.to_string()),
            ("diversity_codes", self.diversity_codes.to_string()),
            ("diversity_k", self.diversity_k.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ]
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn sde(&self) -> Result<SdeConfig, ConfigError> {
        SdeConfig::new(self.sigma_min, self.sigma_max, self.horizon, self.t_floor).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn dataset_kind(&self) -> Option<DatasetKind> {
        DatasetKind::parse(&self.dataset).ok()
    }

    pub fn dataset_params(&self) -> DatasetParams {
        DatasetParams {
            radius: self.radius,
            std: self.component_std,
            noise: self.noise,
        }
    }

    pub fn time_weighting(&self) -> TimeWeighting {
        match self.weighting {
            TimeSampling::UniformT => TimeWeighting::uniform_t(),
            TimeSampling::UniformSigma => TimeWeighting::uniform_sigma(),
            TimeSampling::FixedT => TimeWeighting::fixed(self.fixed_t),
        }
    }

    pub fn effective_reg_weight(&self) -> f64 {
        self.reg_weight.unwrap_or_else(|| self.encoder.default_reg_weight())
    }

    /// Iterations of the (phase 1, phase 2) schedule.
    pub fn phase_iterations(&self) -> (usize, usize) {
        if self.weighting == TimeSampling::UniformT || self.latent_dim == 0 {
            return (self.iterations, 0);
        }
        let p2 = (self.iterations as f64 * self.phase2_fraction).round() as usize;
        (self.iterations - p2.min(self.iterations), p2.min(self.iterations))
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let sde = self.sde()?;
        if self.dataset == "idx" {
            if self.idx_images.is_empty() || self.idx_labels.is_empty() {
                return invalid("dataset = idx needs idx_images and idx_labels".into());
            }
        } else if self.n_points == 0 {
            return invalid("n_points must be positive".into());
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return invalid("widths must be a non-empty list of positive integers".into());
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return invalid(format!("time_embed_dim must be even and positive, got {}", self.time_embed_dim));
        }
        if self.latent_dim > 0 && self.latent_embed_dim == 0 {
            return invalid("latent_embed_dim must be positive".into());
        }
        if self.weighting == TimeSampling::FixedT && !(self.fixed_t >= sde.t_floor && self.fixed_t <= sde.horizon) {
            return invalid(format!("fixed_t = {} outside [t_floor, horizon]", self.fixed_t));
        }
        if let Some(w) = self.reg_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return invalid(format!("reg_weight must be a non-negative number, got {w}"));
            }
        }
        if !(0.0..=1.0).contains(&self.phase2_fraction) {
            return invalid(format!("phase2_fraction must lie in [0, 1], got {}", self.phase2_fraction));
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.sample_steps == 0 || self.runs == 0 || self.check_draws < 2 {
            return invalid("sample_steps and runs must be positive, check_draws at least 2".into());
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return invalid(format!("holdout must lie in (0, 1), got {}", self.holdout));
        }
        if self.diversity_k < 2 || self.diversity_codes == 0 {
            return invalid("diversity_k must be at least 2 and diversity_codes positive".into());
        }
        Ok(())
    }

    pub fn train_spec(&self) -> Result<TrainSpec, ConfigError> {
        let (phase1_iters, phase2_iters) = self.phase_iterations();
        Ok(TrainSpec {
            sde: self.sde()?,
            widths: self.widths.clone(),
            time_embed_dim: self.time_embed_dim,
            latent_embed_dim: self.latent_embed_dim,
            latent_dim: self.latent_dim,
            encoder_mode: self.encoder,
            ablate_code: self.ablate_code,
            weighting: self.time_weighting(),
            reg_weight: self.effective_reg_weight(),
            phase1_iters,
            phase2_iters,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
        })
    }

    pub fn silhouette_sweep(&self) -> SilhouetteSweep {
        SilhouetteSweep {
            runs: self.runs,
            holdout: self.holdout,
            readout: self.readout,
            seed: self.seed,
        }
    }

    pub fn diversity_sweep(&self) -> DiversitySweep {
        DiversitySweep {
            runs: self.runs,
            holdout: self.holdout,
            n_codes: self.diversity_codes,
            k_samples: self.diversity_k,
            n_steps: self.sample_steps,
            readout: CodeReadout::Mean,
            seed: self.seed,
        }
    }
}
