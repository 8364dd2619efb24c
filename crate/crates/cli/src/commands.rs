//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use scorelab::analytic::{circle_mixture, make_dataset, DatasetKind};
use scorelab::metrics::{aggregate, diversity_at_dz, latent_grid, sample_for_codes, silhouette_at_t};
use scorelab::models::{EncoderArch, ScoreArch};
use scorelab::numcore::ParamStore;
use scorelab::objectives::{decomposition_check_against, dsm_graph, repr_graph, Batch, MixtureOracle, ScoreFunction};
use scorelab::sde::{reverse_sample, reverse_sample_from};
use scorelab::{Encoder, GaussianMixture, LabeledDataset, Rng, ScoreModel, SdeConfig, Tape, Tensor, Trainer};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::export::{indexed, num, scatter_ppm, Csv};
use crate::idx::load_idx;
use crate::{CliError, CliResult};

/// Independent random streams derived from the run seed.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const ENCODE: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const CHECK: u64 = 5;
    pub const CROSS: u64 = 6;
}

pub const CHECKPOINT_FILE: &str = "checkpoint.scrp";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const LATENTS_FILE: &str = "latents.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CELLS_DIR: &str = "cells";
pub const CROSS_FILE: &str = "cross_denoise.csv";

/// Command-line overrides applied on top of a config file or checkpoint.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<RunConfig>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    /// Explicit config, else `fallback` (a checkpoint's config), else
    /// defaults; then the flag overrides. The result is validated.
    pub fn resolve(&self, fallback: Option<RunConfig>) -> CliResult<RunConfig> {
        let mut cfg = self.config.clone().or(fallback).unwrap_or_default();
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn master(cfg: &RunConfig) -> Rng {
    Rng::new(cfg.seed)
}

/// The configured dataset; toy data are drawn from the `DATA` stream of
/// `data_seed`.
pub fn load_dataset(cfg: &RunConfig) -> CliResult<LabeledDataset> {
    if cfg.dataset == "idx" {
        return Ok(load_idx(
            Path::new(&cfg.idx_images),
            Path::new(&cfg.idx_labels),
            cfg.idx_resolution,
            cfg.idx_limit,
        )?);
    }
    let kind = DatasetKind::parse(&cfg.dataset)?;
    Ok(make_dataset(
        &kind,
        cfg.n_points,
        &cfg.dataset_params(),
        &mut Rng::new(cfg.data_seed).derive(streams::DATA),
    )?)
}

fn analytic_mixture(cfg: &RunConfig) -> CliResult<GaussianMixture> {
    match cfg.dataset_kind() {
        Some(DatasetKind::Mixture(k)) => Ok(circle_mixture(k, &cfg.dataset_params())?),
        _ => Err(CliError::Core(scorelab::Error::Unsupported(format!(
            "dataset '{}' has no closed-form score oracle; check needs a mixture-<k> dataset",
            cfg.dataset
        )))),
    }
}

// ---------------------------------------------------------------- train

fn save_run(cfg: &RunConfig, ckpt: &Checkpoint, loss: &Csv) -> CliResult<()> {
    ckpt.save(&cfg.out_dir.join(CHECKPOINT_FILE))?;
    write_file(&cfg.out_dir.join(LOSS_FILE), loss.as_str())?;
    write_file(&cfg.out_dir.join(CONFIG_FILE), &cfg.render())
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let data = load_dataset(cfg)?;
    let spec = cfg.train_spec()?;
    ensure_dir(&cfg.out_dir)?;
    let mut rng = master(cfg).derive(streams::TRAIN);
    let mut trainer = Trainer::new(spec.clone(), data.dim(), &mut rng)?;
    let mut loss = Csv::new(&["step", "total", "dsm_term", "reg_term"]);
    for step in 1..=spec.total_iters() {
        match trainer.step(&data.points, &mut rng) {
            Ok(r) => loss.row(&[step.to_string(), num(r.total), num(r.dsm_term), num(r.reg_term)]),
            Err(e) => {
                // The failed step applied no update: the model is the last good one.
                save_run(cfg, &Checkpoint::from_models(trainer.score(), trainer.encoder(), cfg), &loss)?;
                return Err(CliError::Numerical(format!("step {step}: {e}; last good checkpoint kept")));
            }
        }
    }
    let trained = trainer.into_trained(Vec::new());
    save_run(cfg, &Checkpoint::from_trained(&trained, cfg), &loss)?;
    println!("trained {} iterations -> {}", spec.total_iters(), cfg.out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------- check

/// Relative tolerance of the finite-difference gradient check.
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-6;
pub const CHECK_TIMES: [f64; 3] = [0.2, 0.5, 0.8];
pub const SAMPLER_DRAWS: usize = 10_000;
pub const SAMPLER_MEAN_TOL: f64 = 0.05;
pub const SAMPLER_VAR_TOL: f64 = 0.1;

struct Scaled<'a, S: ?Sized> {
    inner: &'a S,
    factor: f64,
}

impl<S: ScoreFunction<f64> + ?Sized> ScoreFunction<f64> for Scaled<'_, S> {
    fn score(&self, x_t: &Tensor, t: &[f64], z: Option<&Tensor>) -> scorelab::Result<Tensor> {
        let s = self.inner.score(x_t, t, z)?;
        Tensor::new(s.shape().to_vec(), s.data().iter().map(|v| v * self.factor).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

fn randomize(store: &mut ParamStore<f64>, scale: f64, rng: &mut Rng) {
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = scale * rng.normal::<f64>());
    }
}

/// Finite-difference check of the full training objective on a small
/// randomized instance of the configured model family.
pub fn gradient_check(cfg: &RunConfig, rng: &mut Rng) -> CliResult<GradCheck> {
    let sde = cfg.sde()?;
    let data_dim = 2;
    let dz = cfg.latent_dim;
    let mut arch = ScoreArch::new(data_dim, vec![6, 5], dz);
    arch.time_embed_dim = 4;
    arch.latent_embed_dim = 4;
    let mut model = ScoreModel::new(arch, sde, rng)?;
    randomize(model.params_mut(), 0.4, rng);
    let mut encoder = if dz > 0 && !cfg.ablate_code {
        let a = EncoderArch {
            data_dim,
            widths: vec![5],
            latent_dim: dz,
            mode: cfg.encoder,
        };
        let mut e = Encoder::new(a, rng)?;
        randomize(e.params_mut(), 0.4, rng);
        Some(e)
    } else {
        None
    };
    let x0 = Tensor::new(vec![4, data_dim], rng.normals(4 * data_dim))?;
    let batch = Batch::draw(x0, &cfg.time_weighting(), &sde, rng)?;
    let reg_weight = cfg.effective_reg_weight().max(0.05);
    let enc_seed = rng.next_u64();

    let record = |tape: &mut Tape, model: &ScoreModel, encoder: Option<&Encoder>, trainable: bool| -> scorelab::Result<_> {
        let bind = |p: &ParamStore<f64>, tape: &mut Tape| if trainable { p.bind(tape) } else { p.bind_frozen(tape) };
        let mv = bind(model.params(), tape);
        match encoder {
            Some(e) => {
                let ev = bind(e.params(), tape);
                let g = repr_graph(tape, model, &mv, e, &ev, &batch, &sde, reg_weight, &mut Rng::new(enc_seed))?;
                Ok((g.total, mv, Some(ev)))
            }
            None => {
                let z = (dz > 0).then(|| tape.constant(Tensor::zeros(vec![batch.x0.rows(), dz])));
                Ok((dsm_graph(tape, model, &mv, &batch, &sde, z)?, mv, None))
            }
        }
    };
    let eval = |model: &ScoreModel, encoder: Option<&Encoder>| -> scorelab::Result<f64> {
        let mut tape = Tape::new();
        let (loss, _, _) = record(&mut tape, model, encoder, false)?;
        Ok(tape.scalar_value(loss))
    };

    let mut tape = Tape::new();
    let (loss, mv, ev) = record(&mut tape, &model, encoder.as_ref(), true)?;
    let grads = tape.backward(loss)?;
    model.params_mut().absorb(&grads, &mv)?;
    if let (Some(e), Some(ev)) = (&mut encoder, ev.as_deref()) {
        e.params_mut().absorb(&grads, ev)?;
    }

    let mut report = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    let n_parts = if encoder.is_some() { 2 } else { 1 };
    for part in 0..n_parts {
        let n_slots = if part == 0 {
            model.params().len()
        } else {
            encoder.as_ref().expect("encoder").params().len()
        };
        for slot in 0..n_slots {
            let store = |m: &ScoreModel, e: &Option<Encoder>| -> ParamStore<f64> {
                if part == 0 {
                    m.params().clone()
                } else {
                    e.as_ref().expect("encoder").params().clone()
                }
            };
            let snapshot = store(&model, &encoder);
            let name = snapshot.names()[slot].clone();
            let analytic = snapshot.get(slot).grad().expect("absorbed").to_vec();
            for (k, &an) in analytic.iter().enumerate() {
                let orig = snapshot.get(slot).data()[k];
                let mut at = |v: f64| -> scorelab::Result<f64> {
                    let target = if part == 0 {
                        model.params_mut()
                    } else {
                        encoder.as_mut().expect("encoder").params_mut()
                    };
                    target.get_mut(slot).data_mut()[k] = v;
                    eval(&model, encoder.as_ref())
                };
                let fd = (at(orig + GRAD_STEP)? - at(orig - GRAD_STEP)?) / (2.0 * GRAD_STEP);
                at(orig)?;
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = format!("{name}[{k}]: analytic {an}, finite difference {fd}");
                }
                report.checked += 1;
            }
        }
    }
    Ok(report)
}

pub fn check(cfg: &RunConfig, sabotage: bool) -> CliResult<()> {
    let gm = analytic_mixture(cfg)?;
    let sde = cfg.sde()?;
    let root = master(cfg).derive(streams::CHECK);
    let mut failures = Vec::new();
    let mut log = String::new();

    let g = gradient_check(cfg, &mut root.derive(0))?;
    let ok = g.max_rel_err <= GRAD_REL_TOL;
    let _ = writeln!(
        log,
        "gradient check: {} entries, max rel err {:.3e} [{}]",
        g.checked,
        g.max_rel_err,
        if ok { "PASS" } else { "FAIL" }
    );
    if !ok {
        failures.push(format!("gradient check: {}", g.worst));
    }

    let mut model = ScoreModel::new(ScoreArch::new(gm.dim(), vec![16, 16], 0), sde, &mut root.derive(1))?;
    randomize(model.params_mut(), 0.3, &mut root.derive(2));
    let oracle = MixtureOracle { mixture: gm.clone(), sde };
    let half = Scaled { inner: &oracle, factor: 0.5 };
    let negated = Scaled { inner: &oracle, factor: -1.0 };
    let marginal: &dyn ScoreFunction<f64> = if sabotage { &negated } else { &oracle };
    let closed_form = gm.single_isotropic_variance().is_some();
    let subjects: [(&str, &dyn ScoreFunction<f64>); 2] = [("random model", &model), ("half oracle", &half)];
    for (i, &t) in CHECK_TIMES.iter().enumerate() {
        for (j, (label, s)) in subjects.iter().enumerate() {
            let rep = decomposition_check_against(*s, marginal, &gm, t, &sde, cfg.check_draws, &mut root.derive(10 + (i * 2 + j) as u64))?;
            let mut ok = rep.excess.abs() <= 3.0 * rep.excess_std_err;
            let mut line = format!(
                "decomposition t={t} {label}: gap {:.6} ± {:.6}, floor {:.6} ± {:.6}, gap - floor {:.3e} ± {:.3e}",
                rep.gap, rep.std_err, rep.floor, rep.floor_std_err, rep.excess, rep.excess_std_err
            );
            if closed_form {
                let c = scorelab::analytic::dsm_constant(&gm, t, &sde)?;
                ok &= (rep.gap - c).abs() <= 3.0 * rep.std_err;
                let _ = write!(line, ", C(t) {c:.6}");
            }
            let _ = writeln!(log, "{line} [{}]", if ok { "PASS" } else { "FAIL" });
            if !ok {
                failures.push(format!("decomposition at t={t} ({label})"));
            }
        }
    }

    let x = reverse_sample(
        &sde,
        |x, t| oracle.score(x, &vec![t; x.rows()], None),
        cfg.sample_steps,
        SAMPLER_DRAWS,
        gm.dim(),
        &mut root.derive(3),
    )?;
    let (mean, cov) = gm.moments();
    let var: Vec<f64> = (0..gm.dim()).map(|j| cov[j * gm.dim() + j]).collect();
    for j in 0..gm.dim() {
        let n = x.rows() as f64;
        let m = (0..x.rows()).map(|i| x.get(i, j)).sum::<f64>() / n;
        let v = (0..x.rows()).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / (n - 1.0);
        let ok = (m - mean[j]).abs() <= SAMPLER_MEAN_TOL && (v - var[j]).abs() <= SAMPLER_VAR_TOL;
        let _ = writeln!(
            log,
            "sampler dim {j}: mean {m:.4} (target {:.4}), variance {v:.4} (target {:.4}) [{}]",
            mean[j],
            var[j],
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failures.push(format!("sampler moments in dimension {j}"));
        }
    }
    print!("{log}");
    if failures.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::Verification(failures.join("; ")))
    }
}

// ---------------------------------------------------------------- encode

fn restore(overrides: &Overrides, path: &Path) -> CliResult<(RunConfig, scorelab::Trained)> {
    let ckpt = Checkpoint::load(path)?;
    let (stored, trained) = ckpt.restore()?;
    Ok((overrides.resolve(Some(stored))?, trained))
}

fn check_data_dim(trained: &scorelab::Trained, data: &LabeledDataset) -> CliResult<()> {
    let d = trained.score.arch().data_dim;
    if data.dim() != d {
        return Err(CliError::Core(scorelab::Error::Contract(format!(
            "dataset has dimension {}, checkpoint expects {d}",
            data.dim()
        ))));
    }
    Ok(())
}

pub fn encode(overrides: &Overrides, checkpoint: &Path, export_mean: bool) -> CliResult<()> {
    let (cfg, trained) = restore(overrides, checkpoint)?;
    let data = load_dataset(&cfg)?;
    check_data_dim(&trained, &data)?;
    let dz = trained.score.arch().latent_dim;
    if dz == 0 {
        return Err(CliError::Core(scorelab::Error::Contract(
            "checkpoint is unconditional (d_z = 0); nothing to encode".into(),
        )));
    }
    let mut rng = master(&cfg).derive(streams::ENCODE);
    let codes = match (&trained.encoder, export_mean) {
        (Some(e), true) => e.means(&data.points)?,
        _ => trained.codes(&data.points, &mut rng)?.expect("conditional"),
    };
    let mut header = vec!["id".to_string()];
    header.extend(indexed("z", dz));
    header.push("label".into());
    let mut csv = Csv::new(&header);
    for i in 0..data.len() {
        let mut row = vec![i.to_string()];
        row.extend(codes.row(i).iter().map(|&v| num(v)));
        row.push(data.labels[i].to_string());
        csv.row(&row);
    }
    ensure_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join(LATENTS_FILE), csv.as_str())?;
    println!("encoded {} points -> {}", data.len(), cfg.out_dir.join(LATENTS_FILE).display());
    Ok(())
}

// ---------------------------------------------------------------- sample

#[derive(Clone, Debug)]
pub struct SampleArgs {
    pub grid: Option<usize>,
    pub range: String,
    pub codes: Option<PathBuf>,
    pub k: usize,
    pub n_steps: Option<usize>,
    pub image: Option<PathBuf>,
    pub resolution: String,
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn parse_pair<T: std::str::FromStr>(s: &str, sep: char, what: &str) -> CliResult<(T, T)> {
    let bad = || validation(format!("invalid {what} '{s}'"));
    let (a, b) = s.split_once(sep).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Reads one code per line; a first line that does not parse as numbers is
/// taken as a header.
pub fn read_codes_file(path: &Path, dz: usize) -> CliResult<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut codes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(c) if c.len() == dz => codes.push(c),
            Ok(c) => return Err(validation(format!("{}:{}: {} values, expected d_z = {dz}", path.display(), i + 1, c.len()))),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(validation(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    if codes.is_empty() {
        return Err(validation(format!("{}: no codes", path.display())));
    }
    Ok(codes)
}

pub fn sample(overrides: &Overrides, checkpoint: &Path, args: &SampleArgs) -> CliResult<()> {
    let (cfg, trained) = restore(overrides, checkpoint)?;
    let dz = trained.score.arch().latent_dim;
    let d = trained.score.arch().data_dim;
    let codes: Vec<Vec<f64>> = match (&args.codes, args.grid) {
        (Some(p), _) => read_codes_file(p, dz)?,
        (None, Some(steps)) => {
            let (lo, hi): (f64, f64) = parse_pair(&args.range, ',', "range")?;
            latent_grid(lo, hi, steps, dz)?
        }
        (None, None) if dz == 0 => vec![Vec::new()],
        (None, None) => return Err(validation("sample needs --grid or --codes for a conditional model")),
    };
    if args.k == 0 {
        return Err(validation("--k must be positive"));
    }
    let n_steps = args.n_steps.unwrap_or(cfg.sample_steps);
    let mut rng = master(&cfg).derive(streams::SAMPLE);
    let base = rng.clone();

    // One batched run; on numerical failure, retry code by code and flag
    // the failing codes' rows with NaN.
    let per_code: Vec<Option<Tensor>> = match sample_for_codes(&trained.score, &codes, args.k, &cfg.sde()?, n_steps, &mut rng) {
        Ok(all) => (0..codes.len())
            .map(|c| Some(all.select_rows(&(c * args.k..(c + 1) * args.k).collect::<Vec<_>>())))
            .collect(),
        Err(scorelab::Error::Numerical(_)) => codes
            .iter()
            .enumerate()
            .map(|(c, code)| {
                let mut r = base.derive(c as u64);
                match sample_for_codes(&trained.score, std::slice::from_ref(code), args.k, &cfg.sde()?, n_steps, &mut r) {
                    Ok(x) => Ok(Some(x)),
                    Err(scorelab::Error::Numerical(msg)) => {
                        eprintln!("warning: code {c}: {msg}");
                        Ok(None)
                    }
                    Err(e) => Err(CliError::Core(e)),
                }
            })
            .collect::<CliResult<_>>()?,
        Err(e) => return Err(e.into()),
    };

    let mut header = vec!["code_id".to_string()];
    header.extend(indexed("z", dz));
    header.push("sample_id".into());
    header.extend(indexed("x", d));
    let mut csv = Csv::new(&header);
    let mut points = Vec::new();
    let mut groups = Vec::new();
    for (c, (code, samples)) in codes.iter().zip(&per_code).enumerate() {
        for s in 0..args.k {
            let mut row = vec![c.to_string()];
            row.extend(code.iter().map(|&v| num(v)));
            row.push(s.to_string());
            match samples {
                Some(x) => {
                    row.extend(x.row(s).iter().map(|&v| num(v)));
                    let r = x.row(s);
                    points.push([r[0], if d > 1 { r[1] } else { 0.0 }]);
                    groups.push(c);
                }
                None => row.extend(std::iter::repeat_n(num(f64::NAN), d)),
            }
            csv.row(&row);
        }
    }
    ensure_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join(SAMPLES_FILE), csv.as_str())?;
    if let Some(path) = &args.image {
        let (w, h): (usize, usize) = parse_pair(&args.resolution, 'x', "resolution")?;
        if w == 0 || h == 0 {
            return Err(validation("image resolution must be positive"));
        }
        write_file(path, &scatter_ppm(&points, &groups, w, h))?;
    }
    println!(
        "{} samples for {} codes -> {}",
        codes.len() * args.k,
        codes.len(),
        cfg.out_dir.join(SAMPLES_FILE).display()
    );
    Ok(())
}

// ---------------------------------------------------------------- sweep

enum CellOutcome {
    Done(f64),
    Failed(String),
}

fn read_cell(path: &Path) -> Option<CellOutcome> {
    let text = std::fs::read_to_string(path).ok()?;
    let text = text.trim_end();
    if let Some(v) = text.strip_prefix("ok ") {
        return v.parse().ok().map(CellOutcome::Done);
    }
    text.strip_prefix("failed ").map(|m| CellOutcome::Failed(m.to_string()))
}

fn write_cell(path: &Path, outcome: &CellOutcome) -> CliResult<()> {
    let text = match outcome {
        CellOutcome::Done(v) => format!("ok {v}\n"),
        CellOutcome::Failed(m) => format!("failed {}\n", m.replace('\n', " ")),
    };
    let tmp = path.with_extension("tmp");
    write_file(&tmp, &text)?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn sweep(cfg: &RunConfig, t_values: Option<Vec<f64>>, dz_values: Option<Vec<usize>>, runs: Option<usize>, stop_after: Option<usize>) -> CliResult<()> {
    let runs = runs.unwrap_or(cfg.runs);
    if runs == 0 {
        return Err(validation("runs must be positive"));
    }
    let data = load_dataset(cfg)?;
    let spec = cfg.train_spec()?;
    let (kind, params): (&str, Vec<f64>) = match (&t_values, &dz_values) {
        (Some(t), None) => ("t", t.clone()),
        (None, Some(dz)) => ("dz", dz.iter().map(|&d| d as f64).collect()),
        _ => return Err(validation("sweep needs exactly one of --t-values or --dz-values")),
    };
    if params.is_empty() {
        return Err(validation("sweep grid is empty"));
    }
    let sde = cfg.sde()?;
    if kind == "t" {
        if let Some(&t) = params.iter().find(|&&t| !(t >= sde.t_floor && t <= sde.horizon)) {
            return Err(validation(format!("t = {t} outside [t_floor, horizon]")));
        }
    }
    let cells = cfg.out_dir.join(CELLS_DIR);
    ensure_dir(&cells)?;
    let mut sil = cfg.silhouette_sweep();
    sil.runs = runs;
    let mut div = cfg.diversity_sweep();
    div.runs = runs;

    let mut computed = 0;
    let mut csv = Csv::new(&["param", "mean", "std", "runs"]);
    for &p in &params {
        let mut results = Vec::with_capacity(runs);
        for r in 0..runs {
            let path = cells.join(format!("{kind}_{p}_run{r}.txt"));
            let outcome = match read_cell(&path) {
                Some(o) => o,
                None => {
                    if stop_after.is_some_and(|n| computed >= n) {
                        println!("stopped after {computed} new cells; rerun to resume");
                        return Ok(());
                    }
                    let value = if kind == "t" {
                        silhouette_at_t(&data, p, &spec, &sil, r)
                    } else {
                        diversity_at_dz(&data, p as usize, &spec, &div, r)
                    };
                    let o = match value {
                        Ok(v) => CellOutcome::Done(v),
                        Err(e) => CellOutcome::Failed(e.to_string()),
                    };
                    write_cell(&path, &o)?;
                    computed += 1;
                    o
                }
            };
            results.push(match outcome {
                CellOutcome::Done(v) => Ok(v),
                CellOutcome::Failed(m) => Err(scorelab::Error::Numerical(m)),
            });
        }
        let row = aggregate(p, &results);
        if row.flagged {
            eprintln!("warning: {kind} = {p}: {} of {runs} runs failed", runs - row.runs);
        }
        csv.row(&[num(p), num(row.mean), num(row.std), row.runs.to_string()]);
    }
    write_file(&cfg.out_dir.join(SWEEP_FILE), csv.as_str())?;
    println!("{} sweep over {} values -> {}", kind, params.len(), cfg.out_dir.join(SWEEP_FILE).display());
    Ok(())
}

// ---------------------------------------------------------------- cross-denoise

fn class_means(data: &LabeledDataset) -> Vec<Option<Vec<f64>>> {
    let d = data.dim();
    let mut sums = vec![vec![0.0; d]; data.n_classes];
    let mut counts = vec![0usize; data.n_classes];
    for i in 0..data.len() {
        let l = data.labels[i];
        counts[l] += 1;
        sums[l].iter_mut().zip(data.points.row(i)).for_each(|(s, &x)| *s += x);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Summary of a cross-conditioning run.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossSummary {
    pub pairs: usize,
    /// Pairs whose result ends closer to B's class mean than to A's.
    pub closer_to_b: usize,
    /// Same count for the control conditioned on A's own code.
    pub control_closer_to_b: usize,
}

pub fn cross_denoise(overrides: &Overrides, checkpoint: &Path, t_start: f64, pairs: usize, n_steps: Option<usize>) -> CliResult<()> {
    let (cfg, trained) = restore(overrides, checkpoint)?;
    let summary = run_cross_denoise(&cfg, &trained, t_start, pairs, n_steps)?;
    println!(
        "cross-denoise: {}/{} pairs end nearer the conditioning point's class (control: {}/{})",
        summary.closer_to_b, summary.pairs, summary.control_closer_to_b, summary.pairs
    );
    Ok(())
}

pub fn run_cross_denoise(cfg: &RunConfig, trained: &scorelab::Trained, t_start: f64, pairs: usize, n_steps: Option<usize>) -> CliResult<CrossSummary> {
    let sde: SdeConfig = cfg.sde()?;
    if !(t_start >= sde.t_floor && t_start <= sde.horizon) {
        return Err(validation(format!("t_start = {t_start} outside [t_floor, horizon]")));
    }
    let Some(encoder) = &trained.encoder else {
        return Err(validation("cross-denoise needs a checkpoint with an encoder"));
    };
    if pairs == 0 {
        return Err(validation("pairs must be positive"));
    }
    let data = load_dataset(cfg)?;
    check_data_dim(trained, &data)?;
    let means = class_means(&data);
    if means.iter().filter(|m| m.is_some()).count() < 2 {
        return Err(validation("cross-denoise needs at least two classes"));
    }
    let mut rng = master(cfg).derive(streams::CROSS);
    let (mut ia, mut ib) = (Vec::new(), Vec::new());
    while ia.len() < pairs {
        let (a, b) = (rng.below(data.len()), rng.below(data.len()));
        if data.labels[a] != data.labels[b] {
            ia.push(a);
            ib.push(b);
        }
    }
    let xa = data.points.select_rows(&ia);
    let xb = data.points.select_rows(&ib);
    let code_a = encoder.means(&xa)?;
    let code_b = encoder.means(&xb)?;
    let sd = sde.variance(t_start)?.sqrt();
    let full = n_steps.unwrap_or(cfg.sample_steps) as f64;
    let steps = ((full * (t_start - sde.t_floor) / (sde.horizon - sde.t_floor)).round() as usize).max(1);
    let perturbed = |rng: &mut Rng| -> scorelab::Result<Tensor> {
        let noise: Vec<f64> = rng.normals(xa.numel());
        Tensor::new(xa.shape().to_vec(), xa.data().iter().zip(&noise).map(|(x, e)| x + sd * e).collect())
    };
    let run = |code: &Tensor, rng: &mut Rng| -> scorelab::Result<Tensor> {
        let x = perturbed(rng)?;
        reverse_sample_from(&sde, |x, t| trained.score.score(x, &vec![t; x.rows()], Some(code)), x, t_start, steps, rng)
    };
    let crossed = run(&code_b, &mut rng.derive(0))?;
    let control = run(&code_a, &mut rng.derive(1))?;

    let d = data.dim();
    let mut csv = Csv::new(&[
        "pair_id",
        "label_a",
        "label_b",
        "dist_to_a",
        "dist_to_b",
        "control_dist_to_a",
        "control_dist_to_b",
    ]);
    let mut summary = CrossSummary {
        pairs,
        closer_to_b: 0,
        control_closer_to_b: 0,
    };
    for p in 0..pairs {
        let (la, lb) = (data.labels[ia[p]], data.labels[ib[p]]);
        let (ma, mb) = (means[la].as_ref().expect("present"), means[lb].as_ref().expect("present"));
        let (da, db) = (dist(crossed.row(p), ma), dist(crossed.row(p), mb));
        let (ca, cb) = (dist(control.row(p), ma), dist(control.row(p), mb));
        summary.closer_to_b += usize::from(db < da);
        summary.control_closer_to_b += usize::from(cb < ca);
        csv.row(&[p.to_string(), la.to_string(), lb.to_string(), num(da), num(db), num(ca), num(cb)]);
    }
    debug_assert_eq!(crossed.cols(), d);
    ensure_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join(CROSS_FILE), csv.as_str())?;
    Ok(summary)
}
