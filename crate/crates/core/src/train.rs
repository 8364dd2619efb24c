//! Minibatch training of the score model, optionally with a jointly
//! trained encoder, in up to two phases: the configured weighting first,
//! then uniform-t with the encoder frozen.

use crate::error::{Error, Result};
use crate::models::{Encoder, EncoderArch, EncoderMode, ScoreArch, ScoreModel};
use crate::numcore::{adam_step, AdamState, Tape, Tensor};
use crate::objectives::{dsm_graph, report_from_graph, repr_graph, Batch, LossGraph, LossReport, TimeWeighting};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::sde::SdeConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSpec<T> {
    pub sde: SdeConfig<T>,
    pub widths: Vec<usize>,
    pub time_embed_dim: usize,
    pub latent_embed_dim: usize,
    /// `0` trains an unconditional model without encoder.
    pub latent_dim: usize,
    pub encoder_mode: EncoderMode,
    /// Feed a constant zero code instead of an encoder output.
    pub ablate_code: bool,
    pub weighting: TimeWeighting<T>,
    pub reg_weight: T,
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub batch_size: usize,
    pub learning_rate: T,
}

impl<T: Real> Default for TrainSpec<T> {
    fn default() -> Self {
        Self {
            sde: SdeConfig::default(),
            widths: vec![128, 128, 128],
            time_embed_dim: 16,
            latent_embed_dim: 32,
            latent_dim: 2,
            encoder_mode: EncoderMode::Deterministic,
            ablate_code: false,
            weighting: TimeWeighting::uniform_t(),
            reg_weight: T::of(EncoderMode::Deterministic.default_reg_weight()),
            phase1_iters: 1000,
            phase2_iters: 0,
            batch_size: 128,
            learning_rate: T::of(2e-4),
        }
    }
}

impl<T: Real> TrainSpec<T> {
    pub fn total_iters(&self) -> usize {
        self.phase1_iters + self.phase2_iters
    }

    pub fn score_arch(&self, data_dim: usize) -> ScoreArch {
        ScoreArch {
            data_dim,
            widths: self.widths.clone(),
            time_embed_dim: self.time_embed_dim,
            latent_dim: self.latent_dim,
            latent_embed_dim: self.latent_embed_dim,
        }
    }

    pub fn encoder_arch(&self, data_dim: usize) -> Option<EncoderArch> {
        (self.latent_dim > 0 && !self.ablate_code).then(|| EncoderArch {
            data_dim,
            widths: self.widths.clone(),
            latent_dim: self.latent_dim,
            mode: self.encoder_mode,
        })
    }
}

/// A trained (or in-training) model pair.
#[derive(Clone, Debug)]
pub struct Trained<T> {
    pub score: ScoreModel<T>,
    pub encoder: Option<Encoder<T>>,
    pub history: Vec<LossReport<T>>,
}

impl<T: Real> Trained<T> {
    /// Codes for `x0`: encoder output, zeros for an ablated model, `None`
    /// when unconditional.
    pub fn codes(&self, x0: &Tensor<T>, rng: &mut Rng) -> Result<Option<Tensor<T>>> {
        match (&self.encoder, self.score.arch().latent_dim) {
            (_, 0) => Ok(None),
            (Some(e), _) => e.codes(x0, rng).map(Some),
            (None, dz) => Ok(Some(Tensor::zeros(vec![x0.rows(), dz]))),
        }
    }
}

pub struct Trainer<T> {
    spec: TrainSpec<T>,
    score: ScoreModel<T>,
    encoder: Option<Encoder<T>>,
    score_opt: AdamState<T>,
    encoder_opt: AdamState<T>,
    steps_done: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(spec: TrainSpec<T>, data_dim: usize, rng: &mut Rng) -> Result<Self> {
        if spec.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let score = ScoreModel::new(spec.score_arch(data_dim), spec.sde, rng)?;
        let encoder = spec.encoder_arch(data_dim).map(|a| Encoder::new(a, rng)).transpose()?;
        Ok(Self::from_parts(spec, score, encoder))
    }

    pub fn from_parts(spec: TrainSpec<T>, score: ScoreModel<T>, encoder: Option<Encoder<T>>) -> Self {
        let lr = spec.learning_rate;
        Self {
            spec,
            score,
            encoder,
            score_opt: AdamState::new(lr),
            encoder_opt: AdamState::new(lr),
            steps_done: 0,
        }
    }

    pub fn spec(&self) -> &TrainSpec<T> {
        &self.spec
    }

    pub fn score(&self) -> &ScoreModel<T> {
        &self.score
    }

    pub fn encoder(&self) -> Option<&Encoder<T>> {
        self.encoder.as_ref()
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn in_phase2(&self) -> bool {
        self.steps_done >= self.spec.phase1_iters
    }

    /// One optimisation step on a random minibatch of `data`.
    pub fn step(&mut self, data: &Tensor<T>, rng: &mut Rng) -> Result<LossReport<T>> {
        if data.rows() == 0 {
            return Err(Error::Contract("training data is empty".into()));
        }
        let phase2 = self.in_phase2();
        if phase2 {
            if let Some(e) = &mut self.encoder {
                e.params_mut().set_trainable(false);
            }
        }
        let weighting = if phase2 { TimeWeighting::uniform_t() } else { self.spec.weighting };
        let idx: Vec<usize> = (0..self.spec.batch_size).map(|_| rng.below(data.rows())).collect();
        let batch = Batch::draw(data.select_rows(&idx), &weighting, &self.spec.sde, rng)?;

        let mut tape = Tape::new();
        let mv = self.score.params().bind(&mut tape);
        let reg_weight = self.spec.reg_weight;
        let (graph, ev) = match &self.encoder {
            Some(enc) => {
                let ev = enc.params().bind(&mut tape);
                let g = repr_graph(&mut tape, &self.score, &mv, enc, &ev, &batch, &self.spec.sde, reg_weight, rng)?;
                (g, Some(ev))
            }
            None => {
                let z = (self.spec.latent_dim > 0).then(|| tape.constant(Tensor::zeros(vec![batch.x0.rows(), self.spec.latent_dim])));
                let dsm = dsm_graph(&mut tape, &self.score, &mv, &batch, &self.spec.sde, z)?;
                let reg = tape.constant(Tensor::scalar(T::zero()));
                let wreg = tape.scale(reg, reg_weight);
                let total = tape.add(dsm, wreg)?;
                (LossGraph { total, dsm, reg }, None)
            }
        };
        let report = report_from_graph(&tape, &graph, reg_weight, &batch)?;

        let grads = tape.backward(graph.total)?;
        self.score.params_mut().absorb(&grads, &mv)?;
        adam_step(self.score.params_mut().tensors_mut(), &mut self.score_opt)?;
        if let (Some(enc), Some(ev)) = (&mut self.encoder, ev) {
            if !phase2 {
                enc.params_mut().absorb(&grads, &ev)?;
                adam_step(enc.params_mut().tensors_mut(), &mut self.encoder_opt)?;
            }
        }
        self.steps_done += 1;
        Ok(report)
    }

    pub fn into_trained(self, history: Vec<LossReport<T>>) -> Trained<T> {
        let mut encoder = self.encoder;
        if let Some(e) = &mut encoder {
            e.params_mut().set_trainable(true);
        }
        Trained {
            score: self.score,
            encoder,
            history,
        }
    }
}

/// Runs every iteration of `spec` on `data`.
pub fn train<T: Real>(spec: &TrainSpec<T>, data: &Tensor<T>, rng: &mut Rng) -> Result<Trained<T>> {
    let mut trainer = Trainer::new(spec.clone(), data.cols(), rng)?;
    let mut history = Vec::with_capacity(spec.total_iters());
    for _ in 0..spec.total_iters() {
        history.push(trainer.step(data, rng)?);
    }
    Ok(trainer.into_trained(history))
}
