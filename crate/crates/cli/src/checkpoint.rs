//! Binary checkpoint format.
//!
//! ```text
//! "SCRP" | version u32 | tensor count u32
//! per tensor: name length u32 | UTF-8 name | rank u32 | dims u64 × rank | values f64 × numel
//! config length u64 | config text (UTF-8)
//! ```
//!
//! All integers and reals are little-endian.

use std::path::Path;

use scorelab::{Rng, Tensor, Trained, Trainer};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

pub const MAGIC: &[u8; 4] = b"SCRP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (this build reads {VERSION})")]
    BadVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint does not match its config: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub config_text: String,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, value: u64) -> Result<usize, CheckpointError> {
        usize::try_from(value).map_err(|_| CheckpointError::Corrupt {
            offset: self.pos,
            reason: format!("length {value} out of range"),
        })
    }

    fn utf8(&mut self, n: usize) -> Result<String, CheckpointError> {
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Corrupt {
            offset: at,
            reason: e.to_string(),
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.config_text.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out
    }

    /// Decodes a whole checkpoint; nothing is returned unless every byte
    /// parses.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = r.utf8(n)?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                let d = r.u64()?;
                shape.push(r.len(d)?);
            }
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(CheckpointError::Corrupt {
                offset: r.pos,
                reason: format!("shape {shape:?} overflows"),
            })?;
            let raw = r.take(numel.checked_mul(8).ok_or(CheckpointError::Truncated(bytes.len()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt {
                offset: r.pos,
                reason: e.to_string(),
            })?;
            tensors.push((name, t));
        }
        let n = r.u64()?;
        let n = r.len(n)?;
        let config_text = r.utf8(n)?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt {
                offset: r.pos,
                reason: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Self { tensors, config_text })
    }

    /// Writes through a temporary file so a crash never leaves a partial
    /// checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn from_trained(trained: &Trained, config: &RunConfig) -> Self {
        Self::from_models(&trained.score, trained.encoder.as_ref(), config)
    }

    pub fn from_models(score: &scorelab::ScoreModel, encoder: Option<&scorelab::Encoder>, config: &RunConfig) -> Self {
        let mut tensors: Vec<(String, Tensor)> = score.params().iter().map(|(n, t)| (n.to_string(), plain(t))).collect();
        if let Some(e) = encoder {
            tensors.extend(e.params().iter().map(|(n, t)| (n.to_string(), plain(t))));
        }
        Self {
            tensors,
            config_text: config.render(),
        }
    }

    pub fn config(&self) -> Result<RunConfig, CheckpointError> {
        Ok(RunConfig::parse(&self.config_text)?)
    }

    /// Input dimension of the stored score network.
    pub fn data_dim(&self) -> Result<usize, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == "trunk.0.w")
            .map(|(_, t)| t.shape()[0])
            .ok_or_else(|| CheckpointError::Mismatch("no trunk.0.w tensor".into()))
    }

    /// Rebuilds the model pair described by the stored config and loads
    /// every stored tensor into it.
    pub fn restore(&self) -> Result<(RunConfig, Trained), CheckpointError> {
        let config = self.config()?;
        let spec = config.train_spec()?;
        let trainer = Trainer::new(spec, self.data_dim()?, &mut Rng::new(0)).map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        let mut trained = trainer.into_trained(Vec::new());
        let (enc, score): (Vec<_>, Vec<_>) = self.tensors.iter().cloned().partition(|(n, _)| n.starts_with("enc."));
        let mismatch = |e: scorelab::Error| CheckpointError::Mismatch(e.to_string());
        if score.len() != trained.score.params().len() {
            return Err(CheckpointError::Mismatch(format!(
                "{} score tensors, model has {}",
                score.len(),
                trained.score.params().len()
            )));
        }
        trained.score.params_mut().load_from(&score).map_err(mismatch)?;
        match &mut trained.encoder {
            Some(e) => {
                if enc.len() != e.params().len() {
                    return Err(CheckpointError::Mismatch(format!(
                        "{} encoder tensors, model has {}",
                        enc.len(),
                        e.params().len()
                    )));
                }
                e.params_mut().load_from(&enc).map_err(mismatch)?;
            }
            None if !enc.is_empty() => return Err(CheckpointError::Mismatch("encoder tensors without an encoder".into())),
            None => {}
        }
        Ok((config, trained))
    }
}

fn plain(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("same shape")
}
