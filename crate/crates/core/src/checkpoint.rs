//! Model checkpoints: `config.json`, `vocab.txt` and `weights.bin` in one directory.
//!
//! `weights.bin` is little-endian: the magic `FSWT`, a `u32` version, a `u32`
//! tensor count, then per tensor a `u32` name length, the UTF-8 name, `u64`
//! rows, `u64` cols and `rows·cols` `f64` values in row-major order.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{BackboneError, ClassifierHead, EncoderBackbone, ToyBackbone, ToyConfig, Vocab};
use crate::provenance::write_atomic;
use crate::trainer::IntentModel;

const MAGIC: &[u8; 4] = b"FSWT";
const VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: malformed checkpoint: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Backbone(#[from] BackboneError),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Encoders that can be rebuilt from a saved config, vocabulary and tensor list.
pub trait CheckpointBackbone: EncoderBackbone + Sized {
    fn from_checkpoint(config: &serde_json::Value, vocab: Vocab, tensors: Vec<Array2<f64>>) -> Result<Self, BackboneError>;
}

impl CheckpointBackbone for ToyBackbone {
    fn from_checkpoint(config: &serde_json::Value, vocab: Vocab, tensors: Vec<Array2<f64>>) -> Result<Self, BackboneError> {
        let cfg: ToyConfig = serde_json::from_value(config.clone())
            .map_err(|e| BackboneError::Contract(format!("bad toy config: {e}")))?;
        ToyBackbone::from_parts(cfg, vocab, tensors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub backbone: String,
    pub backbone_config: serde_json::Value,
    /// Empty for an encoder-only checkpoint.
    #[serde(default)]
    pub label_set: Vec<String>,
    pub param_hash: Option<String>,
}

pub fn write_weights<'a>(path: &Path, tensors: impl IntoIterator<Item = (String, &'a Array2<f64>)>) -> Result<(), CheckpointError> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf).map_err(io_at(path))
}

pub fn read_weights(path: &Path) -> Result<Vec<(String, Array2<f64>)>, CheckpointError> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    let bad = |m: &str| CheckpointError::Format {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("wrong magic"));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    let mut next_u32 = |r: &mut &[u8]| -> Result<u32, CheckpointError> {
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated"))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    if next_u32(&mut r)? != VERSION {
        return Err(bad("unsupported version"));
    }
    let count = next_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = next_u32(&mut r)? as usize;
        if r.len() < len {
            return Err(bad("truncated name"));
        }
        let name = String::from_utf8(r[..len].to_vec()).map_err(|_| bad("name is not UTF-8"))?;
        r = &r[len..];
        let mut dims = [0usize; 2];
        for d in &mut dims {
            r.read_exact(&mut u64buf).map_err(|_| bad("truncated shape"))?;
            *d = u64::from_le_bytes(u64buf) as usize;
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.len()))
            .ok_or_else(|| bad("truncated tensor data"))?;
        let values: Vec<f64> = r[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        r = &r[n * 8..];
        let t = Array2::from_shape_vec((dims[0], dims[1]), values).map_err(|_| bad("shape mismatch"))?;
        out.push((name, t));
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

fn write_config(dir: &Path, cfg: &CheckpointConfig) -> Result<(), CheckpointError> {
    let path = dir.join(CONFIG_FILE);
    let mut body = serde_json::to_string_pretty(cfg).expect("checkpoint config serializes");
    body.push('\n');
    write_atomic(&path, body.as_bytes()).map_err(io_at(&path))
}

fn read_config(dir: &Path) -> Result<CheckpointConfig, CheckpointError> {
    let path = dir.join(CONFIG_FILE);
    let raw = fs::read_to_string(&path).map_err(io_at(&path))?;
    serde_json::from_str(&raw).map_err(|e| CheckpointError::Format {
        path,
        message: e.to_string(),
    })
}

/// Saves the encoder alone, e.g. as the shared starting point of every run.
pub fn save_backbone<B: EncoderBackbone>(bb: &B, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let vocab = dir.join(VOCAB_FILE);
    bb.vocab().save(&vocab).map_err(io_at(&vocab))?;
    write_weights(&dir.join(WEIGHTS_FILE), bb.tensors())?;
    write_config(
        dir,
        &CheckpointConfig {
            backbone: bb.identifier().to_string(),
            backbone_config: bb.config_json(),
            label_set: Vec::new(),
            param_hash: None,
        },
    )
}

fn load_parts<B: CheckpointBackbone>(dir: &Path) -> Result<(CheckpointConfig, B, Vec<(String, Array2<f64>)>), CheckpointError> {
    let cfg = read_config(dir)?;
    let vocab_path = dir.join(VOCAB_FILE);
    let vocab = Vocab::load(&vocab_path).map_err(io_at(&vocab_path))?;
    let mut tensors = read_weights(&dir.join(WEIGHTS_FILE))?;
    let head: Vec<_> = if cfg.label_set.is_empty() {
        Vec::new()
    } else {
        let split = tensors.len().checked_sub(2).ok_or_else(|| CheckpointError::Format {
            path: dir.to_path_buf(),
            message: "missing head tensors".into(),
        })?;
        tensors.split_off(split)
    };
    let bb = B::from_checkpoint(&cfg.backbone_config, vocab, tensors.into_iter().map(|(_, t)| t).collect())?;
    Ok((cfg, bb, head))
}

pub fn load_backbone<B: CheckpointBackbone>(dir: &Path) -> Result<B, CheckpointError> {
    load_parts(dir).map(|(_, bb, _)| bb)
}

pub fn save_model<B: EncoderBackbone>(model: &IntentModel<B>, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let vocab = dir.join(VOCAB_FILE);
    model.backbone.vocab().save(&vocab).map_err(io_at(&vocab))?;
    write_weights(
        &dir.join(WEIGHTS_FILE),
        model.backbone.tensors().into_iter().chain(model.head.tensors()),
    )?;
    write_config(
        dir,
        &CheckpointConfig {
            backbone: model.backbone.identifier().to_string(),
            backbone_config: model.backbone.config_json(),
            label_set: model.label_set.clone(),
            param_hash: Some(model.param_hash()),
        },
    )
}

/// Loads a model checkpoint and verifies the stored parameter hash.
pub fn load_model<B: CheckpointBackbone>(dir: &Path) -> Result<IntentModel<B>, CheckpointError> {
    let (cfg, backbone, head) = load_parts::<B>(dir)?;
    let fmt = |message: String| CheckpointError::Format {
        path: dir.to_path_buf(),
        message,
    };
    if cfg.label_set.is_empty() {
        return Err(fmt("checkpoint holds an encoder without a classifier head".into()));
    }
    let mut it = head.into_iter();
    let (weight, bias) = match (it.next(), it.next()) {
        (Some((wn, w)), Some((bn, b))) if wn == "cls.weight" && bn == "cls.bias" => (w, b),
        _ => return Err(fmt("head tensors must be cls.weight then cls.bias".into())),
    };
    let model = IntentModel::new(backbone, ClassifierHead { weight, bias }, cfg.label_set.clone())
        .map_err(|e| fmt(e.to_string()))?;
    if let Some(expected) = &cfg.param_hash {
        let got = model.param_hash();
        if &got != expected {
            return Err(fmt(format!("parameter hash {got} differs from recorded {expected}")));
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ToyBackbone {
        let vocab = Vocab::build(["lost my card", "hello there"], 100);
        ToyBackbone::new(
            ToyConfig {
                hidden_dim: 8,
                layers: 1,
                ..Default::default()
            },
            vocab,
        )
    }

    #[test]
    fn model_round_trip_preserves_hash_and_logits() {
        let dir = tempfile::tempdir().unwrap();
        let labels = vec!["a".to_string(), "b".to_string()];
        let model = IntentModel::fresh(&toy(), &labels, 4);
        save_model(&model, dir.path()).unwrap();
        let back: IntentModel<ToyBackbone> = load_model(dir.path()).unwrap();
        assert_eq!(back.param_hash(), model.param_hash());
        let texts = ["lost card", "hello"];
        assert_eq!(back.logits(&texts).unwrap(), model.logits(&texts).unwrap());
    }

    #[test]
    fn backbone_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bb = toy();
        save_backbone(&bb, dir.path()).unwrap();
        let back: ToyBackbone = load_backbone(dir.path()).unwrap();
        assert_eq!(back, bb);
        assert!(load_model::<ToyBackbone>(dir.path()).is_err());
    }

    #[test]
    fn corrupted_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let labels = vec!["a".to_string(), "b".to_string()];
        save_model(&IntentModel::fresh(&toy(), &labels, 0), dir.path()).unwrap();
        let w = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&w).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        fs::write(&w, &bytes).unwrap();
        assert!(matches!(load_model::<ToyBackbone>(dir.path()), Err(CheckpointError::Format { .. })));
        fs::write(&w, &bytes[..n - 1]).unwrap();
        assert!(load_model::<ToyBackbone>(dir.path()).is_err());
    }
}
