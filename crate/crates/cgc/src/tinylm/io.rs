//! Checkpoint serialization.
//!
//! A checkpoint file is a tensor container (magic `CGC1`) whose metadata
//! carries the model config, the corpus fingerprint and the training seed,
//! and whose tensors are the full parameter walk of [`Weights::tensors`].
//! Writing the same checkpoint twice produces identical bytes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::{read_container, write_container, CHECKPOINT_MAGIC};
use crate::error::{Error, Result};

use super::{Checkpoint, ModelConfig, TensorMut, TensorRef};

#[derive(Serialize, Deserialize)]
struct CkptMeta {
    config: ModelConfig,
    corpus_fingerprint: String,
    train_seed: u64,
}

/// Content hash of a checkpoint: SHA-256 over the config (canonical JSON)
/// followed by every tensor's little-endian bytes in walk order.
pub fn checkpoint_fingerprint(ckpt: &Checkpoint) -> String {
    let mut hasher = Sha256::new();
    hasher.update(
        serde_json::to_string(&ckpt.config)
            .expect("config serializes")
            .as_bytes(),
    );
    for (name, t) in ckpt.weights.tensors() {
        hasher.update(name.as_bytes());
        let slice: &[f32] = match t {
            TensorRef::M(m) => m.as_slice().expect("standard layout"),
            TensorRef::V(v) => v.as_slice().expect("standard layout"),
        };
        for &v in slice {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// Write a checkpoint to disk.
pub fn write_checkpoint(path: &std::path::Path, ckpt: &Checkpoint) -> Result<()> {
    let meta = CkptMeta {
        config: ckpt.config.clone(),
        corpus_fingerprint: ckpt.corpus_fingerprint.clone(),
        train_seed: ckpt.train_seed,
    };
    let tensors: Vec<(String, Vec<usize>, &[f32])> = ckpt
        .weights
        .tensors()
        .into_iter()
        .map(|(name, t)| match t {
            TensorRef::M(m) => (
                name,
                vec![m.nrows(), m.ncols()],
                m.as_slice().expect("standard layout"),
            ),
            TensorRef::V(v) => (name, vec![v.len()], v.as_slice().expect("standard layout")),
        })
        .collect();
    write_container(path, CHECKPOINT_MAGIC, &meta, &tensors)
}

/// Read a checkpoint back. Every tensor named by the config's parameter
/// walk must be present with its exact shape.
pub fn read_checkpoint(path: &std::path::Path) -> Result<Checkpoint> {
    let c = read_container::<CkptMeta>(path, CHECKPOINT_MAGIC)?;
    c.meta.config.validate()?;
    let mut weights = super::model::zeros_like(&c.meta.config);
    for (name, t) in weights.tensors_mut() {
        let (shape, data) = c
            .tensor(&name)
            .map_err(|_| Error::MissingComponent(name.clone(), "checkpoint"))?;
        match t {
            TensorMut::M(m) => {
                if shape != [m.nrows(), m.ncols()] {
                    return Err(Error::ShapeMismatch {
                        context: "checkpoint tensor",
                        expected: format!("{:?}", [m.nrows(), m.ncols()]),
                        got: format!("{shape:?}"),
                    });
                }
                m.as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(data);
            }
            TensorMut::V(v) => {
                if shape != [v.len()] {
                    return Err(Error::ShapeMismatch {
                        context: "checkpoint tensor",
                        expected: format!("{:?}", [v.len()]),
                        got: format!("{shape:?}"),
                    });
                }
                v.as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(data);
            }
        }
    }
    Ok(Checkpoint {
        config: c.meta.config,
        weights,
        corpus_fingerprint: c.meta.corpus_fingerprint,
        train_seed: c.meta.train_seed,
    })
}
