//! Held-out evaluation.
//!
//! Perplexity convention: a chunk of `chunk_len` bytes contributes
//! `chunk_len - 1` predictions (every byte predicts its successor inside
//! the chunk; nothing crosses a chunk boundary). Negative log likelihoods
//! are summed in `f64` and `ppl = exp(total / n_predictions)`.
//!
//! Chunks are scored independently, so the reported perplexity does not
//! depend on how chunks are grouped into forward batches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::forward_logits;
use super::{Checkpoint, EvalParams};

/// Result of scoring a model on an evaluation region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ppl: f64,
    pub mean_nll: f64,
    pub n_predictions: usize,
}

/// Sum of next-byte negative log likelihoods over one batch of equal-length
/// sequences, each scored within itself.
fn batch_nll_sum(ckpt: &Checkpoint, batch: &[&[u8]]) -> Result<f64> {
    let t_full = batch[0].len();
    debug_assert!(batch.iter().all(|s| s.len() == t_full));
    let t_in = t_full - 1;
    let mut inputs = Vec::with_capacity(batch.len() * t_in);
    for seq in batch {
        inputs.extend_from_slice(&seq[..t_in]);
    }
    let logits = forward_logits(&ckpt.config, &ckpt.weights, &inputs, batch.len(), t_in)?;
    let vocab = ckpt.config.vocab_size;
    let mut total = 0.0f64;
    for (si, seq) in batch.iter().enumerate() {
        for t in 0..t_in {
            let target = seq[t + 1] as usize;
            if target >= vocab {
                return Err(Error::TokenOutOfRange {
                    token: seq[t + 1] as u16,
                    vocab,
                });
            }
            let row = logits.row(si * t_in + t);
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for &v in row {
                sum += ((v - m) as f64).exp();
            }
            total += -((row[target] - m) as f64 - sum.ln());
        }
    }
    Ok(total)
}

/// Mean negative log likelihood (nats per prediction) over a set of
/// sequences. Sequences may differ in length; each must be at least two
/// bytes and no longer than `context_len + 1`.
pub fn mean_nll(ckpt: &Checkpoint, sequences: &[Vec<u8>]) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::TooFewSamples {
            what: "evaluation sequences",
            min: 1,
            got: 0,
        });
    }
    let mut total = 0.0f64;
    let mut n_pred = 0usize;
    // Group consecutive same-length sequences into small batches.
    let mut i = 0;
    while i < sequences.len() {
        let len = sequences[i].len();
        if len < 2 {
            return Err(Error::CorpusTooShort { need: 2, have: len });
        }
        if len > ckpt.config.context_len + 1 {
            return Err(Error::InvalidConfig(format!(
                "sequence of {} bytes exceeds context window of {} (+1 target)",
                len, ckpt.config.context_len
            )));
        }
        let mut j = i;
        while j < sequences.len() && sequences[j].len() == len && j - i < 8 {
            j += 1;
        }
        let batch: Vec<&[u8]> = sequences[i..j].iter().map(|s| s.as_slice()).collect();
        total += batch_nll_sum(ckpt, &batch)?;
        n_pred += (j - i) * (len - 1);
        i = j;
    }
    Ok(total / n_pred as f64)
}

/// Score a model on the evaluation region: `n_chunks` disjoint chunks of
/// `chunk_len` bytes, taken in order from the start of the region.
pub fn evaluate_ppl(
    ckpt: &Checkpoint,
    eval_region: &[u8],
    params: &EvalParams,
) -> Result<EvalReport> {
    if params.chunk_len < 2 || params.n_chunks == 0 {
        return Err(Error::InvalidConfig(
            "evaluation needs chunks of at least 2 bytes".into(),
        ));
    }
    if params.chunk_len > ckpt.config.context_len + 1 {
        return Err(Error::InvalidConfig(format!(
            "chunk_len {} exceeds context window {} (+1 target)",
            params.chunk_len, ckpt.config.context_len
        )));
    }
    let need = params.n_chunks * params.chunk_len;
    if eval_region.len() < need {
        return Err(Error::CorpusTooShort {
            need,
            have: eval_region.len(),
        });
    }
    let chunks: Vec<Vec<u8>> = (0..params.n_chunks)
        .map(|c| eval_region[c * params.chunk_len..(c + 1) * params.chunk_len].to_vec())
        .collect();
    let mean = mean_nll(ckpt, &chunks)?;
    let n_predictions = params.n_chunks * (params.chunk_len - 1);
    Ok(EvalReport {
        ppl: mean.exp(),
        mean_nll: mean,
        n_predictions,
    })
}
