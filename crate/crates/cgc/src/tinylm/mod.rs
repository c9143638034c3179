//! A deterministic byte-level decoder-only transformer, small enough to
//! train on a single CPU core in minutes.
//!
//! The model is the substrate the rest of the crate studies: activations are
//! captured per attention head, sparse autoencoders are trained on those
//! captures, and pruning edits the head output projections in place.
//!
//! Architecture (pre-norm residual blocks):
//!
//! ```text
//! x   = tok_emb[t] + pos_emb[p]
//! x  += W_O · MultiHeadAttn(LN1(x))      (causal, learned biases)
//! x  += W_proj · gelu(W_fc · LN2(x))
//! y   = LN_f(x) · W_U                    (untied unembedding)
//! ```
//!
//! All linear layers store weights as `(in_dims, out_dims)` matrices applied
//! as `y = x · W + b`. Under that layout the rows `h·d_head .. (h+1)·d_head`
//! of `W_O` are exactly the slice through which head `h` writes into the
//! residual stream, which is what [`prune`] edits and what the per-head
//! capture in [`acts`] feeds from.

mod acts;
mod eval;
mod io;
mod model;
mod prune;
mod train;

pub use acts::{capture_activations, ActivationDump, SequenceInfo};
pub use eval::{evaluate_ppl, mean_nll, EvalReport};
pub use io::{checkpoint_fingerprint, read_checkpoint, write_checkpoint};
pub use model::{forward_logits, Gradients};
pub use prune::{ablate_head, apply_prune, PruneSpec};
pub use train::{train_lm, TrainParams, TrainReport};

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Identity of a prunable component.
///
/// Attention heads are the real components of the transformer; synthetic
/// components exist only inside the redundancy simulator but share the same
/// downstream machinery (density maps, allocation), so they share the id
/// type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ComponentId {
    /// Attention head `head` in decoder block `layer` (both zero-based).
    #[serde(rename = "attention-head")]
    AttnHead { layer: u16, head: u16 },
    /// A synthetic component inside the redundancy simulator.
    Synthetic { index: u32 },
}

impl std::fmt::Display for ComponentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ComponentId::AttnHead { layer, head } => write!(f, "L{layer}H{head}"),
            ComponentId::Synthetic { index } => write!(f, "syn{index}"),
        }
    }
}

/// Hyperparameters that define the model shape.
///
/// `seed` controls weight initialisation only; the training batch order has
/// its own seed so that the same initial weights can be trained on different
/// data orders.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// The desk-scale preset: a four-block, eight-head byte model that
    /// trains in a few minutes on one core.
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 8,
            d_model: 128,
            d_head: 16,
            d_ffn: 512,
            vocab_size: 256,
            context_len: 128,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// Check internal consistency. Every constructor of model state calls
    /// this first, so the rest of the crate can assume the invariants.
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 {
            return Err(Error::InvalidConfig(
                "model needs at least one layer and one head".into(),
            ));
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(Error::InvalidConfig(format!(
                "d_model ({}) must equal n_heads * d_head ({} * {})",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if self.d_head == 0 || self.d_ffn == 0 {
            return Err(Error::InvalidConfig(
                "d_head and d_ffn must be positive".into(),
            ));
        }
        if self.vocab_size == 0 || self.vocab_size > 256 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size must be in 1..=256 for byte tokens, got {}",
                self.vocab_size
            )));
        }
        if self.context_len < 2 {
            return Err(Error::InvalidConfig(
                "context_len must be at least 2 (one prediction)".into(),
            ));
        }
        Ok(())
    }

    /// All attention-head ids in (layer, head) order.
    pub fn attention_heads(&self) -> Vec<ComponentId> {
        let mut out = Vec::with_capacity(self.n_layers * self.n_heads);
        for layer in 0..self.n_layers {
            for head in 0..self.n_heads {
                out.push(ComponentId::AttnHead {
                    layer: layer as u16,
                    head: head as u16,
                });
            }
        }
        out
    }

    /// Number of weights in one head's output-projection slice.
    pub fn head_slice_len(&self) -> usize {
        self.d_head * self.d_model
    }
}

/// Weights of one decoder block.
#[derive(Clone, Debug)]
pub struct LayerWeights {
    pub ln1_g: Array1<f32>,
    pub ln1_b: Array1<f32>,
    pub w_q: Array2<f32>,
    pub b_q: Array1<f32>,
    pub w_k: Array2<f32>,
    pub b_k: Array1<f32>,
    pub w_v: Array2<f32>,
    pub b_v: Array1<f32>,
    pub w_o: Array2<f32>,
    pub b_o: Array1<f32>,
    pub ln2_g: Array1<f32>,
    pub ln2_b: Array1<f32>,
    pub w_fc: Array2<f32>,
    pub b_fc: Array1<f32>,
    pub w_proj: Array2<f32>,
    pub b_proj: Array1<f32>,
}

/// Full parameter set of the model.
#[derive(Clone, Debug)]
pub struct Weights {
    pub tok_emb: Array2<f32>,
    pub pos_emb: Array2<f32>,
    pub layers: Vec<LayerWeights>,
    pub ln_f_g: Array1<f32>,
    pub ln_f_b: Array1<f32>,
    pub w_u: Array2<f32>,
}

/// Borrowed view of one named tensor, used by the optimizer and the
/// checkpoint writer to walk all parameters in a fixed order.
pub enum TensorRef<'a> {
    M(&'a Array2<f32>),
    V(&'a Array1<f32>),
}

/// Mutable variant of [`TensorRef`].
pub enum TensorMut<'a> {
    M(&'a mut Array2<f32>),
    V(&'a mut Array1<f32>),
}

impl Weights {
    /// Draw fresh weights.
    ///
    /// Linear weights are N(0, 0.02); the two residual-writing projections
    /// (`w_o`, `w_proj`) are shrunk by `1/sqrt(2 * n_layers)` so the
    /// residual stream's variance stays bounded at init. LayerNorm gains are
    /// one; every bias is zero.
    pub fn init(cfg: &ModelConfig) -> Result<Weights> {
        cfg.validate()?;
        let mut rng = rng_from(cfg.seed);
        let base = Normal::new(0.0f64, 0.02).expect("std is positive");
        let resid_std = 0.02 / ((2 * cfg.n_layers) as f64).sqrt();
        let resid = Normal::new(0.0f64, resid_std).expect("std is positive");

        let draw = |rows: usize, cols: usize, dist: &Normal<f64>, rng: &mut crate::rng::Rng| {
            Array2::from_shape_fn((rows, cols), |_| dist.sample(rng) as f32)
        };

        let tok_emb = draw(cfg.vocab_size, cfg.d_model, &base, &mut rng);
        let pos_emb = draw(cfg.context_len, cfg.d_model, &base, &mut rng);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            layers.push(LayerWeights {
                ln1_g: Array1::ones(cfg.d_model),
                ln1_b: Array1::zeros(cfg.d_model),
                w_q: draw(cfg.d_model, cfg.d_model, &base, &mut rng),
                b_q: Array1::zeros(cfg.d_model),
                w_k: draw(cfg.d_model, cfg.d_model, &base, &mut rng),
                b_k: Array1::zeros(cfg.d_model),
                w_v: draw(cfg.d_model, cfg.d_model, &base, &mut rng),
                b_v: Array1::zeros(cfg.d_model),
                w_o: draw(cfg.d_model, cfg.d_model, &resid, &mut rng),
                b_o: Array1::zeros(cfg.d_model),
                ln2_g: Array1::ones(cfg.d_model),
                ln2_b: Array1::zeros(cfg.d_model),
                w_fc: draw(cfg.d_model, cfg.d_ffn, &base, &mut rng),
                b_fc: Array1::zeros(cfg.d_ffn),
                w_proj: draw(cfg.d_ffn, cfg.d_model, &resid, &mut rng),
                b_proj: Array1::zeros(cfg.d_model),
            });
        }
        Ok(Weights {
            tok_emb,
            pos_emb,
            layers,
            ln_f_g: Array1::ones(cfg.d_model),
            ln_f_b: Array1::zeros(cfg.d_model),
            w_u: draw(cfg.d_model, cfg.vocab_size, &base, &mut rng),
        })
    }

    /// Visit every parameter tensor in a fixed, documented order:
    /// embeddings, then each block's tensors in forward order, then the
    /// final norm and the unembedding.
    pub fn tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out: Vec<(String, TensorRef<'_>)> = vec![
            ("tok_emb".into(), TensorRef::M(&self.tok_emb)),
            ("pos_emb".into(), TensorRef::M(&self.pos_emb)),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.ln1_g"), TensorRef::V(&l.ln1_g)));
            out.push((format!("{p}.ln1_b"), TensorRef::V(&l.ln1_b)));
            out.push((format!("{p}.w_q"), TensorRef::M(&l.w_q)));
            out.push((format!("{p}.b_q"), TensorRef::V(&l.b_q)));
            out.push((format!("{p}.w_k"), TensorRef::M(&l.w_k)));
            out.push((format!("{p}.b_k"), TensorRef::V(&l.b_k)));
            out.push((format!("{p}.w_v"), TensorRef::M(&l.w_v)));
            out.push((format!("{p}.b_v"), TensorRef::V(&l.b_v)));
            out.push((format!("{p}.w_o"), TensorRef::M(&l.w_o)));
            out.push((format!("{p}.b_o"), TensorRef::V(&l.b_o)));
            out.push((format!("{p}.ln2_g"), TensorRef::V(&l.ln2_g)));
            out.push((format!("{p}.ln2_b"), TensorRef::V(&l.ln2_b)));
            out.push((format!("{p}.w_fc"), TensorRef::M(&l.w_fc)));
            out.push((format!("{p}.b_fc"), TensorRef::V(&l.b_fc)));
            out.push((format!("{p}.w_proj"), TensorRef::M(&l.w_proj)));
            out.push((format!("{p}.b_proj"), TensorRef::V(&l.b_proj)));
        }
        out.push(("ln_f_g".into(), TensorRef::V(&self.ln_f_g)));
        out.push(("ln_f_b".into(), TensorRef::V(&self.ln_f_b)));
        out.push(("w_u".into(), TensorRef::M(&self.w_u)));
        out
    }

    /// Mutable variant of [`Weights::tensors`]; same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, TensorMut<'_>)> {
        let mut out: Vec<(String, TensorMut<'_>)> = vec![
            ("tok_emb".into(), TensorMut::M(&mut self.tok_emb)),
            ("pos_emb".into(), TensorMut::M(&mut self.pos_emb)),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.ln1_g"), TensorMut::V(&mut l.ln1_g)));
            out.push((format!("{p}.ln1_b"), TensorMut::V(&mut l.ln1_b)));
            out.push((format!("{p}.w_q"), TensorMut::M(&mut l.w_q)));
            out.push((format!("{p}.b_q"), TensorMut::V(&mut l.b_q)));
            out.push((format!("{p}.w_k"), TensorMut::M(&mut l.w_k)));
            out.push((format!("{p}.b_k"), TensorMut::V(&mut l.b_k)));
            out.push((format!("{p}.w_v"), TensorMut::M(&mut l.w_v)));
            out.push((format!("{p}.b_v"), TensorMut::V(&mut l.b_v)));
            out.push((format!("{p}.w_o"), TensorMut::M(&mut l.w_o)));
            out.push((format!("{p}.b_o"), TensorMut::V(&mut l.b_o)));
            out.push((format!("{p}.ln2_g"), TensorMut::V(&mut l.ln2_g)));
            out.push((format!("{p}.ln2_b"), TensorMut::V(&mut l.ln2_b)));
            out.push((format!("{p}.w_fc"), TensorMut::M(&mut l.w_fc)));
            out.push((format!("{p}.b_fc"), TensorMut::V(&mut l.b_fc)));
            out.push((format!("{p}.w_proj"), TensorMut::M(&mut l.w_proj)));
            out.push((format!("{p}.b_proj"), TensorMut::V(&mut l.b_proj)));
        }
        out.push(("ln_f_g".into(), TensorMut::V(&mut self.ln_f_g)));
        out.push(("ln_f_b".into(), TensorMut::V(&mut self.ln_f_b)));
        out.push(("w_u".into(), TensorMut::M(&mut self.w_u)));
        out
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.tensors()
            .iter()
            .map(|(_, t)| match t {
                TensorRef::M(m) => m.len(),
                TensorRef::V(v) => v.len(),
            })
            .sum()
    }
}

/// A trained (or fresh) model together with everything needed to reproduce
/// and evaluate it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub weights: Weights,
    /// Fingerprint of the corpus the model was trained on; artifacts derived
    /// from this checkpoint must agree on it.
    pub corpus_fingerprint: String,
    /// Seed that drove batch sampling during training (0 for untrained).
    pub train_seed: u64,
}

impl Checkpoint {
    /// A freshly initialised, untrained model.
    pub fn fresh(config: ModelConfig) -> Result<Checkpoint> {
        let weights = Weights::init(&config)?;
        Ok(Checkpoint {
            config,
            weights,
            corpus_fingerprint: String::new(),
            train_seed: 0,
        })
    }
}

/// How many evaluation chunks to score and how long each one is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalParams {
    pub n_chunks: usize,
    pub chunk_len: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            n_chunks: 16,
            chunk_len: 128,
        }
    }
}

/// Shape of the calibration set used for activation capture: `n_seq`
/// sequences of `seq_len` tokens, split into `n_categories` equal shards by
/// draw position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub n_seq: usize,
    pub seq_len: usize,
    pub n_categories: usize,
    pub seed: u64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            n_seq: 64,
            seq_len: 128,
            n_categories: 4,
            seed: 7,
        }
    }
}

/// Slice a corpus into the disjoint training and evaluation regions.
///
/// The last `n_chunks * chunk_len` bytes are reserved for evaluation; the
/// prefix is the training (and calibration) region.
pub fn split_corpus<'a>(corpus: &'a [u8], eval: &EvalParams) -> Result<(&'a [u8], &'a [u8])> {
    let eval_len = eval.n_chunks * eval.chunk_len;
    if eval_len == 0 {
        return Err(Error::InvalidConfig(
            "evaluation split needs at least one chunk".into(),
        ));
    }
    if corpus.len() < eval_len + eval.chunk_len {
        return Err(Error::CorpusTooShort {
            need: eval_len + eval.chunk_len,
            have: corpus.len(),
        });
    }
    let cut = corpus.len() - eval_len;
    Ok((&corpus[..cut], &corpus[cut..]))
}

/// Draw `n_seq` sequence start offsets from the training region,
/// deterministically from `seed`. Returns `(start, category)` pairs where
/// the category is the shard index `min(n_categories - 1, i * n_categories /
/// n_seq)` of the draw position `i`.
pub fn calibration_starts(
    train_len: usize,
    params: &CalibrationParams,
) -> Result<Vec<(usize, usize)>> {
    if params.n_categories == 0 || params.n_seq < params.n_categories {
        return Err(Error::TooFewCategories {
            min: params.n_categories.max(1),
            got: params.n_seq,
        });
    }
    if train_len < params.seq_len + 1 {
        return Err(Error::CorpusTooShort {
            need: params.seq_len + 1,
            have: train_len,
        });
    }
    let mut rng = rng_from(params.seed);
    let max_start = train_len - params.seq_len;
    let mut out = Vec::with_capacity(params.n_seq);
    for i in 0..params.n_seq {
        let start = rand::Rng::gen_range(&mut rng, 0..max_start);
        let category = ((i * params.n_categories) / params.n_seq).min(params.n_categories - 1);
        out.push((start, category));
    }
    Ok(out)
}
