//! Forward and reverse passes, written out by hand.
//!
//! One code path serves three callers: plain logits for evaluation, logits
//! plus a full cache for training, and per-layer attention context captures
//! for the autoencoder pipeline. Activations are `f32`; every loss is
//! accumulated in `f64`.
//!
//! Shapes: a batch of `n_seqs` sequences of `t_len` tokens is flattened to
//! `n = n_seqs * t_len` rows, so every position-wise op is one matrix per
//! layer. Only the attention inner loop works per `(sequence, head)` pair.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};

use super::{ModelConfig, Weights};

/// Gradients share the exact shape (and tensor walk) of the weights.
pub type Gradients = Weights;

const LN_EPS: f32 = 1e-5;
const SQRT_2_OVER_PI: f32 = 0.797_884_6;
const GELU_CUBIC: f32 = 0.044_715;

pub(crate) struct LnCache {
    xhat: Array2<f32>,
    inv_std: Array1<f32>,
}

pub(crate) struct LayerCache {
    ln1: LnCache,
    attn_in: Array2<f32>,
    q: Array2<f32>,
    k: Array2<f32>,
    v: Array2<f32>,
    /// One `(t_len, t_len)` row-stochastic matrix per `(sequence, head)`,
    /// upper triangle zeroed.
    probs: Vec<Array2<f32>>,
    /// Concatenated per-head context vectors, before the output projection.
    ctx: Array2<f32>,
    ln2: LnCache,
    ffn_in: Array2<f32>,
    h_pre: Array2<f32>,
    h_act: Array2<f32>,
}

pub(crate) struct TrainCache {
    layers: Vec<LayerCache>,
    ln_f: LnCache,
    head_in: Array2<f32>,
}

enum Mode {
    Logits,
    Train,
    Capture,
}

struct ForwardOut {
    logits: Option<Array2<f32>>,
    cache: Option<TrainCache>,
    captures: Option<Vec<Array2<f32>>>,
}

fn gelu_scalar(x: f32) -> f32 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad_scalar(x: f32) -> f32 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn layer_norm(x: &Array2<f32>, g: &Array1<f32>, b: &Array1<f32>) -> (Array2<f32>, LnCache) {
    let (n, d) = x.dim();
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(n);
    for (r, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / d as f32;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f32>() / d as f32;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * is);
        inv_std[r] = is;
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = *v * g[c] + b[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

/// Backpropagate through one LayerNorm. Accumulates the gain/shift
/// gradients and returns the gradient with respect to the input.
fn layer_norm_backward(
    dy: &Array2<f32>,
    cache: &LnCache,
    g: &Array1<f32>,
    dg: &mut Array1<f32>,
    db: &mut Array1<f32>,
) -> Array2<f32> {
    let (n, d) = dy.dim();
    let mut dx = Array2::zeros((n, d));
    for r in 0..n {
        let dy_r = dy.row(r);
        let xh_r = cache.xhat.row(r);
        let mut s1 = 0.0f32;
        let mut s2 = 0.0f32;
        for c in 0..d {
            let dxhat = dy_r[c] * g[c];
            s1 += dxhat;
            s2 += dxhat * xh_r[c];
            dg[c] += dy_r[c] * xh_r[c];
            db[c] += dy_r[c];
        }
        let inv_d = 1.0 / d as f32;
        let is = cache.inv_std[r];
        let mut dx_r = dx.row_mut(r);
        for c in 0..d {
            let dxhat = dy_r[c] * g[c];
            dx_r[c] = is * (dxhat - s1 * inv_d - xh_r[c] * s2 * inv_d);
        }
    }
    dx
}

fn affine(x: &Array2<f32>, w: &Array2<f32>, b: Option<&Array1<f32>>) -> Array2<f32> {
    let mut y = x.dot(w);
    if let Some(b) = b {
        y += b;
    }
    y
}

fn check_tokens(cfg: &ModelConfig, tokens: &[u8], n_seqs: usize, t_len: usize) -> Result<()> {
    if n_seqs == 0 || t_len == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if t_len > cfg.context_len {
        return Err(Error::InvalidConfig(format!(
            "sequence length {} exceeds context_len {}",
            t_len, cfg.context_len
        )));
    }
    if tokens.len() != n_seqs * t_len {
        return Err(Error::ShapeMismatch {
            context: "token batch",
            expected: format!("{} tokens", n_seqs * t_len),
            got: format!("{}", tokens.len()),
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| (t as usize) >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            token: bad as u16,
            vocab: cfg.vocab_size,
        });
    }
    Ok(())
}

fn forward(
    cfg: &ModelConfig,
    w: &Weights,
    tokens: &[u8],
    n_seqs: usize,
    t_len: usize,
    mode: Mode,
) -> Result<ForwardOut> {
    check_tokens(cfg, tokens, n_seqs, t_len)?;
    let n = n_seqs * t_len;
    let dm = cfg.d_model;
    let dh = cfg.d_head;
    let scale = 1.0 / (dh as f32).sqrt();

    let mut x = Array2::<f32>::zeros((n, dm));
    for (r, &tok) in tokens.iter().enumerate() {
        let pos = r % t_len;
        let te = w.tok_emb.row(tok as usize);
        let pe = w.pos_emb.row(pos);
        let mut row = x.row_mut(r);
        for c in 0..dm {
            row[c] = te[c] + pe[c];
        }
    }

    let train = matches!(mode, Mode::Train);
    let mut layer_caches = Vec::new();
    let mut captures = Vec::new();

    for l in &w.layers {
        let (attn_in, ln1) = layer_norm(&x, &l.ln1_g, &l.ln1_b);
        let q = affine(&attn_in, &l.w_q, Some(&l.b_q));
        let k = affine(&attn_in, &l.w_k, Some(&l.b_k));
        let v = affine(&attn_in, &l.w_v, Some(&l.b_v));

        let mut ctx = Array2::<f32>::zeros((n, dm));
        let mut probs = Vec::new();
        for si in 0..n_seqs {
            let r0 = si * t_len;
            let r1 = r0 + t_len;
            for h in 0..cfg.n_heads {
                let c0 = h * dh;
                let c1 = c0 + dh;
                let qh = q.slice(s![r0..r1, c0..c1]);
                let kh = k.slice(s![r0..r1, c0..c1]);
                let vh = v.slice(s![r0..r1, c0..c1]);
                let mut att = qh.dot(&kh.t());
                for t in 0..t_len {
                    let mut row = att.row_mut(t);
                    let mut m = f32::NEG_INFINITY;
                    for j in 0..=t {
                        let s = row[j] * scale;
                        row[j] = s;
                        if s > m {
                            m = s;
                        }
                    }
                    let mut sum = 0.0f32;
                    for j in 0..=t {
                        let e = (row[j] - m).exp();
                        row[j] = e;
                        sum += e;
                    }
                    let inv = 1.0 / sum;
                    for j in 0..=t {
                        row[j] *= inv;
                    }
                    for j in (t + 1)..t_len {
                        row[j] = 0.0;
                    }
                }
                let mut out = ctx.slice_mut(s![r0..r1, c0..c1]);
                general_mat_mul(1.0, &att, &vh, 0.0, &mut out);
                if train {
                    probs.push(att);
                }
            }
        }

        let attn_out = affine(&ctx, &l.w_o, Some(&l.b_o));
        x += &attn_out;

        if matches!(mode, Mode::Capture) {
            captures.push(ctx.clone());
        }

        let (ffn_in, ln2) = layer_norm(&x, &l.ln2_g, &l.ln2_b);
        let h_pre = affine(&ffn_in, &l.w_fc, Some(&l.b_fc));
        let h_act = h_pre.mapv(gelu_scalar);
        let ffn_out = affine(&h_act, &l.w_proj, Some(&l.b_proj));
        x += &ffn_out;

        if train {
            layer_caches.push(LayerCache {
                ln1,
                attn_in,
                q,
                k,
                v,
                probs,
                ctx,
                ln2,
                ffn_in,
                h_pre,
                h_act,
            });
        }
    }

    if matches!(mode, Mode::Capture) {
        return Ok(ForwardOut {
            logits: None,
            cache: None,
            captures: Some(captures),
        });
    }

    let (head_in, ln_f) = layer_norm(&x, &w.ln_f_g, &w.ln_f_b);
    let logits = affine(&head_in, &w.w_u, None);
    let cache = if train {
        Some(TrainCache {
            layers: layer_caches,
            ln_f,
            head_in,
        })
    } else {
        None
    };
    Ok(ForwardOut {
        logits: Some(logits),
        cache,
        captures: None,
    })
}

/// Run the model and return next-token logits, one row per input position.
pub fn forward_logits(
    cfg: &ModelConfig,
    w: &Weights,
    tokens: &[u8],
    n_seqs: usize,
    t_len: usize,
) -> Result<Array2<f32>> {
    let out = forward(cfg, w, tokens, n_seqs, t_len, Mode::Logits)?;
    Ok(out.logits.expect("logits mode produces logits"))
}

/// Forward pass that keeps every intermediate needed by [`backward`].
pub(crate) fn forward_train(
    cfg: &ModelConfig,
    w: &Weights,
    tokens: &[u8],
    n_seqs: usize,
    t_len: usize,
) -> Result<(Array2<f32>, TrainCache)> {
    let out = forward(cfg, w, tokens, n_seqs, t_len, Mode::Train)?;
    Ok((
        out.logits.expect("train mode produces logits"),
        out.cache.expect("train mode produces a cache"),
    ))
}

/// Forward pass that returns, for every layer, the `(n, d_model)` matrix of
/// concatenated per-head context vectors (the inputs to that layer's output
/// projection). Head `h` owns columns `h*d_head .. (h+1)*d_head`.
pub(crate) fn forward_capture(
    cfg: &ModelConfig,
    w: &Weights,
    tokens: &[u8],
    n_seqs: usize,
    t_len: usize,
) -> Result<Vec<Array2<f32>>> {
    let out = forward(cfg, w, tokens, n_seqs, t_len, Mode::Capture)?;
    Ok(out.captures.expect("capture mode produces captures"))
}

/// Mean cross-entropy (nats per prediction, accumulated in `f64`) and the
/// gradient of that mean with respect to the logits.
pub(crate) fn cross_entropy(
    logits: &Array2<f32>,
    targets: &[u8],
    vocab: usize,
) -> Result<(f64, Array2<f32>)> {
    let n = logits.nrows();
    if targets.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: targets.len(),
        });
    }
    let mut dl = logits.clone();
    let mut total = 0.0f64;
    for (r, &t) in targets.iter().enumerate() {
        let t = t as usize;
        if t >= vocab {
            return Err(Error::TokenOutOfRange {
                token: t as u16,
                vocab,
            });
        }
        let mut row = dl.row_mut(r);
        let target_logit = row[t];
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        total += -((target_logit - m) as f64 - (sum as f64).ln());
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
        row[t] -= 1.0;
    }
    let inv_n = 1.0 / n as f32;
    dl.mapv_inplace(|v| v * inv_n);
    Ok((total / n as f64, dl))
}

/// Reverse pass. Consumes the training cache and returns gradients for
/// every parameter, in the same layout as the weights.
pub(crate) fn backward(
    cfg: &ModelConfig,
    w: &Weights,
    tokens: &[u8],
    n_seqs: usize,
    t_len: usize,
    dlogits: &Array2<f32>,
    cache: &TrainCache,
) -> Gradients {
    let dm = cfg.d_model;
    let dh = cfg.d_head;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut g = zeros_like(cfg);

    // Unembedding and final norm.
    general_mat_mul(1.0, &cache.head_in.t(), dlogits, 1.0, &mut g.w_u);
    let dy = dlogits.dot(&w.w_u.t());
    let mut dx = layer_norm_backward(&dy, &cache.ln_f, &w.ln_f_g, &mut g.ln_f_g, &mut g.ln_f_b);

    for (li, l) in w.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let gl = &mut g.layers[li];

        // FFN block: x_out = x_mid + W_proj(gelu(W_fc(LN2(x_mid)))).
        general_mat_mul(1.0, &lc.h_act.t(), &dx, 1.0, &mut gl.w_proj);
        gl.b_proj += &dx.sum_axis(Axis(0));
        let mut dh_act = dx.dot(&l.w_proj.t());
        ndarray::Zip::from(&mut dh_act)
            .and(&lc.h_pre)
            .for_each(|d, &pre| *d *= gelu_grad_scalar(pre));
        let dh_pre = dh_act;
        general_mat_mul(1.0, &lc.ffn_in.t(), &dh_pre, 1.0, &mut gl.w_fc);
        gl.b_fc += &dh_pre.sum_axis(Axis(0));
        let dffn_in = dh_pre.dot(&l.w_fc.t());
        let d_mid = layer_norm_backward(&dffn_in, &lc.ln2, &l.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);
        dx += &d_mid;

        // Attention block: x_mid = x_in + W_O(ctx) + b_O.
        general_mat_mul(1.0, &lc.ctx.t(), &dx, 1.0, &mut gl.w_o);
        gl.b_o += &dx.sum_axis(Axis(0));
        let dctx = dx.dot(&l.w_o.t());

        let n = n_seqs * t_len;
        let mut dq = Array2::<f32>::zeros((n, dm));
        let mut dk = Array2::<f32>::zeros((n, dm));
        let mut dv = Array2::<f32>::zeros((n, dm));
        for si in 0..n_seqs {
            let r0 = si * t_len;
            let r1 = r0 + t_len;
            for h in 0..cfg.n_heads {
                let c0 = h * dh;
                let c1 = c0 + dh;
                let p = &lc.probs[si * cfg.n_heads + h];
                let dctx_h = dctx.slice(s![r0..r1, c0..c1]);
                let qh = lc.q.slice(s![r0..r1, c0..c1]);
                let kh = lc.k.slice(s![r0..r1, c0..c1]);
                let vh = lc.v.slice(s![r0..r1, c0..c1]);

                let mut dv_h = dv.slice_mut(s![r0..r1, c0..c1]);
                general_mat_mul(1.0, &p.t(), &dctx_h, 0.0, &mut dv_h);

                let mut dp = dctx_h.dot(&vh.t());
                for t in 0..t_len {
                    let p_row = p.row(t);
                    let mut d_row = dp.row_mut(t);
                    let mut dot = 0.0f32;
                    for j in 0..=t {
                        dot += d_row[j] * p_row[j];
                    }
                    for j in 0..=t {
                        d_row[j] = (d_row[j] - dot) * p_row[j] * scale;
                    }
                    for j in (t + 1)..t_len {
                        d_row[j] = 0.0;
                    }
                }
                let mut dq_h = dq.slice_mut(s![r0..r1, c0..c1]);
                general_mat_mul(1.0, &dp, &kh, 0.0, &mut dq_h);
                let mut dk_h = dk.slice_mut(s![r0..r1, c0..c1]);
                general_mat_mul(1.0, &dp.t(), &qh, 0.0, &mut dk_h);
            }
        }

        general_mat_mul(1.0, &lc.attn_in.t(), &dq, 1.0, &mut gl.w_q);
        gl.b_q += &dq.sum_axis(Axis(0));
        general_mat_mul(1.0, &lc.attn_in.t(), &dk, 1.0, &mut gl.w_k);
        gl.b_k += &dk.sum_axis(Axis(0));
        general_mat_mul(1.0, &lc.attn_in.t(), &dv, 1.0, &mut gl.w_v);
        gl.b_v += &dv.sum_axis(Axis(0));

        let mut d_attn_in = dq.dot(&l.w_q.t());
        general_mat_mul(1.0, &dk, &l.w_k.t(), 1.0, &mut d_attn_in);
        general_mat_mul(1.0, &dv, &l.w_v.t(), 1.0, &mut d_attn_in);
        let d_in = layer_norm_backward(&d_attn_in, &lc.ln1, &l.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
        dx += &d_in;
    }

    // Embeddings.
    for (r, &tok) in tokens.iter().enumerate() {
        let pos = r % t_len;
        let dr = dx.row(r);
        let mut te = g.tok_emb.row_mut(tok as usize);
        for c in 0..dm {
            te[c] += dr[c];
        }
        let mut pe = g.pos_emb.row_mut(pos);
        for c in 0..dm {
            pe[c] += dr[c];
        }
    }
    g
}

/// A zero-filled parameter holder shaped by the config.
pub(crate) fn zeros_like(cfg: &ModelConfig) -> Gradients {
    Weights {
        tok_emb: Array2::zeros((cfg.vocab_size, cfg.d_model)),
        pos_emb: Array2::zeros((cfg.context_len, cfg.d_model)),
        layers: (0..cfg.n_layers)
            .map(|_| super::LayerWeights {
                ln1_g: Array1::zeros(cfg.d_model),
                ln1_b: Array1::zeros(cfg.d_model),
                w_q: Array2::zeros((cfg.d_model, cfg.d_model)),
                b_q: Array1::zeros(cfg.d_model),
                w_k: Array2::zeros((cfg.d_model, cfg.d_model)),
                b_k: Array1::zeros(cfg.d_model),
                w_v: Array2::zeros((cfg.d_model, cfg.d_model)),
                b_v: Array1::zeros(cfg.d_model),
                w_o: Array2::zeros((cfg.d_model, cfg.d_model)),
                b_o: Array1::zeros(cfg.d_model),
                ln2_g: Array1::zeros(cfg.d_model),
                ln2_b: Array1::zeros(cfg.d_model),
                w_fc: Array2::zeros((cfg.d_model, cfg.d_ffn)),
                b_fc: Array1::zeros(cfg.d_ffn),
                w_proj: Array2::zeros((cfg.d_ffn, cfg.d_model)),
                b_proj: Array1::zeros(cfg.d_model),
            })
            .collect(),
        ln_f_g: Array1::zeros(cfg.d_model),
        ln_f_b: Array1::zeros(cfg.d_model),
        w_u: Array2::zeros((cfg.d_model, cfg.vocab_size)),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{ModelConfig, TensorMut, TensorRef, Weights};
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_head: 4,
            d_ffn: 16,
            vocab_size: 11,
            context_len: 6,
            seed: 123,
        }
    }

    #[test]
    fn logits_shape_and_finiteness() {
        let cfg = tiny_config();
        let w = Weights::init(&cfg).unwrap();
        let tokens: Vec<u8> = vec![1, 4, 2, 9, 0, 3, 5, 5, 7, 1, 2, 10];
        let logits = forward_logits(&cfg, &w, &tokens, 2, 6).unwrap();
        assert_eq!(logits.dim(), (12, 11));
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_out_of_vocab_tokens() {
        let cfg = tiny_config();
        let w = Weights::init(&cfg).unwrap();
        let err = forward_logits(&cfg, &w, &[1, 2, 11, 3], 1, 4).unwrap_err();
        assert!(matches!(err, Error::TokenOutOfRange { token: 11, .. }));
    }

    #[test]
    fn causal_mask_blocks_future_tokens() {
        let cfg = tiny_config();
        let w = Weights::init(&cfg).unwrap();
        let a: Vec<u8> = vec![3, 1, 4, 1, 5, 9];
        let mut b = a.clone();
        b[4] = 7; // change a late token
        let la = forward_logits(&cfg, &w, &a, 1, 6).unwrap();
        let lb = forward_logits(&cfg, &w, &b, 1, 6).unwrap();
        // Positions before the edit are bit-identical; the edited position
        // and later ones differ.
        for t in 0..4 {
            assert_eq!(la.row(t), lb.row(t), "position {t} saw the future");
        }
        assert_ne!(la.row(4), lb.row(4));
    }

    #[test]
    fn batch_rows_are_independent_sequences() {
        let cfg = tiny_config();
        let w = Weights::init(&cfg).unwrap();
        let s1: Vec<u8> = vec![2, 7, 1, 8, 2, 8];
        let s2: Vec<u8> = vec![3, 1, 4, 1, 5, 9];
        let both: Vec<u8> = s1.iter().chain(s2.iter()).copied().collect();
        let joint = forward_logits(&cfg, &w, &both, 2, 6).unwrap();
        let solo = forward_logits(&cfg, &w, &s2, 1, 6).unwrap();
        for t in 0..6 {
            let jr = joint.row(6 + t);
            let sr = solo.row(t);
            for c in 0..11 {
                assert!(
                    (jr[c] - sr[c]).abs() <= 1e-5,
                    "cross-sequence leak at {t},{c}"
                );
            }
        }
    }

    #[test]
    fn zero_unembedding_gives_uniform_loss() {
        let cfg = tiny_config();
        let mut w = Weights::init(&cfg).unwrap();
        w.w_u.fill(0.0);
        let tokens: Vec<u8> = vec![1, 4, 2, 9, 0, 3];
        let logits = forward_logits(&cfg, &w, &tokens, 1, 6).unwrap();
        let targets: Vec<u8> = vec![4, 2, 9, 0, 3, 5];
        let (loss, _) = cross_entropy(&logits, &targets, cfg.vocab_size).unwrap();
        // All-zero logits make every prediction exactly uniform.
        assert!((loss - (11.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn capture_matches_train_cache_columns() {
        let cfg = tiny_config();
        let w = Weights::init(&cfg).unwrap();
        let tokens: Vec<u8> = vec![1, 4, 2, 9, 0, 3];
        let caps = forward_capture(&cfg, &w, &tokens, 1, 6).unwrap();
        assert_eq!(caps.len(), 2);
        assert_eq!(caps[0].dim(), (6, 8));
        let (_, cache) = forward_train(&cfg, &w, &tokens, 1, 6).unwrap();
        for (li, cap) in caps.iter().enumerate() {
            assert_eq!(cap, &cache.layers[li].ctx);
        }
    }

    /// Central-difference gradient check over a couple of entries of every
    /// parameter tensor. The budget accounts for f32 forward noise and
    /// O(h^2) truncation through the softmax/GELU/LayerNorm chain: relative
    /// agreement to 5e-2 on gradients above 1e-3 is a sound pass bar, while
    /// directional errors show up as relative errors near or above 1.
    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_config();
        let w = Weights::init(&cfg).unwrap();
        let tokens: Vec<u8> = vec![1, 4, 2, 9, 0, 3, 5, 5, 7, 1, 2, 10];
        let targets: Vec<u8> = vec![4, 2, 9, 0, 3, 5, 5, 7, 1, 2, 10, 6];

        let loss_of = |w: &Weights| -> f64 {
            let logits = forward_logits(&cfg, w, &tokens, 2, 6).unwrap();
            cross_entropy(&logits, &targets, cfg.vocab_size).unwrap().0
        };

        let (logits, cache) = forward_train(&cfg, &w, &tokens, 2, 6).unwrap();
        let (_, dlogits) = cross_entropy(&logits, &targets, cfg.vocab_size).unwrap();
        let grads = backward(&cfg, &w, &tokens, 2, 6, &dlogits, &cache);

        let h = 3e-3f32;
        let mut checked = 0usize;
        let n_tensors = w.tensors().len();
        for ti in 0..n_tensors {
            // Probe the first and a middle element of each tensor.
            let len = match &w.tensors()[ti].1 {
                TensorRef::M(m) => m.len(),
                TensorRef::V(v) => v.len(),
            };
            for &flat in &[0usize, len / 2] {
                let analytic = {
                    let tensors = grads.tensors();
                    match &tensors[ti].1 {
                        TensorRef::M(m) => m.as_slice().unwrap()[flat] as f64,
                        TensorRef::V(v) => v.as_slice().unwrap()[flat] as f64,
                    }
                };
                let probe = |delta: f32| -> f64 {
                    let mut wp = w.clone();
                    {
                        let mut tensors = wp.tensors_mut();
                        match &mut tensors[ti].1 {
                            TensorMut::M(m) => m.as_slice_mut().unwrap()[flat] += delta,
                            TensorMut::V(v) => v.as_slice_mut().unwrap()[flat] += delta,
                        }
                    }
                    loss_of(&wp)
                };
                let numeric = (probe(h) - probe(-h)) / (2.0 * h as f64);
                let denom = analytic.abs().max(numeric.abs());
                if denom < 1e-3 {
                    continue; // both effectively zero at f32 resolution
                }
                let rel = (analytic - numeric).abs() / denom;
                assert!(
                    rel < 5e-2,
                    "tensor {} ({}) flat {}: analytic {:.6e} vs numeric {:.6e} (rel {:.3e})",
                    ti,
                    w.tensors()[ti].0,
                    flat,
                    analytic,
                    numeric,
                    rel
                );
                checked += 1;
            }
        }
        // Enough live probes to make the check meaningful.
        assert!(
            checked > 30,
            "only {checked} gradient probes were non-trivial"
        );
    }
}
