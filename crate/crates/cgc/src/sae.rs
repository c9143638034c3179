//! Per-head TopK sparse autoencoders.
//!
//! Each attention head gets its own autoencoder trained on that head's
//! captured context vectors. The encoder is a single affine map followed by
//! ReLU and a hard TopK: only the `k` largest positive activations survive,
//! everything else is zeroed. The decoder is affine with unit-norm feature
//! rows, so a feature's activation is directly comparable across features.
//!
//! ```text
//! pre  = z · W_enc + b_enc          (d -> F)
//! a    = topk(relu(pre), k)         (<= k nonzeros)
//! zhat = a · W_dec + b_dec          (F -> d, rows of W_dec unit L2)
//! loss = mean_rows ||zhat - z||^2 + l1 * mean_rows sum(a)
//! ```
//!
//! Gradients flow only through the TopK support (no straight-through
//! estimator), and after every optimizer step the decoder rows are
//! projected back to unit norm.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::artifact::{read_container, write_container, BANK_MAGIC};
use crate::error::{Error, Result};
use crate::rng::{component_seed, rng_from};
use crate::tinylm::{ActivationDump, ComponentId};

/// Autoencoder shape and training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaeConfig {
    /// Input dimension (the head's `d_head`).
    pub d_input: usize,
    /// Dictionary size.
    pub n_features: usize,
    /// Number of surviving activations per input.
    pub k: usize,
    /// L1 coefficient on the surviving activations.
    pub l1_coeff: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl SaeConfig {
    /// Desk preset for 16-dimensional head activations.
    pub fn for_d_input(d_input: usize) -> SaeConfig {
        SaeConfig {
            d_input,
            n_features: 128,
            k: 8,
            l1_coeff: 1e-4,
            epochs: 5,
            lr: 2e-4,
            batch_size: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_input == 0 || self.n_features == 0 {
            return Err(Error::InvalidConfig(
                "autoencoder needs positive input and dictionary sizes".into(),
            ));
        }
        if self.k == 0 || self.k > self.n_features {
            return Err(Error::InvalidConfig(format!(
                "k must be in 1..=n_features, got k={} F={}",
                self.k, self.n_features
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) || self.l1_coeff < 0.0 {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and lr must be positive; l1_coeff non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One trained autoencoder.
#[derive(Clone, Debug)]
pub struct Sae {
    pub config: SaeConfig,
    pub w_enc: Array2<f32>,
    pub b_enc: Array1<f32>,
    pub w_dec: Array2<f32>,
    pub b_dec: Array1<f32>,
}

/// Sparse feature activations in CSR form: row `r` owns entries
/// `row_ptr[r] .. row_ptr[r+1]` of `idx`/`val`, with `idx` ascending within
/// a row and every stored value strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub n_features: usize,
    pub row_ptr: Vec<usize>,
    pub idx: Vec<u32>,
    pub val: Vec<f32>,
}

impl FeatureMatrix {
    pub fn row(&self, r: usize) -> (&[u32], &[f32]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.idx[lo..hi], &self.val[lo..hi])
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }
}

/// Select the TopK support of one pre-activation row: the `k` largest
/// strictly positive values, ties broken toward the lower feature index.
/// Returns (index, value) pairs sorted by index.
fn topk_row(pre: &[f32], k: usize) -> Vec<(u32, f32)> {
    let mut pos: Vec<(u32, f32)> = pre
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| (i as u32, v))
        .collect();
    if pos.len() > k {
        pos.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        pos.truncate(k);
    }
    pos.sort_unstable_by_key(|&(i, _)| i);
    pos
}

impl Sae {
    /// Deterministic initialisation: decoder rows are random unit vectors,
    /// the encoder starts as the decoder's transpose, biases are zero.
    pub fn init(config: SaeConfig, seed: u64) -> Result<Sae> {
        config.validate()?;
        let mut rng = rng_from(seed);
        let d = config.d_input;
        let f = config.n_features;
        let mut w_dec = Array2::<f32>::zeros((f, d));
        for mut row in w_dec.rows_mut() {
            loop {
                let mut norm_sq = 0.0f64;
                for v in row.iter_mut() {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    *v = x as f32;
                    norm_sq += x * x;
                }
                if norm_sq > 1e-12 {
                    let inv = (1.0 / norm_sq.sqrt()) as f32;
                    row.mapv_inplace(|v| v * inv);
                    break;
                }
            }
        }
        let w_enc = w_dec.t().as_standard_layout().into_owned();
        Ok(Sae {
            config,
            w_enc,
            b_enc: Array1::zeros(f),
            w_dec,
            b_dec: Array1::zeros(d),
        })
    }

    /// Encode a batch of rows into sparse feature activations.
    pub fn encode(&self, z: &Array2<f32>) -> Result<FeatureMatrix> {
        if z.ncols() != self.config.d_input {
            return Err(Error::ShapeMismatch {
                context: "autoencoder input",
                expected: format!("{} columns", self.config.d_input),
                got: format!("{}", z.ncols()),
            });
        }
        let mut pre = z.dot(&self.w_enc);
        pre += &self.b_enc;
        let mut row_ptr = Vec::with_capacity(z.nrows() + 1);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for row in pre.rows() {
            for (i, v) in topk_row(row.as_slice().expect("standard layout"), self.config.k) {
                idx.push(i);
                val.push(v);
            }
            row_ptr.push(idx.len());
        }
        Ok(FeatureMatrix {
            n_rows: z.nrows(),
            n_features: self.config.n_features,
            row_ptr,
            idx,
            val,
        })
    }

    /// Decode sparse activations back into input space.
    pub fn decode(&self, acts: &FeatureMatrix) -> Result<Array2<f32>> {
        if acts.n_features != self.config.n_features {
            return Err(Error::ShapeMismatch {
                context: "feature matrix",
                expected: format!("{} features", self.config.n_features),
                got: format!("{}", acts.n_features),
            });
        }
        let d = self.config.d_input;
        let mut out = Array2::<f32>::zeros((acts.n_rows, d));
        for r in 0..acts.n_rows {
            let mut row = out.row_mut(r);
            for c in 0..d {
                row[c] = self.b_dec[c];
            }
            let (idx, val) = acts.row(r);
            for (&f, &a) in idx.iter().zip(val) {
                let wrow = self.w_dec.row(f as usize);
                for c in 0..d {
                    row[c] += a * wrow[c];
                }
            }
        }
        Ok(out)
    }

    /// Encode then decode.
    pub fn reconstruct(&self, z: &Array2<f32>) -> Result<Array2<f32>> {
        let acts = self.encode(z)?;
        self.decode(&acts)
    }

    /// Mean reconstruction error and mean activation mass per row, both in
    /// `f64`: `(mean ||zhat - z||^2, mean sum(a))`.
    pub fn loss_terms(&self, z: &Array2<f32>) -> Result<(f64, f64)> {
        let acts = self.encode(z)?;
        let zhat = self.decode(&acts)?;
        let mut recon = 0.0f64;
        for (a, b) in zhat.iter().zip(z.iter()) {
            let d = (*a - *b) as f64;
            recon += d * d;
        }
        let mass: f64 = acts.val.iter().map(|&v| v as f64).sum();
        let n = z.nrows() as f64;
        Ok((recon / n, mass / n))
    }

    /// Total training objective on a batch.
    pub fn loss(&self, z: &Array2<f32>) -> Result<f64> {
        let (recon, mass) = self.loss_terms(z)?;
        Ok(recon + self.config.l1_coeff * mass)
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainStats {
    /// Mean reconstruction error over all rows, before any training.
    pub initial_recon: f64,
    /// Mean reconstruction error over all rows, after the last epoch.
    pub final_recon: f64,
    /// Online per-epoch mean reconstruction error (weights move during an
    /// epoch, so these are progress indicators, not clean evaluations).
    pub epoch_recon: Vec<f64>,
    /// Online per-epoch mean total loss (reconstruction + L1 term).
    pub epoch_total: Vec<f64>,
    /// Features that never fired during the final epoch.
    pub dead_features: usize,
    pub n_rows: usize,
}

struct Adam {
    m_we: Array2<f32>,
    v_we: Array2<f32>,
    m_be: Array1<f32>,
    v_be: Array1<f32>,
    m_wd: Array2<f32>,
    v_wd: Array2<f32>,
    m_bd: Array1<f32>,
    v_bd: Array1<f32>,
    t: usize,
}

impl Adam {
    fn new(d: usize, f: usize) -> Adam {
        Adam {
            m_we: Array2::zeros((d, f)),
            v_we: Array2::zeros((d, f)),
            m_be: Array1::zeros(f),
            v_be: Array1::zeros(f),
            m_wd: Array2::zeros((f, d)),
            v_wd: Array2::zeros((f, d)),
            m_bd: Array1::zeros(d),
            v_bd: Array1::zeros(d),
            t: 0,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn adam_update(w: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32], lr: f64, t: usize) {
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    for j in 0..w.len() {
        let gj = g[j];
        m[j] = (BETA1 as f32) * m[j] + (1.0 - BETA1 as f32) * gj;
        v[j] = (BETA2 as f32) * v[j] + (1.0 - BETA2 as f32) * gj * gj;
        let mhat = m[j] as f64 / bc1;
        let vhat = v[j] as f64 / bc2;
        w[j] -= (lr * mhat / (vhat.sqrt() + ADAM_EPS)) as f32;
    }
}

/// Train one autoencoder on a matrix of activation rows.
///
/// Deterministic in `(data, config, seed)`: the seed drives initialisation
/// and the per-epoch row shuffle.
pub fn train_sae(z: &Array2<f32>, config: &SaeConfig, seed: u64) -> Result<(Sae, TrainStats)> {
    config.validate()?;
    if z.nrows() == 0 {
        return Err(Error::TooFewSamples {
            what: "activation rows",
            min: 1,
            got: 0,
        });
    }
    if z.ncols() != config.d_input {
        return Err(Error::ShapeMismatch {
            context: "activation rows",
            expected: format!("{} columns", config.d_input),
            got: format!("{}", z.ncols()),
        });
    }
    let mut sae = Sae::init(*config, seed)?;
    let (initial_recon, _) = sae.loss_terms(z)?;

    let n = z.nrows();
    let d = config.d_input;
    let f = config.n_features;
    let l1 = config.l1_coeff as f32;
    let mut opt = Adam::new(d, f);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(seed ^ 0x5ae5_ae5a_e5ae_5ae5);

    let mut epoch_recon = Vec::with_capacity(config.epochs);
    let mut epoch_total = Vec::with_capacity(config.epochs);
    let mut fired = vec![false; f];

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        if epoch + 1 == config.epochs {
            fired.iter_mut().for_each(|b| *b = false);
        }
        let mut recon_sum = 0.0f64;
        let mut total_sum = 0.0f64;

        for batch in order.chunks(config.batch_size) {
            let b = batch.len();
            let mut zb = Array2::<f32>::zeros((b, d));
            for (i, &r) in batch.iter().enumerate() {
                zb.row_mut(i).assign(&z.row(r));
            }
            // Forward.
            let acts = sae.encode(&zb)?;
            let zhat = sae.decode(&acts)?;
            for &i in &acts.idx {
                fired[i as usize] = true;
            }
            // Loss bookkeeping (pre-step weights).
            let mut recon = 0.0f64;
            for (a, t) in zhat.iter().zip(zb.iter()) {
                let e = (*a - *t) as f64;
                recon += e * e;
            }
            let mass: f64 = acts.val.iter().map(|&v| v as f64).sum();
            recon_sum += recon;
            total_sum += recon + config.l1_coeff * mass;

            // Backward. dzhat = 2/b (zhat - z).
            let scale = 2.0 / b as f32;
            let mut dzhat = &zhat - &zb;
            dzhat.mapv_inplace(|v| v * scale);

            let mut g_wd = Array2::<f32>::zeros((f, d));
            let g_bd: Array1<f32> = dzhat.sum_axis(Axis(0));
            let mut g_we = Array2::<f32>::zeros((d, f));
            let mut g_be = Array1::<f32>::zeros(f);
            let l1_per_row = l1 / b as f32;

            for r in 0..b {
                let (idx, val) = acts.row(r);
                let drow = dzhat.row(r);
                let zrow = zb.row(r);
                for (&fi, &a) in idx.iter().zip(val) {
                    let fi = fi as usize;
                    // dW_dec[f] += a * dzhat[r]
                    let mut wrow = g_wd.row_mut(fi);
                    for c in 0..d {
                        wrow[c] += a * drow[c];
                    }
                    // da = dzhat[r] . w_dec[f] + l1/b ; relu' = 1 on support
                    let wdec = sae.w_dec.row(fi);
                    let mut da = l1_per_row;
                    for c in 0..d {
                        da += drow[c] * wdec[c];
                    }
                    // dW_enc[:, f] += z[r] * da ; db_enc[f] += da
                    for c in 0..d {
                        g_we[[c, fi]] += zrow[c] * da;
                    }
                    g_be[fi] += da;
                }
            }

            opt.t += 1;
            let t = opt.t;
            adam_update(
                sae.w_enc.as_slice_mut().expect("standard layout"),
                g_we.as_slice().expect("standard layout"),
                opt.m_we.as_slice_mut().expect("standard layout"),
                opt.v_we.as_slice_mut().expect("standard layout"),
                config.lr,
                t,
            );
            adam_update(
                sae.b_enc.as_slice_mut().expect("standard layout"),
                g_be.as_slice().expect("standard layout"),
                opt.m_be.as_slice_mut().expect("standard layout"),
                opt.v_be.as_slice_mut().expect("standard layout"),
                config.lr,
                t,
            );
            adam_update(
                sae.w_dec.as_slice_mut().expect("standard layout"),
                g_wd.as_slice().expect("standard layout"),
                opt.m_wd.as_slice_mut().expect("standard layout"),
                opt.v_wd.as_slice_mut().expect("standard layout"),
                config.lr,
                t,
            );
            adam_update(
                sae.b_dec.as_slice_mut().expect("standard layout"),
                g_bd.as_slice().expect("standard layout"),
                opt.m_bd.as_slice_mut().expect("standard layout"),
                opt.v_bd.as_slice_mut().expect("standard layout"),
                config.lr,
                t,
            );

            // Project decoder rows back to unit norm.
            for mut row in sae.w_dec.rows_mut() {
                let norm: f64 = row
                    .iter()
                    .map(|&v| (v as f64) * (v as f64))
                    .sum::<f64>()
                    .sqrt();
                if norm > 1e-12 {
                    let inv = (1.0 / norm) as f32;
                    row.mapv_inplace(|v| v * inv);
                }
            }
        }

        epoch_recon.push(recon_sum / n as f64);
        epoch_total.push(total_sum / n as f64);
    }

    let (final_recon, _) = sae.loss_terms(z)?;
    let dead_features = fired.iter().filter(|&&b| !b).count();
    Ok((
        sae,
        TrainStats {
            initial_recon,
            final_recon,
            epoch_recon,
            epoch_total,
            dead_features,
            n_rows: n,
        },
    ))
}

/// A trained autoencoder per component, with shared provenance.
#[derive(Clone, Debug)]
pub struct SaeBank {
    pub config: SaeConfig,
    pub components: Vec<(ComponentId, Sae, TrainStats)>,
    pub corpus_fingerprint: String,
    pub model_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct BankMeta {
    config: SaeConfig,
    component_order: Vec<ComponentId>,
    stats: Vec<TrainStats>,
    corpus_fingerprint: String,
    model_fingerprint: String,
}

impl SaeBank {
    pub fn component(&self, id: ComponentId) -> Result<&Sae> {
        self.components
            .iter()
            .find(|(cid, _, _)| *cid == id)
            .map(|(_, sae, _)| sae)
            .ok_or_else(|| Error::MissingComponent(id.to_string(), "autoencoder bank"))
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let meta = BankMeta {
            config: self.config,
            component_order: self.components.iter().map(|(id, _, _)| *id).collect(),
            stats: self.components.iter().map(|(_, _, s)| s.clone()).collect(),
            corpus_fingerprint: self.corpus_fingerprint.clone(),
            model_fingerprint: self.model_fingerprint.clone(),
        };
        let mut tensors: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        for (id, sae, _) in &self.components {
            let d = sae.config.d_input;
            let f = sae.config.n_features;
            tensors.push((
                format!("{id}.w_enc"),
                vec![d, f],
                sae.w_enc.as_slice().expect("standard layout"),
            ));
            tensors.push((
                format!("{id}.b_enc"),
                vec![f],
                sae.b_enc.as_slice().expect("standard layout"),
            ));
            tensors.push((
                format!("{id}.w_dec"),
                vec![f, d],
                sae.w_dec.as_slice().expect("standard layout"),
            ));
            tensors.push((
                format!("{id}.b_dec"),
                vec![d],
                sae.b_dec.as_slice().expect("standard layout"),
            ));
        }
        write_container(path, BANK_MAGIC, &meta, &tensors)
    }

    pub fn read(path: &std::path::Path) -> Result<SaeBank> {
        let c = read_container::<BankMeta>(path, BANK_MAGIC)?;
        if c.meta.stats.len() != c.meta.component_order.len() {
            return Err(Error::Format(
                "bank stats and component order disagree in length".into(),
            ));
        }
        let d = c.meta.config.d_input;
        let f = c.meta.config.n_features;
        let mut components = Vec::with_capacity(c.meta.component_order.len());
        for (id, stats) in c.meta.component_order.iter().zip(&c.meta.stats) {
            let grab2 = |name: &str, rows: usize, cols: usize| -> Result<Array2<f32>> {
                let (shape, data) = c.tensor(name)?;
                if shape != [rows, cols] {
                    return Err(Error::ShapeMismatch {
                        context: "bank tensor",
                        expected: format!("{:?}", [rows, cols]),
                        got: format!("{shape:?}"),
                    });
                }
                Array2::from_shape_vec((rows, cols), data.to_vec())
                    .map_err(|e| Error::Format(e.to_string()))
            };
            let grab1 = |name: &str, len: usize| -> Result<Array1<f32>> {
                let (shape, data) = c.tensor(name)?;
                if shape != [len] {
                    return Err(Error::ShapeMismatch {
                        context: "bank tensor",
                        expected: format!("{:?}", [len]),
                        got: format!("{shape:?}"),
                    });
                }
                Ok(Array1::from_vec(data.to_vec()))
            };
            let sae = Sae {
                config: c.meta.config,
                w_enc: grab2(&format!("{id}.w_enc"), d, f)?,
                b_enc: grab1(&format!("{id}.b_enc"), f)?,
                w_dec: grab2(&format!("{id}.w_dec"), f, d)?,
                b_dec: grab1(&format!("{id}.b_dec"), d)?,
            };
            components.push((*id, sae, stats.clone()));
        }
        Ok(SaeBank {
            config: c.meta.config,
            components,
            corpus_fingerprint: c.meta.corpus_fingerprint,
            model_fingerprint: c.meta.model_fingerprint,
        })
    }
}

/// Train one autoencoder per component of an activation dump.
///
/// Component `i` (in dump order) trains with seed `base_seed ^ i`, so banks
/// are reproducible and components are independently seeded.
pub fn train_bank(dump: &ActivationDump, config: &SaeConfig, base_seed: u64) -> Result<SaeBank> {
    config.validate()?;
    if config.d_input != dump.config.d_head {
        return Err(Error::ShapeMismatch {
            context: "bank config",
            expected: format!("d_input {}", dump.config.d_head),
            got: format!("{}", config.d_input),
        });
    }
    let mut components = Vec::with_capacity(dump.components.len());
    for (i, (id, z)) in dump.components.iter().enumerate() {
        let seed = component_seed(base_seed, i as u64);
        let (sae, stats) = train_sae(z, config, seed)?;
        components.push((*id, sae, stats));
    }
    Ok(SaeBank {
        config: *config,
        components,
        corpus_fingerprint: dump.corpus_fingerprint.clone(),
        model_fingerprint: dump.model_fingerprint.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SaeConfig {
        SaeConfig {
            d_input: 8,
            n_features: 16,
            k: 4,
            l1_coeff: 1e-4,
            epochs: 4,
            lr: 3e-3,
            batch_size: 32,
        }
    }

    /// Rows drawn from a planted sparse dictionary: 6 ground-truth unit
    /// directions in 8 dimensions, each row a positive combination of 2.
    fn planted_data(n: usize, seed: u64) -> Array2<f32> {
        let mut rng = rng_from(seed);
        let mut dict = Array2::<f32>::zeros((6, 8));
        for mut row in dict.rows_mut() {
            let mut norm = 0.0f64;
            for v in row.iter_mut() {
                let x: f64 = StandardNormal.sample(&mut rng);
                *v = x as f32;
                norm += x * x;
            }
            let inv = (1.0 / norm.sqrt()) as f32;
            row.mapv_inplace(|v| v * inv);
        }
        let mut z = Array2::<f32>::zeros((n, 8));
        for mut row in z.rows_mut() {
            let a = rand::Rng::gen_range(&mut rng, 0..6usize);
            let b = (a + 1 + rand::Rng::gen_range(&mut rng, 0..5usize)) % 6;
            let ca = rand::Rng::gen_range(&mut rng, 0.5..2.0f32);
            let cb = rand::Rng::gen_range(&mut rng, 0.5..2.0f32);
            for c in 0..8 {
                row[c] = ca * dict[[a, c]] + cb * dict[[b, c]];
            }
        }
        z
    }

    #[test]
    fn topk_keeps_largest_positive_with_index_ties() {
        let pre = vec![0.5, -1.0, 0.5, 2.0, 0.0];
        let picked = topk_row(&pre, 2);
        assert_eq!(picked, vec![(0, 0.5), (3, 2.0)]);
        // Fewer positives than k: keep them all; zero is not positive.
        let picked = topk_row(&pre, 4);
        assert_eq!(picked, vec![(0, 0.5), (2, 0.5), (3, 2.0)]);
        // All non-positive: empty support.
        assert!(topk_row(&[-1.0, 0.0], 3).is_empty());
    }

    #[test]
    fn encode_produces_valid_csr() {
        let cfg = small_config();
        let sae = Sae::init(cfg, 3).unwrap();
        let z = planted_data(40, 5);
        let acts = sae.encode(&z).unwrap();
        assert_eq!(acts.n_rows, 40);
        assert_eq!(acts.row_ptr.len(), 41);
        assert_eq!(*acts.row_ptr.last().unwrap(), acts.nnz());
        for r in 0..40 {
            let (idx, val) = acts.row(r);
            assert!(idx.len() <= cfg.k);
            assert!(idx.windows(2).all(|w| w[0] < w[1]), "indices not ascending");
            assert!(val.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn decoder_rows_are_unit_norm_after_init_and_training() {
        let cfg = small_config();
        let z = planted_data(128, 9);
        let (sae, _) = train_sae(&z, &cfg, 17).unwrap();
        for row in sae.w_dec.rows() {
            let norm: f64 = row
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            assert!((norm - 1.0).abs() < 1e-5, "row norm {norm}");
        }
    }

    #[test]
    fn empty_support_reconstructs_the_decoder_bias() {
        let cfg = small_config();
        let mut sae = Sae::init(cfg, 1).unwrap();
        sae.b_dec.fill(0.25);
        // Strongly negative encoder bias silences every feature.
        sae.b_enc.fill(-100.0);
        let z = planted_data(5, 2);
        let zhat = sae.reconstruct(&z).unwrap();
        assert!(zhat.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    /// Analytic gradients against central differences of the full
    /// objective. Probes sit away from TopK selection boundaries for the
    /// chosen seed, so the objective is locally smooth.
    #[test]
    fn sae_gradients_match_finite_differences() {
        let cfg = SaeConfig {
            d_input: 6,
            n_features: 10,
            k: 3,
            l1_coeff: 1e-2,
            epochs: 1,
            lr: 1e-3,
            batch_size: 8,
        };
        let z = planted_data(8, 21).slice(ndarray::s![.., 0..6]).to_owned();
        let sae = Sae::init(cfg, 33).unwrap();

        // Analytic gradients via one hand-rolled backward, mirroring the
        // training loop.
        let acts = sae.encode(&z).unwrap();
        let zhat = sae.decode(&acts).unwrap();
        let b = z.nrows();
        let scale = 2.0 / b as f32;
        let mut dzhat = &zhat - &z;
        dzhat.mapv_inplace(|v| v * scale);
        let d = cfg.d_input;
        let mut g_wd = Array2::<f32>::zeros((cfg.n_features, d));
        let g_bd: Array1<f32> = dzhat.sum_axis(Axis(0));
        let mut g_we = Array2::<f32>::zeros((d, cfg.n_features));
        let mut g_be = Array1::<f32>::zeros(cfg.n_features);
        let l1_per_row = cfg.l1_coeff as f32 / b as f32;
        for r in 0..b {
            let (idx, val) = acts.row(r);
            let drow = dzhat.row(r);
            let zrow = z.row(r);
            for (&fi, &a) in idx.iter().zip(val) {
                let fi = fi as usize;
                let mut wrow = g_wd.row_mut(fi);
                for c in 0..d {
                    wrow[c] += a * drow[c];
                }
                let wdec = sae.w_dec.row(fi);
                let mut da = l1_per_row;
                for c in 0..d {
                    da += drow[c] * wdec[c];
                }
                for c in 0..d {
                    g_we[[c, fi]] += zrow[c] * da;
                }
                g_be[fi] += da;
            }
        }

        let h = 2e-3f32;
        let check = |name: &str, analytic: f64, bump: &dyn Fn(&mut Sae, f32)| {
            let probe = |delta: f32| -> f64 {
                let mut s = sae.clone();
                bump(&mut s, delta);
                s.loss(&z).unwrap()
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h as f64);
            let denom = analytic.abs().max(numeric.abs());
            if denom < 1e-3 {
                return;
            }
            let rel = (analytic - numeric).abs() / denom;
            assert!(
                rel < 5e-2,
                "{name}: analytic {analytic:.5e} vs numeric {numeric:.5e} (rel {rel:.2e})"
            );
        };

        for &(r, c) in &[(0usize, 0usize), (2, 3), (5, 9)] {
            check(
                &format!("w_enc[{r},{c}]"),
                g_we[[r, c]] as f64,
                &move |s: &mut Sae, d: f32| s.w_enc[[r, c]] += d,
            );
        }
        for &(r, c) in &[(0usize, 0usize), (4, 2), (9, 5)] {
            check(
                &format!("w_dec[{r},{c}]"),
                g_wd[[r, c]] as f64,
                &move |s: &mut Sae, d: f32| s.w_dec[[r, c]] += d,
            );
        }
        for &i in &[0usize, 3, 9] {
            check(
                &format!("b_enc[{i}]"),
                g_be[i] as f64,
                &move |s: &mut Sae, d: f32| s.b_enc[i] += d,
            );
        }
        for &i in &[0usize, 5] {
            check(
                &format!("b_dec[{i}]"),
                g_bd[i] as f64,
                &move |s: &mut Sae, d: f32| s.b_dec[i] += d,
            );
        }
    }

    #[test]
    fn training_reduces_reconstruction_error() {
        let cfg = SaeConfig {
            epochs: 12,
            lr: 5e-3,
            ..small_config()
        };
        let z = planted_data(512, 41);
        let (_, stats) = train_sae(&z, &cfg, 7).unwrap();
        assert!(
            stats.final_recon < 0.5 * stats.initial_recon,
            "recon {} -> {}",
            stats.initial_recon,
            stats.final_recon
        );
        assert_eq!(stats.epoch_recon.len(), 12);
        assert!(stats.dead_features < cfg.n_features);
        assert_eq!(stats.n_rows, 512);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small_config();
        let z = planted_data(128, 3);
        let (a, sa) = train_sae(&z, &cfg, 11).unwrap();
        let (b, sb) = train_sae(&z, &cfg, 11).unwrap();
        assert_eq!(a.w_enc, b.w_enc);
        assert_eq!(a.w_dec, b.w_dec);
        assert_eq!(sa.final_recon, sb.final_recon);
        let (c, _) = train_sae(&z, &cfg, 12).unwrap();
        assert_ne!(a.w_enc, c.w_enc);
    }

    /// Rescaling feature f by c > 0 (encoder column and bias times c,
    /// decoder row divided by c) leaves the reconstruction function
    /// untouched when k = F, because ReLU is positively homogeneous and
    /// with the full dictionary there is no selection step to perturb.
    /// With k < F the selection ranks features by activation value, so the
    /// same rescaling can change which features survive.
    #[test]
    fn feature_rescaling_invariance_holds_exactly_at_full_k() {
        let base = SaeConfig {
            d_input: 8,
            n_features: 16,
            k: 16,
            ..small_config()
        };
        let z = planted_data(32, 8);
        let sae = Sae::init(base, 5).unwrap();
        let mut scaled = sae.clone();
        // Powers of two keep the arithmetic exact in f32.
        let c = 4.0f32;
        for r in 0..8 {
            scaled.w_enc[[r, 7]] *= c;
        }
        scaled.b_enc[7] *= c;
        for col in 0..8 {
            scaled.w_dec[[7, col]] /= c;
        }
        let a = sae.reconstruct(&z).unwrap();
        let b = scaled.reconstruct(&z).unwrap();
        assert_eq!(a, b, "full-k rescaling must be bit-exact");
    }

    #[test]
    fn feature_rescaling_changes_selection_below_full_k() {
        // Two features tied by construction; shrinking one's activation
        // pushes it out of the top-1 and changes the reconstruction.
        let cfg = SaeConfig {
            d_input: 2,
            n_features: 2,
            k: 1,
            l1_coeff: 0.0,
            epochs: 1,
            lr: 1e-3,
            batch_size: 4,
        };
        let mut sae = Sae::init(cfg, 1).unwrap();
        sae.w_enc = ndarray::array![[1.0f32, 0.9], [0.0, 0.0]];
        sae.b_enc = ndarray::array![0.0f32, 0.0];
        sae.w_dec = ndarray::array![[1.0f32, 0.0], [0.0, 1.0]];
        sae.b_dec = ndarray::array![0.0f32, 0.0];
        let z = ndarray::array![[1.0f32, 0.0]];
        let before = sae.reconstruct(&z).unwrap();
        // Feature 0 fires (1.0 > 0.9) and decodes along x.
        assert!((before[[0, 0]] - 1.0).abs() < 1e-6);
        let mut scaled = sae.clone();
        for r in 0..2 {
            scaled.w_enc[[r, 0]] *= 0.5;
        }
        scaled.b_enc[0] *= 0.5;
        for cix in 0..2 {
            scaled.w_dec[[0, cix]] *= 2.0;
        }
        let after = scaled.reconstruct(&z).unwrap();
        // Now feature 1 wins the top-1 slot and decodes along y.
        assert!((after[[0, 1]] - 0.9).abs() < 1e-6);
        assert_ne!(before, after);
    }

    #[test]
    fn bank_round_trips_through_disk() {
        use crate::tinylm::{capture_activations, CalibrationParams, Checkpoint, ModelConfig};
        let mcfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_head: 4,
            d_ffn: 16,
            vocab_size: 16,
            context_len: 8,
            seed: 2,
        };
        let mut ckpt = Checkpoint::fresh(mcfg).unwrap();
        ckpt.corpus_fingerprint = "fp".into();
        let region: Vec<u8> = (0..256).map(|i| ((i * 3 + 1) % 16) as u8).collect();
        let dump = capture_activations(
            &ckpt,
            &region,
            &CalibrationParams {
                n_seq: 8,
                seq_len: 8,
                n_categories: 2,
                seed: 4,
            },
        )
        .unwrap();
        let cfg = SaeConfig {
            d_input: 4,
            n_features: 8,
            k: 2,
            l1_coeff: 1e-4,
            epochs: 2,
            lr: 1e-3,
            batch_size: 16,
        };
        let bank = train_bank(&dump, &cfg, 99).unwrap();
        assert_eq!(bank.components.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        bank.write(&path).unwrap();
        let back = SaeBank::read(&path).unwrap();
        assert_eq!(back.components.len(), 2);
        for i in 0..2 {
            assert_eq!(back.components[i].0, bank.components[i].0);
            assert_eq!(back.components[i].1.w_enc, bank.components[i].1.w_enc);
            assert_eq!(back.components[i].1.b_dec, bank.components[i].1.b_dec);
            assert_eq!(
                back.components[i].2.final_recon,
                bank.components[i].2.final_recon
            );
        }
        assert_eq!(back.model_fingerprint, bank.model_fingerprint);
        // Same path as a different artifact type is rejected.
        assert!(crate::tinylm::ActivationDump::read(&path).is_err());
    }
}
