//! Existing-signal importance baselines for attention heads: Wanda scores
//! (|weight| × input activation norm), plain magnitude importance, and the
//! per-head ablation-impact scan.
//!
//! These are the signals capability density is compared against. Wanda and
//! magnitude are cheap weight/activation statistics; the ablation scan is
//! the expensive ground-truth-ish measurement — remove one head entirely
//! and see how perplexity moves.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tinylm::{
    ablate_head, evaluate_ppl, ActivationDump, Checkpoint, ComponentId, EvalParams,
};

/// How per-weight Wanda scores collapse to one number per head.
///
/// All head slices here have equal size, so mean and sum differ by a fixed
/// factor and produce identical rankings; mean is the default because it is
/// comparable across hypothetical unequal slices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WandaAggregation {
    #[default]
    Mean,
    Sum,
}

/// One head's importance signals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImportanceRecord {
    pub component: ComponentId,
    /// Aggregated Wanda score; nonnegative.
    pub wanda: f64,
    /// Mean |w| over the head's output-projection slice; nonnegative.
    pub magnitude: f64,
    /// Perplexity change when the head is ablated; absent until a scan has
    /// been merged in. May be negative.
    pub ablation_dppl: Option<f64>,
}

/// Importance signals for every component of a dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub aggregation: WandaAggregation,
    pub records: Vec<ImportanceRecord>,
    /// Dense perplexity the ablation deltas are relative to; present once a
    /// scan has been merged.
    pub baseline_ppl: Option<f64>,
    pub corpus_fingerprint: String,
    pub model_fingerprint: String,
}

impl ImportanceMap {
    pub fn record(&self, id: ComponentId) -> Result<&ImportanceRecord> {
        self.records
            .iter()
            .find(|r| r.component == id)
            .ok_or_else(|| Error::MissingComponent(id.to_string(), "importance map"))
    }

    /// Wanda scores in record order.
    pub fn wanda_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.wanda).collect()
    }

    /// Ablation deltas in record order; errors if any record lacks one.
    pub fn ablation_values(&self) -> Result<Vec<f64>> {
        self.records
            .iter()
            .map(|r| {
                r.ablation_dppl.ok_or_else(|| {
                    Error::Stale("importance map has no ablation scan merged".into())
                })
            })
            .collect()
    }

    /// Fold an ablation scan into the records. Every record must be covered.
    pub fn merge_ablation(&mut self, scan: &AblationScan) -> Result<()> {
        if scan.model_fingerprint != self.model_fingerprint {
            return Err(Error::Stale(format!(
                "ablation scan is for model {} but the importance map is for {}",
                scan.model_fingerprint, self.model_fingerprint
            )));
        }
        for rec in &mut self.records {
            let hit = scan
                .records
                .iter()
                .find(|(c, _)| *c == rec.component)
                .ok_or_else(|| {
                    Error::MissingComponent(rec.component.to_string(), "ablation scan")
                })?;
            rec.ablation_dppl = Some(hit.1);
        }
        self.baseline_ppl = Some(scan.baseline_ppl);
        Ok(())
    }

    /// Plot-friendly table of the attention-head records; the ablation
    /// column is empty until a scan has been merged.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,head,wanda,magnitude,ablation_dppl\n");
        for r in &self.records {
            if let ComponentId::AttnHead { layer, head } = r.component {
                let dppl = r
                    .ablation_dppl
                    .map(|d| format!("{d:.6}"))
                    .unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{:.6},{:.6},{}\n",
                    layer, head, r.wanda, r.magnitude, dppl
                ));
            }
        }
        out
    }
}

/// Result of ablating each component in turn.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationScan {
    pub baseline_ppl: f64,
    /// (component, PPL(ablated) − PPL(dense)), in scan order.
    pub records: Vec<(ComponentId, f64)>,
    pub corpus_fingerprint: String,
    pub model_fingerprint: String,
}

impl AblationScan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,head,ablation_dppl,baseline_ppl\n");
        for (c, dppl) in &self.records {
            if let ComponentId::AttnHead { layer, head } = c {
                out.push_str(&format!(
                    "{},{},{:.6},{:.6}\n",
                    layer, head, dppl, self.baseline_ppl
                ));
            }
        }
        out
    }
}

/// Column L2 norms of a captured activation matrix, accumulated in f64.
pub fn act_column_norms(z: &ArrayView2<f32>) -> Vec<f64> {
    (0..z.ncols())
        .map(|j| {
            z.column(j)
                .iter()
                .map(|&v| {
                    let v = v as f64;
                    v * v
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Per-weight Wanda scores for one output-projection slice.
///
/// `w` is viewed as (n_out × d_head): rows index output dimensions, columns
/// index the head's input dimensions. `score[i][j] = |w[i][j]| · act_norms[j]`.
pub fn wanda_scores(w: &ArrayView2<f32>, act_norms: &[f64]) -> Result<Array2<f64>> {
    if act_norms.len() != w.ncols() {
        return Err(Error::ShapeMismatch {
            context: "activation norms for Wanda",
            expected: format!("{} entries", w.ncols()),
            got: format!("{}", act_norms.len()),
        });
    }
    let mut scores = Array2::<f64>::zeros((w.nrows(), w.ncols()));
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            scores[[i, j]] = (w[[i, j]] as f64).abs() * act_norms[j];
        }
    }
    Ok(scores)
}

fn aggregate(scores: &Array2<f64>, mode: WandaAggregation) -> f64 {
    let sum: f64 = scores.iter().sum();
    match mode {
        WandaAggregation::Sum => sum,
        WandaAggregation::Mean => sum / scores.len() as f64,
    }
}

/// The head's output-projection slice in (n_out × d_head) orientation.
///
/// Storage keeps the projection as (d_model × d_model) acting on the
/// concatenated head outputs from the left, so head `h` owns the row block
/// `h·d_head .. (h+1)·d_head`; the Wanda view is that block transposed.
fn head_out_slice<'a>(ckpt: &'a Checkpoint, id: ComponentId) -> Result<ArrayView2<'a, f32>> {
    let ComponentId::AttnHead { layer, head } = id else {
        return Err(Error::MissingComponent(
            id.to_string(),
            "checkpoint attention heads",
        ));
    };
    let cfg = &ckpt.config;
    if layer as usize >= cfg.n_layers || head as usize >= cfg.n_heads {
        return Err(Error::MissingComponent(
            id.to_string(),
            "checkpoint attention heads",
        ));
    }
    let lo = head as usize * cfg.d_head;
    let hi = lo + cfg.d_head;
    let block = ckpt.weights.layers[layer as usize]
        .w_o
        .slice(ndarray::s![lo..hi, ..]);
    Ok(block.reversed_axes())
}

/// Aggregated Wanda score for one head, with activation norms taken from
/// the head's captured activations.
pub fn head_wanda(ckpt: &Checkpoint, dump: &ActivationDump, id: ComponentId) -> Result<f64> {
    head_wanda_with(ckpt, dump, id, WandaAggregation::Mean)
}

pub fn head_wanda_with(
    ckpt: &Checkpoint,
    dump: &ActivationDump,
    id: ComponentId,
    mode: WandaAggregation,
) -> Result<f64> {
    let z = dump.component(id)?;
    let w = head_out_slice(ckpt, id)?;
    let norms = act_column_norms(&z.view());
    let scores = wanda_scores(&w, &norms)?;
    Ok(aggregate(&scores, mode))
}

/// Mean |w| over the head's output-projection slice.
pub fn head_magnitude(ckpt: &Checkpoint, id: ComponentId) -> Result<f64> {
    let w = head_out_slice(ckpt, id)?;
    let sum: f64 = w.iter().map(|&v| (v as f64).abs()).sum();
    Ok(sum / w.len() as f64)
}

/// Wanda and magnitude signals for every component in the dump; ablation
/// deltas stay empty until [`ablation_scan`] results are merged.
pub fn build_importance_map(
    ckpt: &Checkpoint,
    dump: &ActivationDump,
    mode: WandaAggregation,
) -> Result<ImportanceMap> {
    let mut records = Vec::with_capacity(dump.components.len());
    for (id, _) in &dump.components {
        records.push(ImportanceRecord {
            component: *id,
            wanda: head_wanda_with(ckpt, dump, *id, mode)?,
            magnitude: head_magnitude(ckpt, *id)?,
            ablation_dppl: None,
        });
    }
    records.sort_by_key(|r| r.component);
    Ok(ImportanceMap {
        aggregation: mode,
        records,
        baseline_ppl: None,
        corpus_fingerprint: dump.corpus_fingerprint.clone(),
        model_fingerprint: dump.model_fingerprint.clone(),
    })
}

/// Ablate each component in turn and record the perplexity change against
/// a baseline evaluated once on the identical chunk set.
///
/// The baseline checkpoint is never modified; each step works on a private
/// ablated copy ordered by the caller's component list, and the measured
/// deltas are independent of that order.
pub fn ablation_scan(
    ckpt: &Checkpoint,
    eval_region: &[u8],
    params: &EvalParams,
    components: &[ComponentId],
) -> Result<AblationScan> {
    let baseline = evaluate_ppl(ckpt, eval_region, params)?;
    let mut records = Vec::with_capacity(components.len());
    for &id in components {
        let ComponentId::AttnHead { layer, head } = id else {
            return Err(Error::MissingComponent(
                id.to_string(),
                "checkpoint attention heads",
            ));
        };
        let ablated = ablate_head(ckpt, layer as usize, head as usize)?;
        let report = evaluate_ppl(&ablated, eval_region, params)?;
        records.push((id, report.ppl - baseline.ppl));
    }
    Ok(AblationScan {
        baseline_ppl: baseline.ppl,
        records,
        corpus_fingerprint: ckpt.corpus_fingerprint.clone(),
        model_fingerprint: crate::tinylm::checkpoint_fingerprint(ckpt),
    })
}
