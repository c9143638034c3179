//! Weight editing: head ablation and magnitude pruning of head output
//! slices.
//!
//! Both operations touch only `w_o`. Head `h` of a layer owns rows
//! `h*d_head .. (h+1)*d_head` of that layer's output projection; zeroing
//! those rows removes every path from the head's context vectors into the
//! residual stream while leaving its (now unread) Q/K/V weights in place.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Checkpoint, ComponentId};

/// Per-head keep ratios for a pruning pass. A ratio of 1.0 keeps the slice
/// intact; 0.0 empties it (equivalent to ablation). Heads not listed are
/// untouched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    pub keep: Vec<(ComponentId, f64)>,
}

impl PruneSpec {
    /// Keep every head at the same ratio.
    pub fn uniform(ckpt: &Checkpoint, ratio: f64) -> PruneSpec {
        PruneSpec {
            keep: ckpt
                .config
                .attention_heads()
                .into_iter()
                .map(|id| (id, ratio))
                .collect(),
        }
    }

    pub fn validate(&self, ckpt: &Checkpoint) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for &(id, ratio) in &self.keep {
            if !(0.0..=1.0).contains(&ratio) {
                return Err(Error::InvalidRatio { value: ratio });
            }
            match id {
                ComponentId::AttnHead { layer, head } => {
                    if layer as usize >= ckpt.config.n_layers
                        || head as usize >= ckpt.config.n_heads
                    {
                        return Err(Error::MissingComponent(id.to_string(), "model"));
                    }
                }
                ComponentId::Synthetic { .. } => {
                    return Err(Error::MissingComponent(id.to_string(), "model"));
                }
            }
            if !seen.insert(id) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate component {id} in prune spec"
                )));
            }
        }
        Ok(())
    }
}

/// Number of weights kept when a slice of `n` weights is pruned at keep
/// ratio `ratio`: `ceil(ratio * n)`, with products within 1e-9 of an
/// integer snapped to it first so grid ratios like 3/20 behave exactly.
pub fn keep_count(ratio: f64, n: usize) -> usize {
    let t = ratio * n as f64;
    let k = if (t - t.round()).abs() < 1e-9 {
        t.round()
    } else {
        t.ceil()
    };
    (k as usize).min(n)
}

/// Return a copy of the model with one head's output slice zeroed.
pub fn ablate_head(ckpt: &Checkpoint, layer: usize, head: usize) -> Result<Checkpoint> {
    if layer >= ckpt.config.n_layers || head >= ckpt.config.n_heads {
        return Err(Error::MissingComponent(format!("L{layer}H{head}"), "model"));
    }
    let mut out = ckpt.clone();
    let dh = out.config.d_head;
    let r0 = head * dh;
    out.weights.layers[layer]
        .w_o
        .slice_mut(ndarray::s![r0..r0 + dh, ..])
        .fill(0.0);
    Ok(out)
}

/// Return a copy of the model with each listed head magnitude-pruned to its
/// keep ratio.
///
/// Within a slice the `keep_count` largest-magnitude weights survive;
/// magnitude ties break toward the lower flat index (row-major within the
/// slice), making the edit fully deterministic.
pub fn apply_prune(ckpt: &Checkpoint, spec: &PruneSpec) -> Result<Checkpoint> {
    spec.validate(ckpt)?;
    let mut out = ckpt.clone();
    let dh = out.config.d_head;
    let dm = out.config.d_model;
    for &(id, ratio) in &spec.keep {
        let ComponentId::AttnHead { layer, head } = id else {
            unreachable!("validate rejects synthetic components");
        };
        let r0 = head as usize * dh;
        let mut slice = out.weights.layers[layer as usize]
            .w_o
            .slice_mut(ndarray::s![r0..r0 + dh, ..]);
        let n = dh * dm;
        let k = keep_count(ratio, n);
        if k == n {
            continue;
        }
        let mut order: Vec<usize> = (0..n).collect();
        let flat = |i: usize| slice[[i / dm, i % dm]];
        order.sort_unstable_by(|&a, &b| {
            flat(b)
                .abs()
                .total_cmp(&flat(a).abs())
                .then_with(|| a.cmp(&b))
        });
        let mut keep = vec![false; n];
        for &i in order.iter().take(k) {
            keep[i] = true;
        }
        for i in 0..n {
            if !keep[i] {
                slice[[i / dm, i % dm]] = 0.0;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::ModelConfig;
    use super::*;

    fn tiny_checkpoint() -> Checkpoint {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_head: 4,
            d_ffn: 16,
            vocab_size: 16,
            context_len: 8,
            seed: 11,
        };
        Checkpoint::fresh(cfg).unwrap()
    }

    #[test]
    fn keep_count_contract() {
        assert_eq!(keep_count(0.0, 2048), 0);
        assert_eq!(keep_count(1.0, 2048), 2048);
        assert_eq!(keep_count(0.5, 5), 3); // ceil(2.5)
        assert_eq!(keep_count(0.8, 2048), 1639); // ceil(1638.4)
                                                 // 0.15 * 2000 is exactly 300 mathematically; the snap keeps it so.
        assert_eq!(keep_count(0.15, 2000), 300);
    }

    #[test]
    fn ablate_zeroes_exactly_one_slice() {
        let ckpt = tiny_checkpoint();
        let ablated = ablate_head(&ckpt, 1, 0).unwrap();
        let w = &ablated.weights.layers[1].w_o;
        assert!(w.slice(ndarray::s![0..4, ..]).iter().all(|&v| v == 0.0));
        assert!(w.slice(ndarray::s![4..8, ..]).iter().any(|&v| v != 0.0));
        // Other layers untouched.
        assert_eq!(ablated.weights.layers[0].w_o, ckpt.weights.layers[0].w_o);
        assert!(ablate_head(&ckpt, 2, 0).is_err());
        assert!(ablate_head(&ckpt, 0, 2).is_err());
    }

    #[test]
    fn prune_at_zero_equals_ablation() {
        let ckpt = tiny_checkpoint();
        let spec = PruneSpec {
            keep: vec![(ComponentId::AttnHead { layer: 0, head: 1 }, 0.0)],
        };
        let pruned = apply_prune(&ckpt, &spec).unwrap();
        let ablated = ablate_head(&ckpt, 0, 1).unwrap();
        assert_eq!(pruned.weights.layers[0].w_o, ablated.weights.layers[0].w_o);
    }

    #[test]
    fn prune_at_one_is_identity() {
        let ckpt = tiny_checkpoint();
        let spec = PruneSpec::uniform(&ckpt, 1.0);
        let pruned = apply_prune(&ckpt, &spec).unwrap();
        for (l, layer) in pruned.weights.layers.iter().enumerate() {
            assert_eq!(layer.w_o, ckpt.weights.layers[l].w_o);
        }
    }

    #[test]
    fn prune_keeps_largest_magnitudes_with_deterministic_ties() {
        let mut ckpt = tiny_checkpoint();
        // Overwrite head 0 of layer 0 (rows 0..4) with a known pattern:
        // flat values 32..0 descending by magnitude except a tie block.
        {
            let w = &mut ckpt.weights.layers[0].w_o;
            for r in 0..4 {
                for c in 0..8 {
                    let flat = r * 8 + c;
                    w[[r, c]] = if flat < 3 {
                        2.0
                    } else {
                        -((32 - flat) as f32) / 32.0
                    };
                }
            }
        }
        // keep half of the 32 weights: the three tied 2.0s (indices 0,1,2)
        // plus the 13 largest of the descending tail.
        let spec = PruneSpec {
            keep: vec![(ComponentId::AttnHead { layer: 0, head: 0 }, 0.5)],
        };
        let pruned = apply_prune(&ckpt, &spec).unwrap();
        let w = &pruned.weights.layers[0].w_o;
        let mut kept = 0;
        for r in 0..4 {
            for c in 0..8 {
                if w[[r, c]] != 0.0 {
                    kept += 1;
                }
            }
        }
        assert_eq!(kept, 16);
        // The tied leading block survives, and the smallest tail values die.
        assert_eq!(w[[0, 0]], 2.0);
        assert_eq!(w[[0, 1]], 2.0);
        assert_eq!(w[[0, 2]], 2.0);
        assert_eq!(w[[3, 7]], 0.0); // flat 31, magnitude 1/32
                                    // Tail survivors are the largest magnitudes: flats 3..=15.
        assert!(w[[0, 3]] != 0.0);
        assert!(w[[1, 7]] != 0.0); // flat 15
        assert_eq!(w[[2, 0]], 0.0); // flat 16 is the 17th candidate

        // When the tie straddles the cut, the lower flat index survives.
        let spec = PruneSpec {
            keep: vec![(ComponentId::AttnHead { layer: 0, head: 0 }, 0.0625)],
        };
        let pruned = apply_prune(&ckpt, &spec).unwrap();
        let w = &pruned.weights.layers[0].w_o;
        assert_eq!(w[[0, 0]], 2.0);
        assert_eq!(w[[0, 1]], 2.0);
        assert_eq!(w[[0, 2]], 0.0);
    }

    #[test]
    fn spec_validation_rejects_bad_entries() {
        let ckpt = tiny_checkpoint();
        let dup = PruneSpec {
            keep: vec![
                (ComponentId::AttnHead { layer: 0, head: 0 }, 0.5),
                (ComponentId::AttnHead { layer: 0, head: 0 }, 0.7),
            ],
        };
        assert!(apply_prune(&ckpt, &dup).is_err());
        let oob = PruneSpec {
            keep: vec![(ComponentId::AttnHead { layer: 5, head: 0 }, 0.5)],
        };
        assert!(apply_prune(&ckpt, &oob).is_err());
        let bad_ratio = PruneSpec {
            keep: vec![(ComponentId::AttnHead { layer: 0, head: 0 }, 1.5)],
        };
        assert!(apply_prune(&ckpt, &bad_ratio).is_err());
        let synth = PruneSpec {
            keep: vec![(ComponentId::Synthetic { index: 0 }, 0.5)],
        };
        assert!(apply_prune(&ckpt, &synth).is_err());
    }
}
