//! Long-term preference: target-behavior gating, sequence-capture blocks,
//! subsequence-swap augmentation, and the long-term contrastive loss.
//!
//! The gate scales each sequence row by a scalar
//! `sigmoid(H w_g1 + W_g2 h_b)` built from the purchase-behavior embedding.
//! Sequence-capture blocks mix information across the *sequence* dimension:
//! the row-normalized matrix is transposed, pushed through `W_3` (length to
//! hidden), GELU, `W_4` (hidden back to length), transposed back, and added
//! residually. Padded rows are zeroed before and after each block so the
//! mixing cannot import padding content. The long-term preference is the
//! mean over valid rows.
//!
//! Augmentation swaps two purchase-terminated segments, the destination
//! drawn with probability inversely proportional to its index distance from
//! the source. The augmented view re-runs graph construction and encoding
//! from scratch.

use alloc::vec::Vec;

use crate::behavior_graph::{segment_at_purchases, PurchaseSegment};
use crate::data::BehaviorType;
use crate::numerics::rng::{self, SeedRng};
use crate::numerics::{NumericsError, Param, Tape, TensorRef};
use crate::short_term::diagonal_info_nce;

/// Gate parameters: `w1` is `[d, 1]`, `w2` is `[n_max, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingParams {
    pub w1: Param,
    pub w2: Param,
}

impl GatingParams {
    pub fn init(d: usize, n_max: usize, rng: &mut SeedRng) -> Self {
        let bound = 1.0 / libm::sqrt(d as f64);
        GatingParams {
            w1: Param::uniform("gate.w1", d, 1, bound, rng),
            w2: Param::uniform("gate.w2", n_max, d, bound, rng),
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(&Param)) {
        f(&self.w1);
        f(&self.w2);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Param)) {
        f(&mut self.w1);
        f(&mut self.w2);
    }

    pub fn enter(&self, tape: &mut Tape) -> Result<GatingRefs, NumericsError> {
        Ok(GatingRefs { w1: self.w1.enter(tape)?, w2: self.w2.enter(tape)? })
    }
}

pub struct GatingRefs {
    pub w1: TensorRef,
    pub w2: TensorRef,
}

/// One sequence-capture block: `w3` is `[n_max, d]`, `w4` is `[d, n_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScbBlock {
    pub w3: Param,
    pub w4: Param,
    pub ln_gain: Param,
    pub ln_bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScbParams {
    pub blocks: Vec<ScbBlock>,
}

impl ScbParams {
    pub fn init(d: usize, n_max: usize, k_scb: usize, rng: &mut SeedRng) -> Self {
        let bound = 1.0 / libm::sqrt(d as f64);
        let blocks = (1..=k_scb)
            .map(|k| {
                let mut ln_gain = Param::zeros(&alloc::format!("scb.b{k}.ln.gain"), 1, d);
                ln_gain.values.iter_mut().for_each(|v| *v = 1.0);
                ScbBlock {
                    w3: Param::uniform(&alloc::format!("scb.b{k}.w3"), n_max, d, bound, rng),
                    w4: Param::uniform(&alloc::format!("scb.b{k}.w4"), d, n_max, bound, rng),
                    ln_gain,
                    ln_bias: Param::zeros(&alloc::format!("scb.b{k}.ln.bias"), 1, d),
                }
            })
            .collect();
        ScbParams { blocks }
    }

    pub fn visit(&self, f: &mut impl FnMut(&Param)) {
        for b in &self.blocks {
            f(&b.w3);
            f(&b.w4);
            f(&b.ln_gain);
            f(&b.ln_bias);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Param)) {
        for b in &mut self.blocks {
            f(&mut b.w3);
            f(&mut b.w4);
            f(&mut b.ln_gain);
            f(&mut b.ln_bias);
        }
    }

    pub fn enter(&self, tape: &mut Tape) -> Result<ScbRefs, NumericsError> {
        Ok(ScbRefs {
            blocks: self
                .blocks
                .iter()
                .map(|b| {
                    Ok(ScbBlockRefs {
                        w3: b.w3.enter(tape)?,
                        w4: b.w4.enter(tape)?,
                        ln_gain: b.ln_gain.enter(tape)?,
                        ln_bias: b.ln_bias.enter(tape)?,
                    })
                })
                .collect::<Result<_, _>>()?,
        })
    }
}

pub struct ScbBlockRefs {
    pub w3: TensorRef,
    pub w4: TensorRef,
    pub ln_gain: TensorRef,
    pub ln_bias: TensorRef,
}

pub struct ScbRefs {
    pub blocks: Vec<ScbBlockRefs>,
}

/// Original and swap-augmented views of a sequence. The augmented view is
/// always a permutation of the original events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedPair {
    pub original: Vec<(usize, BehaviorType)>,
    pub augmented: Vec<(usize, BehaviorType)>,
    /// `(source, destination)` segment indices, when a swap happened.
    pub swap: Option<(usize, usize)>,
}

/// Row-wise gate: `H' = H * sigmoid(H w1 + W2 h_b)` with the scalar gate
/// broadcast across features. `target_behavior` is the `[1, d]` purchase
/// embedding.
pub fn target_gate(
    tape: &mut Tape,
    h: TensorRef,
    target_behavior: TensorRef,
    params: &GatingRefs,
) -> Result<TensorRef, NumericsError> {
    let (n, _) = tape.shape(h);
    let (w2_rows, _) = tape.shape(params.w2);
    if w2_rows != n {
        return Err(NumericsError::InvalidInput {
            op: "target_gate",
            msg: alloc::format!("gate built for {w2_rows} positions, sequence has {n}"),
        });
    }
    let a = tape.matmul(h, params.w1)?;
    let hb = tape.transpose(target_behavior)?;
    let b = tape.matmul(params.w2, hb)?;
    let pre = tape.add(a, b)?;
    let gate = tape.sigmoid(pre)?;
    tape.elementwise_mul(h, gate)
}

/// Stacked sequence-capture blocks. `mask` zeroes padded rows before and
/// after every block (the layer-norm output too, so cross-position mixing
/// sees only real rows).
pub fn scb_forward(
    tape: &mut Tape,
    h: TensorRef,
    mask: &[bool],
    params: &ScbRefs,
) -> Result<TensorRef, NumericsError> {
    let (n, _) = tape.shape(h);
    if mask.len() != n {
        return Err(NumericsError::InvalidInput {
            op: "scb_forward",
            msg: alloc::format!("mask length {} for {n} positions", mask.len()),
        });
    }
    let mask_col: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let mask_col = tape.constant(n, 1, mask_col)?;
    let mut x = h;
    for block in &params.blocks {
        let (w3_rows, _) = tape.shape(block.w3);
        if w3_rows != n {
            return Err(NumericsError::InvalidInput {
                op: "scb_forward",
                msg: alloc::format!("block built for {w3_rows} positions, sequence has {n}"),
            });
        }
        let xm = tape.elementwise_mul(x, mask_col)?;
        let normed = tape.layer_norm_rows(xm, block.ln_gain, block.ln_bias)?;
        let normed = tape.elementwise_mul(normed, mask_col)?;
        let nt = tape.transpose(normed)?;
        let hidden = tape.matmul(nt, block.w3)?;
        let act = tape.gelu(hidden)?;
        let mixed = tape.matmul(act, block.w4)?;
        let back = tape.transpose(mixed)?;
        let summed = tape.add(xm, back)?;
        x = tape.elementwise_mul(summed, mask_col)?;
    }
    Ok(x)
}

/// Mean over valid (non-padded) rows.
pub fn extract_long_pref(tape: &mut Tape, h: TensorRef, mask: &[bool]) -> Result<TensorRef, NumericsError> {
    let (n, _) = tape.shape(h);
    let valid = mask.iter().filter(|&&m| m).count();
    if mask.len() != n || valid == 0 {
        return Err(NumericsError::InvalidInput {
            op: "extract_long_pref",
            msg: "no valid positions to average".into(),
        });
    }
    let w: Vec<f64> = mask
        .iter()
        .map(|&m| if m { 1.0 / valid as f64 } else { 0.0 })
        .collect();
    let weights = tape.constant(1, n, w)?;
    tape.matmul(weights, h)
}

/// Unnormalized destination weights: inverse index distance to the source,
/// zero at the source itself.
pub fn proximity_weights(segment_count: usize, source: usize) -> Vec<f64> {
    (0..segment_count)
        .map(|j| {
            if j == source {
                0.0
            } else {
                1.0 / (j as f64 - source as f64).abs()
            }
        })
        .collect()
}

/// Swaps two purchase-terminated segments, leaving the unsegmented tail in
/// place. With fewer than two segments the augmentation is the identity.
/// Deterministic in `seed`.
pub fn subsequence_swap(events: &[(usize, BehaviorType)], seed: u64) -> AugmentedPair {
    let (segments, tail) = segment_at_purchases(events);
    if segments.len() <= 1 {
        return AugmentedPair {
            original: events.to_vec(),
            augmented: events.to_vec(),
            swap: None,
        };
    }
    let mut r = rng::seeded(seed);
    let source = rng::next_index(&mut r, segments.len());
    let weights = proximity_weights(segments.len(), source);
    let dest = rng::next_weighted(&mut r, &weights);
    AugmentedPair {
        original: events.to_vec(),
        augmented: apply_swap(&segments, &tail, source, dest),
        swap: Some((source, dest)),
    }
}

pub(crate) fn apply_swap(
    segments: &[PurchaseSegment],
    tail: &[(usize, BehaviorType)],
    source: usize,
    dest: usize,
) -> Vec<(usize, BehaviorType)> {
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.swap(source, dest);
    let mut out = Vec::new();
    for idx in order {
        out.extend_from_slice(&segments[idx].events);
    }
    out.extend_from_slice(tail);
    out
}

/// Contrastive loss between original and augmented long-term vectors: the
/// positive pair sits on the diagonal of `Z . Z_aug^T`, negatives are the
/// other augmented views in the batch.
pub fn long_cl_loss(
    tape: &mut Tape,
    preferences: TensorRef,
    augmented: TensorRef,
) -> Result<TensorRef, NumericsError> {
    let (b, _) = tape.shape(preferences);
    if b < 2 {
        return Err(NumericsError::InvalidInput {
            op: "long_cl_loss",
            msg: "need at least 2 instances for in-batch negatives".into(),
        });
    }
    let at = tape.transpose(augmented)?;
    let logits = tape.matmul(preferences, at)?;
    diagonal_info_nce(tape, logits, None)
}
