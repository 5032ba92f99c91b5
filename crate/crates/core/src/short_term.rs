//! Short-term preference: behavior-integrated attention encoder and the
//! target-item contrastive loss.
//!
//! The encoder stacks `K_SAB` self-attention blocks over the graph-refined,
//! position-enriched sequence matrix. Attention is bidirectional over the
//! observed prefix; padded key positions are masked to an effective minus
//! infinity before the softmax. The short-term preference vector is the last
//! row of the final block output, which under left padding is always the
//! most recent real event.
//!
//! The contrastive loss treats the true next item's base embedding as the
//! positive view and the other in-batch targets as negatives; negatives that
//! collide with the positive item are excluded.

use alloc::vec::Vec;

use crate::graph_encoder::MASK_NEG;
use crate::numerics::rng::SeedRng;
use crate::numerics::{DropoutMode, NumericsError, Param, Tape, TensorRef};

/// Per-block projections and norms of the attention encoder. Query/key/value
/// projections are stored per head (`[d, d/h]` each).
#[derive(Debug, Clone, PartialEq)]
pub struct SabBlock {
    pub wq: Vec<Param>,
    pub wk: Vec<Param>,
    pub wv: Vec<Param>,
    pub wo: Param,
    pub ffn_w1: Param,
    pub ffn_b1: Param,
    pub ffn_w2: Param,
    pub ffn_b2: Param,
    pub ln1_gain: Param,
    pub ln1_bias: Param,
    pub ln2_gain: Param,
    pub ln2_bias: Param,
}

/// Attention-encoder parameters: `K_SAB` blocks with `heads` heads each.
/// `d` must be divisible by `heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct SabParams {
    pub blocks: Vec<SabBlock>,
    pub heads: usize,
}

impl SabParams {
    pub fn init(d: usize, k_sab: usize, heads: usize, rng: &mut SeedRng) -> Self {
        assert!(heads >= 1 && d % heads == 0, "d must be divisible by the head count");
        let dh = d / heads;
        let bound = 1.0 / libm::sqrt(d as f64);
        let blocks = (1..=k_sab)
            .map(|k| {
                let proj = |name: &str, rng: &mut SeedRng| -> Vec<Param> {
                    (0..heads)
                        .map(|h| Param::uniform(&alloc::format!("sab.b{k}.h{h}.{name}"), d, dh, bound, rng))
                        .collect()
                };
                SabBlock {
                    wq: proj("wq", rng),
                    wk: proj("wk", rng),
                    wv: proj("wv", rng),
                    wo: Param::uniform(&alloc::format!("sab.b{k}.wo"), d, d, bound, rng),
                    ffn_w1: Param::uniform(&alloc::format!("sab.b{k}.ffn.w1"), d, d, bound, rng),
                    ffn_b1: Param::zeros(&alloc::format!("sab.b{k}.ffn.b1"), 1, d),
                    ffn_w2: Param::uniform(&alloc::format!("sab.b{k}.ffn.w2"), d, d, bound, rng),
                    ffn_b2: Param::zeros(&alloc::format!("sab.b{k}.ffn.b2"), 1, d),
                    ln1_gain: ones(&alloc::format!("sab.b{k}.ln1.gain"), d),
                    ln1_bias: Param::zeros(&alloc::format!("sab.b{k}.ln1.bias"), 1, d),
                    ln2_gain: ones(&alloc::format!("sab.b{k}.ln2.gain"), d),
                    ln2_bias: Param::zeros(&alloc::format!("sab.b{k}.ln2.bias"), 1, d),
                }
            })
            .collect();
        SabParams { blocks, heads }
    }

    pub fn visit(&self, f: &mut impl FnMut(&Param)) {
        for b in &self.blocks {
            for p in b.wq.iter().chain(&b.wk).chain(&b.wv) {
                f(p);
            }
            f(&b.wo);
            f(&b.ffn_w1);
            f(&b.ffn_b1);
            f(&b.ffn_w2);
            f(&b.ffn_b2);
            f(&b.ln1_gain);
            f(&b.ln1_bias);
            f(&b.ln2_gain);
            f(&b.ln2_bias);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Param)) {
        for b in &mut self.blocks {
            for p in b.wq.iter_mut().chain(b.wk.iter_mut()).chain(b.wv.iter_mut()) {
                f(p);
            }
            f(&mut b.wo);
            f(&mut b.ffn_w1);
            f(&mut b.ffn_b1);
            f(&mut b.ffn_w2);
            f(&mut b.ffn_b2);
            f(&mut b.ln1_gain);
            f(&mut b.ln1_bias);
            f(&mut b.ln2_gain);
            f(&mut b.ln2_bias);
        }
    }

    pub fn enter(&self, tape: &mut Tape) -> Result<SabRefs, NumericsError> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                Ok(SabBlockRefs {
                    wq: b.wq.iter().map(|p| p.enter(tape)).collect::<Result<_, _>>()?,
                    wk: b.wk.iter().map(|p| p.enter(tape)).collect::<Result<_, _>>()?,
                    wv: b.wv.iter().map(|p| p.enter(tape)).collect::<Result<_, _>>()?,
                    wo: b.wo.enter(tape)?,
                    ffn_w1: b.ffn_w1.enter(tape)?,
                    ffn_b1: b.ffn_b1.enter(tape)?,
                    ffn_w2: b.ffn_w2.enter(tape)?,
                    ffn_b2: b.ffn_b2.enter(tape)?,
                    ln1_gain: b.ln1_gain.enter(tape)?,
                    ln1_bias: b.ln1_bias.enter(tape)?,
                    ln2_gain: b.ln2_gain.enter(tape)?,
                    ln2_bias: b.ln2_bias.enter(tape)?,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(SabRefs { blocks, heads: self.heads })
    }
}

fn ones(name: &str, d: usize) -> Param {
    let mut p = Param::zeros(name, 1, d);
    p.values.iter_mut().for_each(|v| *v = 1.0);
    p
}

pub struct SabBlockRefs {
    pub wq: Vec<TensorRef>,
    pub wk: Vec<TensorRef>,
    pub wv: Vec<TensorRef>,
    pub wo: TensorRef,
    pub ffn_w1: TensorRef,
    pub ffn_b1: TensorRef,
    pub ffn_w2: TensorRef,
    pub ffn_b2: TensorRef,
    pub ln1_gain: TensorRef,
    pub ln1_bias: TensorRef,
    pub ln2_gain: TensorRef,
    pub ln2_bias: TensorRef,
}

pub struct SabRefs {
    pub blocks: Vec<SabBlockRefs>,
    pub heads: usize,
}

/// Encoded sequence plus the short-term preference readout.
#[derive(Debug)]
pub struct ShortTermOutput {
    /// `[n, d]` final block output.
    pub encoded: TensorRef,
    /// `[1, d]` last (most recent) row of the encoding.
    pub preference: TensorRef,
}

/// Per-(block, head) attention weights recorded for invariant checks.
pub struct AttentionProbe {
    pub block: usize,
    pub head: usize,
    /// `[n * n]` row-major softmax output.
    pub weights: Vec<f64>,
}

/// Runs the stacked attention blocks over `h` (`[n, d]`, graph-refined,
/// left-padded) and returns the encoding plus the last-row preference.
///
/// `mask[j]` is true on real positions; padded keys receive no attention
/// weight. An all-padded input is rejected.
#[allow(clippy::too_many_arguments)]
pub fn sab_forward(
    tape: &mut Tape,
    h: TensorRef,
    mask: &[bool],
    position_table: TensorRef,
    params: &SabRefs,
    keep: f64,
    mode: DropoutMode,
    mut probe: Option<&mut Vec<AttentionProbe>>,
) -> Result<ShortTermOutput, NumericsError> {
    let (n, d) = tape.shape(h);
    if mask.len() != n {
        return Err(NumericsError::InvalidInput {
            op: "sab_forward",
            msg: alloc::format!("mask length {} for {n} positions", mask.len()),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(NumericsError::InvalidInput {
            op: "sab_forward",
            msg: "all positions are padding".into(),
        });
    }
    let (rows, _) = tape.shape(position_table);
    if n > rows {
        return Err(NumericsError::InvalidInput {
            op: "sab_forward",
            msg: alloc::format!("{n} positions exceed the {rows}-row position table"),
        });
    }
    let dh = d / params.heads;
    let scale = 1.0 / libm::sqrt(dh as f64);

    // Keys at padded positions are masked out for every query row.
    let mut key_mask = alloc::vec![0.0; n * n];
    for j in 0..n {
        if !mask[j] {
            for i in 0..n {
                key_mask[i * n + j] = MASK_NEG;
            }
        }
    }
    let key_mask = tape.constant(n, n, key_mask)?;

    let pos = if rows == n {
        position_table
    } else {
        tape.row_slice(position_table, 0, n)?
    };
    let mut x = tape.add(h, pos)?;

    for (bi, block) in params.blocks.iter().enumerate() {
        let mut heads = Vec::with_capacity(params.heads);
        for hi in 0..params.heads {
            let q = tape.matmul(x, block.wq[hi])?;
            let k = tape.matmul(x, block.wk[hi])?;
            let v = tape.matmul(x, block.wv[hi])?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scaled = tape.scale(scores, scale)?;
            let masked = tape.add(scaled, key_mask)?;
            let attn = tape.softmax_rows(masked)?;
            if let Some(probe) = probe.as_deref_mut() {
                probe.push(AttentionProbe {
                    block: bi + 1,
                    head: hi + 1,
                    weights: tape.value(attn).to_vec(),
                });
            }
            heads.push(tape.matmul(attn, v)?);
        }
        let concat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let attn_out = tape.matmul(concat, block.wo)?;

        let residual = tape.add(x, attn_out)?;
        let normed = tape.layer_norm_rows(residual, block.ln1_gain, block.ln1_bias)?;
        let x1 = tape.dropout(normed, keep, mode)?;

        let pre = tape.matmul(x1, block.ffn_w1)?;
        let pre = tape.add(pre, block.ffn_b1)?;
        let act = tape.relu(pre)?;
        let post = tape.matmul(act, block.ffn_w2)?;
        let ffn = tape.add(post, block.ffn_b2)?;

        let residual2 = tape.add(x1, ffn)?;
        let normed2 = tape.layer_norm_rows(residual2, block.ln2_gain, block.ln2_bias)?;
        x = tape.dropout(normed2, keep, mode)?;
    }

    let preference = tape.row_slice(x, n - 1, n)?;
    Ok(ShortTermOutput { encoded: x, preference })
}

/// In-batch InfoNCE over a `[B, B]` dot-product logit matrix whose diagonal
/// holds the positive pairs. `excluded[u * B + v]` marks negatives to drop.
/// Returns the batch-mean loss as a scalar tensor.
pub(crate) fn diagonal_info_nce(
    tape: &mut Tape,
    logits: TensorRef,
    excluded: Option<&[bool]>,
) -> Result<TensorRef, NumericsError> {
    let (b, b2) = tape.shape(logits);
    debug_assert_eq!(b, b2);
    let masked = match excluded {
        Some(ex) => {
            let vals: Vec<f64> = ex.iter().map(|&e| if e { MASK_NEG } else { 0.0 }).collect();
            let m = tape.constant(b, b, vals)?;
            tape.add(logits, m)?
        }
        None => logits,
    };
    let probs = tape.softmax_rows(masked)?;
    // log of the diagonal only: off-diagonal entries are forced to 1 so
    // their log vanishes.
    let mut eye = alloc::vec![0.0; b * b];
    let mut off = alloc::vec![1.0; b * b];
    for u in 0..b {
        eye[u * b + u] = 1.0;
        off[u * b + u] = 0.0;
    }
    let eye = tape.constant(b, b, eye)?;
    let off = tape.constant(b, b, off)?;
    let diag = tape.elementwise_mul(probs, eye)?;
    let shifted = tape.add(diag, off)?;
    let logs = tape.log(shifted)?;
    let total = tape.sum(logs)?;
    tape.scale(total, -1.0 / b as f64)
}

/// Target-item contrastive loss: each instance's short-term vector pairs
/// with its true next item's embedding; negatives are the other in-batch
/// targets, excluding any whose item index equals the positive's.
pub fn short_cl_loss(
    tape: &mut Tape,
    preferences: TensorRef,
    target_embeddings: TensorRef,
    target_items: &[usize],
) -> Result<TensorRef, NumericsError> {
    let (b, _) = tape.shape(preferences);
    if b < 2 {
        return Err(NumericsError::InvalidInput {
            op: "short_cl_loss",
            msg: "need at least 2 instances for in-batch negatives".into(),
        });
    }
    if target_items.len() != b {
        return Err(NumericsError::InvalidInput {
            op: "short_cl_loss",
            msg: "target item list must match the batch".into(),
        });
    }
    let tt = tape.transpose(target_embeddings)?;
    let logits = tape.matmul(preferences, tt)?;
    let mut excluded = alloc::vec![false; b * b];
    for u in 0..b {
        for v in 0..b {
            if u != v && target_items[v] == target_items[u] {
                excluded[u * b + v] = true;
            }
        }
    }
    diagonal_info_nce(tape, logits, Some(&excluded))
}

#[cfg(test)]
mod tests;
