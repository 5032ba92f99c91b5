//! Behavior-aware graph encoding.
//!
//! For one sequence graph: per-relation mean aggregation (each node pools
//! its stored neighbor sources), relation-level attention fusion with
//! scalar scores `(agg_r . w_r) / sqrt(d)` softmaxed over the relations
//! that actually have neighbors, `L` propagation layers summed with the
//! layer-0 input, and a cascade: the first pass's output is linearly
//! transformed into the layer-0 input of the second pass. The default
//! direction runs the purchase view first (`tar2aux`); `aux2tar` swaps the
//! passes. Item representations from both passes are averaged into the
//! fused per-node embedding.
//!
//! Nodes whose relation sets are all empty at a layer carry their
//! previous-layer embedding forward unchanged.

use alloc::vec::Vec;

use crate::behavior_graph::{BehaviorSubgraphs, GraphSide, RelationType};
use crate::data::BehaviorType;
use crate::numerics::rng::SeedRng;
use crate::numerics::{NumericsError, Param, Tape, TensorRef};

/// Large negative logit standing in for minus infinity; `exp` underflows it
/// to exactly zero.
pub(crate) const MASK_NEG: f64 = -1e30;

/// Which behavior view is encoded first and feeds the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CascadeDirection {
    /// Purchase pass first, transformed into the examination pass (the
    /// default).
    Tar2Aux,
    /// Examination pass first.
    Aux2Tar,
}

/// Learnable state of the encoder: one `[d, 1]` attention vector per
/// (layer, relation) across all six relations, plus the `[d, d]` cascade
/// transform.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEncoderParams {
    pub attention: Vec<Vec<Param>>,
    pub cascade: Param,
    pub layers: usize,
}

impl GraphEncoderParams {
    pub fn init(d: usize, layers: usize, rng: &mut SeedRng) -> Self {
        let bound = 1.0 / libm::sqrt(d as f64);
        let attention = (1..=layers)
            .map(|l| {
                RelationType::ALL
                    .iter()
                    .map(|r| {
                        Param::uniform(&alloc::format!("graph.attention.l{l}.{}", r.name()), d, 1, bound, rng)
                    })
                    .collect()
            })
            .collect();
        GraphEncoderParams {
            attention,
            cascade: Param::uniform("graph.cascade", d, d, bound, rng),
            layers,
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(&Param)) {
        for layer in &self.attention {
            for p in layer {
                f(p);
            }
        }
        f(&self.cascade);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Param)) {
        for layer in &mut self.attention {
            for p in layer {
                f(p);
            }
        }
        f(&mut self.cascade);
    }

    pub fn enter(&self, tape: &mut Tape) -> Result<GraphEncoderRefs, NumericsError> {
        Ok(GraphEncoderRefs {
            attention: self
                .attention
                .iter()
                .map(|layer| {
                    let refs: Result<Vec<TensorRef>, NumericsError> =
                        layer.iter().map(|p| p.enter(tape)).collect();
                    refs
                })
                .collect::<Result<_, _>>()?,
            cascade: self.cascade.enter(tape)?,
            layers: self.layers,
        })
    }
}

/// Tape handles of [`GraphEncoderParams`] for one forward pass.
pub struct GraphEncoderRefs {
    pub attention: Vec<Vec<TensorRef>>,
    pub cascade: TensorRef,
    pub layers: usize,
}

/// Per-node outputs of [`encode_sequence`].
pub struct EncodedItems {
    /// `[N, d]` purchase-view representations, rows aligned with
    /// `graph.nodes()`.
    pub purchase: TensorRef,
    /// `[N, d]` examination-view representations.
    pub examination: TensorRef,
    /// `[N, d]` fused multi-behavior embeddings (the average of both).
    pub fused: TensorRef,
}

/// Softmax weights recorded per layer for invariant checks.
pub struct AlphaProbe {
    pub layer: usize,
    /// `[N * 3]` row-major weights over the side's relation order.
    pub alphas: Vec<f64>,
    /// Which (node, relation) slots had a non-empty neighbor set.
    pub participating: Vec<bool>,
}

/// Mean of the neighbor embeddings of `item` under `relation`; a zero
/// vector when the neighbor set is empty. `prev` holds one `[N, d]` row per
/// graph node.
pub fn relation_aggregate(
    tape: &mut Tape,
    graph: &BehaviorSubgraphs,
    item: usize,
    relation: RelationType,
    prev: TensorRef,
) -> Result<TensorRef, NumericsError> {
    let (_, d) = tape.shape(prev);
    let neighbors = graph.neighbors_unchecked(item, relation);
    if neighbors.is_empty() {
        return tape.zeros(1, d);
    }
    let positions: Vec<usize> = neighbors
        .iter()
        .map(|&v| graph.node_position(v).expect("neighbor is a graph node"))
        .collect();
    let rows = tape.embedding_gather(prev, &positions)?;
    tape.mean_rows(rows)
}

/// Attention fusion over the relations that participate at a node. Scores
/// are `(aggregate . w_r) / sqrt(d)`; with no participating relation the
/// node's previous-layer embedding is carried forward.
pub fn relation_attention_fuse(
    tape: &mut Tape,
    aggregates: &[(TensorRef, TensorRef)],
    carried: TensorRef,
) -> Result<TensorRef, NumericsError> {
    if aggregates.is_empty() {
        return Ok(carried);
    }
    let (_, d) = tape.shape(aggregates[0].0);
    let inv_sqrt_d = 1.0 / libm::sqrt(d as f64);
    let mut scores = Vec::with_capacity(aggregates.len());
    for &(agg, w) in aggregates {
        let s = tape.matmul(agg, w)?;
        scores.push(tape.scale(s, inv_sqrt_d)?);
    }
    let stacked = tape.concat_cols(&scores)?;
    let alpha = tape.softmax_rows(stacked)?;
    let mut fused: Option<TensorRef> = None;
    for (k, &(agg, _)) in aggregates.iter().enumerate() {
        let mut selector = alloc::vec![0.0; aggregates.len()];
        selector[k] = 1.0;
        let sel = tape.constant(aggregates.len(), 1, selector)?;
        let ak = tape.matmul(alpha, sel)?;
        let term = tape.elementwise_mul(agg, ak)?;
        fused = Some(match fused {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(fused.expect("at least one aggregate"))
}

/// `L` layers of aggregate + fuse over one side's relation set, returning
/// the sum of the layer-0 through layer-`L` embeddings per node.
pub fn encode_behavior(
    tape: &mut Tape,
    graph: &BehaviorSubgraphs,
    side: GraphSide,
    init: TensorRef,
    params: &GraphEncoderRefs,
    mut probe: Option<&mut Vec<AlphaProbe>>,
) -> Result<TensorRef, NumericsError> {
    let n = graph.node_count();
    let (rows, d) = tape.shape(init);
    debug_assert_eq!(rows, n);
    let relations = side.relations();
    let inv_sqrt_d = 1.0 / libm::sqrt(d as f64);

    // Constant structure shared by all layers: mean-pooling matrix and
    // participation per relation, plus the all-empty carry-forward selector.
    let mut pool = Vec::with_capacity(relations.len());
    let mut participating = alloc::vec![false; n * relations.len()];
    for (k, &rel) in relations.iter().enumerate() {
        let mut m = alloc::vec![0.0; n * n];
        for (pos, &item) in graph.nodes().iter().enumerate() {
            let neighbors = graph.neighbors_unchecked(item, rel);
            if neighbors.is_empty() {
                continue;
            }
            participating[pos * relations.len() + k] = true;
            let w = 1.0 / neighbors.len() as f64;
            for &v in neighbors {
                m[pos * n + graph.node_position(v).expect("neighbor is a node")] += w;
            }
        }
        pool.push(tape.constant(n, n, m)?);
    }
    let score_mask: Vec<f64> = participating
        .iter()
        .map(|&p| if p { 0.0 } else { MASK_NEG })
        .collect();
    let score_mask = tape.constant(n, relations.len(), score_mask)?;
    let empty_col: Vec<f64> = (0..n)
        .map(|pos| {
            let any = (0..relations.len()).any(|k| participating[pos * relations.len() + k]);
            if any {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    let keep_col: Vec<f64> = empty_col.iter().map(|&e| 1.0 - e).collect();
    let empty_sel = tape.constant(n, 1, empty_col)?;
    let keep_sel = tape.constant(n, 1, keep_col)?;

    let mut prev = init;
    let mut acc = init;
    for layer in 0..params.layers {
        let mut aggs = Vec::with_capacity(relations.len());
        let mut scores = Vec::with_capacity(relations.len());
        for (k, &rel) in relations.iter().enumerate() {
            let agg = tape.matmul(pool[k], prev)?;
            let w = params.attention[layer][rel.index()];
            let s = tape.matmul(agg, w)?;
            scores.push(tape.scale(s, inv_sqrt_d)?);
            aggs.push(agg);
        }
        let stacked = tape.concat_cols(&scores)?;
        let masked = tape.add(stacked, score_mask)?;
        let alpha = tape.softmax_rows(masked)?;
        if let Some(probe) = probe.as_deref_mut() {
            probe.push(AlphaProbe {
                layer: layer + 1,
                alphas: tape.value(alpha).to_vec(),
                participating: participating.clone(),
            });
        }
        let mut fused: Option<TensorRef> = None;
        for (k, &agg) in aggs.iter().enumerate() {
            let mut selector = alloc::vec![0.0; relations.len()];
            selector[k] = 1.0;
            let sel = tape.constant(relations.len(), 1, selector)?;
            let ak = tape.matmul(alpha, sel)?;
            let term = tape.elementwise_mul(agg, ak)?;
            fused = Some(match fused {
                Some(accum) => tape.add(accum, term)?,
                None => term,
            });
        }
        let fused = fused.expect("non-empty relation set");
        // Carry forward nodes with no participating relation at all.
        let kept = tape.elementwise_mul(fused, keep_sel)?;
        let carried = tape.elementwise_mul(prev, empty_sel)?;
        prev = tape.add(kept, carried)?;
        acc = tape.add(acc, prev)?;
    }
    Ok(acc)
}

/// Applies the cascade matrix to every node's first-pass representation:
/// each row becomes `C . h` (row-major `H . C^T`).
pub fn cascade_transform(
    tape: &mut Tape,
    first_pass: TensorRef,
    cascade: TensorRef,
) -> Result<TensorRef, NumericsError> {
    let ct = tape.transpose(cascade)?;
    tape.matmul(first_pass, ct)
}

/// Full two-pass encoding of one sequence. Node initialization is
/// `item embedding + behavior embedding` (most recent occurrence); the
/// first pass runs on the direction's leading side, its output is
/// cascade-transformed into the second pass, and the fused embedding
/// averages both passes.
pub fn encode_sequence(
    tape: &mut Tape,
    graph: &BehaviorSubgraphs,
    item_table: TensorRef,
    behavior_table: TensorRef,
    params: &GraphEncoderRefs,
    direction: CascadeDirection,
) -> Result<EncodedItems, NumericsError> {
    let items = tape.embedding_gather(item_table, graph.nodes())?;
    let behaviors: Vec<usize> = (0..graph.node_count())
        .map(|pos| graph.node_behavior(pos).index())
        .collect();
    let behavior_rows = tape.embedding_gather(behavior_table, &behaviors)?;
    let init = tape.add(items, behavior_rows)?;

    let (first_side, second_side) = match direction {
        CascadeDirection::Tar2Aux => (GraphSide::Purchase, GraphSide::Examination),
        CascadeDirection::Aux2Tar => (GraphSide::Examination, GraphSide::Purchase),
    };
    let first = encode_behavior(tape, graph, first_side, init, params, None)?;
    let second_init = cascade_transform(tape, first, params.cascade)?;
    let second = encode_behavior(tape, graph, second_side, second_init, params, None)?;

    let sum = tape.add(first, second)?;
    let fused = tape.scale(sum, 0.5)?;
    let (purchase, examination) = match direction {
        CascadeDirection::Tar2Aux => (first, second),
        CascadeDirection::Aux2Tar => (second, first),
    };
    Ok(EncodedItems { purchase, examination, fused })
}

/// Raw layer-0 initialization without any propagation, used by the
/// graph-encoder ablation: `item embedding + behavior embedding` per node.
pub fn raw_node_embeddings(
    tape: &mut Tape,
    graph: &BehaviorSubgraphs,
    item_table: TensorRef,
    behavior_table: TensorRef,
) -> Result<TensorRef, NumericsError> {
    let items = tape.embedding_gather(item_table, graph.nodes())?;
    let behaviors: Vec<usize> = (0..graph.node_count())
        .map(|pos| graph.node_behavior(pos).index())
        .collect();
    let behavior_rows = tape.embedding_gather(behavior_table, &behaviors)?;
    tape.add(items, behavior_rows)
}

/// Most-recent-occurrence behavior for every event position, used when
/// scattering node embeddings back onto sequence positions.
pub fn position_nodes(graph: &BehaviorSubgraphs, events: &[(usize, BehaviorType)]) -> Vec<usize> {
    events
        .iter()
        .map(|&(item, _)| graph.node_position(item).expect("event item is a node"))
        .collect()
}
