//! End-to-end model: parameter set, forward pass, joint objective, and the
//! training loop with early stopping.
//!
//! One tape per batch: all parameters enter as leaves, every instance's
//! graph encoding plus both preference branches build on top, the three
//! loss terms combine into the joint scalar, and a single backward pass
//! accumulates gradients that are pulled back into the parameters before
//! the Adam step. The padding row of the item table stays frozen at zero.
//!
//! All randomness (shuffling, dropout masks, augmentation) derives from
//! `TrainConfig::seed` plus epoch/batch counters, so a fixed seed gives
//! bit-identical runs.

use alloc::string::String;
use alloc::vec::Vec;

use crate::behavior_graph::build_subgraphs;
use crate::data::{batch_sequences, Batch, BehaviorType, DatasetSplit, Instance};
use crate::eval::{compute_metrics, rank_target, MetricsReport, RankingResult};
use crate::graph_encoder::{
    encode_sequence, raw_node_embeddings, CascadeDirection, GraphEncoderParams, GraphEncoderRefs,
};
use crate::long_term::{
    extract_long_pref, long_cl_loss, scb_forward, subsequence_swap, target_gate, GatingParams,
    GatingRefs, ScbParams, ScbRefs,
};
use crate::numerics::rng::{self, derive_seed};
use crate::numerics::{adam_step, AdamState, DropoutMode, NumericsError, Param, Tape, TensorRef};
use crate::short_term::{sab_forward, short_cl_loss, SabParams, SabRefs};

const SHUFFLE_TAG: u64 = 0x5841_F00D;
const DROPOUT_TAG: u64 = 0xD809_0A75;
const AUGMENT_TAG: u64 = 0xA065_EED5;

/// Ablation switches. A set flag removes the component and forces its loss
/// term to zero without evaluating it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// Skip graph encoding; positions carry raw item + behavior embeddings.
    pub no_bge: bool,
    /// Drop the short-term branch entirely (`o = z_l`).
    pub no_spl: bool,
    /// Drop the long-term branch entirely (`o = z_s`).
    pub no_lpl: bool,
    /// Keep the short branch but disable its contrastive loss.
    pub no_cl_short: bool,
    /// Keep the long branch but disable augmentation and its loss.
    pub no_cl_long: bool,
}

impl AblationFlags {
    pub const NAMES: [&'static str; 5] = ["no_bge", "no_spl", "no_lpl", "no_cl_short", "no_cl_long"];

    pub fn set(&mut self, name: &str) -> bool {
        match name {
            "no_bge" => self.no_bge = true,
            "no_spl" => self.no_spl = true,
            "no_lpl" => self.no_lpl = true,
            "no_cl_short" => self.no_cl_short = true,
            "no_cl_long" => self.no_cl_long = true,
            _ => return false,
        }
        true
    }
}

/// Training hyperparameters. Defaults follow the experimental protocol:
/// embedding size 64, batch 128, drop rate 0.5, sequence length 50,
/// learning rate 1e-3, one layer/block of everything.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d: usize,
    pub batch_size: usize,
    /// Probability of dropping an entry (keep = 1 - dropout_rate).
    pub dropout_rate: f64,
    pub n_max: usize,
    pub learning_rate: f64,
    /// Graph propagation depth L.
    pub layers: usize,
    pub k_sab: usize,
    pub k_scb: usize,
    pub heads: usize,
    /// Weight of the short-term contrastive loss.
    pub lambda1: f64,
    /// Weight of the long-term contrastive loss.
    pub lambda2: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub ablation: AblationFlags,
    pub cascade_direction: CascadeDirection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 64,
            batch_size: 128,
            dropout_rate: 0.5,
            n_max: 50,
            learning_rate: 1e-3,
            layers: 1,
            k_sab: 1,
            k_scb: 1,
            heads: 1,
            lambda1: 0.1,
            lambda2: 0.1,
            patience: 10,
            max_epochs: 200,
            seed: 0,
            ablation: AblationFlags::default(),
            cascade_direction: CascadeDirection::Tar2Aux,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(ModelError::Config(alloc::format!(
                "embedding size {} must be a positive multiple of the head count {}",
                self.d,
                self.heads
            )));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(ModelError::Config("lambda weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(alloc::format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.ablation.no_spl && self.ablation.no_lpl {
            return Err(ModelError::Config(
                "no_spl and no_lpl cannot both be set; one branch must remain".into(),
            ));
        }
        if self.n_max == 0 || self.batch_size == 0 {
            return Err(ModelError::Config("n_max and batch_size must be positive".into()));
        }
        Ok(())
    }

    fn keep(&self) -> f64 {
        1.0 - self.dropout_rate
    }
}

#[derive(Debug)]
pub enum ModelError {
    Config(String),
    Numerics(NumericsError),
    /// Forward or backward failure inside training, located by epoch/batch.
    Forward { epoch: usize, batch: usize, source: NumericsError },
    /// The joint loss left the finite range.
    Divergence { epoch: usize, batch: usize, loss: f64 },
    EmptySplit(&'static str),
}

impl From<NumericsError> for ModelError {
    fn from(e: NumericsError) -> Self {
        ModelError::Numerics(e)
    }
}

impl core::fmt::Display for ModelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ModelError::Config(msg) => write!(f, "invalid config: {msg}"),
            ModelError::Numerics(e) => write!(f, "{e}"),
            ModelError::Forward { epoch, batch, source } => {
                write!(f, "forward failed at epoch {epoch}, batch {batch}: {source}")
            }
            ModelError::Divergence { epoch, batch, loss } => {
                write!(f, "training diverged at epoch {epoch}, batch {batch}: joint loss {loss}")
            }
            ModelError::EmptySplit(name) => write!(f, "{name} split is empty"),
        }
    }
}

impl core::error::Error for ModelError {}

/// Every learnable tensor of the model. The item table's row 0 is the
/// padding embedding, frozen at zero and excluded from scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct BdplParams {
    pub item_table: Param,
    pub behavior_table: Param,
    pub position_table: Param,
    pub graph: GraphEncoderParams,
    pub sab: SabParams,
    pub gate: GatingParams,
    pub scb: ScbParams,
    pub fusion: Param,
    pub item_count: usize,
    pub d: usize,
    pub n_max: usize,
}

impl BdplParams {
    /// Fresh parameters, uniformly initialized in `[-1/sqrt(d), 1/sqrt(d)]`
    /// from the config seed. `item_count` counts table rows including the
    /// padding row.
    pub fn init(item_count: usize, config: &TrainConfig) -> Self {
        let d = config.d;
        let bound = 1.0 / libm::sqrt(d as f64);
        let mut r = rng::seeded(derive_seed(config.seed, 0x1217, 0));
        let mut item_table = Param::uniform("item_table", item_count, d, bound, &mut r);
        item_table.values[..d].iter_mut().for_each(|v| *v = 0.0);
        BdplParams {
            item_table,
            behavior_table: Param::uniform("behavior_table", 2, d, bound, &mut r),
            position_table: Param::uniform("position_table", config.n_max, d, bound, &mut r),
            graph: GraphEncoderParams::init(d, config.layers, &mut r),
            sab: SabParams::init(d, config.k_sab, config.heads, &mut r),
            gate: GatingParams::init(d, config.n_max, &mut r),
            scb: ScbParams::init(d, config.n_max, config.k_scb, &mut r),
            fusion: Param::uniform("fusion.wf", 2 * d, 1, bound, &mut r),
            item_count,
            d,
            n_max: config.n_max,
        }
    }

    /// Visits every parameter exactly once, in the fixed registration
    /// order shared by the optimizer and the checkpoint format.
    pub fn visit(&self, f: &mut impl FnMut(&Param)) {
        f(&self.item_table);
        f(&self.behavior_table);
        f(&self.position_table);
        self.graph.visit(f);
        self.sab.visit(f);
        self.gate.visit(f);
        self.scb.visit(f);
        f(&self.fusion);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Param)) {
        f(&mut self.item_table);
        f(&mut self.behavior_table);
        f(&mut self.position_table);
        self.graph.visit_mut(f);
        self.sab.visit_mut(f);
        self.gate.visit_mut(f);
        self.scb.visit_mut(f);
        f(&mut self.fusion);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    /// Enters all parameters as leaves on a fresh tape. Returns the typed
    /// handle bundle plus the flat leaf list in visit order.
    pub fn enter(&self, tape: &mut Tape) -> Result<(ModelRefs, Vec<TensorRef>), NumericsError> {
        debug_assert!(tape.is_empty(), "parameters must be the first leaves on the tape");
        let item = self.item_table.enter(tape)?;
        let behavior = self.behavior_table.enter(tape)?;
        let position = self.position_table.enter(tape)?;
        let graph = self.graph.enter(tape)?;
        let sab = self.sab.enter(tape)?;
        let gate = self.gate.enter(tape)?;
        let scb = self.scb.enter(tape)?;
        let fusion = self.fusion.enter(tape)?;
        let flat: Vec<TensorRef> = (0..self.param_count()).map(TensorRef).collect();
        Ok((
            ModelRefs { item, behavior, position, graph, sab, gate, scb, fusion },
            flat,
        ))
    }

    /// Rebuilds the typed handle bundle from leaves already on a tape (in
    /// visit order), for gradient checking through the whole model.
    pub fn refs_from_flat(&self, refs: &[TensorRef]) -> ModelRefs {
        let mut cur = refs.iter().copied();
        let mut next = || cur.next().expect("flat leaf list too short");
        let item = next();
        let behavior = next();
        let position = next();
        let graph = GraphEncoderRefs {
            attention: (0..self.graph.layers)
                .map(|_| (0..6).map(|_| next()).collect())
                .collect(),
            cascade: next(),
            layers: self.graph.layers,
        };
        let sab = SabRefs {
            blocks: self
                .sab
                .blocks
                .iter()
                .map(|_| {
                    let heads = self.sab.heads;
                    crate::short_term::SabBlockRefs {
                        wq: (0..heads).map(|_| next()).collect(),
                        wk: (0..heads).map(|_| next()).collect(),
                        wv: (0..heads).map(|_| next()).collect(),
                        wo: next(),
                        ffn_w1: next(),
                        ffn_b1: next(),
                        ffn_w2: next(),
                        ffn_b2: next(),
                        ln1_gain: next(),
                        ln1_bias: next(),
                        ln2_gain: next(),
                        ln2_bias: next(),
                    }
                })
                .collect(),
            heads: self.sab.heads,
        };
        let gate = GatingRefs { w1: next(), w2: next() };
        let scb = ScbRefs {
            blocks: self
                .scb
                .blocks
                .iter()
                .map(|_| crate::long_term::ScbBlockRefs {
                    w3: next(),
                    w4: next(),
                    ln_gain: next(),
                    ln_bias: next(),
                })
                .collect(),
        };
        let fusion = next();
        ModelRefs { item, behavior, position, graph, sab, gate, scb, fusion }
    }

    /// Pulls gradients accumulated on the flat leaves back into the params.
    pub fn take_grads(&mut self, tape: &Tape, flat: &[TensorRef]) {
        let mut i = 0;
        self.visit_mut(&mut |p| {
            p.take_grad_from(tape, flat[i]);
            i += 1;
        });
    }
}

/// Tape handles for one forward pass.
pub struct ModelRefs {
    pub item: TensorRef,
    pub behavior: TensorRef,
    pub position: TensorRef,
    pub graph: GraphEncoderRefs,
    pub sab: SabRefs,
    pub gate: GatingRefs,
    pub scb: ScbRefs,
    pub fusion: TensorRef,
}

/// Adam state per parameter, aligned with the visit order.
pub struct Optimizer {
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(params: &BdplParams, learning_rate: f64) -> Self {
        let mut states = Vec::new();
        params.visit(&mut |p| states.push(AdamState::new(p.len(), learning_rate)));
        Optimizer { states }
    }

    /// One Adam update over every parameter carrying a gradient. The item
    /// table's padding-row gradient is zeroed first so the row stays
    /// frozen; parameters without gradients (ablated-away components) are
    /// skipped.
    pub fn step(&mut self, params: &mut BdplParams) -> Result<(), NumericsError> {
        let d = params.d;
        if let Some(g) = params.item_table.grad.as_mut() {
            g[..d].iter_mut().for_each(|v| *v = 0.0);
        }
        let mut i = 0;
        let states = &mut self.states;
        let mut result = Ok(());
        params.visit_mut(&mut |p| {
            if result.is_ok() && p.grad.is_some() {
                result = adam_step(p, &mut states[i]);
            } else {
                p.grad = None;
            }
            i += 1;
        });
        result
    }
}

/// Fusion gate: `beta = sigmoid([z_s || z_l] . w_f)`,
/// `o = beta * z_s + (1 - beta) * z_l`.
pub fn fuse_preferences(
    tape: &mut Tape,
    z_short: TensorRef,
    z_long: TensorRef,
    w_f: TensorRef,
) -> Result<TensorRef, NumericsError> {
    let joined = tape.concat_cols(&[z_short, z_long])?;
    let pre = tape.matmul(joined, w_f)?;
    let beta = tape.sigmoid(pre)?;
    let short_part = tape.elementwise_mul(z_short, beta)?;
    let neg = tape.scale(beta, -1.0)?;
    let one = tape.constant(1, 1, alloc::vec![1.0])?;
    let complement = tape.add(neg, one)?;
    let long_part = tape.elementwise_mul(z_long, complement)?;
    tape.add(short_part, long_part)
}

/// Softmax scores over all real items (the padding row is excluded).
pub fn score_items(
    tape: &mut Tape,
    preference: TensorRef,
    item_table: TensorRef,
) -> Result<TensorRef, NumericsError> {
    let (rows, _) = tape.shape(item_table);
    let real = tape.row_slice(item_table, 1, rows)?;
    let rt = tape.transpose(real)?;
    let logits = tape.matmul(preference, rt)?;
    tape.softmax_rows(logits)
}

/// Cross-entropy against the single true next item: `-log y_hat[target]`.
/// `probs` is `[1, V]` over items `1..=V`; the padding index is rejected.
pub fn rec_loss(tape: &mut Tape, probs: TensorRef, target: usize) -> Result<TensorRef, NumericsError> {
    let (_, v) = tape.shape(probs);
    if target == 0 || target > v {
        return Err(NumericsError::InvalidInput {
            op: "rec_loss",
            msg: alloc::format!("target item {target} outside 1..={v}"),
        });
    }
    let mut onehot = alloc::vec![0.0; v];
    onehot[target - 1] = 1.0;
    let oh = tape.constant(1, v, onehot)?;
    let picked = tape.elementwise_mul(probs, oh)?;
    let p = tape.sum(picked)?;
    let lp = tape.log(p)?;
    tape.scale(lp, -1.0)
}

/// Linear weighted sum of the loss terms. Absent terms (ablated or
/// unavailable) contribute exactly nothing.
pub fn joint_loss(
    tape: &mut Tape,
    rec: TensorRef,
    cl_short: Option<TensorRef>,
    cl_long: Option<TensorRef>,
    lambda1: f64,
    lambda2: f64,
) -> Result<TensorRef, NumericsError> {
    let mut total = rec;
    if let Some(cls) = cl_short {
        let scaled = tape.scale(cls, lambda1)?;
        total = tape.add(total, scaled)?;
    }
    if let Some(cll) = cl_long {
        let scaled = tape.scale(cll, lambda2)?;
        total = tape.add(total, scaled)?;
    }
    Ok(total)
}

/// Forward context: training interleaves dropout and augmentation streams
/// derived from (seed, epoch, batch); evaluation is deterministic.
#[derive(Debug, Clone, Copy)]
pub enum ForwardCtx {
    Train { epoch: usize, batch_index: usize },
    Eval,
}

impl ForwardCtx {
    fn is_train(&self) -> bool {
        matches!(self, ForwardCtx::Train { .. })
    }
}

/// Outputs of one batch forward pass.
pub struct BatchForward {
    pub joint: TensorRef,
    pub rec: f64,
    pub cl_short: f64,
    pub cl_long: f64,
    /// Fused preference per instance (`[1, d]`).
    pub outputs: Vec<TensorRef>,
    /// Full-catalog probabilities per instance (`[1, V]`).
    pub probs: Vec<TensorRef>,
    pub z_short: Vec<Option<TensorRef>>,
    pub z_long: Vec<Option<TensorRef>>,
}

/// Graph-refined, position-aligned sequence matrix for one instance:
/// `[n_max, d]` with zero rows at padded positions.
fn instance_matrix(
    tape: &mut Tape,
    refs: &ModelRefs,
    config: &TrainConfig,
    events: &[(usize, BehaviorType)],
) -> Result<TensorRef, NumericsError> {
    let graph = build_subgraphs(events);
    let node_matrix = if config.ablation.no_bge {
        raw_node_embeddings(tape, &graph, refs.item, refs.behavior)?
    } else {
        encode_sequence(tape, &graph, refs.item, refs.behavior, &refs.graph, config.cascade_direction)?.fused
    };
    let (_, d) = tape.shape(node_matrix);
    let zero_row = tape.zeros(1, d)?;
    let padded_table = tape.concat_rows(&[zero_row, node_matrix])?;
    let mut indices = alloc::vec![0usize; config.n_max - events.len()];
    for &(item, _) in events {
        indices.push(graph.node_position(item).expect("event item is a node") + 1);
    }
    tape.embedding_gather(padded_table, &indices)
}

/// Runs the full pipeline for a batch on an existing tape whose parameter
/// leaves are `refs`. See [`forward_batch`] for the owning variant.
pub fn forward_on_tape(
    tape: &mut Tape,
    refs: &ModelRefs,
    config: &TrainConfig,
    batch: &Batch,
    ctx: ForwardCtx,
) -> Result<BatchForward, NumericsError> {
    let flags = config.ablation;
    let b = batch.len();
    let mode = if ctx.is_train() { DropoutMode::Train } else { DropoutMode::Eval };
    let keep = config.keep();
    let purchase_emb = tape.embedding_gather(refs.behavior, &[BehaviorType::Purchase.index()])?;

    let mut outputs = Vec::with_capacity(b);
    let mut probs = Vec::with_capacity(b);
    let mut rec_terms = Vec::with_capacity(b);
    let mut z_short_all = Vec::with_capacity(b);
    let mut z_long_all = Vec::with_capacity(b);
    let mut z_aug_all = Vec::with_capacity(b);

    for i in 0..b {
        let events = &batch.rows[i];
        let mask = batch.mask(i);
        let h = instance_matrix(tape, refs, config, events)?;

        let z_short = if flags.no_spl {
            None
        } else {
            let out = sab_forward(tape, h, &mask, refs.position, &refs.sab, keep, mode, None)?;
            Some(out.preference)
        };

        let z_long = if flags.no_lpl {
            None
        } else {
            let gated = target_gate(tape, h, purchase_emb, &refs.gate)?;
            let mixed = scb_forward(tape, gated, &mask, &refs.scb)?;
            Some(extract_long_pref(tape, mixed, &mask)?)
        };

        let z_aug = if let ForwardCtx::Train { epoch, batch_index } = ctx {
            if flags.no_lpl || flags.no_cl_long {
                None
            } else {
                let global = (batch_index * config.batch_size + i) as u64;
                let seed = derive_seed(config.seed ^ AUGMENT_TAG, epoch as u64, global);
                let pair = subsequence_swap(events, seed);
                let h_aug = instance_matrix(tape, refs, config, &pair.augmented)?;
                let gated = target_gate(tape, h_aug, purchase_emb, &refs.gate)?;
                let mixed = scb_forward(tape, gated, &mask, &refs.scb)?;
                Some(extract_long_pref(tape, mixed, &mask)?)
            }
        } else {
            None
        };

        let output = match (z_short, z_long) {
            (Some(zs), Some(zl)) => fuse_preferences(tape, zs, zl, refs.fusion)?,
            (Some(zs), None) => zs,
            (None, Some(zl)) => zl,
            (None, None) => unreachable!("config validation forbids dropping both branches"),
        };
        let prob = score_items(tape, output, refs.item)?;
        rec_terms.push(rec_loss(tape, prob, batch.targets[i])?);
        outputs.push(output);
        probs.push(prob);
        z_short_all.push(z_short);
        z_long_all.push(z_long);
        z_aug_all.push(z_aug);
    }

    let rec_stack = tape.concat_rows(&rec_terms)?;
    let rec_sum = tape.sum(rec_stack)?;
    let rec = tape.scale(rec_sum, 1.0 / b as f64)?;

    let cl_short = if b >= 2 && !flags.no_spl && !flags.no_cl_short {
        let zs: Vec<TensorRef> = z_short_all.iter().map(|z| z.expect("short branch on")).collect();
        let z = tape.concat_rows(&zs)?;
        let targets = tape.embedding_gather(refs.item, &batch.targets)?;
        Some(short_cl_loss(tape, z, targets, &batch.targets)?)
    } else {
        None
    };

    let cl_long = if b >= 2 && ctx.is_train() && !flags.no_lpl && !flags.no_cl_long {
        let zl: Vec<TensorRef> = z_long_all.iter().map(|z| z.expect("long branch on")).collect();
        let za: Vec<TensorRef> = z_aug_all.iter().map(|z| z.expect("augmented view on")).collect();
        let z = tape.concat_rows(&zl)?;
        let a = tape.concat_rows(&za)?;
        Some(long_cl_loss(tape, z, a)?)
    } else {
        None
    };

    let joint = joint_loss(tape, rec, cl_short, cl_long, config.lambda1, config.lambda2)?;
    Ok(BatchForward {
        joint,
        rec: tape.value(rec)[0],
        cl_short: cl_short.map(|t| tape.value(t)[0]).unwrap_or(0.0),
        cl_long: cl_long.map(|t| tape.value(t)[0]).unwrap_or(0.0),
        outputs,
        probs,
        z_short: z_short_all,
        z_long: z_long_all,
    })
}

/// Builds a seeded tape, enters the parameters, and runs [`forward_on_tape`].
/// Returns the tape together with the flat parameter leaves for gradient
/// pullback.
pub fn forward_batch(
    params: &BdplParams,
    config: &TrainConfig,
    batch: &Batch,
    ctx: ForwardCtx,
) -> Result<(Tape, Vec<TensorRef>, BatchForward), NumericsError> {
    let mut tape = match ctx {
        ForwardCtx::Train { epoch, batch_index } => {
            Tape::with_seed(derive_seed(config.seed ^ DROPOUT_TAG, epoch as u64, batch_index as u64))
        }
        ForwardCtx::Eval => Tape::new(),
    };
    let (refs, flat) = params.enter(&mut tape)?;
    let out = forward_on_tape(&mut tape, &refs, config, batch, ctx)?;
    Ok((tape, flat, out))
}

/// Scores every instance (eval mode, batched) and ranks its target.
pub fn evaluate_split(
    params: &BdplParams,
    config: &TrainConfig,
    instances: &[Instance],
) -> Result<Vec<RankingResult>, ModelError> {
    let batches = batch_sequences(instances, config.batch_size, config.n_max, None);
    let mut results = Vec::with_capacity(instances.len());
    let mut idx = 0;
    for batch in &batches {
        let (tape, _, fwd) = forward_batch(params, config, batch, ForwardCtx::Eval)?;
        for (i, &target) in batch.targets.iter().enumerate() {
            let scores = tape.value(fwd.probs[i]);
            let rank = rank_target(scores, target).map_err(|_| {
                ModelError::Config(alloc::format!("target {target} outside the item table"))
            })?;
            results.push(RankingResult { instance: idx, rank });
            idx += 1;
        }
    }
    Ok(results)
}

/// Full-ranking metrics for a split; `seconds` is supplied by the caller's
/// clock.
pub fn evaluate(
    params: &BdplParams,
    config: &TrainConfig,
    instances: &[Instance],
    split_name: &str,
    seconds: f64,
) -> Result<MetricsReport, ModelError> {
    if instances.is_empty() {
        return Err(ModelError::EmptySplit("evaluation"));
    }
    let results = evaluate_split(params, config, instances)?;
    compute_metrics(&results, split_name, seconds)
        .map_err(|e| ModelError::Config(alloc::format!("{e}")))
}

/// Monotonic time source injected by the driver; tests use [`NullClock`].
pub trait Clock {
    fn now_seconds(&mut self) -> f64;
}

/// Clock that always reads zero, for deterministic artifacts.
pub struct NullClock;

impl Clock for NullClock {
    fn now_seconds(&mut self) -> f64 {
        0.0
    }
}

/// One telemetry row per epoch: mean losses over training instances, the
/// validation HR@10, and the epoch wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTelemetry {
    pub epoch: usize,
    pub rec_loss: f64,
    pub cl_short: f64,
    pub cl_long: f64,
    pub valid_hr10: f64,
    pub seconds: f64,
}

/// Best-so-far snapshot produced by [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: BdplParams,
    pub config: TrainConfig,
    /// Epoch of the best validation HR@10 (0 for an untrained model).
    pub epoch: usize,
    pub best_valid_hr10: f64,
    /// Base seed of all derived random streams.
    pub rng_state: u64,
}

pub struct FitResult {
    pub checkpoint: Checkpoint,
    pub telemetry: Vec<EpochTelemetry>,
}

/// Mini-batch Adam on the joint loss with early stopping on validation
/// HR@10. Stops after `patience` epochs without improvement or at
/// `max_epochs`; returns the best checkpoint and per-epoch telemetry.
///
/// Batches of size one skip the contrastive terms (no in-batch negatives).
pub fn fit(split: &DatasetSplit, config: &TrainConfig, clock: &mut dyn Clock) -> Result<FitResult, ModelError> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    let mut params = BdplParams::init(split.item_count, config);
    let mut optimizer = Optimizer::new(&params, config.learning_rate);

    let mut best = Checkpoint {
        params: params.clone(),
        config: config.clone(),
        epoch: 0,
        best_valid_hr10: f64::NEG_INFINITY,
        rng_state: config.seed,
    };
    let mut telemetry = Vec::new();
    let mut epochs_without_improvement = 0usize;

    for epoch in 1..=config.max_epochs {
        let start = clock.now_seconds();
        let shuffle = derive_seed(config.seed ^ SHUFFLE_TAG, epoch as u64, 0);
        let batches = batch_sequences(&split.train, config.batch_size, config.n_max, Some(shuffle));

        let mut rec_sum = 0.0;
        let mut cls_sum = 0.0;
        let mut cll_sum = 0.0;
        let mut count = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let ctx = ForwardCtx::Train { epoch, batch_index: bi };
            let (mut tape, flat, fwd) = forward_batch(&params, config, batch, ctx)
                .map_err(|source| ModelError::Forward { epoch, batch: bi, source })?;
            let joint_value = tape.value(fwd.joint)[0];
            if !joint_value.is_finite() {
                return Err(ModelError::Divergence { epoch, batch: bi, loss: joint_value });
            }
            tape.backward(fwd.joint)
                .map_err(|source| ModelError::Forward { epoch, batch: bi, source })?;
            params.take_grads(&tape, &flat);
            optimizer.step(&mut params)?;

            let b = batch.len() as f64;
            rec_sum += fwd.rec * b;
            cls_sum += fwd.cl_short * b;
            cll_sum += fwd.cl_long * b;
            count += batch.len();
        }

        let valid_hr10 = if split.valid.is_empty() {
            0.0
        } else {
            let results = evaluate_split(&params, config, &split.valid)?;
            results.iter().filter(|r| r.hit(10)).count() as f64 / results.len() as f64
        };

        telemetry.push(EpochTelemetry {
            epoch,
            rec_loss: rec_sum / count as f64,
            cl_short: cls_sum / count as f64,
            cl_long: cll_sum / count as f64,
            valid_hr10,
            seconds: clock.now_seconds() - start,
        });

        if valid_hr10 > best.best_valid_hr10 {
            best.params = params.clone();
            best.epoch = epoch;
            best.best_valid_hr10 = valid_hr10;
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= config.patience {
                break;
            }
        }
    }
    if best.best_valid_hr10 == f64::NEG_INFINITY {
        best.best_valid_hr10 = 0.0;
    }
    Ok(FitResult { checkpoint: best, telemetry })
}
