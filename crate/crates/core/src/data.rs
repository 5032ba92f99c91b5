//! Interaction ingestion, preprocessing, splitting, batching, and synthetic
//! dataset generation.
//!
//! Raw logs arrive as `(user, item, behavior, timestamp)` rows. Preprocessing
//! filters cold-start items/users iteratively, deduplicates `(user, item,
//! behavior)` triples keeping the chronologically first, and reindexes users
//! and items densely from 1 (index 0 is the padding token). Splitting follows
//! leave-one-out over purchases: last purchase is the test target, the
//! penultimate purchase the validation target, earlier purchases become
//! training targets. Auxiliary events between the penultimate and last
//! purchase are not retained in any split input.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::numerics::rng::{self, SeedRng};

/// Canonical behavior classes: everything that is not a purchase collapses
/// to an examination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BehaviorType {
    Examination,
    Purchase,
}

impl BehaviorType {
    /// Row index into the behavior embedding table.
    pub fn index(self) -> usize {
        match self {
            BehaviorType::Examination => 0,
            BehaviorType::Purchase => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BehaviorType::Examination => "examination",
            BehaviorType::Purchase => "purchase",
        }
    }
}

/// One raw interaction event with opaque string keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub behavior: BehaviorType,
    pub timestamp: i64,
}

/// Raw-label to canonical-behavior table.
#[derive(Debug, Clone, Default)]
pub struct BehaviorMap {
    map: BTreeMap<String, BehaviorType>,
}

impl BehaviorMap {
    pub fn new(entries: &[(&str, BehaviorType)]) -> Self {
        BehaviorMap {
            map: entries.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn insert(&mut self, raw: &str, behavior: BehaviorType) {
        self.map.insert(raw.to_string(), behavior);
    }

    pub fn get(&self, raw: &str) -> Option<BehaviorType> {
        self.map.get(raw).copied()
    }

    /// Canonical labels only: `examination` and `purchase`.
    pub fn canonical() -> Self {
        Self::new(&[
            ("examination", BehaviorType::Examination),
            ("purchase", BehaviorType::Purchase),
        ])
    }
}

/// A user's chronologically ordered event stream after preprocessing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user: usize,
    pub events: Vec<(usize, BehaviorType)>,
}

/// Preprocessed corpus: dense sequences plus decode tables. Index 0 of both
/// tables is the reserved padding slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub sequences: Vec<UserSequence>,
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl Preprocessed {
    /// Item-table row count, including the padding row.
    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn user_count(&self) -> usize {
        self.sequences.len()
    }
}

/// One supervised example: everything before the cut, and the purchased item
/// at the cut.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub user: usize,
    pub input: Vec<(usize, BehaviorType)>,
    pub target: usize,
}

/// Leave-one-out split. `item_count` counts item-table rows including the
/// padding row, so every target index is `< item_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Instance>,
    pub valid: Vec<Instance>,
    pub test: Vec<Instance>,
    pub item_count: usize,
    pub user_count: usize,
    /// Users excluded for having fewer than two purchases (or an empty
    /// validation prefix).
    pub dropped_users: usize,
}

/// A batch of padded instances. `rows` keeps the truncated, unpadded event
/// lists (the graph builder consumes those); the padded views left-pad with
/// item 0 so the final position is always the most recent event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub rows: Vec<Vec<(usize, BehaviorType)>>,
    pub targets: Vec<usize>,
    pub users: Vec<usize>,
    pub n_max: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Item ids, left-padded with 0 to `n_max`.
    pub fn padded_items(&self, i: usize) -> Vec<usize> {
        let row = &self.rows[i];
        let mut out = alloc::vec![0usize; self.n_max - row.len()];
        out.extend(row.iter().map(|&(item, _)| item));
        out
    }

    /// True exactly on real (non-padded) positions.
    pub fn mask(&self, i: usize) -> Vec<bool> {
        let row = &self.rows[i];
        let mut out = alloc::vec![false; self.n_max - row.len()];
        out.resize(self.n_max, true);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataError {
    Parse { line: usize, msg: String },
    UnknownBehavior { line: usize, label: String },
    EmptyAfterFilter,
    InvalidTransitions(String),
}

impl core::fmt::Display for DataError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DataError::Parse { line, msg } => write!(f, "parse error on line {line}: {msg}"),
            DataError::UnknownBehavior { line, label } => {
                write!(f, "unknown behavior label `{label}` on line {line}")
            }
            DataError::EmptyAfterFilter => write!(f, "no interactions survive preprocessing"),
            DataError::InvalidTransitions(msg) => write!(f, "invalid transition table: {msg}"),
        }
    }
}

impl core::error::Error for DataError {}

/// Parses tab-separated `user item behavior timestamp` rows. Blank lines are
/// ignored; any malformed row or unmapped behavior label is an error carrying
/// its 1-based line number.
pub fn parse_interactions(text: &str, behavior_map: &BehaviorMap) -> Result<Vec<Interaction>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (user, item, behavior, ts) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(it), Some(b), Some(t)) => (u, it, b, t),
            _ => {
                return Err(DataError::Parse {
                    line: lineno,
                    msg: "expected 4 tab-separated fields: user item behavior timestamp".into(),
                })
            }
        };
        if fields.next().is_some() {
            return Err(DataError::Parse { line: lineno, msg: "more than 4 fields".into() });
        }
        let behavior = behavior_map
            .get(behavior)
            .ok_or_else(|| DataError::UnknownBehavior { line: lineno, label: behavior.to_string() })?;
        let timestamp: i64 = ts.trim().parse().map_err(|_| DataError::Parse {
            line: lineno,
            msg: alloc::format!("bad timestamp `{ts}`"),
        })?;
        if timestamp < 0 {
            return Err(DataError::Parse { line: lineno, msg: "negative timestamp".into() });
        }
        out.push(Interaction {
            user: user.to_string(),
            item: item.to_string(),
            behavior,
            timestamp,
        });
    }
    Ok(out)
}

/// Iterative cold-start filtering, chronological dedup, and dense reindexing.
///
/// Items with fewer than `min_item_interactions` events and users with fewer
/// than `min_user_interactions` events are removed until both conditions are
/// stable; then duplicated `(user, item, behavior)` triples keep only their
/// chronologically first occurrence. User and item indices are assigned by
/// first appearance, starting at 1.
pub fn preprocess(
    interactions: &[Interaction],
    min_item_interactions: usize,
    min_user_interactions: usize,
) -> Result<Preprocessed, DataError> {
    let mut alive: Vec<bool> = alloc::vec![true; interactions.len()];
    // Filtering and dedup interact (dedup lowers counts), so both repeat
    // until a joint fixed point; that makes the whole pass idempotent.
    loop {
        let filtered = filter_cold_start(interactions, &mut alive, min_item_interactions, min_user_interactions);
        let deduped = dedup_keep_first(interactions, &mut alive);
        if !filtered && !deduped {
            break;
        }
    }

    // Group by user in first-appearance order.
    let mut user_order: Vec<&str> = Vec::new();
    let mut per_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ev) in interactions.iter().enumerate() {
        if !alive[i] {
            continue;
        }
        per_user.entry(ev.user.as_str()).or_insert_with(|| {
            user_order.push(ev.user.as_str());
            Vec::new()
        });
        per_user.get_mut(ev.user.as_str()).unwrap().push(i);
    }
    if user_order.is_empty() {
        return Err(DataError::EmptyAfterFilter);
    }

    let mut users: Vec<String> = alloc::vec![String::new()];
    let mut items: Vec<String> = alloc::vec![String::new()];
    let mut item_index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut sequences = Vec::with_capacity(user_order.len());

    for (u_pos, &user_key) in user_order.iter().enumerate() {
        let mut evs: Vec<&Interaction> = per_user[user_key].iter().map(|&i| &interactions[i]).collect();
        // Stable sort: ties keep input order.
        evs.sort_by_key(|ev| ev.timestamp);

        let mut events = Vec::with_capacity(evs.len());
        for ev in evs {
            let idx = *item_index.entry(ev.item.as_str()).or_insert_with(|| {
                items.push(ev.item.clone());
                items.len() - 1
            });
            events.push((idx, ev.behavior));
        }
        users.push(user_key.to_string());
        sequences.push(UserSequence { user: u_pos + 1, events });
    }

    Ok(Preprocessed { sequences, users, items })
}

/// Removes events of items/users whose remaining record counts fall below
/// the thresholds, iterating until stable. Returns whether anything changed.
fn filter_cold_start(
    interactions: &[Interaction],
    alive: &mut [bool],
    min_item: usize,
    min_user: usize,
) -> bool {
    let mut any = false;
    loop {
        let mut changed = false;
        let mut item_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, ev) in interactions.iter().enumerate() {
            if alive[i] {
                *item_counts.entry(ev.item.as_str()).or_insert(0) += 1;
            }
        }
        for (i, ev) in interactions.iter().enumerate() {
            if alive[i] && item_counts[ev.item.as_str()] < min_item {
                alive[i] = false;
                changed = true;
            }
        }
        let mut user_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, ev) in interactions.iter().enumerate() {
            if alive[i] {
                *user_counts.entry(ev.user.as_str()).or_insert(0) += 1;
            }
        }
        for (i, ev) in interactions.iter().enumerate() {
            if alive[i] && user_counts[ev.user.as_str()] < min_user {
                alive[i] = false;
                changed = true;
            }
        }
        if !changed {
            return any;
        }
        any = true;
    }
}

/// Kills all but the chronologically first occurrence of each
/// `(user, item, behavior)` triple. Returns whether anything changed.
fn dedup_keep_first(interactions: &[Interaction], alive: &mut [bool]) -> bool {
    let mut per_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ev) in interactions.iter().enumerate() {
        if alive[i] {
            per_user.entry(ev.user.as_str()).or_default().push(i);
        }
    }
    let mut changed = false;
    for (_, mut idxs) in per_user {
        idxs.sort_by_key(|&i| interactions[i].timestamp);
        let mut seen: BTreeMap<(&str, BehaviorType), ()> = BTreeMap::new();
        for i in idxs {
            let ev = &interactions[i];
            if seen.insert((ev.item.as_str(), ev.behavior), ()).is_some() {
                alive[i] = false;
                changed = true;
            }
        }
    }
    changed
}

/// Leave-one-out split over purchases.
///
/// Users with fewer than two purchases are dropped (and counted). The test
/// input runs through the penultimate purchase inclusive, so auxiliary events
/// between the two final purchases never appear in any input. Instances whose
/// input would be empty are not emitted.
pub fn split_leave_one_out(data: &Preprocessed) -> DatasetSplit {
    let mut split = DatasetSplit {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        item_count: data.item_count(),
        user_count: data.user_count(),
        dropped_users: 0,
    };
    for seq in &data.sequences {
        let purchases: Vec<usize> = seq
            .events
            .iter()
            .enumerate()
            .filter(|(_, &(_, b))| b == BehaviorType::Purchase)
            .map(|(i, _)| i)
            .collect();
        if purchases.len() < 2 {
            split.dropped_users += 1;
            continue;
        }
        let last = purchases[purchases.len() - 1];
        let penult = purchases[purchases.len() - 2];
        if penult == 0 {
            // No observable prefix for the validation target.
            split.dropped_users += 1;
            continue;
        }
        split.test.push(Instance {
            user: seq.user,
            input: seq.events[..=penult].to_vec(),
            target: seq.events[last].0,
        });
        split.valid.push(Instance {
            user: seq.user,
            input: seq.events[..penult].to_vec(),
            target: seq.events[penult].0,
        });
        for &t in &purchases[..purchases.len() - 2] {
            if t == 0 {
                continue;
            }
            split.train.push(Instance {
                user: seq.user,
                input: seq.events[..t].to_vec(),
                target: seq.events[t].0,
            });
        }
    }
    split
}

/// Chunks instances into batches. Inputs are truncated to their most recent
/// `n_max` events; order is shuffled deterministically when a seed is given.
pub fn batch_sequences(
    instances: &[Instance],
    batch_size: usize,
    n_max: usize,
    shuffle_seed: Option<u64>,
) -> Vec<Batch> {
    assert!(n_max >= 1 && batch_size >= 1);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    if let Some(seed) = shuffle_seed {
        let mut r = rng::seeded(seed);
        rng::shuffle(&mut r, &mut order);
    }
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let mut batch = Batch {
            rows: Vec::with_capacity(chunk.len()),
            targets: Vec::with_capacity(chunk.len()),
            users: Vec::with_capacity(chunk.len()),
            n_max,
        };
        for &i in chunk {
            let inst = &instances[i];
            let start = inst.input.len().saturating_sub(n_max);
            batch.rows.push(inst.input[start..].to_vec());
            batch.targets.push(inst.target);
            batch.users.push(inst.user);
        }
        batches.push(batch);
    }
    batches
}

/// Row-stochastic item-to-item transition table over items `1..=size`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub size: usize,
    /// Row-major `[size * size]`; `probs[(i-1)*size + (j-1)]` is P(j | i).
    pub probs: Vec<f64>,
}

impl TransitionTable {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.probs.len() != self.size * self.size {
            return Err(DataError::InvalidTransitions("wrong length".into()));
        }
        for i in 0..self.size {
            let row = &self.probs[i * self.size..(i + 1) * self.size];
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(DataError::InvalidTransitions(alloc::format!("negative entry in row {i}")));
            }
            let s: f64 = row.iter().sum();
            if libm::fabs(s - 1.0) > 1e-9 {
                return Err(DataError::InvalidTransitions(alloc::format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    /// Deterministic cycle `i -> i + 1 (mod size)`.
    pub fn cycle(size: usize) -> Self {
        let mut probs = alloc::vec![0.0; size * size];
        for i in 0..size {
            probs[i * size + (i + 1) % size] = 1.0;
        }
        TransitionTable { size, probs }
    }

    /// Concentrated random chain: each item transitions to a few distinct
    /// successors with the given weight profile (e.g. `[0.8, 0.15, 0.05]`).
    pub fn concentrated(size: usize, weights: &[f64], seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let mut probs = alloc::vec![0.0; size * size];
        for i in 0..size {
            let mut succ: Vec<usize> = Vec::with_capacity(weights.len());
            while succ.len() < weights.len().min(size) {
                let c = rng::next_index(&mut r, size);
                if !succ.contains(&c) {
                    succ.push(c);
                }
            }
            for (k, &j) in succ.iter().enumerate() {
                probs[i * size + j] = weights[k];
            }
        }
        TransitionTable { size, probs }
    }

    /// Ring-local chain: item `i` transitions to the given forward ring
    /// offsets, with the weight-to-offset assignment drawn per item from
    /// the seed. Local structure survives the leave-one-out boundary (the
    /// split drops the hint burst before the held-out purchase), which
    /// makes this the planted chain of the learnability benchmark.
    pub fn ring_local(size: usize, offsets: &[usize], weights: &[f64], seed: u64) -> Self {
        assert_eq!(offsets.len(), weights.len());
        assert!(offsets.iter().all(|&o| o >= 1 && o < size));
        let mut r = rng::seeded(seed);
        let mut probs = alloc::vec![0.0; size * size];
        for i in 0..size {
            let mut perm: Vec<usize> = (0..offsets.len()).collect();
            rng::shuffle(&mut r, &mut perm);
            for (slot, &k) in perm.iter().enumerate() {
                let j = (i + offsets[k]) % size;
                probs[i * size + j] += weights[slot];
            }
        }
        TransitionTable { size, probs }
    }

    fn sample_next(&self, current: usize, r: &mut SeedRng) -> usize {
        let row = &self.probs[(current - 1) * self.size..current * self.size];
        rng::next_weighted(r, row) + 1
    }
}

/// Settings for the planted-structure generator.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub transitions: TransitionTable,
    /// Inclusive range of examination-burst sizes before each purchase.
    pub exam_per_purchase: (usize, usize),
    /// Inclusive range of total events per user.
    pub length_range: (usize, usize),
    pub seed: u64,
}

/// Ring distance within which examination bursts scatter around their
/// upcoming purchase.
const EXAM_HINT_RADIUS: i64 = 2;

/// Generates interactions with planted structure: each user's purchases walk
/// a first-order Markov chain over items, and each purchase is preceded by a
/// burst of examinations of items near the upcoming purchase (ring distance
/// at most [`EXAM_HINT_RADIUS`]). Timestamps increase strictly per user;
/// output is a pure function of the config.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<Interaction>, DataError> {
    cfg.transitions.validate()?;
    if cfg.transitions.size != cfg.items {
        return Err(DataError::InvalidTransitions(alloc::format!(
            "table covers {} items, dataset has {}",
            cfg.transitions.size,
            cfg.items
        )));
    }
    let (lo_exam, hi_exam) = cfg.exam_per_purchase;
    let (lo_len, hi_len) = cfg.length_range;
    assert!(lo_exam <= hi_exam && lo_len <= hi_len && lo_len >= 2);

    let mut out = Vec::new();
    for u in 0..cfg.users {
        let mut r = rng::seeded(rng::derive_seed(cfg.seed, u as u64, 0x5eed));
        let target_len = lo_len + rng::next_index(&mut r, hi_len - lo_len + 1);
        let mut next_purchase = 1 + rng::next_index(&mut r, cfg.items);
        let mut events: Vec<(usize, BehaviorType)> = Vec::with_capacity(target_len + hi_exam);
        while events.len() < target_len {
            let burst = lo_exam + rng::next_index(&mut r, hi_exam - lo_exam + 1);
            for _ in 0..burst {
                let width = 2 * EXAM_HINT_RADIUS as usize + 1;
                let offset = rng::next_index(&mut r, width) as i64 - EXAM_HINT_RADIUS;
                let exam = ((next_purchase as i64 - 1 + offset).rem_euclid(cfg.items as i64)) as usize + 1;
                events.push((exam, BehaviorType::Examination));
            }
            events.push((next_purchase, BehaviorType::Purchase));
            next_purchase = cfg.transitions.sample_next(next_purchase, &mut r);
        }
        events.truncate(target_len);
        for (t, (item, behavior)) in events.into_iter().enumerate() {
            out.push(Interaction {
                user: alloc::format!("u{u}"),
                item: alloc::format!("i{item}"),
                behavior,
                timestamp: t as i64,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
