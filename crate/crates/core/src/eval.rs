//! Full-ranking evaluation: HR@N and NDCG@N over the entire item set.
//!
//! The target is ranked against every real item with no candidate sampling
//! and no filtering of previously interacted items. Ties break by item
//! index ascending, so evaluation is deterministic.

use alloc::string::String;

use crate::numerics::fmath;

/// Metric cutoffs reported everywhere.
pub const CUTOFFS: [usize; 3] = [5, 10, 20];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    TargetOutOfRange { target: usize, items: usize },
    EmptyResults,
}

impl core::fmt::Display for EvalError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EvalError::TargetOutOfRange { target, items } => {
                write!(f, "target item {target} outside 1..={items}")
            }
            EvalError::EmptyResults => write!(f, "no ranking results to aggregate"),
        }
    }
}

impl core::error::Error for EvalError {}

/// Rank of one instance's target among all items (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankingResult {
    pub instance: usize,
    pub rank: usize,
}

impl RankingResult {
    pub fn hit(&self, n: usize) -> bool {
        self.rank <= n
    }

    /// Single-target NDCG contribution: `1/log2(rank + 1)` inside the
    /// cutoff, zero outside.
    pub fn ndcg(&self, n: usize) -> f64 {
        if self.rank <= n {
            1.0 / fmath::log2(self.rank as f64 + 1.0)
        } else {
            0.0
        }
    }
}

/// Per-split metric summary. `hr[k]` / `ndcg[k]` follow [`CUTOFFS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub split: String,
    pub instances: usize,
    pub hr: [f64; 3],
    pub ndcg: [f64; 3],
    pub seconds: f64,
}

impl MetricsReport {
    pub fn hr_at(&self, n: usize) -> f64 {
        self.hr[cutoff_slot(n)]
    }

    pub fn ndcg_at(&self, n: usize) -> f64 {
        self.ndcg[cutoff_slot(n)]
    }
}

fn cutoff_slot(n: usize) -> usize {
    CUTOFFS.iter().position(|&c| c == n).expect("cutoff must be one of 5, 10, 20")
}

/// Rank of `target` (1-based item index) in `scores`, where `scores[j]`
/// belongs to item `j + 1`. Rank is one plus the number of strictly greater
/// scores; ties break by item index ascending.
pub fn rank_target(scores: &[f64], target: usize) -> Result<usize, EvalError> {
    if target == 0 || target > scores.len() {
        return Err(EvalError::TargetOutOfRange { target, items: scores.len() });
    }
    let ts = scores[target - 1];
    let mut rank = 1;
    for (j, &s) in scores.iter().enumerate() {
        if s > ts || (s == ts && j + 1 < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Means of hit and NDCG contributions across instances.
pub fn compute_metrics(results: &[RankingResult], split: &str, seconds: f64) -> Result<MetricsReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let n = results.len() as f64;
    let mut hr = [0.0; 3];
    let mut ndcg = [0.0; 3];
    for r in results {
        for (k, &c) in CUTOFFS.iter().enumerate() {
            if r.hit(c) {
                hr[k] += 1.0;
            }
            ndcg[k] += r.ndcg(c);
        }
    }
    for k in 0..3 {
        hr[k] /= n;
        ndcg[k] /= n;
    }
    Ok(MetricsReport {
        split: split.into(),
        instances: results.len(),
        hr,
        ndcg,
        seconds,
    })
}
