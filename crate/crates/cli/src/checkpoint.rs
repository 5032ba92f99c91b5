//! Versioned checkpoint container.
//!
//! JSON with four top-level sections so alternate implementations can
//! cross-load:
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "epoch":  <best epoch>,
//!   "best_valid_hr10": <f64>,
//!   "rng_state": <u64 base seed of all derived random streams>,
//!   "item_count": <item-table rows including padding>,
//!   "config": { ...the resolved run config... },
//!   "params": [ {"name", "rows", "cols", "values": [row-major f64]} ... ]
//! }
//! ```
//!
//! Parameter order and names follow the model's fixed registration order;
//! loading validates every name and shape against a freshly shaped model.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bdpl_core::model::{BdplParams, Checkpoint, TrainConfig};

use crate::config::RunConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    epoch: usize,
    best_valid_hr10: f64,
    rng_state: u64,
    item_count: usize,
    config: RunConfig,
    params: Vec<ParamEntry>,
}

pub fn save(path: &Path, checkpoint: &Checkpoint, run_config: &RunConfig) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut params = Vec::new();
    checkpoint.params.visit(&mut |p| {
        params.push(ParamEntry {
            name: p.name.clone(),
            rows: p.rows,
            cols: p.cols,
            values: p.values.clone(),
        });
    });
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        epoch: checkpoint.epoch,
        best_valid_hr10: checkpoint.best_valid_hr10,
        rng_state: checkpoint.rng_state,
        item_count: checkpoint.params.item_count,
        config: run_config.clone(),
        params,
    };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text).with_context(|| format!("cannot write checkpoint {}", path.display()))?;
    Ok(())
}

pub struct Loaded {
    pub params: BdplParams,
    pub train_config: TrainConfig,
    pub run_config: RunConfig,
    pub epoch: usize,
    pub best_valid_hr10: f64,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).with_context(|| format!("corrupt checkpoint {}", path.display()))?;
    if file.format_version != FORMAT_VERSION {
        bail!(
            "checkpoint format version {} does not match supported version {FORMAT_VERSION}",
            file.format_version
        );
    }
    let train_config = file.config.train_config()?;
    let mut params = BdplParams::init(file.item_count, &train_config);
    let mut cursor = file.params.into_iter();
    let mut error: Option<String> = None;
    params.visit_mut(&mut |p| {
        if error.is_some() {
            return;
        }
        match cursor.next() {
            Some(entry) => {
                if entry.name != p.name || entry.rows != p.rows || entry.cols != p.cols {
                    error = Some(format!(
                        "checkpoint parameter `{}` ({}x{}) does not match expected `{}` ({}x{})",
                        entry.name, entry.rows, entry.cols, p.name, p.rows, p.cols
                    ));
                    return;
                }
                if entry.values.len() != p.values.len() {
                    error = Some(format!("parameter `{}` has wrong length", entry.name));
                    return;
                }
                p.values = entry.values;
            }
            None => error = Some("checkpoint has too few parameters".into()),
        }
    });
    if let Some(msg) = error {
        bail!("{msg}");
    }
    if cursor.next().is_some() {
        bail!("checkpoint has extra parameters beyond the model layout");
    }
    Ok(Loaded {
        params,
        train_config,
        run_config: file.config,
        epoch: file.epoch,
        best_valid_hr10: file.best_valid_hr10,
    })
}
