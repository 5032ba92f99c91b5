//! Processed-split cache: JSON lines with a schema version.
//!
//! Layout (one JSON object per line):
//! 1. header: `schema_version`, provenance (raw path, byte size,
//!    thresholds), counts, and split sizes
//! 2. `{"items": [...]}` decode table (index 0 is the padding slot)
//! 3. `{"users": [...]}` decode table
//! 4. one instance per remaining line:
//!    `{"split": "train", "user": 3, "input": [[item, b], ...], "target": 9}`
//!    with behavior `b` encoded 0 = examination, 1 = purchase.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bdpl_core::data::{BehaviorType, DatasetSplit, Instance, Preprocessed};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CacheHeader {
    pub schema_version: u32,
    pub raw_path: String,
    pub raw_bytes: u64,
    pub min_item_interactions: usize,
    pub min_user_interactions: usize,
    pub item_count: usize,
    pub user_count: usize,
    pub examinations: usize,
    pub purchases: usize,
    pub dropped_users: usize,
    pub train_instances: usize,
    pub valid_instances: usize,
    pub test_instances: usize,
    /// Mean events per retained user.
    pub avg_length: f64,
}

#[derive(Serialize, Deserialize)]
struct ItemsLine {
    items: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct UsersLine {
    users: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct InstanceLine {
    split: String,
    user: usize,
    input: Vec<(usize, u8)>,
    target: usize,
}

pub struct Cache {
    pub header: CacheHeader,
    pub items: Vec<String>,
    pub users: Vec<String>,
    pub split: DatasetSplit,
}

fn behavior_code(b: BehaviorType) -> u8 {
    match b {
        BehaviorType::Examination => 0,
        BehaviorType::Purchase => 1,
    }
}

fn behavior_from(code: u8) -> Result<BehaviorType> {
    match code {
        0 => Ok(BehaviorType::Examination),
        1 => Ok(BehaviorType::Purchase),
        other => bail!("invalid behavior code {other} in cache"),
    }
}

pub fn write_cache(
    path: &Path,
    header: &CacheHeader,
    data: &Preprocessed,
    split: &DatasetSplit,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    out.push_str(&serde_json::to_string(header)?);
    out.push('\n');
    out.push_str(&serde_json::to_string(&ItemsLine { items: data.items.clone() })?);
    out.push('\n');
    out.push_str(&serde_json::to_string(&UsersLine { users: data.users.clone() })?);
    out.push('\n');
    for (name, instances) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        for inst in instances.iter() {
            let line = InstanceLine {
                split: name.into(),
                user: inst.user,
                input: inst.input.iter().map(|&(i, b)| (i, behavior_code(b))).collect(),
                target: inst.target,
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
    }
    std::fs::write(path, out).with_context(|| format!("cannot write cache {}", path.display()))?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<Cache> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read cache {}; run `bdpl preprocess` first", path.display()))?;
    let mut lines = text.lines();
    let header: CacheHeader = serde_json::from_str(lines.next().context("empty cache file")?)
        .context("corrupt cache header")?;
    if header.schema_version != SCHEMA_VERSION {
        bail!(
            "cache schema version {} does not match supported version {SCHEMA_VERSION}; re-run `bdpl preprocess`",
            header.schema_version
        );
    }
    let items: ItemsLine =
        serde_json::from_str(lines.next().context("cache missing items table")?).context("corrupt items table")?;
    let users: UsersLine =
        serde_json::from_str(lines.next().context("cache missing users table")?).context("corrupt users table")?;

    let mut split = DatasetSplit {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        item_count: header.item_count,
        user_count: header.user_count,
        dropped_users: header.dropped_users,
    };
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: InstanceLine = serde_json::from_str(line)
            .with_context(|| format!("corrupt cache instance on line {}", i + 4))?;
        let mut input = Vec::with_capacity(row.input.len());
        for (item, code) in row.input {
            input.push((item, behavior_from(code)?));
        }
        let inst = Instance { user: row.user, input, target: row.target };
        match row.split.as_str() {
            "train" => split.train.push(inst),
            "valid" => split.valid.push(inst),
            "test" => split.test.push(inst),
            other => bail!("unknown split `{other}` in cache"),
        }
    }
    Ok(Cache { header, items: items.items, users: users.users, split })
}
