//! Run configuration: a single human-editable JSON document covering data
//! paths, model shape, training hyperparameters, and synthetic-data
//! settings. Unknown keys are rejected; every field has a documented
//! default. The fully resolved config is echoed into the output directory
//! by every command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bdpl_core::data::{BehaviorMap, BehaviorType, SyntheticConfig, TransitionTable};
use bdpl_core::graph_encoder::CascadeDirection;
use bdpl_core::model::{AblationFlags, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub synthetic: SyntheticSection,
    pub output_dir: PathBuf,
    /// Report zero wall-clock seconds everywhere, making telemetry and
    /// metric files byte-reproducible across runs.
    pub fixed_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            synthetic: SyntheticSection::default(),
            output_dir: PathBuf::from("out"),
            fixed_clock: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Tab-separated `user item behavior timestamp` rows.
    pub raw_path: PathBuf,
    /// Processed-split cache; defaults to `<output_dir>/cache.jsonl`.
    pub cache_path: Option<PathBuf>,
    /// Raw behavior label -> `examination` | `purchase`.
    pub behavior_map: BTreeMap<String, String>,
    pub min_item_interactions: usize,
    pub min_user_interactions: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let mut behavior_map = BTreeMap::new();
        behavior_map.insert("examination".into(), "examination".into());
        behavior_map.insert("purchase".into(), "purchase".into());
        DataSection {
            raw_path: PathBuf::from("data/raw.tsv"),
            cache_path: None,
            behavior_map,
            min_item_interactions: 0,
            min_user_interactions: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d: usize,
    pub layers: usize,
    pub k_sab: usize,
    pub k_scb: usize,
    pub heads: usize,
    /// `tar2aux` (purchase pass first) or `aux2tar`.
    pub cascade_direction: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d: 64,
            layers: 1,
            k_sab: 1,
            k_scb: 1,
            heads: 1,
            cascade_direction: "tar2aux".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub n_max: usize,
    pub learning_rate: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Ablation flags: any of `no_bge`, `no_spl`, `no_lpl`, `no_cl_short`,
    /// `no_cl_long`.
    pub ablation: Vec<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 128,
            dropout_rate: 0.5,
            n_max: 50,
            learning_rate: 1e-3,
            lambda1: 0.1,
            lambda2: 0.1,
            patience: 10,
            max_epochs: 200,
            seed: 0,
            ablation: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub users: usize,
    pub items: usize,
    /// Inclusive burst-size range of examinations before each purchase.
    pub exam_per_purchase: [usize; 2],
    /// Inclusive range of total events per user.
    pub length_range: [usize; 2],
    /// Successor-probability profile of the planted purchase chain.
    pub chain_weights: Vec<f64>,
    /// Forward ring offsets the chain can jump to; the weight-to-offset
    /// assignment is seeded per item.
    pub chain_offsets: Vec<usize>,
    pub chain_seed: u64,
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            users: 300,
            items: 200,
            exam_per_purchase: [3, 8],
            length_range: [30, 50],
            chain_weights: vec![0.8, 0.15, 0.05],
            chain_offsets: vec![1, 2, 3],
            chain_seed: 99,
            seed: 424242,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(config)
    }

    pub fn cache_path(&self) -> PathBuf {
        self.data
            .cache_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache.jsonl"))
    }

    pub fn behavior_map(&self) -> Result<BehaviorMap> {
        let mut map = BehaviorMap::default();
        for (raw, canonical) in &self.data.behavior_map {
            let b = match canonical.as_str() {
                "examination" => BehaviorType::Examination,
                "purchase" => BehaviorType::Purchase,
                other => bail!("behavior_map value `{other}` for `{raw}` must be `examination` or `purchase`"),
            };
            map.insert(raw, b);
        }
        Ok(map)
    }

    pub fn cascade_direction(&self) -> Result<CascadeDirection> {
        match self.model.cascade_direction.as_str() {
            "tar2aux" => Ok(CascadeDirection::Tar2Aux),
            "aux2tar" => Ok(CascadeDirection::Aux2Tar),
            other => bail!("cascade_direction `{other}` must be `tar2aux` or `aux2tar`"),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut ablation = AblationFlags::default();
        for flag in &self.train.ablation {
            if !ablation.set(flag) {
                bail!(
                    "unknown ablation flag `{flag}` (expected one of {:?})",
                    AblationFlags::NAMES
                );
            }
        }
        let config = TrainConfig {
            d: self.model.d,
            batch_size: self.train.batch_size,
            dropout_rate: self.train.dropout_rate,
            n_max: self.train.n_max,
            learning_rate: self.train.learning_rate,
            layers: self.model.layers,
            k_sab: self.model.k_sab,
            k_scb: self.model.k_scb,
            heads: self.model.heads,
            lambda1: self.train.lambda1,
            lambda2: self.train.lambda2,
            patience: self.train.patience,
            max_epochs: self.train.max_epochs,
            seed: self.train.seed,
            ablation,
            cascade_direction: self.cascade_direction()?,
        };
        config.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(config)
    }

    pub fn synthetic_config(&self) -> Result<SyntheticConfig> {
        let s = &self.synthetic;
        if s.chain_weights.is_empty() || s.chain_weights.len() != s.chain_offsets.len() {
            bail!("chain_weights and chain_offsets must be non-empty and the same length");
        }
        let sum: f64 = s.chain_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            bail!("chain_weights must sum to 1, got {sum}");
        }
        Ok(SyntheticConfig {
            users: s.users,
            items: s.items,
            transitions: TransitionTable::ring_local(s.items, &s.chain_offsets, &s.chain_weights, s.chain_seed),
            exam_per_purchase: (s.exam_per_purchase[0], s.exam_per_purchase[1]),
            length_range: (s.length_range[0], s.length_range[1]),
            seed: s.seed,
        })
    }

    /// Writes the fully resolved config into the output directory so a run
    /// can be reproduced from its artifacts alone.
    pub fn echo(&self, output_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(output_dir)?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(output_dir.join("config.echo.json"), text + "\n")?;
        Ok(())
    }
}

/// Per-command flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub cascade_direction: Option<String>,
    /// May repeat: --ablate no_bge --ablate no_cl_long
    #[arg(long = "ablate")]
    pub ablate: Vec<String>,
    /// Force zero wall-clock readings for byte-reproducible outputs.
    #[arg(long)]
    pub fixed_clock: bool,
    /// Redirect all outputs (echo, cache default, checkpoints, telemetry).
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        if let Some(seed) = self.seed {
            config.train.seed = seed;
        }
        if let Some(max_epochs) = self.max_epochs {
            config.train.max_epochs = max_epochs;
        }
        if let Some(l1) = self.lambda1 {
            config.train.lambda1 = l1;
        }
        if let Some(l2) = self.lambda2 {
            config.train.lambda2 = l2;
        }
        if let Some(layers) = self.layers {
            config.model.layers = layers;
        }
        if let Some(dir) = &self.cascade_direction {
            config.model.cascade_direction = dir.clone();
        }
        for flag in &self.ablate {
            if !config.train.ablation.contains(flag) {
                config.train.ablation.push(flag.clone());
            }
        }
        if self.fixed_clock {
            config.fixed_clock = true;
        }
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
    }
}
