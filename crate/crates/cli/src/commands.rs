//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use bdpl_core::data::{generate_synthetic, preprocess, split_leave_one_out, BehaviorType, DatasetSplit};
use bdpl_core::model::{evaluate, fit, TrainConfig};

use crate::cache::{self, Cache, CacheHeader};
use crate::checkpoint;
use crate::clock;
use crate::config::RunConfig;
use crate::ingest;
use crate::report::{self, VariantRow};

/// Generates the planted-structure synthetic dataset and writes it in the
/// canonical raw format at `data.raw_path`.
pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    config.echo(&config.output_dir)?;
    let synth = config.synthetic_config()?;
    let rows = generate_synthetic(&synth).map_err(|e| anyhow::anyhow!("{e}"))?;
    ingest::write_interactions(&config.data.raw_path, &rows)?;
    let purchases = rows.iter().filter(|r| r.behavior == BehaviorType::Purchase).count();
    println!(
        "wrote {} events ({} purchases) for {} users over {} items to {}",
        rows.len(),
        purchases,
        synth.users,
        synth.items,
        config.data.raw_path.display()
    );
    Ok(())
}

/// Loads raw interactions, preprocesses, splits, and caches the result.
/// When an up-to-date cache already exists (same raw file and thresholds)
/// it is reused as-is.
pub fn cmd_preprocess(config: &RunConfig) -> Result<()> {
    config.echo(&config.output_dir)?;
    let raw_path = &config.data.raw_path;
    let raw_bytes = std::fs::metadata(raw_path)
        .with_context(|| format!("cannot read raw data at {}", raw_path.display()))?
        .len();
    let cache_path = config.cache_path();

    if let Ok(existing) = cache::read_cache(&cache_path) {
        let h = &existing.header;
        if h.raw_path == raw_path.display().to_string()
            && h.raw_bytes == raw_bytes
            && h.min_item_interactions == config.data.min_item_interactions
            && h.min_user_interactions == config.data.min_user_interactions
        {
            println!("cache {} is up to date, reusing it", cache_path.display());
            print_summary(h);
            return Ok(());
        }
    }

    let behavior_map = config.behavior_map()?;
    let rows = ingest::load_interactions(raw_path, &behavior_map)?;
    let pre = preprocess(&rows, config.data.min_item_interactions, config.data.min_user_interactions)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let split = split_leave_one_out(&pre);

    let mut examinations = 0usize;
    let mut purchases = 0usize;
    let mut events = 0usize;
    for seq in &pre.sequences {
        for &(_, b) in &seq.events {
            events += 1;
            match b {
                BehaviorType::Examination => examinations += 1,
                BehaviorType::Purchase => purchases += 1,
            }
        }
    }
    let header = CacheHeader {
        schema_version: cache::SCHEMA_VERSION,
        raw_path: raw_path.display().to_string(),
        raw_bytes,
        min_item_interactions: config.data.min_item_interactions,
        min_user_interactions: config.data.min_user_interactions,
        item_count: split.item_count,
        user_count: split.user_count,
        examinations,
        purchases,
        dropped_users: split.dropped_users,
        train_instances: split.train.len(),
        valid_instances: split.valid.len(),
        test_instances: split.test.len(),
        avg_length: events as f64 / pre.user_count() as f64,
    };
    cache::write_cache(&cache_path, &header, &pre, &split)?;
    println!("cache written to {}", cache_path.display());
    print_summary(&header);
    Ok(())
}

fn print_summary(h: &CacheHeader) {
    println!(
        "{:>8} {:>8} {:>14} {:>10} {:>12}",
        "#Users", "#Items", "#Examinations", "#Purchases", "Avg. length"
    );
    println!(
        "{:>8} {:>8} {:>14} {:>10} {:>12.2}",
        h.user_count,
        h.item_count - 1,
        h.examinations,
        h.purchases,
        h.avg_length
    );
    println!(
        "splits: {} train / {} valid / {} test instances ({} users dropped)",
        h.train_instances, h.valid_instances, h.test_instances, h.dropped_users
    );
}

fn load_cache_for(config: &RunConfig) -> Result<Cache> {
    cache::read_cache(&config.cache_path())
}

/// Trains on the cached split and writes the best checkpoint plus
/// per-epoch telemetry.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    config.echo(&config.output_dir)?;
    let cache = load_cache_for(config)?;
    let train_config = config.train_config()?;
    let mut clk = clock::for_config(config.fixed_clock);
    let result = fit(&cache.split, &train_config, clk.as_mut()).map_err(|e| anyhow::anyhow!("{e}"))?;

    let checkpoint_path = config.output_dir.join("checkpoint.json");
    checkpoint::save(&checkpoint_path, &result.checkpoint, config)?;
    let telemetry_path = config.output_dir.join("telemetry.csv");
    report::write_telemetry(&telemetry_path, &result.telemetry)?;

    println!(
        "trained {} epochs; best validation HR@10 {:.4} at epoch {}",
        result.telemetry.len(),
        result.checkpoint.best_valid_hr10.max(0.0),
        result.checkpoint.epoch
    );
    println!("checkpoint: {}", checkpoint_path.display());
    println!("telemetry:  {}", telemetry_path.display());
    Ok(())
}

/// Evaluates a checkpoint on one cached split, printing the aligned table
/// and writing the metrics JSON.
pub fn cmd_evaluate(config: &RunConfig, checkpoint_path: Option<&Path>, split_name: &str) -> Result<()> {
    config.echo(&config.output_dir)?;
    let cache = load_cache_for(config)?;
    let default_path = config.output_dir.join("checkpoint.json");
    let path = checkpoint_path.unwrap_or(&default_path);
    let loaded = checkpoint::load(path)?;

    let instances = match split_name {
        "train" => &cache.split.train,
        "valid" => &cache.split.valid,
        "test" => &cache.split.test,
        other => bail!("unknown split `{other}` (expected train, valid, or test)"),
    };
    let mut clk = clock::for_config(config.fixed_clock);
    let start = clk.now_seconds();
    let mut report = evaluate(&loaded.params, &loaded.train_config, instances, split_name, 0.0)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    report.seconds = clk.now_seconds() - start;

    print!("{}", report::metrics_table(&report));
    let json_path = config.output_dir.join(format!("metrics_{split_name}.json"));
    report::write_metrics(&json_path, &report)?;
    println!("metrics json: {}", json_path.display());
    Ok(())
}

/// Variant set of an experiment suite.
fn suite_variants(suite: &str, base: &TrainConfig) -> Result<Vec<(String, TrainConfig)>> {
    match suite {
        "ablation" => {
            let mut variants = vec![("full".to_string(), base.clone())];
            for flag in bdpl_core::model::AblationFlags::NAMES {
                let mut cfg = base.clone();
                assert!(cfg.ablation.set(flag));
                variants.push((flag.to_string(), cfg));
            }
            Ok(variants)
        }
        "cascade" => {
            use bdpl_core::graph_encoder::CascadeDirection;
            let mut tar = base.clone();
            tar.cascade_direction = CascadeDirection::Tar2Aux;
            let mut aux = base.clone();
            aux.cascade_direction = CascadeDirection::Aux2Tar;
            Ok(vec![("tar2aux".into(), tar), ("aux2tar".into(), aux)])
        }
        other => bail!("unknown suite `{other}` (expected ablation or cascade)"),
    }
}

/// Trains every suite variant under the shared seed and compares them on
/// the test split. Failed variants are marked and the command exits
/// non-zero, but the table always prints.
pub fn cmd_experiment(config: &RunConfig, suite: &str) -> Result<()> {
    config.echo(&config.output_dir)?;
    let cache = load_cache_for(config)?;
    let base = config.train_config()?;
    let variants = suite_variants(suite, &base)?;

    let mut rows = Vec::new();
    for (name, variant) in &variants {
        println!("training variant `{name}` ...");
        let row = run_variant(name, variant, &cache.split, config.fixed_clock);
        if let Some(err) = &row.error {
            eprintln!("variant `{name}` failed: {err}");
        }
        rows.push(row);
    }

    let table = report::experiment_table(&rows);
    print!("{table}");
    std::fs::create_dir_all(&config.output_dir)?;
    let table_path = config.output_dir.join(format!("experiment_{suite}.txt"));
    std::fs::write(&table_path, &table)?;
    println!("table: {}", table_path.display());

    let failures: Vec<&str> = rows.iter().filter(|r| r.error.is_some()).map(|r| r.name.as_str()).collect();
    if !failures.is_empty() {
        bail!("{} of {} variants failed: {}", failures.len(), rows.len(), failures.join(", "));
    }
    Ok(())
}

fn run_variant(name: &str, config: &TrainConfig, split: &DatasetSplit, fixed_clock: bool) -> VariantRow {
    let mut clk = clock::for_config(fixed_clock);
    let outcome = fit(split, config, clk.as_mut()).and_then(|result| {
        evaluate(&result.checkpoint.params, config, &split.test, "test", 0.0)
    });
    match outcome {
        Ok(report) => VariantRow {
            name: name.into(),
            hr10: Some(report.hr_at(10)),
            ndcg10: Some(report.ndcg_at(10)),
            error: None,
        },
        Err(e) => VariantRow { name: name.into(), hr10: None, ndcg10: None, error: Some(format!("{e}")) },
    }
}

/// Re-exported for integration tests that need paths.
pub fn default_checkpoint_path(config: &RunConfig) -> PathBuf {
    config.output_dir.join("checkpoint.json")
}
