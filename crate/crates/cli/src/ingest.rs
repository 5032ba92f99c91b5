//! Raw interaction file loading.

use std::path::Path;

use anyhow::{Context, Result};

use bdpl_core::data::{parse_interactions, BehaviorMap, Interaction};

/// Reads a tab-separated `user item behavior timestamp` file. With
/// `BDPL_NUM_WORKERS > 1` the line chunks parse on worker threads and merge
/// in file order, so the result is identical to a sequential parse.
pub fn load_interactions(path: &Path, behavior_map: &BehaviorMap) -> Result<Vec<Interaction>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read interactions from {}", path.display()))?;
    let workers = std::env::var("BDPL_NUM_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(1)
        .max(1);
    if workers == 1 {
        return parse_interactions(&text, behavior_map)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()));
    }

    let lines: Vec<&str> = text.lines().collect();
    let chunk_size = lines.len().div_ceil(workers);
    let chunks: Vec<(usize, &[&str])> = lines
        .chunks(chunk_size.max(1))
        .enumerate()
        .map(|(i, c)| (i * chunk_size.max(1), c))
        .collect();
    let results: Vec<Result<Vec<Interaction>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|&(offset, chunk)| {
                scope.spawn(move || {
                    let joined = chunk.join("\n");
                    parse_interactions(&joined, behavior_map).map_err(|e| {
                        // re-localize the line number to the whole file
                        anyhow::anyhow!("{}: {}", path.display(), relocate_line(e, offset))
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("parser thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(lines.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn relocate_line(e: bdpl_core::data::DataError, offset: usize) -> String {
    use bdpl_core::data::DataError;
    match e {
        DataError::Parse { line, msg } => format!("parse error on line {}: {msg}", line + offset),
        DataError::UnknownBehavior { line, label } => {
            format!("unknown behavior label `{label}` on line {}", line + offset)
        }
        other => format!("{other}"),
    }
}

/// Writes interactions in the canonical raw format.
pub fn write_interactions(path: &Path, rows: &[Interaction]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = String::new();
    for r in rows {
        text.push_str(&format!("{}\t{}\t{}\t{}\n", r.user, r.item, r.behavior.label(), r.timestamp));
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
