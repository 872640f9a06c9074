//! Shared artifact plumbing: JSON writers, provenance values, and the
//! summary statistics reported over replicates.

use std::path::Path;

use serde::Serialize;

use crate::config::{CliError, CliResult, ExperimentConfig};

/// The config as embedded in summaries and record CSVs. The output
/// directory is dropped so re-running an emitted config into a different
/// directory reproduces those artifacts byte for byte; everything else
/// (seed, version tag, resolved step budget) stays.
pub fn provenance_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut p = cfg.clone();
    p.out_dir = None;
    p
}

pub fn provenance_value(cfg: &ExperimentConfig) -> CliResult<serde_json::Value> {
    serde_json::to_value(provenance_config(cfg))
        .map_err(|e| CliError::Runtime(format!("cannot serialize provenance: {e}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean; `None` below two samples (the summary omits
/// the column rather than printing 0).
pub fn std_error(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let var = xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    Some((var / xs.len() as f64).sqrt())
}

/// `mean ± stderr` with the error half omitted under two samples.
pub fn format_acc(xs: &[f64]) -> String {
    match std_error(xs) {
        Some(se) => format!("{:.4} ± {:.4}", mean(xs), se),
        None => format!("{:.4}", mean(xs)),
    }
}
