//! `mk report`: aggregate summaries from several run directories into one
//! table, pooling replicates per (algorithm, topology, optimizer) cell.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::artifacts::{self, mean, std_error};
use crate::config::{CliError, CliResult};

#[derive(clap::Args)]
pub struct ReportArgs {
    /// Run directories, each containing a summary.json from `mk run`.
    #[arg(value_name = "DIR", required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Also write the table as JSON.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct SummaryIn {
    algorithm: String,
    topology: String,
    optimizer: String,
    replicates: Vec<ReplicateIn>,
}

#[derive(Deserialize)]
struct ReplicateIn {
    test_acc: f64,
}

#[derive(Serialize)]
struct ReportRow {
    algorithm: String,
    topology: String,
    optimizer: String,
    replicates: usize,
    mean_test_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    std_error: Option<f64>,
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<()> {
    let mut cells: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for dir in &args.runs {
        let path = dir.join("summary.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("runs: cannot read {}: {e}", path.display())))?;
        let summary: SummaryIn = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("runs: {} is not a run summary: {e}", path.display())))?;
        let key = (summary.algorithm, summary.topology, summary.optimizer);
        cells.entry(key).or_default().extend(summary.replicates.iter().map(|r| r.test_acc));
    }

    let rows: Vec<ReportRow> = cells
        .into_iter()
        .map(|((algorithm, topology, optimizer), accs)| ReportRow {
            algorithm,
            topology,
            optimizer,
            replicates: accs.len(),
            mean_test_acc: mean(&accs),
            std_error: std_error(&accs),
        })
        .collect();

    println!("{:<10} {:<10} {:<9} {:>2}  test_acc", "algorithm", "topology", "optimizer", "n");
    for row in &rows {
        let accs_repr = match row.std_error {
            Some(se) => format!("{:.4} ± {:.4}", row.mean_test_acc, se),
            None => format!("{:.4}", row.mean_test_acc),
        };
        println!(
            "{:<10} {:<10} {:<9} {:>2}  {accs_repr}",
            row.algorithm, row.topology, row.optimizer, row.replicates
        );
    }

    if let Some(path) = &args.out {
        artifacts::write_json(
            path,
            &serde_json::json!({
                "version_tag": mk_core::VERSION_TAG,
                "sources": args.runs,
                "rows": rows,
            }),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_cells_match_hand_stats() {
        let accs = [0.5, 0.52, 0.54];
        assert!((mean(&accs) - 0.52).abs() < 1e-15);
        let se = std_error(&accs).unwrap();
        assert!((se - (0.0004f64 / 3.0).sqrt()).abs() < 1e-12, "{se}");
    }
}
