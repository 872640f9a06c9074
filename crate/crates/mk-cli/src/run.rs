//! `mk run`: train the configured algorithm across replicates, writing
//! record CSVs, checkpoints, a summary, and timing, all under one output
//! directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use mk_core::data::cifar10_normalization;
use mk_core::train::write_records_csv;
use mk_core::{
    run_single, save_checkpoint, train_distilled, train_ensemble, Algorithm, CheckpointMeta,
    ModelParams, NetworkSpec, Normalization, RunRecord,
};

use crate::artifacts::{self, format_acc, mean, std_error};
use crate::config::{build_config, resolve, CliError, CliResult, DatasetSel, Overrides, Resolved};

#[derive(Debug, Serialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_acc: Option<f64>,
    pub test_acc: f64,
    /// Distillation only: the teacher ensemble's own test accuracy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher_test_acc: Option<f64>,
}

/// The `summary.json` payload. Embeds the directory-independent provenance
/// config, so re-running an emitted config elsewhere reproduces this file
/// byte for byte.
#[derive(Serialize)]
pub struct Summary {
    pub algorithm: String,
    pub topology: String,
    pub optimizer: String,
    pub mean_test_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    pub replicates: Vec<ReplicateRow>,
    pub config: crate::config::ExperimentConfig,
}

pub fn out_dir(ov: &Overrides) -> PathBuf {
    ov.out.clone().unwrap_or_else(|| PathBuf::from("mk-out"))
}

pub fn cmd_run(ov: &Overrides) -> CliResult<()> {
    let cfg = build_config(ov)?;
    if cfg.grid {
        return Err(CliError::Config("grid: config requests a grid sweep; use `mk tune`".into()));
    }
    let out = out_dir(ov);
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let resolved = resolve(cfg, &out)?;
    artifacts::write_json(&out.join("config.json"), &resolved.config)?;
    let norm = normalization_for(&resolved)?;

    let start = Instant::now();
    let mut rows = Vec::with_capacity(resolved.config.replicates);
    let mut timing = Vec::new();
    for r in 0..resolved.config.replicates {
        let t0 = Instant::now();
        let row = run_replicate(&resolved, r, &out, norm.as_ref(), ov.selection_log)?;
        timing.push(serde_json::json!({
            "replicate": r,
            "wall_seconds": t0.elapsed().as_secs_f64(),
        }));
        println!(
            "replicate {r}: test_acc {:.4}{}",
            row.test_acc,
            row.teacher_test_acc.map(|t| format!(" (teacher {t:.4})")).unwrap_or_default()
        );
        rows.push(row);
    }

    let accs: Vec<f64> = rows.iter().map(|r| r.test_acc).collect();
    let summary = Summary {
        algorithm: resolved.config.algorithm.to_string(),
        topology: resolved.config.topology.label(),
        optimizer: resolved.config.optimizer.to_string(),
        mean_test_acc: mean(&accs),
        std_error: std_error(&accs),
        replicates: rows,
        config: artifacts::provenance_config(&resolved.config),
    };
    artifacts::write_json(&out.join("summary.json"), &summary)?;
    artifacts::write_json(
        &out.join("timing.json"),
        &serde_json::json!({ "total_seconds": start.elapsed().as_secs_f64(), "replicates": timing }),
    )?;

    println!(
        "{} / {} / {}: test_acc {}",
        summary.algorithm,
        summary.topology,
        summary.optimizer,
        format_acc(&accs)
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

/// CIFAR checkpoints carry the standardization their weights assume;
/// synthetic datasets are generated already clean.
pub(crate) fn normalization_for(resolved: &Resolved) -> CliResult<Option<Normalization>> {
    match resolved.config.dataset {
        DatasetSel::Cifar10 => {
            let dir = resolved.data_dir.as_ref().expect("cifar resolution records its directory");
            Ok(Some(cifar10_normalization(dir)?))
        }
        DatasetSel::Blobs => Ok(None),
    }
}

pub(crate) fn checkpoint_meta(
    resolved: &Resolved,
    seed: u64,
    norm: Option<&Normalization>,
) -> CliResult<CheckpointMeta> {
    Ok(CheckpointMeta {
        version_tag: mk_core::VERSION_TAG.to_string(),
        algorithm: resolved.config.algorithm.to_string(),
        seed,
        config: serde_json::to_value(&resolved.config)
            .map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))?,
        normalization: norm.cloned(),
    })
}

pub(crate) fn replicate_provenance(resolved: &Resolved, r: usize, seed: u64, member: Option<usize>) -> CliResult<serde_json::Value> {
    let mut v = serde_json::json!({
        "config": artifacts::provenance_value(&resolved.config)?,
        "replicate": r,
        "seed": seed,
    });
    if let Some(m) = member {
        v["member"] = serde_json::json!(m);
    }
    Ok(v)
}

pub(crate) fn write_run_artifacts(
    resolved: &Resolved,
    out: &Path,
    records: &[RunRecord],
    model: &ModelParams,
    r: usize,
    seed: u64,
    norm: Option<&Normalization>,
) -> CliResult<()> {
    write_records_csv(
        &out.join(format!("records-r{r}.csv")),
        records,
        &replicate_provenance(resolved, r, seed, None)?,
    )?;
    save_checkpoint(&out.join(format!("model-r{r}.ckpt")), model, &checkpoint_meta(resolved, seed, norm)?)?;
    Ok(())
}

fn run_replicate(
    resolved: &Resolved,
    r: usize,
    out: &Path,
    norm: Option<&Normalization>,
    selection_log: bool,
) -> CliResult<ReplicateRow> {
    let mut tc = resolved.train_config(r);
    let seed = tc.seed;
    match resolved.config.algorithm {
        Algorithm::Ensemble => {
            let ens = train_ensemble(&tc, &resolved.data)?;
            for (m, recs) in ens.member_records.iter().enumerate() {
                write_records_csv(
                    &out.join(format!("records-r{r}-m{m}.csv")),
                    recs,
                    &replicate_provenance(resolved, r, seed, Some(m))?,
                )?;
            }
            let meta = checkpoint_meta(resolved, seed, norm)?;
            for (m, member) in ens.members().iter().enumerate() {
                save_checkpoint(&out.join(format!("model-r{r}-m{m}.ckpt")), member, &meta)?;
            }
            Ok(ReplicateRow {
                replicate: r,
                seed,
                val_acc: ens.val_acc,
                test_acc: require_test(ens.test_acc)?,
                teacher_test_acc: None,
            })
        }
        Algorithm::Distilled => {
            // The teacher is an ensemble trained at the same rate and seed;
            // the student is a standard-size net fit to its soft labels.
            let mut teacher_tc = tc.clone();
            teacher_tc.algorithm = Algorithm::Ensemble;
            let teachers = train_ensemble(&teacher_tc, &resolved.data)?;
            for (m, recs) in teachers.member_records.iter().enumerate() {
                write_records_csv(
                    &out.join(format!("teacher-r{r}-m{m}.csv")),
                    recs,
                    &replicate_provenance(resolved, r, seed, Some(m))?,
                )?;
            }
            let s = &resolved.spec;
            tc.spec = NetworkSpec::new(s.input_dim, s.hidden_dims.clone(), s.output_dim, 1);
            let run = train_distilled(&tc, &resolved.data, &teachers.predictor)?;
            write_run_artifacts(resolved, out, &run.records, &run.model, r, seed, norm)?;
            Ok(ReplicateRow {
                replicate: r,
                seed,
                val_acc: run.final_val_acc(),
                test_acc: require_test(run.final_test_acc())?,
                teacher_test_acc: teachers.test_acc,
            })
        }
        _ => {
            let sel_path = out.join(format!("selection-r{r}.csv"));
            if selection_log && resolved.config.algorithm == Algorithm::Subset {
                tc.selection_log = Some(sel_path.clone());
            }
            let run = run_single(&tc, &resolved.data)?;
            if tc.selection_log.is_some() {
                prepend_provenance(&sel_path, &replicate_provenance(resolved, r, seed, None)?)?;
            }
            write_run_artifacts(resolved, out, &run.records, &run.model, r, seed, norm)?;
            Ok(ReplicateRow {
                replicate: r,
                seed,
                val_acc: run.final_val_acc(),
                test_acc: require_test(run.final_test_acc())?,
                teacher_test_acc: None,
            })
        }
    }
}

pub(crate) fn require_test(acc: Option<f64>) -> CliResult<f64> {
    acc.ok_or_else(|| CliError::Runtime("run produced no test accuracy".into()))
}

/// The selection log is written by the trainer without provenance; stamp
/// the same `#` comment line the record CSVs carry.
fn prepend_provenance(path: &Path, prov: &serde_json::Value) -> CliResult<()> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let stamped = format!("# {prov}\n{body}");
    std::fs::write(path, stamped)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}
