//! `mk tune`: sweep the optimizer's ten-rate learning-rate grid, select by
//! validation accuracy (ties to the smaller rate), and report the test
//! accuracy of the chosen rate only.

use serde::Serialize;

use mk_core::train::{tune_grid_ensemble, tune_grid_with};
use mk_core::{
    save_checkpoint, train_distilled, tune_grid, Algorithm, GridCandidate, NetworkSpec,
};
use mk_core::train::write_records_csv;

use crate::artifacts;
use crate::config::{build_config, resolve, CliError, CliResult, Overrides};
use crate::run::{
    checkpoint_meta, normalization_for, out_dir, replicate_provenance, require_test,
    write_run_artifacts,
};

/// One grid point as reported. Test accuracy is deliberately absent: the
/// protocol scores only the chosen rate on the test split.
#[derive(Serialize)]
struct CandidateRow {
    learning_rate: f64,
    val_acc: f64,
}

fn rows(candidates: &[GridCandidate]) -> Vec<CandidateRow> {
    candidates
        .iter()
        .map(|c| CandidateRow { learning_rate: c.learning_rate, val_acc: c.val_acc })
        .collect()
}

#[derive(Serialize)]
struct TuneReport {
    algorithm: String,
    topology: String,
    optimizer: String,
    seed: u64,
    candidates: Vec<CandidateRow>,
    chosen_learning_rate: f64,
    chosen_val_acc: f64,
    chosen_test_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    teacher_learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    teacher_candidates: Option<Vec<CandidateRow>>,
    config: crate::config::ExperimentConfig,
}

pub fn cmd_tune(ov: &Overrides) -> CliResult<()> {
    let cfg = build_config(ov)?;
    if !cfg.grid {
        return Err(CliError::Config(
            "grid: tune requires the grid flag (pass --grid or set \"grid\": true)".into(),
        ));
    }
    let out = out_dir(ov);
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let resolved = resolve(cfg, &out)?;
    artifacts::write_json(&out.join("config.json"), &resolved.config)?;
    let norm = normalization_for(&resolved)?;

    // The sweep runs on replicate 0's derived seed; `mk run --replicates N
    // --learning-rate <chosen>` then covers the remaining seeds.
    let tc = resolved.train_config(0);
    let seed = tc.seed;

    let (candidates, chosen, chosen_val, chosen_test, teacher_rate, teacher_rows);
    match resolved.config.algorithm {
        Algorithm::Ensemble => {
            let (cands, idx, ens) = tune_grid_ensemble(&tc, &resolved.data)?;
            let meta = checkpoint_meta(&resolved, seed, norm.as_ref())?;
            for (m, recs) in ens.member_records.iter().enumerate() {
                write_records_csv(
                    &out.join(format!("records-r0-m{m}.csv")),
                    recs,
                    &replicate_provenance(&resolved, 0, seed, Some(m))?,
                )?;
            }
            for (m, member) in ens.members().iter().enumerate() {
                save_checkpoint(&out.join(format!("model-r0-m{m}.ckpt")), member, &meta)?;
            }
            chosen_val = cands[idx].val_acc;
            chosen_test = require_test(ens.test_acc)?;
            chosen = idx;
            candidates = cands;
            teacher_rate = None;
            teacher_rows = None;
        }
        Algorithm::Distilled => {
            // Tune the teacher ensemble first, freeze it, then tune the
            // student against that fixed teacher.
            let mut teacher_tc = tc.clone();
            teacher_tc.algorithm = Algorithm::Ensemble;
            let (tcands, tidx, teacher) = tune_grid_ensemble(&teacher_tc, &resolved.data)?;
            for (m, recs) in teacher.member_records.iter().enumerate() {
                write_records_csv(
                    &out.join(format!("teacher-r0-m{m}.csv")),
                    recs,
                    &replicate_provenance(&resolved, 0, seed, Some(m))?,
                )?;
            }
            let mut student_tc = tc.clone();
            let s = &resolved.spec;
            student_tc.spec = NetworkSpec::new(s.input_dim, s.hidden_dims.clone(), s.output_dim, 1);
            let sweep = tune_grid_with(&student_tc, &resolved.data, |c, d| {
                train_distilled(c, d, &teacher.predictor)
            })?;
            write_run_artifacts(
                &resolved,
                &out,
                &sweep.outcome.records,
                &sweep.outcome.model,
                0,
                seed,
                norm.as_ref(),
            )?;
            chosen_val = sweep.candidates[sweep.chosen].val_acc;
            chosen_test = require_test(sweep.outcome.final_test_acc())?;
            chosen = sweep.chosen;
            candidates = sweep.candidates;
            teacher_rate = Some(tcands[tidx].learning_rate);
            teacher_rows = Some(rows(&tcands));
        }
        _ => {
            let sweep = tune_grid(&tc, &resolved.data)?;
            write_run_artifacts(
                &resolved,
                &out,
                &sweep.outcome.records,
                &sweep.outcome.model,
                0,
                seed,
                norm.as_ref(),
            )?;
            chosen_val = sweep.candidates[sweep.chosen].val_acc;
            chosen_test = require_test(sweep.outcome.final_test_acc())?;
            chosen = sweep.chosen;
            candidates = sweep.candidates;
            teacher_rate = None;
            teacher_rows = None;
        }
    }

    let report = TuneReport {
        algorithm: resolved.config.algorithm.to_string(),
        topology: resolved.config.topology.label(),
        optimizer: resolved.config.optimizer.to_string(),
        seed,
        candidates: rows(&candidates),
        chosen_learning_rate: candidates[chosen].learning_rate,
        chosen_val_acc: chosen_val,
        chosen_test_acc: chosen_test,
        teacher_learning_rate: teacher_rate,
        teacher_candidates: teacher_rows,
        config: artifacts::provenance_config(&resolved.config),
    };
    artifacts::write_json(&out.join("tune.json"), &report)?;

    println!("learning_rate  val_acc");
    for c in &report.candidates {
        println!("{:<13.6} {:.4}", c.learning_rate, c.val_acc);
    }
    println!(
        "chosen: {} (val_acc {:.4}) -> test_acc {:.4}",
        report.chosen_learning_rate, report.chosen_val_acc, report.chosen_test_acc
    );
    println!("artifacts in {}", out.display());
    Ok(())
}
