//! Ensemble training and knowledge distillation.
//!
//! An ensemble is `e` independently seeded baseline runs whose prediction is
//! the arithmetic mean of member softmax outputs. Distillation compresses a
//! teacher predictor into a single student with the blended loss
//! `alpha·CE(labels) + (1−alpha)·T²·KL(teacher_T ‖ student_T)` over
//! temperature-`T` softmaxes.

use std::time::Instant;

use crate::data::Dataset;
use crate::error::{MkError, Result};
use crate::linalg::Matrix;
use crate::network::{backward_from_dlogits, ce_dlogits, cross_entropy, forward, softmax_rows, ModelParams};
use crate::optim::OptimizerState;

use super::{
    apply_update, check_data_matches_spec, run_steps, Algorithm, DataSplits, GridCandidate, RunOutcome,
    RunRecord, TrainConfig,
};

/// Mean-of-softmax predictor over vanilla members.
#[derive(Debug, Clone)]
pub struct EnsemblePredictor {
    pub members: Vec<ModelParams>,
}

impl EnsemblePredictor {
    /// Members are collapsed to inference size on construction.
    pub fn new(members: Vec<ModelParams>) -> Result<EnsemblePredictor> {
        if members.is_empty() {
            return Err(MkError::InvalidConfig("ensemble needs at least one member".into()));
        }
        let out = members[0].spec.output_dim;
        if members.iter().any(|m| m.spec.output_dim != out) {
            return Err(MkError::InvalidConfig("ensemble members disagree on output dimension".into()));
        }
        Ok(EnsemblePredictor { members: members.into_iter().map(|m| m.to_vanilla()).collect() })
    }

    pub fn output_dim(&self) -> usize {
        self.members[0].spec.output_dim
    }

    /// Mean of member class probabilities, summed member-ascending then
    /// divided once.
    pub fn predict_proba(&self, batch: &Matrix) -> Matrix {
        let mut acc: Option<Matrix> = None;
        for member in &self.members {
            let (logits, _) = forward(member, None, batch);
            let probs = softmax_rows(&logits);
            match &mut acc {
                None => acc = Some(probs),
                Some(a) => a.add_scaled(&probs, 1.0),
            }
        }
        let mut mean = acc.expect("at least one member");
        let inv = 1.0 / self.members.len() as f64;
        for v in mean.as_mut_slice() {
            *v *= inv;
        }
        mean
    }

    /// Log of the mean probability, usable as teacher logits (softmax of
    /// these at temperature 1 reproduces `predict_proba`).
    pub fn logits(&self, batch: &Matrix) -> Matrix {
        self.predict_proba(batch).map(|p| p.ln())
    }

    /// Chunked `(nll, accuracy)` of the mean-probability prediction.
    pub fn evaluate(&self, data: &Dataset) -> (f64, f64) {
        let chunk = 512;
        let n = data.len();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut at = 0;
        while at < n {
            let hi = (at + chunk).min(n);
            let idx: Vec<usize> = (at..hi).collect();
            let (batch, labels) = data.gather(&idx);
            let probs = self.predict_proba(&batch);
            for (r, &label) in labels.iter().enumerate() {
                let row = probs.row(r);
                loss_sum -= row[label].ln();
                let mut best = 0usize;
                for (j, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = j;
                    }
                }
                if best == label {
                    correct += 1;
                }
            }
            at = hi;
        }
        (loss_sum / n as f64, correct as f64 / n as f64)
    }
}

/// A finished ensemble run: the members, their per-member records, the
/// predictor, and the predictor's split metrics.
#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub predictor: EnsemblePredictor,
    pub member_records: Vec<Vec<RunRecord>>,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub wall_seconds: f64,
}

impl EnsembleOutcome {
    pub fn members(&self) -> &[ModelParams] {
        &self.predictor.members
    }
}

/// Trains `spec.expansion` independent baselines (expansion doubles as the
/// member count; each member is a vanilla network with a derived seed) and
/// wraps them as a mean-probability predictor.
pub fn train_ensemble(cfg: &TrainConfig, data: &DataSplits) -> Result<EnsembleOutcome> {
    cfg.validate()?;
    if cfg.algorithm != Algorithm::Ensemble {
        return Err(MkError::InvalidConfig(format!("config.algorithm is {}, expected ensemble", cfg.algorithm)));
    }
    let e = cfg.spec.expansion;
    if e < 2 {
        return Err(MkError::InvalidConfig(format!("ensemble needs expansion >= 2 members (got {e})")));
    }
    check_data_matches_spec(cfg, data)?;

    let start = Instant::now();
    let mut members = Vec::with_capacity(e);
    let mut member_records = Vec::with_capacity(e);
    for i in 0..e {
        let mut member_cfg = cfg.clone();
        member_cfg.algorithm = Algorithm::Baseline;
        member_cfg.spec = cfg.spec.vanilla();
        member_cfg.seed = cfg.root_rng().derive(&format!("member-{i}")).seed();
        let outcome = super::train_baseline(&member_cfg, data)?;
        members.push(outcome.model);
        member_records.push(outcome.records);
    }
    let predictor = EnsemblePredictor::new(members)?;
    let (val_loss, val_acc) = match &data.val {
        Some(v) => {
            let (l, a) = predictor.evaluate(v);
            (Some(l), Some(a))
        }
        None => (None, None),
    };
    let test_acc = data.test.as_ref().map(|t| predictor.evaluate(t).1);
    Ok(EnsembleOutcome {
        predictor,
        member_records,
        val_loss,
        val_acc,
        test_acc,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Grid sweep for ensembles, same selection rule as
/// [`super::tune_grid_with`].
pub fn tune_grid_ensemble(
    template: &TrainConfig,
    data: &DataSplits,
) -> Result<(Vec<GridCandidate>, usize, EnsembleOutcome)> {
    template.validate()?;
    if data.val.is_none() {
        return Err(MkError::InvalidConfig("grid tuning requires a validation split".into()));
    }
    let rates = crate::optim::grid_rates(template.optimizer);
    let mut candidates = Vec::with_capacity(rates.len());
    let mut best: Option<(usize, f64, EnsembleOutcome)> = None;
    for (i, rate) in rates.into_iter().enumerate() {
        let mut cfg = template.clone();
        cfg.learning_rate = rate;
        let outcome = train_ensemble(&cfg, data)?;
        let val_acc = outcome
            .val_acc
            .ok_or_else(|| MkError::InvalidConfig("grid run produced no validation accuracy".into()))?;
        candidates.push(GridCandidate { learning_rate: rate, val_acc, test_acc: outcome.test_acc });
        let better = best.as_ref().map_or(true, |(_, b, _)| val_acc > *b);
        if better {
            best = Some((i, val_acc, outcome));
        }
    }
    let (chosen, _, outcome) = best.expect("grid has candidates");
    Ok((candidates, chosen, outcome))
}

fn log_softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
        let mut sum = 0.0;
        for &x in row.iter() {
            sum += (x - max).exp();
        }
        let lse = max + sum.ln();
        for x in row.iter_mut() {
            *x -= lse;
        }
    }
    out
}

fn scaled(m: &Matrix, factor: f64) -> Matrix {
    m.map(|x| x * factor)
}

/// The distillation objective
/// `alpha·CE(student, labels) + (1−alpha)·T²·mean_i KL(p_i ‖ q_i)` with
/// `p = softmax(teacher/T)`, `q = softmax(student/T)`. At `alpha = 1` the
/// value is exactly the plain cross-entropy.
pub fn distillation_loss(
    student_logits: &Matrix,
    labels: &[usize],
    teacher_logits: &Matrix,
    alpha: f64,
    temperature: f64,
) -> f64 {
    let ce = cross_entropy(student_logits, labels);
    if alpha == 1.0 {
        return ce;
    }
    let t = temperature;
    let lp = log_softmax_rows(&scaled(teacher_logits, 1.0 / t));
    let lq = log_softmax_rows(&scaled(student_logits, 1.0 / t));
    let mut kl_sum = 0.0;
    for r in 0..lp.rows() {
        for (&a, &b) in lp.row(r).iter().zip(lq.row(r)) {
            kl_sum += a.exp() * (a - b);
        }
    }
    let kd = t * t * kl_sum / labels.len() as f64;
    alpha * ce + (1.0 - alpha) * kd
}

/// Gradient of [`distillation_loss`] w.r.t. the student logits:
/// `[alpha·(softmax(student) − onehot) + (1−alpha)·T·(softmax(student/T) −
/// softmax(teacher/T))] / batch`. At `alpha = 1` this is bit-identical to
/// the plain cross-entropy gradient.
pub fn distillation_dlogits(
    student_logits: &Matrix,
    labels: &[usize],
    teacher_logits: &Matrix,
    alpha: f64,
    temperature: f64,
) -> Matrix {
    if alpha == 1.0 {
        return ce_dlogits(student_logits, labels);
    }
    let t = temperature;
    let inv_b = 1.0 / labels.len() as f64;
    let mut ce_part = softmax_rows(student_logits);
    for (r, &label) in labels.iter().enumerate() {
        ce_part.row_mut(r)[label] -= 1.0;
    }
    let q = softmax_rows(&scaled(student_logits, 1.0 / t));
    let p = softmax_rows(&scaled(teacher_logits, 1.0 / t));
    let mut out = Matrix::zeros(ce_part.rows(), ce_part.cols());
    for r in 0..out.rows() {
        let (ce_row, q_row, p_row) = (ce_part.row(r), q.row(r), p.row(r));
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (alpha * ce_row[j] + (1.0 - alpha) * t * (q_row[j] - p_row[j])) * inv_b;
        }
    }
    out
}

/// Distills `teacher` into a fresh vanilla student; trained exactly like the
/// baseline except for the loss.
pub fn train_distilled(cfg: &TrainConfig, data: &DataSplits, teacher: &EnsemblePredictor) -> Result<RunOutcome> {
    cfg.validate()?;
    if cfg.algorithm != Algorithm::Distilled {
        return Err(MkError::InvalidConfig(format!("config.algorithm is {}, expected distilled", cfg.algorithm)));
    }
    if cfg.spec.expansion != 1 {
        return Err(MkError::InvalidConfig(format!("distilled student must have expansion 1 (got {})", cfg.spec.expansion)));
    }
    if teacher.output_dim() != cfg.spec.output_dim {
        return Err(MkError::InvalidConfig(format!(
            "teacher outputs {} classes, student expects {}",
            teacher.output_dim(),
            cfg.spec.output_dim
        )));
    }
    check_data_matches_spec(cfg, data)?;

    let params = ModelParams::init(&cfg.spec, &mut cfg.root_rng().derive("init"));
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &params)?;
    let (alpha, temperature) = (cfg.distill.alpha, cfg.distill.temperature);
    run_steps(cfg, data, params, |_, batch, labels, params| {
        let (logits, cache) = forward(params, None, batch);
        let dlogits = if alpha == 1.0 {
            // Pure CE; the teacher is never consulted, keeping the
            // trajectory bit-identical to the baseline.
            ce_dlogits(&logits, labels)
        } else {
            let teacher_logits = teacher.logits(batch);
            distillation_dlogits(&logits, labels, &teacher_logits, alpha, temperature)
        };
        let grads = backward_from_dlogits(params, None, &cache, dlogits);
        apply_update(&mut opt, params, &grads, cfg.freeze_bias)
    })
}
