//! The training algorithms: baseline, majority kernels, ensemble,
//! distillation, and the adversarial-probability variants, plus the
//! learning-rate grid protocol shared by all of them.
//!
//! Every trainer follows the same step discipline: draw a batch, compute the
//! training-view gradients, update, and (on eval steps) score the collapsed
//! inference-size model. All randomness flows through three streams derived
//! from the run seed (`init`, `batches`, `probs`), so an algorithm that
//! never touches a stream leaves the others untouched; at expansion 1 the
//! majority-kernels trainer is bit-identical to the baseline because every
//! sampled probability is exactly 1.
//!
//! Evaluation only ever sees collapsed parameters: the deployed model is
//! always the base size.

mod adversarial;
mod ensemble;

pub use adversarial::{blend_row, kl_uniformity, normalize_rows, train_adv_mk, train_adv_only};
pub use ensemble::{distillation_dlogits, distillation_loss, tune_grid_ensemble};
pub use ensemble::{train_distilled, train_ensemble, EnsembleOutcome, EnsemblePredictor};

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{BatchIterator, Dataset};
use crate::error::{MkError, Result};
use crate::kernel::{sample_probability_tensor, ProbabilityTensor};
use crate::linalg::Matrix;
use crate::network::{accuracy, backward, cross_entropy, forward, GradientSet, ModelParams, NetworkSpec};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::rng::RngStream;
use crate::subset::SubsetParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Baseline,
    Mk,
    Ensemble,
    Distilled,
    AdvOnly,
    AdvMk,
    Subset,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Algorithm::Baseline => "baseline",
            Algorithm::Mk => "mk",
            Algorithm::Ensemble => "ensemble",
            Algorithm::Distilled => "distilled",
            Algorithm::AdvOnly => "adv_only",
            Algorithm::AdvMk => "adv_mk",
            Algorithm::Subset => "subset",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = MkError;
    fn from_str(s: &str) -> Result<Algorithm> {
        match s {
            "baseline" => Ok(Algorithm::Baseline),
            "mk" => Ok(Algorithm::Mk),
            "ensemble" => Ok(Algorithm::Ensemble),
            "distilled" => Ok(Algorithm::Distilled),
            "adv_only" => Ok(Algorithm::AdvOnly),
            "adv_mk" => Ok(Algorithm::AdvMk),
            "subset" => Ok(Algorithm::Subset),
            other => Err(MkError::InvalidConfig(format!(
                "unknown algorithm '{other}' (expected baseline|mk|ensemble|distilled|adv_only|adv_mk|subset)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub alpha: f64,
    pub temperature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig { alpha: 0.5, temperature: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvConfig {
    pub epsilon_p: f64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig { epsilon_p: 0.1 }
    }
}

fn default_batch_size() -> usize {
    256
}
fn default_eval_every() -> usize {
    100
}

/// Full description of one training run. Constructed via [`TrainConfig::new`]
/// plus field tweaks; [`TrainConfig::validate`] enforces the invariants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub spec: NetworkSpec,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub adv: AdvConfig,
    #[serde(default)]
    pub subset: SubsetParams,
    /// Debug mode: force uniform probabilities instead of sampling (used by
    /// the uniform-fallback harness).
    #[serde(default)]
    pub uniform_p: bool,
    /// Debug mode: skip bias updates. The shared bias trains at the full
    /// rate while collapsed weights see rate ℓ/e, so the fallback harness
    /// freezes biases to isolate the weight-space claim.
    #[serde(default)]
    pub freeze_bias: bool,
    /// Score the test split at every eval (not just the final step) so the
    /// emitted records carry a per-eval generalization gap.
    #[serde(default)]
    pub eval_test_every: bool,
    /// Subset trainer only: dump per-step selected index sets as CSV here.
    #[serde(default)]
    pub selection_log: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(
        algorithm: Algorithm,
        spec: NetworkSpec,
        optimizer: OptimizerKind,
        learning_rate: f64,
        max_steps: usize,
        seed: u64,
    ) -> TrainConfig {
        TrainConfig {
            algorithm,
            spec,
            optimizer,
            learning_rate,
            batch_size: default_batch_size(),
            max_steps,
            seed,
            eval_every: default_eval_every(),
            distill: DistillConfig::default(),
            adv: AdvConfig::default(),
            subset: SubsetParams::default(),
            uniform_p: false,
            freeze_bias: false,
            eval_test_every: false,
            selection_log: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.batch_size < 1 {
            return Err(MkError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(MkError::InvalidConfig(format!("learning_rate must be > 0 (got {})", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.distill.alpha) {
            return Err(MkError::InvalidConfig(format!("distill.alpha must be in [0,1] (got {})", self.distill.alpha)));
        }
        if !(self.distill.temperature > 0.0) {
            return Err(MkError::InvalidConfig(format!(
                "distill.temperature must be > 0 (got {})",
                self.distill.temperature
            )));
        }
        if self.adv.epsilon_p < 0.0 || !self.adv.epsilon_p.is_finite() {
            return Err(MkError::InvalidConfig(format!("adv.epsilon_p must be >= 0 (got {})", self.adv.epsilon_p)));
        }
        self.subset.validate()?;
        Ok(())
    }

    pub(crate) fn root_rng(&self) -> RngStream {
        RngStream::new(self.seed)
    }
}

/// One evaluation row. `train_*` metrics score the collapsed model on the
/// step's training batch; `val_*` score the full validation split; `test_acc`
/// is present on the final record (and on every record when
/// `eval_test_every` is set). Records are bit-deterministic given the
/// config; wall-clock time lives on [`RunOutcome`] instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub learning_rate: f64,
    pub algorithm: Algorithm,
    pub seed: u64,
}

/// A finished single-model run: the inference-size model, the eval records,
/// and the wall time (reporting only; excluded from the deterministic
/// records).
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: ModelParams,
    pub records: Vec<RunRecord>,
    pub wall_seconds: f64,
}

impl RunOutcome {
    pub fn final_record(&self) -> Option<&RunRecord> {
        self.records.last()
    }

    pub fn final_val_acc(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.val_acc)
    }

    pub fn final_test_acc(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.test_acc)
    }
}

/// The three splits a run sees. Validation and test are optional: sanity
/// runs on synthetic blobs train without them.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Option<Dataset>,
}

impl DataSplits {
    pub fn new(train: Dataset, val: Option<Dataset>, test: Option<Dataset>) -> DataSplits {
        DataSplits { train, val, test }
    }

    pub fn train_only(train: Dataset) -> DataSplits {
        DataSplits { train, val: None, test: None }
    }
}

/// Split-level metrics of the collapsed model, evaluated in fixed-size
/// chunks so huge splits never materialize giant activation matrices.
pub fn evaluate_model(params: &ModelParams, data: &Dataset) -> (f64, f64) {
    let vanilla = if params.expansion() == 1 { params.clone() } else { params.to_vanilla() };
    let chunk = 512;
    let n = data.len();
    let mut loss_sum = 0.0;
    let mut correct = 0.0;
    let mut at = 0;
    while at < n {
        let hi = (at + chunk).min(n);
        let idx: Vec<usize> = (at..hi).collect();
        let (batch, labels) = data.gather(&idx);
        let (logits, _) = forward(&vanilla, None, &batch);
        loss_sum += cross_entropy(&logits, &labels) * labels.len() as f64;
        correct += accuracy(&logits, &labels) * labels.len() as f64;
        at = hi;
    }
    (loss_sum / n as f64, correct / n as f64)
}

pub(crate) fn check_data_matches_spec(cfg: &TrainConfig, data: &DataSplits) -> Result<()> {
    if data.train.dim() != cfg.spec.input_dim {
        return Err(MkError::InvalidConfig(format!(
            "dataset dimension {} does not match network input {}",
            data.train.dim(),
            cfg.spec.input_dim
        )));
    }
    if data.train.num_classes != cfg.spec.output_dim {
        return Err(MkError::InvalidConfig(format!(
            "dataset has {} classes, network outputs {}",
            data.train.num_classes, cfg.spec.output_dim
        )));
    }
    Ok(())
}

pub(crate) fn apply_update(
    opt: &mut OptimizerState,
    params: &mut ModelParams,
    grads: &GradientSet,
    freeze_bias: bool,
) -> Result<()> {
    if freeze_bias {
        let mut g = grads.clone();
        for b in &mut g.biases {
            for v in b.as_mut_slice() {
                *v = 0.0;
            }
        }
        opt.step(params, &g)
    } else {
        opt.step(params, grads)
    }
}

/// Shared eval/record plumbing for the single-model trainers. The closure
/// performs one optimization step from the given batch.
pub(crate) fn run_steps<F>(
    cfg: &TrainConfig,
    data: &DataSplits,
    mut params: ModelParams,
    mut step_fn: F,
) -> Result<RunOutcome>
where
    F: FnMut(usize, &Matrix, &[usize], &mut ModelParams) -> Result<()>,
{
    let start = Instant::now();
    let mut batches = BatchIterator::new(&data.train, cfg.batch_size, cfg.root_rng().derive("batches"));
    let mut records = Vec::new();
    for step in 1..=cfg.max_steps {
        let (batch, labels) = batches.next_batch();
        step_fn(step, &batch, &labels, &mut params)?;

        let is_final = step == cfg.max_steps;
        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) || is_final {
            records.push(make_record(cfg, &params, &batch, &labels, data, step, is_final));
        }
    }
    Ok(RunOutcome { model: params.to_vanilla(), records, wall_seconds: start.elapsed().as_secs_f64() })
}

pub(crate) fn make_record(
    cfg: &TrainConfig,
    params: &ModelParams,
    batch: &Matrix,
    labels: &[usize],
    data: &DataSplits,
    step: usize,
    is_final: bool,
) -> RunRecord {
    let vanilla = params.to_vanilla();
    let (logits, _) = forward(&vanilla, None, batch);
    let train_loss = cross_entropy(&logits, labels);
    let train_acc = accuracy(&logits, labels);
    let (val_loss, val_acc) = match &data.val {
        Some(v) => {
            let (l, a) = evaluate_model(&vanilla, v);
            (Some(l), Some(a))
        }
        None => (None, None),
    };
    let test_acc = match &data.test {
        Some(t) if is_final || cfg.eval_test_every => Some(evaluate_model(&vanilla, t).1),
        _ => None,
    };
    RunRecord {
        step,
        train_loss,
        train_acc,
        val_loss,
        val_acc,
        test_acc,
        learning_rate: cfg.learning_rate,
        algorithm: cfg.algorithm,
        seed: cfg.seed,
    }
}

fn require_algorithm(cfg: &TrainConfig, want: Algorithm) -> Result<()> {
    cfg.validate()?;
    if cfg.algorithm != want {
        return Err(MkError::InvalidConfig(format!("config.algorithm is {}, expected {}", cfg.algorithm, want)));
    }
    Ok(())
}

/// Trains a plain MLP with cross-entropy. Requires expansion 1.
pub fn train_baseline(cfg: &TrainConfig, data: &DataSplits) -> Result<RunOutcome> {
    require_algorithm(cfg, Algorithm::Baseline)?;
    if cfg.spec.expansion != 1 {
        return Err(MkError::InvalidConfig(format!(
            "baseline requires expansion 1 (got {}); use the mk algorithm for expanded kernels",
            cfg.spec.expansion
        )));
    }
    check_data_matches_spec(cfg, data)?;
    let params = ModelParams::init(&cfg.spec, &mut cfg.root_rng().derive("init"));
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &params)?;
    run_steps(cfg, data, params, |_, batch, labels, params| {
        let (_, cache) = forward(params, None, batch);
        let grads = backward(params, None, batch, labels, &cache);
        apply_update(&mut opt, params, &grads, cfg.freeze_bias)
    })
}

pub(crate) fn sample_layer_probs(params: &ModelParams, rng: &mut RngStream) -> Vec<ProbabilityTensor> {
    params
        .layers
        .iter()
        .map(|k| {
            let (n, m, e) = k.dims();
            sample_probability_tensor(rng, n, m, e)
        })
        .collect()
}

fn uniform_layer_probs(params: &ModelParams) -> Vec<ProbabilityTensor> {
    params
        .layers
        .iter()
        .map(|k| {
            let (n, m, e) = k.dims();
            ProbabilityTensor::uniform(n, m, e)
        })
        .collect()
}

/// Majority-kernels training: each step samples fresh per-entry simplex
/// probabilities (shared across the batch), trains the aggregated view, and
/// evaluates/returns the collapsed view.
pub fn train_mk(cfg: &TrainConfig, data: &DataSplits) -> Result<RunOutcome> {
    require_algorithm(cfg, Algorithm::Mk)?;
    check_data_matches_spec(cfg, data)?;
    let params = ModelParams::init(&cfg.spec, &mut cfg.root_rng().derive("init"));
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &params)?;
    let mut prob_rng = cfg.root_rng().derive("probs");
    let uniform = cfg.uniform_p;
    run_steps(cfg, data, params, |_, batch, labels, params| {
        let probs =
            if uniform { uniform_layer_probs(params) } else { sample_layer_probs(params, &mut prob_rng) };
        let (_, cache) = forward(params, Some(&probs), batch);
        let grads = backward(params, Some(&probs), batch, labels, &cache);
        apply_update(&mut opt, params, &grads, cfg.freeze_bias)
    })
}

/// Dispatches the single-model algorithms (everything except ensemble and
/// distillation, which have different shapes).
pub fn run_single(cfg: &TrainConfig, data: &DataSplits) -> Result<RunOutcome> {
    match cfg.algorithm {
        Algorithm::Baseline => train_baseline(cfg, data),
        Algorithm::Mk => train_mk(cfg, data),
        Algorithm::AdvOnly => train_adv_only(cfg, data),
        Algorithm::AdvMk => train_adv_mk(cfg, data),
        Algorithm::Subset => crate::subset::train_subset(cfg, data),
        Algorithm::Ensemble | Algorithm::Distilled => Err(MkError::InvalidConfig(format!(
            "{} is not a single-model algorithm; use train_ensemble / train_distilled",
            cfg.algorithm
        ))),
    }
}

/// One tuned grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCandidate {
    pub learning_rate: f64,
    pub val_acc: f64,
    pub test_acc: Option<f64>,
}

/// Result of a grid sweep: all candidates plus the chosen run.
pub struct TuneOutcome {
    pub candidates: Vec<GridCandidate>,
    pub chosen: usize,
    pub outcome: RunOutcome,
}

/// Sweeps the optimizer's ten-rate grid with a custom runner, selecting by
/// validation accuracy (ties go to the smaller rate). Test accuracy is
/// reported for the chosen rate.
pub fn tune_grid_with<F>(template: &TrainConfig, data: &DataSplits, mut run: F) -> Result<TuneOutcome>
where
    F: FnMut(&TrainConfig, &DataSplits) -> Result<RunOutcome>,
{
    template.validate()?;
    if data.val.is_none() {
        return Err(MkError::InvalidConfig("grid tuning requires a validation split".into()));
    }
    if template.max_steps < 1 {
        return Err(MkError::InvalidConfig("grid tuning requires max_steps >= 1".into()));
    }
    let rates = crate::optim::grid_rates(template.optimizer);
    let mut candidates = Vec::with_capacity(rates.len());
    let mut best: Option<(usize, f64, RunOutcome)> = None;
    for (i, rate) in rates.into_iter().enumerate() {
        let mut cfg = template.clone();
        cfg.learning_rate = rate;
        let outcome = run(&cfg, data)?;
        let val_acc = outcome
            .final_val_acc()
            .ok_or_else(|| MkError::InvalidConfig("grid run produced no validation accuracy".into()))?;
        candidates.push(GridCandidate { learning_rate: rate, val_acc, test_acc: outcome.final_test_acc() });
        // Strict > keeps the first (smallest) rate on ties.
        let better = match &best {
            None => true,
            Some((_, best_acc, _)) => val_acc > *best_acc,
        };
        if better {
            best = Some((i, val_acc, outcome));
        }
    }
    let (chosen, _, outcome) = best.expect("grid has candidates");
    Ok(TuneOutcome { candidates, chosen, outcome })
}

/// [`tune_grid_with`] over [`run_single`].
pub fn tune_grid(template: &TrainConfig, data: &DataSplits) -> Result<TuneOutcome> {
    tune_grid_with(template, data, run_single)
}

/// Writes records as CSV under a one-line `#` provenance comment (resolved
/// config, seed, version tag as JSON). Floats print in shortest
/// round-trip form.
pub fn write_records_csv(path: &Path, records: &[RunRecord], provenance: &serde_json::Value) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# {}", serde_json::to_string(provenance)?)?;
    writeln!(f, "step,train_loss,train_acc,val_loss,val_acc,lr,algo,seed")?;
    for r in records {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.train_loss,
            r.train_acc,
            opt(r.val_loss),
            opt(r.val_acc),
            r.learning_rate,
            r.algorithm,
            r.seed
        )?;
    }
    Ok(())
}

/// Well-separated blob splits for trainer sanity tests.
#[cfg(test)]
pub(crate) fn test_blob_splits(seed: u64, classes: usize, per_class: usize, dim: usize) -> DataSplits {
    let mut rng = RngStream::new(seed);
    let train = crate::data::make_blobs(&mut rng, classes, per_class, dim, 10.0).unwrap();
    let val = crate::data::make_blobs(&mut rng, classes, per_class / 2 + 1, dim, 10.0).unwrap();
    let test = crate::data::make_blobs(&mut rng, classes, per_class / 2 + 1, dim, 10.0).unwrap();
    DataSplits::new(train, Some(val), Some(test))
}
