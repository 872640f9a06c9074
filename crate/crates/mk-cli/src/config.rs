//! Experiment configuration: the JSON config file, CLI flag overrides, and
//! resolution into concrete training inputs.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mk_core::data::steps_per_epoch;
use mk_core::train::{AdvConfig, DistillConfig};
use mk_core::{
    load_cifar10, make_blobs, Algorithm, DataSplits, MkError, NetworkSpec, OptimizerKind, RngStream,
    SubsetParams, TrainConfig,
};

/// Errors split by exit code: bad inputs (config, flags, checkpoints) exit
/// with 2, failures at run time with 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "invalid config: {msg}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<MkError> for CliError {
    fn from(e: MkError) -> CliError {
        match e {
            MkError::InvalidConfig(msg) => CliError::Config(msg),
            MkError::Ingestion { .. } | MkError::CorruptData { .. } | MkError::Checkpoint { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Which dataset a run trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSel {
    Cifar10,
    Blobs,
}

impl DatasetSel {
    pub fn parse(s: &str) -> CliResult<DatasetSel> {
        match s {
            "cifar10" => Ok(DatasetSel::Cifar10),
            "blobs" => Ok(DatasetSel::Blobs),
            other => Err(CliError::Config(format!("dataset: unknown dataset '{other}' (expected cifar10|blobs)"))),
        }
    }
}

/// Hidden-layer selector: one of the named stacks or explicit dims.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Topology {
    Named(String),
    Custom(Vec<usize>),
}

impl Topology {
    pub fn parse(s: &str) -> CliResult<Topology> {
        let t = Topology::Named(s.to_string());
        t.hidden_dims()?;
        Ok(t)
    }

    pub fn hidden_dims(&self) -> CliResult<Vec<usize>> {
        match self {
            Topology::Named(name) => match name.as_str() {
                "A1" => Ok(vec![100]),
                "A2" => Ok(vec![200, 100]),
                "A3" => Ok(vec![400, 200, 100]),
                other => Err(CliError::Config(format!(
                    "topology: unknown topology '{other}' (expected A1|A2|A3 or a list of hidden dims)"
                ))),
            },
            Topology::Custom(dims) => {
                if dims.iter().any(|&d| d == 0) {
                    return Err(CliError::Config("topology: hidden dims must be >= 1".into()));
                }
                Ok(dims.clone())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Topology::Named(name) => name.clone(),
            Topology::Custom(dims) => format!("custom{dims:?}"),
        }
    }
}

/// Synthetic-blob dataset shape (only read when `dataset` is `blobs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsConfig {
    pub classes: usize,
    pub per_class: usize,
    pub eval_per_class: usize,
    pub dim: usize,
    pub separation: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig { classes: 4, per_class: 200, eval_per_class: 50, dim: 16, separation: 8.0 }
    }
}

/// One experiment: everything a run or a grid sweep needs. Loaded from a
/// JSON file, overridden by CLI flags, and echoed (fully resolved) into the
/// output directory so any run can be replayed from its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub dataset: DatasetSel,
    pub topology: Topology,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// `null` resolves to 30 epochs over the training split.
    pub max_steps: Option<usize>,
    pub eval_every: usize,
    pub seed: u64,
    pub expansion: usize,
    pub replicates: usize,
    /// Grid sweeps live behind the `tune` subcommand; `run` refuses a
    /// config with this set.
    pub grid: bool,
    pub distill: DistillConfig,
    pub adv: AdvConfig,
    pub subset: SubsetParams,
    pub blobs: BlobsConfig,
    /// CIFAR-10 directory; falls back to the MK_DATA_DIR env var.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    /// Recorded for provenance in the echoed config; stripped from summary
    /// provenance so re-runs into other directories reproduce summaries
    /// byte for byte.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Library version that produced an echoed config; ignored on load.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version_tag: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::Baseline,
            dataset: DatasetSel::Blobs,
            topology: Topology::Named("A1".into()),
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.001,
            batch_size: 256,
            max_steps: None,
            eval_every: 100,
            seed: 0,
            expansion: 1,
            replicates: 1,
            grid: false,
            distill: DistillConfig::default(),
            adv: AdvConfig::default(),
            subset: SubsetParams::default(),
            blobs: BlobsConfig::default(),
            data_dir: None,
            out_dir: None,
            version_tag: None,
        }
    }
}

/// CLI flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON config file; flags below override its fields.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Base seed; replicate seeds are derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Algorithm: baseline|mk|ensemble|distilled|adv_only|adv_mk|subset.
    #[arg(long, value_name = "NAME")]
    pub algo: Option<String>,
    /// Hidden-layer stack: A1|A2|A3.
    #[arg(long)]
    pub topology: Option<String>,
    /// Optimizer: sgd|adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Dataset: cifar10|blobs.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Kernel expansion factor (ensemble/distilled: member count).
    #[arg(long, value_name = "E")]
    pub expansion: Option<usize>,
    /// Replicates trained with derived seeds.
    #[arg(long, value_name = "N")]
    pub replicates: Option<usize>,
    #[arg(long, value_name = "RATE")]
    pub learning_rate: Option<f64>,
    #[arg(long, value_name = "N")]
    pub max_steps: Option<usize>,
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    #[arg(long, value_name = "N")]
    pub eval_every: Option<usize>,
    /// CIFAR-10 directory (overrides config and MK_DATA_DIR).
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Mark the config for grid tuning.
    #[arg(long)]
    pub grid: bool,
    /// Subset runs: also write per-step selection CSVs.
    #[arg(long)]
    pub selection_log: bool,
}

pub fn load_config_file(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config: {}: {e}", path.display())))
}

/// File (when given) plus flag overrides, then validation.
pub fn build_config(ov: &Overrides) -> CliResult<ExperimentConfig> {
    let mut cfg = match &ov.config {
        Some(path) => load_config_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(algo) = &ov.algo {
        cfg.algorithm = algo.parse::<Algorithm>().map_err(|e| match e {
            MkError::InvalidConfig(msg) => CliError::Config(format!("algorithm: {msg}")),
            other => CliError::Config(format!("algorithm: {other}")),
        })?;
    }
    if let Some(t) = &ov.topology {
        cfg.topology = Topology::parse(t)?;
    }
    if let Some(opt) = &ov.optimizer {
        cfg.optimizer = match opt.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "adam" => OptimizerKind::Adam,
            other => {
                return Err(CliError::Config(format!("optimizer: unknown optimizer '{other}' (expected sgd|adam)")))
            }
        };
    }
    if let Some(ds) = &ov.dataset {
        cfg.dataset = DatasetSel::parse(ds)?;
    }
    if let Some(e) = ov.expansion {
        cfg.expansion = e;
    }
    if let Some(r) = ov.replicates {
        cfg.replicates = r;
    }
    if let Some(lr) = ov.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(s) = ov.max_steps {
        cfg.max_steps = Some(s);
    }
    if let Some(b) = ov.batch_size {
        cfg.batch_size = b;
    }
    if let Some(ev) = ov.eval_every {
        cfg.eval_every = ev;
    }
    if let Some(dir) = &ov.data_dir {
        cfg.data_dir = Some(dir.clone());
    }
    if ov.grid {
        cfg.grid = true;
    }
    validate_config(&cfg)?;
    Ok(cfg)
}

fn validate_config(cfg: &ExperimentConfig) -> CliResult<()> {
    if cfg.replicates < 1 {
        return Err(CliError::Config("replicates: must be >= 1".into()));
    }
    if cfg.expansion < 1 {
        return Err(CliError::Config("expansion: must be >= 1".into()));
    }
    if matches!(cfg.algorithm, Algorithm::Ensemble | Algorithm::Distilled) && cfg.expansion < 2 {
        return Err(CliError::Config(format!(
            "expansion: {} needs at least 2 members (got {})",
            cfg.algorithm, cfg.expansion
        )));
    }
    cfg.topology.hidden_dims()?;
    if !(cfg.learning_rate > 0.0) {
        return Err(CliError::Config(format!("learning_rate: must be > 0 (got {})", cfg.learning_rate)));
    }
    if cfg.batch_size < 1 {
        return Err(CliError::Config("batch_size: must be >= 1".into()));
    }
    Ok(())
}

pub fn replicate_seed(base: u64, r: usize) -> u64 {
    RngStream::new(base).derive(&format!("replicate-{r}")).seed()
}

/// A config with its data loaded and every open field made concrete.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub spec: NetworkSpec,
    pub data: DataSplits,
    pub data_dir: Option<PathBuf>,
}

impl Resolved {
    /// The per-replicate training config (seed derived from the base seed).
    pub fn train_config(&self, replicate: usize) -> TrainConfig {
        let c = &self.config;
        let mut tc = TrainConfig::new(
            c.algorithm,
            self.spec.clone(),
            c.optimizer,
            c.learning_rate,
            c.max_steps.expect("resolved config has concrete max_steps"),
            replicate_seed(c.seed, replicate),
        );
        tc.batch_size = c.batch_size;
        tc.eval_every = c.eval_every;
        tc.distill = c.distill;
        tc.adv = c.adv;
        tc.subset = c.subset;
        tc
    }
}

fn cifar_dir(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    if let Some(dir) = &cfg.data_dir {
        return Ok(dir.clone());
    }
    if let Some(dir) = std::env::var_os("MK_DATA_DIR") {
        return Ok(PathBuf::from(dir));
    }
    Err(CliError::Config(
        "data_dir: dataset is cifar10 but neither data_dir nor MK_DATA_DIR is set (see `mk fetch-data`)".into(),
    ))
}

/// Loads (or regenerates) the configured dataset. Returns the splits plus
/// the input dimension, class count, and, for CIFAR, the directory used.
pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<(DataSplits, usize, usize, Option<PathBuf>)> {
    match cfg.dataset {
        DatasetSel::Cifar10 => {
            let dir = cifar_dir(cfg)?;
            let (train, val, test) = load_cifar10(&dir)?;
            Ok((DataSplits::new(train, Some(val), Some(test)), 3072, 10, Some(dir)))
        }
        DatasetSel::Blobs => {
            let b = &cfg.blobs;
            // The data seed is the base seed, not a replicate seed: every
            // replicate (and every algorithm under comparison) sees the
            // same dataset.
            let root = RngStream::new(cfg.seed);
            let train =
                make_blobs(&mut root.derive("blobs-train"), b.classes, b.per_class, b.dim, b.separation)?;
            let val =
                make_blobs(&mut root.derive("blobs-val"), b.classes, b.eval_per_class, b.dim, b.separation)?;
            let test =
                make_blobs(&mut root.derive("blobs-test"), b.classes, b.eval_per_class, b.dim, b.separation)?;
            Ok((DataSplits::new(train, Some(val), Some(test)), b.dim, b.classes, None))
        }
    }
}

/// Loads the dataset, fixes the step budget (30 epochs unless given), and
/// constructs the network spec for the selected topology and dataset shape.
pub fn resolve(mut cfg: ExperimentConfig, out_dir: &Path) -> CliResult<Resolved> {
    let hidden = cfg.topology.hidden_dims()?;
    let (data, input_dim, classes, data_dir) = load_dataset(&cfg)?;
    let steps = match cfg.max_steps {
        Some(s) => s,
        None => 30 * steps_per_epoch(data.train.len(), cfg.batch_size),
    };
    cfg.max_steps = Some(steps);
    cfg.out_dir = Some(out_dir.to_path_buf());
    cfg.version_tag = Some(mk_core::VERSION_TAG.to_string());
    let spec = NetworkSpec::new(input_dim, hidden, classes, cfg.expansion);
    spec.validate()?;
    Ok(Resolved { config: cfg, spec, data, data_dir })
}
