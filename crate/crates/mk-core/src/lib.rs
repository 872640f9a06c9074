//! Majority-kernels training library.
//!
//! Every layer of a majority-kernels network stores an *extended kernel*: `e`
//! stacked weight slices instead of one matrix. During training the slices
//! are mixed by freshly sampled simplex weights each step, so the optimizer
//! explores a stochastic neighborhood of the mean weights; at inference the
//! slices collapse to their uniform average and the model is exactly
//! base-sized again. This crate implements that training scheme end to end,
//! together with the baselines it is measured against and numerical
//! diagnostics for the theory that motivates it.
//!
//! # Modules
//!
//! - [`linalg`]: dense row-major `f64` matrices and rank-3 tensors with a
//!   frozen reduction order, so every product is bit-reproducible.
//! - [`rng`]: a single seeded generator ([`RngStream`]) behind all
//!   randomness; independent substreams are derived from text labels.
//! - [`kernel`]: extended kernels, probability tensors, stochastic
//!   aggregation, uniform collapse, and the induced weight perturbation.
//! - [`network`]: MLP construction, forward pass, fused softmax
//!   cross-entropy, reverse-mode gradients through the aggregation, and
//!   finite-difference Hessian-vector products.
//! - [`checkpoint`]: versioned binary model snapshots with bit-exact
//!   round-trips.
//! - [`optim`]: SGD and Adam, plus the learning-rate grid used by the
//!   experiment protocol.
//! - [`data`]: CIFAR-10 binary ingestion, synthetic datasets, per-dimension
//!   standardization, and seeded epoch batching.
//! - [`train`]: the training algorithms: baseline, majority kernels,
//!   ensemble, distillation, and the adversarial-probability variants.
//! - [`subset`]: the submodular neuron-subset-selection baseline.
//! - [`diagnostics`]: numerical checks of the theory: modified-loss terms,
//!   stochastic sharpness, perturbation statistics, and the reduced
//!   learning-rate equivalence harness.
//!
//! # Error handling
//!
//! Shape agreement between matrices, tensors, and network layers is a
//! programmer contract: hot-path operations (`matmul`, `aggregate`,
//! `forward`) panic with a precise message when it is violated. Fallible
//! boundaries (configuration validation, dataset ingestion, checkpoint I/O,
//! optimizer gradient screening) return [`MkError`] instead.
//!
//! # Determinism
//!
//! Given one root seed, every experiment is replayable bit for bit: all
//! randomness flows through [`RngStream`], reductions run in a frozen order,
//! and nothing depends on thread scheduling or iteration order of hash maps.

pub mod checkpoint;
pub mod data;
pub mod diagnostics;
mod error;
pub mod kernel;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod rng;
pub mod subset;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use data::{load_cifar10, make_blobs, BatchIterator, Dataset, Normalization};
pub use diagnostics::{
    bea_terms, perturbation_stats, sharpness_delta, verify_uniform_fallback, BeaReport,
    PerturbationStats, SharpnessReport,
};
pub use error::{MkError, Result};
pub use kernel::{
    expand_from, perturbation_of, sample_probability_tensor, ExtendedKernel, Perturbation,
    ProbabilityTensor,
};
pub use linalg::{Matrix, Tensor3};
pub use network::{
    cross_entropy, forward, hessian_vector_product, Activation, GradientSet, ModelParams,
    NetworkSpec,
};
pub use optim::{grid_rates, LrGrid, OptimizerKind, OptimizerState};
pub use rng::RngStream;
pub use subset::{build_graph, greedy_select, train_subset, NeighborGraph, SubmodObjective, SubsetParams};
pub use train::{
    evaluate_model, run_single, train_baseline, train_distilled, train_ensemble, train_mk,
    tune_grid, Algorithm, DataSplits, EnsembleOutcome, EnsemblePredictor, GridCandidate,
    RunOutcome, RunRecord, TrainConfig, TuneOutcome,
};

/// Version tag embedded in artifact provenance (checkpoints, summaries).
pub const VERSION_TAG: &str = concat!("mk-core/", env!("CARGO_PKG_VERSION"));
