//! Submodular subset-selection baseline.
//!
//! Each hidden layer keeps a bank of `e·m` candidate neurons. Before every
//! gradient step a monotone submodular utility-minus-redundancy objective is
//! maximized greedily to pick `m` of them; the forward/backward/update then
//! touches only the selected slice (the neuron's incoming weights and bias,
//! and the matching input rows of the next layer). After the last step the
//! selection runs once more on the updated bank and the sliced base-size
//! model is returned.
//!
//! Similarities are cosines clamped to `[0, 1]`; together with the
//! graph-restricted penalty and the `c` offset on utilities this makes the
//! objective genuinely monotone and submodular rather than approximately so.

use std::io::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{MkError, Result};
use crate::kernel::ExtendedKernel;
use crate::linalg::{Matrix, Tensor3};
use crate::network::{backward, forward, GradientSet, ModelParams, NetworkSpec};
use crate::optim::{adam_bias_corrections, adam_update_scalar, OptimizerKind};
use crate::train::{check_data_matches_spec, make_record, Algorithm, DataSplits, RunOutcome, TrainConfig};

fn default_one() -> f64 {
    1.0
}
fn default_t() -> usize {
    10
}

/// Knobs of the selection objective: `f(S) = alpha Σ_{i∈S} u(i) −
/// beta Σ_{(i,j)∈E, i,j∈S} s(i,j)` over a t-nearest-neighbor graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetParams {
    #[serde(default = "default_one")]
    pub alpha: f64,
    #[serde(default = "default_one")]
    pub beta: f64,
    #[serde(default = "default_t")]
    pub t: usize,
}

impl Default for SubsetParams {
    fn default() -> Self {
        SubsetParams { alpha: 1.0, beta: 1.0, t: 10 }
    }
}

impl SubsetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(MkError::InvalidConfig(format!("subset.alpha must be finite and >= 0 (got {})", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(MkError::InvalidConfig(format!("subset.beta must be finite and >= 0 (got {})", self.beta)));
        }
        if self.t < 1 {
            return Err(MkError::InvalidConfig("subset.t must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mutual-neighbor structure over candidate rows: per row the top-t most
/// similar other rows (descending), plus the symmetrized edge set used by
/// the redundancy penalty.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    /// Top-t lists, each of length `min(t, rows-1)`, sorted by descending
    /// similarity (ties by ascending index).
    pub neighbors: Vec<Vec<(usize, f64)>>,
    /// Union adjacency: `(i,j) ∈ E` iff j is in i's top-t or i is in j's.
    /// Sorted by ascending index.
    pub edges: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    pub fn rows(&self) -> usize {
        self.neighbors.len()
    }
}

/// Cosine similarity clamped to `[0, 1]`. A zero-norm vector is defined as
/// dissimilar to everything.
fn clamped_cosine(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Builds the t-nn graph over the rows of `rows`. Zero-norm rows get
/// similarity 0 to all others (reported on stderr, not fatal).
pub fn build_graph(rows: &Matrix, t: usize) -> Result<NeighborGraph> {
    let n = rows.rows();
    if n < 2 {
        return Err(MkError::InvalidConfig(format!("neighbor graph needs at least 2 rows (got {n})")));
    }
    if t < 1 {
        return Err(MkError::InvalidConfig("neighbor count t must be >= 1".into()));
    }
    let norms: Vec<f64> = (0..n).map(|i| l2(rows.row(i))).collect();
    let zero_rows = norms.iter().filter(|&&x| x == 0.0).count();
    if zero_rows > 0 {
        eprintln!("warning: {zero_rows} zero-norm candidate row(s); treating their similarities as 0");
    }
    let keep = t.min(n - 1);
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let mut sims: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, clamped_cosine(rows.row(i), norms[i], rows.row(j), norms[j])))
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        sims.truncate(keep);
        neighbors.push(sims);
    }
    let mut edge_sets: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
    for (i, list) in neighbors.iter().enumerate() {
        for &(j, s) in list {
            edge_sets[i].insert(j, s);
            edge_sets[j].insert(i, s);
        }
    }
    let edges = edge_sets.into_iter().map(|m| m.into_iter().collect()).collect();
    Ok(NeighborGraph { neighbors, edges })
}

/// The selection objective. Utilities are shifted by
/// `c = max_ℓ Σ_{j:(ℓ,j)∈E} s(ℓ,j)` so that with `alpha = beta` every
/// marginal gain is nonnegative and the objective is monotone.
#[derive(Debug, Clone)]
pub struct SubmodObjective {
    pub alpha: f64,
    pub beta: f64,
    pub utilities: Vec<f64>,
    pub offset: f64,
    pub graph: NeighborGraph,
}

impl SubmodObjective {
    /// `rows` are the candidate vectors (one per row, matching the graph).
    pub fn new(alpha: f64, beta: f64, rows: &Matrix, graph: NeighborGraph) -> SubmodObjective {
        let offset = graph
            .edges
            .iter()
            .map(|adj| adj.iter().map(|&(_, s)| s).sum::<f64>())
            .fold(0.0, f64::max);
        let utilities = (0..rows.rows()).map(|i| l2(rows.row(i)) + offset).collect();
        SubmodObjective { alpha, beta, utilities, offset, graph }
    }

    pub fn candidates(&self) -> usize {
        self.utilities.len()
    }

    /// Marginal gain of adding `i` to the set marked in `selected`:
    /// `alpha·u(i) − beta·Σ_{j∈E(i), selected} s(i,j)`.
    pub fn gain(&self, i: usize, selected: &[bool]) -> f64 {
        let penalty: f64 = self.graph.edges[i].iter().filter(|&&(j, _)| selected[j]).map(|&(_, s)| s).sum();
        self.alpha * self.utilities[i] - self.beta * penalty
    }

    /// Objective value of a set; each undirected edge inside the set is
    /// counted once.
    pub fn value(&self, set: &[usize]) -> f64 {
        let mut selected = vec![false; self.candidates()];
        for &i in set {
            selected[i] = true;
        }
        let util: f64 = set.iter().map(|&i| self.utilities[i]).sum();
        let mut redundancy = 0.0;
        for &i in set {
            for &(j, s) in &self.graph.edges[i] {
                if j > i && selected[j] {
                    redundancy += s;
                }
            }
        }
        self.alpha * util - self.beta * redundancy
    }
}

/// Greedy maximization: repeatedly adds the candidate with the largest
/// marginal gain, ties broken by smallest index. Returns indices in pick
/// order.
pub fn greedy_select(obj: &SubmodObjective, m: usize) -> Result<Vec<usize>> {
    let n = obj.candidates();
    if m > n {
        return Err(MkError::InvalidConfig(format!("cannot select {m} of {n} candidates")));
    }
    let mut selected = vec![false; n];
    let mut picks = Vec::with_capacity(m);
    for _ in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let g = obj.gain(i, &selected);
            // Strict > keeps the smallest index on ties.
            if best.map_or(true, |(_, bg)| g > bg) {
                best = Some((i, g));
            }
        }
        let (i, _) = best.expect("m <= candidates leaves at least one unselected");
        selected[i] = true;
        picks.push(i);
    }
    Ok(picks)
}

/// The widened training-time network: every hidden width scaled by `e`,
/// expansion 1 (the bank is a plain wide MLP; the output layer keeps its
/// width).
fn bank_spec(spec: &NetworkSpec) -> NetworkSpec {
    let hidden = spec.hidden_dims.iter().map(|&h| h * spec.expansion).collect();
    NetworkSpec::new(spec.input_dim, hidden, spec.output_dim, 1)
}

fn base_spec(spec: &NetworkSpec) -> NetworkSpec {
    NetworkSpec::new(spec.input_dim, spec.hidden_dims.clone(), spec.output_dim, 1)
}

/// Candidate matrix for hidden layer `l` of the bank: one row per neuron,
/// holding its incoming weight vector (biases excluded).
fn candidate_rows(bank: &ModelParams, l: usize) -> Matrix {
    let w = &bank.layers[l].weights;
    let (n, m, _) = w.dims();
    Matrix::from_fn(m, n, |j, i| w.get(i, j, 0))
}

/// Greedy selection for every hidden layer of the bank, each returned
/// sorted ascending (the slice keeps the bank's neuron order).
fn select_all_layers(bank: &ModelParams, spec: &NetworkSpec, params: &SubsetParams) -> Result<Vec<Vec<usize>>> {
    let mut selections = Vec::with_capacity(spec.hidden_dims.len());
    for (l, &target) in spec.hidden_dims.iter().enumerate() {
        let rows = candidate_rows(bank, l);
        if rows.rows() == target {
            // Selecting all of them is the identity; skip the graph build.
            selections.push((0..target).collect());
            continue;
        }
        let graph = build_graph(&rows, params.t)?;
        let obj = SubmodObjective::new(params.alpha, params.beta, &rows, graph);
        let mut sel = greedy_select(&obj, target)?;
        sel.sort_unstable();
        selections.push(sel);
    }
    Ok(selections)
}

/// Row/column index sets describing the selected slice of bank layer `l`.
fn slice_indices(
    spec: &NetworkSpec,
    selections: &[Vec<usize>],
    l: usize,
    bank: &ModelParams,
) -> (Vec<usize>, Vec<usize>) {
    let hidden = spec.hidden_dims.len();
    let rows: Vec<usize> = if l == 0 {
        (0..spec.input_dim).collect()
    } else {
        selections[l - 1].clone()
    };
    let cols: Vec<usize> = if l < hidden {
        selections[l].clone()
    } else {
        (0..bank.layers[l].dims().1).collect()
    };
    (rows, cols)
}

fn slice_bank(bank: &ModelParams, spec: &NetworkSpec, selections: &[Vec<usize>]) -> ModelParams {
    let base = base_spec(spec);
    let layers = (0..bank.layers.len())
        .map(|l| {
            let (rows, cols) = slice_indices(spec, selections, l, bank);
            let w = &bank.layers[l].weights;
            let b = &bank.layers[l].bias;
            ExtendedKernel {
                weights: Tensor3::from_fn(rows.len(), cols.len(), 1, |i, j, _| w.get(rows[i], cols[j], 0)),
                bias: Matrix::from_fn(1, cols.len(), |_, j| b.get(0, cols[j])),
            }
        })
        .collect();
    ModelParams { spec: base, layers }
}

/// Optimizer over the bank that updates only the selected entries. Moments
/// are stored at bank coordinates and the step counter is global, so at
/// expansion 1 (where every step selects everything) the arithmetic is the
/// dense optimizer's, bit for bit.
struct SparseOptimizer {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    m1: GradientSet,
    m2: GradientSet,
}

impl SparseOptimizer {
    fn new(kind: OptimizerKind, lr: f64, bank: &ModelParams) -> Result<SparseOptimizer> {
        if !(lr > 0.0) {
            return Err(MkError::InvalidConfig(format!("learning_rate must be > 0 (got {lr})")));
        }
        Ok(SparseOptimizer { kind, lr, t: 0, m1: GradientSet::zeros_like(bank), m2: GradientSet::zeros_like(bank) })
    }

    fn step(
        &mut self,
        bank: &mut ModelParams,
        grads: &GradientSet,
        spec: &NetworkSpec,
        selections: &[Vec<usize>],
        freeze_bias: bool,
    ) -> Result<()> {
        if let Some((layer, component, index, value)) = grads.find_non_finite() {
            return Err(MkError::NonFiniteGradient { layer, component, index, value });
        }
        self.t += 1;
        let (bc1, bc2) = adam_bias_corrections(self.t);
        for l in 0..bank.layers.len() {
            let (rows, cols) = slice_indices(spec, selections, l, bank);
            for (gi, &i) in rows.iter().enumerate() {
                for (gj, &j) in cols.iter().enumerate() {
                    let g = grads.weights[l].get(gi, gj, 0);
                    let w = &mut bank.layers[l].weights;
                    match self.kind {
                        OptimizerKind::Sgd => w.set(i, j, 0, w.get(i, j, 0) - self.lr * g),
                        OptimizerKind::Adam => {
                            let mut x = w.get(i, j, 0);
                            let mut m = self.m1.weights[l].get(i, j, 0);
                            let mut v = self.m2.weights[l].get(i, j, 0);
                            adam_update_scalar(&mut x, g, &mut m, &mut v, self.lr, bc1, bc2);
                            w.set(i, j, 0, x);
                            self.m1.weights[l].set(i, j, 0, m);
                            self.m2.weights[l].set(i, j, 0, v);
                        }
                    }
                }
            }
            for (gj, &j) in cols.iter().enumerate() {
                let g = if freeze_bias { 0.0 } else { grads.biases[l].get(0, gj) };
                let b = &mut bank.layers[l].bias;
                match self.kind {
                    OptimizerKind::Sgd => b.set(0, j, b.get(0, j) - self.lr * g),
                    OptimizerKind::Adam => {
                        let mut x = b.get(0, j);
                        let mut m = self.m1.biases[l].get(0, j);
                        let mut v = self.m2.biases[l].get(0, j);
                        adam_update_scalar(&mut x, g, &mut m, &mut v, self.lr, bc1, bc2);
                        b.set(0, j, x);
                        self.m1.biases[l].set(0, j, m);
                        self.m2.biases[l].set(0, j, v);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Trains via per-step greedy subset selection over an `e`-times-wider bank
/// of hidden neurons. Only the selected slice sees gradients each step; the
/// returned model is the final selection's base-size slice.
pub fn train_subset(cfg: &TrainConfig, data: &DataSplits) -> Result<RunOutcome> {
    cfg.validate()?;
    if cfg.algorithm != Algorithm::Subset {
        return Err(MkError::InvalidConfig(format!("config.algorithm is {}, expected subset", cfg.algorithm)));
    }
    check_data_matches_spec(cfg, data)?;
    let start = Instant::now();
    let wide = bank_spec(&cfg.spec);
    let mut bank = ModelParams::init(&wide, &mut cfg.root_rng().derive("init"));
    let mut opt = SparseOptimizer::new(cfg.optimizer, cfg.learning_rate, &bank)?;
    let mut batches =
        crate::data::BatchIterator::new(&data.train, cfg.batch_size, cfg.root_rng().derive("batches"));
    let mut log: Option<std::io::BufWriter<std::fs::File>> = match &cfg.selection_log {
        Some(path) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(f, "step,layer,indices")?;
            Some(f)
        }
        None => None,
    };
    let mut records = Vec::new();
    for step in 1..=cfg.max_steps {
        let (batch, labels) = batches.next_batch();
        let selections = select_all_layers(&bank, &cfg.spec, &cfg.subset)?;
        if let Some(f) = &mut log {
            for (l, sel) in selections.iter().enumerate() {
                let joined: Vec<String> = sel.iter().map(|i| i.to_string()).collect();
                writeln!(f, "{step},{l},{}", joined.join(" "))?;
            }
        }
        let sliced = slice_bank(&bank, &cfg.spec, &selections);
        let (_, cache) = forward(&sliced, None, &batch);
        let grads = backward(&sliced, None, &batch, &labels, &cache);
        opt.step(&mut bank, &grads, &cfg.spec, &selections, cfg.freeze_bias)?;

        let is_final = step == cfg.max_steps;
        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) || is_final {
            let current = slice_bank(&bank, &cfg.spec, &selections);
            records.push(make_record(cfg, &current, &batch, &labels, data, step, is_final));
        }
    }
    // Final selection against the updated bank decides the returned model.
    let final_sel = select_all_layers(&bank, &cfg.spec, &cfg.subset)?;
    let model = slice_bank(&bank, &cfg.spec, &final_sel);
    Ok(RunOutcome { model, records, wall_seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::train::{test_blob_splits, train_baseline};

    fn random_instance(seed: u64, n: usize, dim: usize, t: usize, alpha: f64, beta: f64) -> SubmodObjective {
        let mut rng = RngStream::new(seed);
        let rows = Matrix::from_fn(n, dim, |_, _| rng.standard_normal());
        let graph = build_graph(&rows, t).unwrap();
        SubmodObjective::new(alpha, beta, &rows, graph)
    }

    #[test]
    fn similarity_end_points() {
        let rows = Matrix::from_vec(3, 2, vec![1.0, 0.0, 2.0, 0.0, 0.0, 3.0]);
        let graph = build_graph(&rows, 10).unwrap();
        // Rows 0 and 1 are parallel (cos 1), rows 0 and 2 orthogonal (cos 0).
        let s01 = graph.edges[0].iter().find(|&&(j, _)| j == 1).unwrap().1;
        assert_eq!(s01, 1.0);
        let s02 = graph.edges[0].iter().find(|&&(j, _)| j == 2).map(|&(_, s)| s).unwrap_or(0.0);
        assert_eq!(s02, 0.0);
    }

    #[test]
    fn anti_parallel_rows_clamp_to_zero() {
        let rows = Matrix::from_vec(2, 2, vec![1.0, 1.0, -1.0, -1.0]);
        let graph = build_graph(&rows, 5).unwrap();
        assert_eq!(graph.neighbors[0], vec![(1, 0.0)]);
    }

    #[test]
    fn zero_norm_row_is_dissimilar_not_fatal() {
        let rows = Matrix::from_vec(3, 2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let graph = build_graph(&rows, 2).unwrap();
        assert!(graph.neighbors[0].iter().all(|&(_, s)| s == 0.0));
    }

    #[test]
    fn neighbor_lists_have_contract_length_and_order() {
        let obj = random_instance(11, 9, 4, 3, 1.0, 1.0);
        for list in &obj.graph.neighbors {
            assert_eq!(list.len(), 3);
            for w in list.windows(2) {
                assert!(w[0].1 >= w[1].1);
            }
            for &(_, s) in list {
                assert!((0.0..=1.0).contains(&s));
            }
        }
    }

    #[test]
    fn beta_zero_returns_largest_utilities() {
        let obj = random_instance(12, 10, 5, 3, 1.0, 0.0);
        let picks = greedy_select(&obj, 4).unwrap();
        let mut order: Vec<usize> = (0..obj.candidates()).collect();
        order.sort_by(|&a, &b| obj.utilities[b].partial_cmp(&obj.utilities[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(picks, order[..4].to_vec());
    }

    #[test]
    fn identical_rows_tie_break_to_prefix() {
        let rows = Matrix::filled(6, 3, 2.0);
        let graph = build_graph(&rows, 10).unwrap();
        let obj = SubmodObjective::new(1.0, 1.0, &rows, graph);
        assert_eq!(greedy_select(&obj, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn selecting_more_than_candidates_is_rejected() {
        let obj = random_instance(13, 5, 3, 2, 1.0, 1.0);
        assert!(greedy_select(&obj, 6).is_err());
    }

    #[test]
    fn monotone_and_submodular_on_random_instances() {
        for seed in 0..20u64 {
            let obj = random_instance(100 + seed, 10, 4, 3, 1.0, 1.0);
            let mut rng = RngStream::new(seed);
            // Random S ⊂ T and i ∉ T.
            let perm = rng.permutation(10);
            let t_size = 2 + (rng.next_below(6) as usize);
            let s_size = rng.next_below(t_size as u64) as usize;
            let t_set: Vec<usize> = perm[..t_size].to_vec();
            let s_set: Vec<usize> = t_set[..s_size].to_vec();
            let i = perm[t_size];

            let mark = |set: &[usize]| {
                let mut v = vec![false; 10];
                for &x in set {
                    v[x] = true;
                }
                v
            };
            let gain_s = obj.gain(i, &mark(&s_set));
            let gain_t = obj.gain(i, &mark(&t_set));
            assert!(gain_s >= gain_t - 1e-12, "seed {seed}: {gain_s} < {gain_t}");
            // Monotone: adding anything never hurts when alpha = beta.
            assert!(gain_t >= -1e-12, "seed {seed}: negative gain {gain_t}");
            let mut with_i = t_set.clone();
            with_i.push(i);
            assert!(obj.value(&with_i) >= obj.value(&t_set) - 1e-12);
        }
    }

    #[test]
    fn greedy_meets_the_approximation_bound() {
        fn brute_force(obj: &SubmodObjective, m: usize) -> f64 {
            let mut best = f64::NEG_INFINITY;
            let mut set = Vec::with_capacity(m);
            fn rec(obj: &SubmodObjective, start: usize, m: usize, set: &mut Vec<usize>, best: &mut f64) {
                if set.len() == m {
                    *best = best.max(obj.value(set));
                    return;
                }
                let n = obj.candidates();
                let need = m - set.len();
                for i in start..n {
                    if n - i < need {
                        break;
                    }
                    set.push(i);
                    rec(obj, i + 1, m, set, best);
                    set.pop();
                }
            }
            rec(obj, 0, m, &mut set, &mut best);
            best
        }
        let bound = 1.0 - 1.0 / std::f64::consts::E;
        for seed in 0..50u64 {
            let n = 8 + (seed % 5) as usize; // 8..=12 candidates
            let m = 3 + (seed % 3) as usize;
            let obj = random_instance(200 + seed, n, 4, 3, 1.0, 1.0);
            let picks = greedy_select(&obj, m).unwrap();
            let greedy_value = obj.value(&picks);
            let opt = brute_force(&obj, m);
            assert!(
                greedy_value >= bound * opt - 1e-9,
                "seed {seed}: greedy {greedy_value} < {} (opt {opt})",
                bound * opt
            );
        }
    }

    #[test]
    fn expansion_one_reduces_to_baseline_bitwise() {
        let data = test_blob_splits(31, 2, 40, 3);
        let spec = NetworkSpec::new(3, vec![8], 2, 1);
        let mut sub_cfg = TrainConfig::new(Algorithm::Subset, spec.clone(), OptimizerKind::Adam, 0.01, 120, 9);
        sub_cfg.batch_size = 16;
        sub_cfg.eval_every = 30;
        let mut base_cfg = sub_cfg.clone();
        base_cfg.algorithm = Algorithm::Baseline;

        let sub = train_subset(&sub_cfg, &data).unwrap();
        let base = train_baseline(&base_cfg, &data).unwrap();
        assert_eq!(sub.model, base.model);
        assert_eq!(sub.records.len(), base.records.len());
        for (a, b) in sub.records.iter().zip(&base.records) {
            let mut a2 = a.clone();
            a2.algorithm = Algorithm::Baseline;
            assert_eq!(&a2, b);
        }
    }

    #[test]
    fn selections_are_valid_every_step_and_blobs_separate() {
        let data = test_blob_splits(32, 2, 50, 3);
        let spec = NetworkSpec::new(3, vec![6], 2, 3);
        let mut cfg = TrainConfig::new(Algorithm::Subset, spec, OptimizerKind::Sgd, 0.05, 500, 10);
        cfg.batch_size = 16;
        cfg.eval_every = 0;
        let dir = tempfile::tempdir().unwrap();
        cfg.selection_log = Some(dir.path().join("sel.csv"));

        let out = train_subset(&cfg, &data).unwrap();
        assert_eq!(out.model.spec.hidden_dims, vec![6]);
        let (_, acc) = crate::train::evaluate_model(&out.model, &data.train);
        assert!(acc > 0.99, "train accuracy {acc}");

        let text = std::fs::read_to_string(cfg.selection_log.as_ref().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,layer,indices");
        let mut rows = 0;
        for line in lines {
            let mut parts = line.splitn(3, ',');
            let _step: usize = parts.next().unwrap().parse().unwrap();
            let layer: usize = parts.next().unwrap().parse().unwrap();
            assert_eq!(layer, 0);
            let idx: Vec<usize> = parts.next().unwrap().split(' ').map(|s| s.parse().unwrap()).collect();
            assert_eq!(idx.len(), 6);
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 6, "duplicate index in {line}");
            assert!(idx.iter().all(|&i| i < 18));
            rows += 1;
        }
        assert_eq!(rows, 500);
    }

    #[test]
    fn subset_is_seed_deterministic() {
        let data = test_blob_splits(33, 2, 20, 3);
        let spec = NetworkSpec::new(3, vec![5], 2, 2);
        let mut cfg = TrainConfig::new(Algorithm::Subset, spec, OptimizerKind::Sgd, 0.05, 40, 11);
        cfg.batch_size = 8;
        cfg.eval_every = 10;
        let a = train_subset(&cfg, &data).unwrap();
        let b = train_subset(&cfg, &data).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.records, b.records);
    }
}
