//! MLP construction, forward pass, cross-entropy, and exact reverse-mode
//! gradients through the stochastic aggregation.
//!
//! Every layer is an [`ExtendedKernel`]; a vanilla network is the `e = 1`
//! special case. The forward pass mixes each layer's slices with the
//! supplied probabilities (`None` means the uniform collapse, the inference
//! view). Backprop runs on cached pre-activations; the chain rule through
//! the aggregation gives `dL/dw[i][j][k] = p[i][j][k] * dL/dW_eff[i][j]`.
//!
//! Flattened-parameter order (frozen, shared by checkpoints, HVPs, and the
//! diagnostics): for each layer in order, the collapsed weight matrix
//! row-major, then the bias row.

use serde::{Deserialize, Serialize};

use crate::error::{MkError, Result};
use crate::kernel::{ExtendedKernel, ProbabilityTensor};
use crate::linalg::{Matrix, Tensor3};
use crate::rng::RngStream;

/// Hidden-layer nonlinearity. Only ReLU is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            // Subgradient convention at 0 is handled in `grad_at`.
            Activation::ReLU => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative at the pre-activation; exactly 0 at the kink.
    #[inline]
    pub fn grad_at(self, pre: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture description: dense layers `input -> hidden... -> output`
/// with a shared expansion factor (`1` = vanilla network).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub expansion: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize, expansion: usize) -> Self {
        NetworkSpec { input_dim, hidden_dims, output_dim, activation: Activation::ReLU, expansion }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 || self.output_dim < 1 {
            return Err(MkError::InvalidConfig(format!(
                "network dims must be >= 1 (input {}, output {})",
                self.input_dim, self.output_dim
            )));
        }
        if let Some(&d) = self.hidden_dims.iter().find(|&&d| d < 1) {
            return Err(MkError::InvalidConfig(format!("hidden dim must be >= 1 (got {d})")));
        }
        if self.expansion < 1 {
            return Err(MkError::InvalidConfig(format!("expansion must be >= 1 (got {})", self.expansion)));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer, chaining input through hiddens to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut chain = Vec::with_capacity(self.hidden_dims.len() + 2);
        chain.push(self.input_dim);
        chain.extend_from_slice(&self.hidden_dims);
        chain.push(self.output_dim);
        chain.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// Collapsed parameter count: `n*m` weights plus `m` biases per layer.
    pub fn collapsed_param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(n, m)| n * m + m).sum()
    }

    /// Same architecture at expansion 1.
    pub fn vanilla(&self) -> NetworkSpec {
        NetworkSpec { expansion: 1, ..self.clone() }
    }
}

/// All trainable state: one extended kernel per layer plus the spec that
/// shaped it. Layer dims chain (layer l's output is layer l+1's input).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: NetworkSpec,
    pub layers: Vec<ExtendedKernel>,
}

impl ModelParams {
    /// Fresh initialization: every slice of every kernel gets independent
    /// fan-in-scaled Gaussian entries (std `1/sqrt(fan_in)`), biases zero.
    /// Draw order is layer-major, then slice-major inside a layer; frozen.
    pub fn init(spec: &NetworkSpec, rng: &mut RngStream) -> ModelParams {
        spec.validate().expect("ModelParams::init: invalid spec");
        let e = spec.expansion;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(n, m)| {
                let std = 1.0 / (n as f64).sqrt();
                let mut t = Tensor3::zeros(n, m, e);
                for k in 0..e {
                    for i in 0..n {
                        for j in 0..m {
                            t.set(i, j, k, std * rng.standard_normal());
                        }
                    }
                }
                ExtendedKernel::new(t, Matrix::zeros(1, m))
            })
            .collect();
        ModelParams { spec: spec.clone(), layers }
    }

    pub fn expansion(&self) -> usize {
        self.spec.expansion
    }

    /// Uniform-collapsed weight matrix per layer.
    pub fn collapsed(&self) -> Vec<Matrix> {
        self.layers.iter().map(|k| k.collapse()).collect()
    }

    /// The inference-time network: collapsed weights as e=1 kernels, biases
    /// carried over unchanged.
    pub fn to_vanilla(&self) -> ModelParams {
        let layers = self
            .layers
            .iter()
            .map(|k| {
                let mut v = ExtendedKernel::from_matrix(&k.collapse());
                v.bias = k.bias.clone();
                v
            })
            .collect();
        ModelParams { spec: self.spec.vanilla(), layers }
    }

    /// Collapsed parameters in the frozen flattened order.
    pub fn flatten_collapsed(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.collapsed_param_count());
        for kernel in &self.layers {
            out.extend_from_slice(kernel.collapse().as_slice());
            out.extend_from_slice(kernel.bias.as_slice());
        }
        out
    }

    /// Rebuilds an e=1 network from a flattened parameter vector.
    /// Panics unless `flat` has exactly `spec.collapsed_param_count()` entries.
    pub fn from_flat(spec: &NetworkSpec, flat: &[f64]) -> ModelParams {
        assert_eq!(
            flat.len(),
            spec.collapsed_param_count(),
            "from_flat: expected {} parameters, got {}",
            spec.collapsed_param_count(),
            flat.len()
        );
        let mut layers = Vec::new();
        let mut off = 0;
        for (n, m) in spec.layer_dims() {
            let w = Matrix::from_vec(n, m, flat[off..off + n * m].to_vec());
            off += n * m;
            let bias = Matrix::from_vec(1, m, flat[off..off + m].to_vec());
            off += m;
            let mut k = ExtendedKernel::from_matrix(&w);
            k.bias = bias;
            layers.push(k);
        }
        ModelParams { spec: spec.vanilla(), layers }
    }
}

/// Per-layer gradients, shaped exactly like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Tensor3>,
    pub biases: Vec<Matrix>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> GradientSet {
        GradientSet {
            weights: params
                .layers
                .iter()
                .map(|k| {
                    let (n, m, e) = k.dims();
                    Tensor3::zeros(n, m, e)
                })
                .collect(),
            biases: params.layers.iter().map(|k| Matrix::zeros(1, k.bias.cols())).collect(),
        }
    }

    /// First non-finite entry as `(layer, component, flat index, value)`.
    pub fn find_non_finite(&self) -> Option<(usize, &'static str, usize, f64)> {
        for (l, t) in self.weights.iter().enumerate() {
            if let Some(idx) = t.as_slice().iter().position(|x| !x.is_finite()) {
                return Some((l, "weights", idx, t.as_slice()[idx]));
            }
        }
        for (l, b) in self.biases.iter().enumerate() {
            if let Some(idx) = b.as_slice().iter().position(|x| !x.is_finite()) {
                return Some((l, "bias", idx, b.as_slice()[idx]));
            }
        }
        None
    }

    pub fn max_abs(&self) -> f64 {
        let w = self.weights.iter().map(|t| t.as_slice().iter().fold(0.0f64, |a, &x| a.max(x.abs())));
        let b = self.biases.iter().map(|m| m.max_abs());
        w.chain(b).fold(0.0, f64::max)
    }
}

/// Everything backprop needs from the forward pass: the effective (mixed)
/// weight per layer, each layer's input, and each layer's pre-activation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub effective: Vec<Matrix>,
    pub inputs: Vec<Matrix>,
    pub pre: Vec<Matrix>,
}

fn effective_weights(params: &ModelParams, probs: Option<&[ProbabilityTensor]>) -> Vec<Matrix> {
    match probs {
        None => params.collapsed(),
        Some(ps) => {
            assert_eq!(
                ps.len(),
                params.layers.len(),
                "forward: {} probability tensors for {} layers",
                ps.len(),
                params.layers.len()
            );
            params.layers.iter().zip(ps).map(|(k, p)| k.aggregate(p)).collect()
        }
    }
}

/// Runs the network on a batch (rows = examples). `probs` selects the
/// training view (one tensor per layer) or, when `None`, the uniform
/// collapse used at inference. Hidden layers apply ReLU; the output layer is
/// linear. Panics on any shape mismatch.
pub fn forward(params: &ModelParams, probs: Option<&[ProbabilityTensor]>, batch: &Matrix) -> (Matrix, ForwardCache) {
    assert_eq!(
        batch.cols(),
        params.spec.input_dim,
        "forward: batch has {} features, network expects {}",
        batch.cols(),
        params.spec.input_dim
    );
    let act = params.spec.activation;
    let effective = effective_weights(params, probs);
    let num_layers = params.layers.len();

    let mut inputs = Vec::with_capacity(num_layers);
    let mut pre = Vec::with_capacity(num_layers);
    let mut a = batch.clone();
    for (l, w) in effective.iter().enumerate() {
        let mut z = a.matmul(w);
        let bias = params.layers[l].bias.row(0);
        for r in 0..z.rows() {
            for (zv, bv) in z.row_mut(r).iter_mut().zip(bias) {
                *zv += bv;
            }
        }
        inputs.push(a);
        a = if l + 1 < num_layers { z.map(|x| act.apply(x)) } else { Matrix::zeros(0, 0) };
        pre.push(z);
    }
    let logits = pre.last().expect("network has at least one layer").clone();
    (logits, ForwardCache { effective, inputs, pre })
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean negative log-softmax of the labeled class, fused with the softmax
/// for stability (max subtraction, no separate probability materialization).
/// Panics if a label falls outside `[0, classes)`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    assert_eq!(logits.rows(), labels.len(), "cross_entropy: {} rows vs {} labels", logits.rows(), labels.len());
    let classes = logits.cols();
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        assert!(label < classes, "cross_entropy: label {label} out of range 0..{classes}");
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
        let mut sum = 0.0;
        for &x in row {
            sum += (x - max).exp();
        }
        total += sum.ln() - (row[label] - max);
    }
    total / labels.len() as f64
}

/// Fraction of rows whose argmax (ties to the smallest index) matches the
/// label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    assert_eq!(logits.rows(), labels.len());
    let mut correct = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let mut best = 0usize;
        for (j, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

/// Gradient of the batch cross-entropy w.r.t. the logits: `(softmax - onehot)
/// / batch`. Shared by training and distillation.
pub(crate) fn ce_dlogits(logits: &Matrix, labels: &[usize]) -> Matrix {
    let mut d = softmax_rows(logits);
    let inv_b = 1.0 / labels.len() as f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = d.row_mut(r);
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_b;
        }
    }
    d
}

/// Backprop from an upstream logit gradient down to effective-weight
/// gradients: per layer, `dL/dW_eff` and `dL/db`. The adversarial trainers
/// consume these directly; everything else scatters them into kernel-entry
/// gradients via the probabilities.
pub(crate) fn backward_effective(params: &ModelParams, cache: &ForwardCache, dlogits: Matrix) -> (Vec<Matrix>, Vec<Matrix>) {
    let act = params.spec.activation;
    let num_layers = params.layers.len();
    let mut dw_eff = vec![Matrix::zeros(0, 0); num_layers];
    let mut db = vec![Matrix::zeros(0, 0); num_layers];

    let mut dz = dlogits;
    for l in (0..num_layers).rev() {
        dw_eff[l] = cache.inputs[l].t_matmul(&dz);
        let sums = dz.column_sums();
        db[l] = Matrix::from_vec(1, sums.len(), sums);
        if l > 0 {
            let mut da = dz.matmul_t(&cache.effective[l]);
            let z_prev = &cache.pre[l - 1];
            for r in 0..da.rows() {
                for (dv, &zv) in da.row_mut(r).iter_mut().zip(z_prev.row(r)) {
                    *dv *= act.grad_at(zv);
                }
            }
            dz = da;
        }
    }
    (dw_eff, db)
}

/// Backprop from an upstream logit gradient; shared by the cross-entropy
/// and distillation losses. The chain rule through the aggregation scatters
/// each effective-weight gradient as `p[i][j][k] * dW_eff[i][j]` (uniform
/// `1/e` when no probabilities are given).
pub(crate) fn backward_from_dlogits(
    params: &ModelParams,
    probs: Option<&[ProbabilityTensor]>,
    cache: &ForwardCache,
    dlogits: Matrix,
) -> GradientSet {
    let (dw_eff, biases) = backward_effective(params, cache, dlogits);
    let weights = params
        .layers
        .iter()
        .enumerate()
        .map(|(l, kernel)| {
            let (n, m, e) = kernel.dims();
            let dw = &dw_eff[l];
            match probs {
                Some(ps) => Tensor3::from_fn(n, m, e, |i, j, k| ps[l].probs.get(i, j, k) * dw.get(i, j)),
                None => {
                    let inv_e = 1.0 / e as f64;
                    Tensor3::from_fn(n, m, e, |i, j, _| inv_e * dw.get(i, j))
                }
            }
        })
        .collect();
    GradientSet { weights, biases }
}

/// Exact gradients of the batch cross-entropy w.r.t. every extended-kernel
/// entry and bias. `cache` must come from a matching [`forward`] call with
/// the same `params`, `probs`, and batch.
pub fn backward(
    params: &ModelParams,
    probs: Option<&[ProbabilityTensor]>,
    batch: &Matrix,
    labels: &[usize],
    cache: &ForwardCache,
) -> GradientSet {
    assert_eq!(batch.rows(), labels.len(), "backward: {} rows vs {} labels", batch.rows(), labels.len());
    assert_eq!(batch.rows(), cache.inputs[0].rows(), "backward: cache built from a different batch");
    let logits = cache.pre.last().expect("network has at least one layer");
    backward_from_dlogits(params, probs, cache, ce_dlogits(logits, labels))
}

/// Central-difference gradient of an arbitrary scalar loss over every
/// kernel entry and bias. Quadratically slower than backprop; verification
/// only.
pub fn numerical_gradient_with<F>(params: &ModelParams, h: f64, loss_at: F) -> GradientSet
where
    F: Fn(&ModelParams) -> f64,
{
    let mut out = GradientSet::zeros_like(params);
    let mut work = params.clone();
    for l in 0..params.layers.len() {
        let (n, m, e) = params.layers[l].dims();
        for i in 0..n {
            for j in 0..m {
                for k in 0..e {
                    let orig = params.layers[l].weights.get(i, j, k);
                    work.layers[l].weights.set(i, j, k, orig + h);
                    let up = loss_at(&work);
                    work.layers[l].weights.set(i, j, k, orig - h);
                    let down = loss_at(&work);
                    work.layers[l].weights.set(i, j, k, orig);
                    out.weights[l].set(i, j, k, (up - down) / (2.0 * h));
                }
            }
        }
        for j in 0..m {
            let orig = params.layers[l].bias.get(0, j);
            work.layers[l].bias.set(0, j, orig + h);
            let up = loss_at(&work);
            work.layers[l].bias.set(0, j, orig - h);
            let down = loss_at(&work);
            work.layers[l].bias.set(0, j, orig);
            out.biases[l].set(0, j, (up - down) / (2.0 * h));
        }
    }
    out
}

/// Central-difference gradient oracle for the batch cross-entropy with the
/// probabilities held fixed.
pub fn numerical_gradient(
    params: &ModelParams,
    probs: Option<&[ProbabilityTensor]>,
    batch: &Matrix,
    labels: &[usize],
    h: f64,
) -> GradientSet {
    numerical_gradient_with(params, h, |p| {
        let (logits, _) = forward(p, probs, batch);
        cross_entropy(&logits, labels)
    })
}

/// Worst relative disagreement between two gradient sets, with the
/// denominator floored at 1 so near-zero entries are compared absolutely.
pub fn max_relative_error(a: &GradientSet, b: &GradientSet) -> f64 {
    assert_eq!(a.weights.len(), b.weights.len());
    let mut worst = 0.0f64;
    let mut upd = |x: f64, y: f64| {
        let denom = x.abs().max(y.abs()).max(1.0);
        worst = worst.max((x - y).abs() / denom);
    };
    for (ta, tb) in a.weights.iter().zip(&b.weights) {
        for (&x, &y) in ta.as_slice().iter().zip(tb.as_slice()) {
            upd(x, y);
        }
    }
    for (ba, bb) in a.biases.iter().zip(&b.biases) {
        for (&x, &y) in ba.as_slice().iter().zip(bb.as_slice()) {
            upd(x, y);
        }
    }
    worst
}

/// A differentiable scalar function of a flat parameter vector. The central
/// HVP and the modified-loss diagnostics are written against this so they
/// can be checked on closed-form losses.
pub trait ParamLoss {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> f64;
    fn grad(&self, theta: &[f64]) -> Vec<f64>;
}

/// Collapsed-network cross-entropy as a [`ParamLoss`] over the frozen
/// flattened order.
pub struct CollapsedNetLoss<'a> {
    spec: NetworkSpec,
    batch: &'a Matrix,
    labels: &'a [usize],
}

impl<'a> CollapsedNetLoss<'a> {
    pub fn new(spec: &NetworkSpec, batch: &'a Matrix, labels: &'a [usize]) -> Self {
        CollapsedNetLoss { spec: spec.vanilla(), batch, labels }
    }
}

impl ParamLoss for CollapsedNetLoss<'_> {
    fn dim(&self) -> usize {
        self.spec.collapsed_param_count()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let params = ModelParams::from_flat(&self.spec, theta);
        let (logits, _) = forward(&params, None, self.batch);
        cross_entropy(&logits, self.labels)
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let params = ModelParams::from_flat(&self.spec, theta);
        let (_, cache) = forward(&params, None, self.batch);
        let grads = backward(&params, None, self.batch, self.labels, &cache);
        flatten_gradient(&grads)
    }
}

/// Gradients in the same frozen order as [`ModelParams::flatten_collapsed`].
/// Only meaningful for e=1 gradient sets (one slice per layer).
pub fn flatten_gradient(grads: &GradientSet) -> Vec<f64> {
    let mut out = Vec::new();
    for (t, b) in grads.weights.iter().zip(&grads.biases) {
        assert_eq!(t.e(), 1, "flatten_gradient: expected e=1 gradients");
        out.extend_from_slice(t.as_slice());
        out.extend_from_slice(b.as_slice());
    }
    out
}

/// Central-difference Hessian-vector product `(∇L(θ+hv) − ∇L(θ−hv)) / 2h`
/// with `h = 1e-4 / ‖v‖`. An all-zero direction returns the zero vector.
pub fn hvp_central(loss: &dyn ParamLoss, theta: &[f64], v: &[f64]) -> Vec<f64> {
    assert_eq!(theta.len(), loss.dim());
    assert_eq!(v.len(), loss.dim());
    let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; v.len()];
    }
    let h = 1e-4 / norm;
    let plus: Vec<f64> = theta.iter().zip(v).map(|(&t, &d)| t + h * d).collect();
    let minus: Vec<f64> = theta.iter().zip(v).map(|(&t, &d)| t - h * d).collect();
    let gp = loss.grad(&plus);
    let gm = loss.grad(&minus);
    gp.iter().zip(&gm).map(|(&a, &b)| (a - b) / (2.0 * h)).collect()
}

/// Hessian-vector product of the collapsed network's cross-entropy at the
/// current parameters, in the frozen flattened order.
pub fn hessian_vector_product(params: &ModelParams, batch: &Matrix, labels: &[usize], v: &[f64]) -> Vec<f64> {
    let theta = params.flatten_collapsed();
    let loss = CollapsedNetLoss::new(&params.spec, batch, labels);
    hvp_central(&loss, &theta, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::sample_probability_tensor;

    fn sample_probs(params: &ModelParams, rng: &mut RngStream) -> Vec<ProbabilityTensor> {
        params
            .layers
            .iter()
            .map(|k| {
                let (n, m, e) = k.dims();
                sample_probability_tensor(rng, n, m, e)
            })
            .collect()
    }

    fn random_batch(rng: &mut RngStream, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
    }

    fn random_labels(rng: &mut RngStream, rows: usize, classes: usize) -> Vec<usize> {
        (0..rows).map(|_| rng.next_below(classes as u64) as usize).collect()
    }

    #[test]
    fn zero_network_produces_zero_logits() {
        let spec = NetworkSpec::new(4, vec![3], 2, 2);
        let mut params = ModelParams::init(&spec, &mut RngStream::new(0));
        for k in &mut params.layers {
            let (n, m, e) = k.dims();
            k.weights = Tensor3::zeros(n, m, e);
        }
        let batch = random_batch(&mut RngStream::new(1), 5, 4);
        let (logits, _) = forward(&params, None, &batch);
        assert!(logits.max_abs() == 0.0);
    }

    #[test]
    fn e1_forward_matches_plain_mlp_oracle_exactly() {
        let spec = NetworkSpec::new(5, vec![4, 3], 2, 1);
        let mut rng = RngStream::new(11);
        let params = ModelParams::init(&spec, &mut rng);
        let batch = random_batch(&mut rng, 6, 5);
        let probs = sample_probs(&params, &mut rng);
        let (logits, _) = forward(&params, Some(&probs), &batch);

        // Hand-rolled plain MLP using the same matmul primitive.
        let ws: Vec<Matrix> = params.layers.iter().map(|k| k.weights.slice_matrix(0)).collect();
        let mut a = batch.clone();
        for (l, w) in ws.iter().enumerate() {
            let mut z = a.matmul(w);
            for r in 0..z.rows() {
                for (zv, bv) in z.row_mut(r).iter_mut().zip(params.layers[l].bias.row(0)) {
                    *zv += bv;
                }
            }
            a = if l + 1 < ws.len() { z.map(|x| x.max(0.0)) } else { z };
        }
        assert_eq!(logits, a);
    }

    #[test]
    fn uniform_probs_match_collapsed_forward_within_1e12() {
        let spec = NetworkSpec::new(6, vec![5], 3, 3);
        let mut rng = RngStream::new(12);
        let params = ModelParams::init(&spec, &mut rng);
        let batch = random_batch(&mut rng, 7, 6);
        let uniform: Vec<ProbabilityTensor> = params
            .layers
            .iter()
            .map(|k| {
                let (n, m, e) = k.dims();
                ProbabilityTensor::uniform(n, m, e)
            })
            .collect();
        let (with_uniform, _) = forward(&params, Some(&uniform), &batch);
        let (collapsed, _) = forward(&params, None, &batch);
        assert!(with_uniform.max_abs_diff(&collapsed) < 1e-12);
    }

    #[test]
    fn cross_entropy_analytic_cases() {
        let logits = Matrix::zeros(4, 10);
        let labels = vec![0, 3, 7, 9];
        assert!((cross_entropy(&logits, &labels) - (10.0f64).ln()).abs() < 1e-12);

        let mut hot = Matrix::zeros(2, 5);
        hot.set(0, 2, 1000.0);
        hot.set(1, 4, 1000.0);
        assert!(cross_entropy(&hot, &[2, 4]) < 1e-6);
    }

    #[test]
    fn cross_entropy_matches_direct_summation_oracle() {
        let mut rng = RngStream::new(13);
        let logits = random_batch(&mut rng, 9, 7);
        let labels = random_labels(&mut rng, 9, 7);
        let mut expected = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            let p = (row[y] - max).exp() / z;
            expected -= p.ln();
        }
        expected /= labels.len() as f64;
        assert!((cross_entropy(&logits, &labels) - expected).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "label")]
    fn cross_entropy_rejects_out_of_range_label() {
        let logits = Matrix::zeros(1, 3);
        cross_entropy(&logits, &[3]);
    }

    #[test]
    fn backward_matches_central_differences_on_4_2_3_net() {
        let spec = NetworkSpec::new(4, vec![2], 3, 2);
        let mut rng = RngStream::new(14);
        let params = ModelParams::init(&spec, &mut rng);
        let batch = random_batch(&mut rng, 5, 4);
        let labels = random_labels(&mut rng, 5, 3);
        let probs = sample_probs(&params, &mut rng);

        let (_, cache) = forward(&params, Some(&probs), &batch);
        let analytic = backward(&params, Some(&probs), &batch, &labels, &cache);
        let numeric = numerical_gradient(&params, Some(&probs), &batch, &labels, 1e-5);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn uniform_probs_give_slice_grads_equal_to_scaled_vanilla_grad() {
        let spec = NetworkSpec::new(5, vec![3], 2, 3);
        let mut rng = RngStream::new(15);
        let params = ModelParams::init(&spec, &mut rng);
        let batch = random_batch(&mut rng, 6, 5);
        let labels = random_labels(&mut rng, 6, 2);

        let (_, cache) = forward(&params, None, &batch);
        let mk_grads = backward(&params, None, &batch, &labels, &cache);

        let vanilla = params.to_vanilla();
        let (_, vcache) = forward(&vanilla, None, &batch);
        let vgrads = backward(&vanilla, None, &batch, &labels, &vcache);

        for l in 0..params.layers.len() {
            let (n, m, e) = params.layers[l].dims();
            for i in 0..n {
                for j in 0..m {
                    let want = vgrads.weights[l].get(i, j, 0) / e as f64;
                    for k in 0..e {
                        assert!((mk_grads.weights[l].get(i, j, k) - want).abs() < 1e-10);
                    }
                }
            }
            assert!(mk_grads.biases[l].max_abs_diff(&vgrads.biases[l]) < 1e-12);
        }
    }

    #[test]
    fn zero_probability_entry_gets_zero_gradient() {
        let spec = NetworkSpec::new(3, vec![2], 2, 2);
        let mut rng = RngStream::new(16);
        let params = ModelParams::init(&spec, &mut rng);
        let batch = random_batch(&mut rng, 4, 3);
        let labels = random_labels(&mut rng, 4, 2);
        let mut probs = sample_probs(&params, &mut rng);
        // Force all of (0,1)'s mass onto slice 1 in layer 0.
        probs[0].probs.set(0, 1, 0, 0.0);
        probs[0].probs.set(0, 1, 1, 1.0);

        let (_, cache) = forward(&params, Some(&probs), &batch);
        let grads = backward(&params, Some(&probs), &batch, &labels, &cache);
        assert_eq!(grads.weights[0].get(0, 1, 0), 0.0);
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let spec = NetworkSpec::new(4, vec![3], 2, 3);
        let run = || {
            let mut rng = RngStream::new(17);
            let params = ModelParams::init(&spec, &mut rng);
            let batch = random_batch(&mut rng, 5, 4);
            let labels = random_labels(&mut rng, 5, 2);
            let probs = sample_probs(&params, &mut rng);
            let (_, cache) = forward(&params, Some(&probs), &batch);
            backward(&params, Some(&probs), &batch, &labels, &cache)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn flatten_round_trips_and_counts_match() {
        let spec = NetworkSpec::new(4, vec![3, 2], 2, 1);
        let params = ModelParams::init(&spec, &mut RngStream::new(18));
        let flat = params.flatten_collapsed();
        assert_eq!(flat.len(), spec.collapsed_param_count());
        let back = ModelParams::from_flat(&spec, &flat);
        assert_eq!(back.flatten_collapsed(), flat);
    }

    struct Quadratic {
        a: Matrix,
    }

    impl ParamLoss for Quadratic {
        fn dim(&self) -> usize {
            self.a.rows()
        }
        fn value(&self, theta: &[f64]) -> f64 {
            let mut total = 0.0;
            for i in 0..self.dim() {
                for j in 0..self.dim() {
                    total += 0.5 * theta[i] * self.a.get(i, j) * theta[j];
                }
            }
            total
        }
        fn grad(&self, theta: &[f64]) -> Vec<f64> {
            (0..self.dim())
                .map(|i| (0..self.dim()).map(|j| self.a.get(i, j) * theta[j]).sum())
                .collect()
        }
    }

    fn symmetric_quadratic(dim: usize, seed: u64) -> Quadratic {
        let mut rng = RngStream::new(seed);
        let raw = Matrix::from_fn(dim, dim, |_, _| rng.standard_normal());
        let a = Matrix::from_fn(dim, dim, |i, j| 0.5 * (raw.get(i, j) + raw.get(j, i)));
        Quadratic { a }
    }

    #[test]
    fn hvp_on_quadratic_equals_matrix_product() {
        let q = symmetric_quadratic(6, 19);
        let mut rng = RngStream::new(20);
        let theta: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
        let v: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
        let hv = hvp_central(&q, &theta, &v);
        for i in 0..6 {
            let want: f64 = (0..6).map(|j| q.a.get(i, j) * v[j]).sum();
            assert!((hv[i] - want).abs() < 1e-8, "entry {i}: {} vs {want}", hv[i]);
        }
    }

    #[test]
    fn hvp_zero_direction_returns_zero() {
        let spec = NetworkSpec::new(3, vec![2], 2, 2);
        let mut rng = RngStream::new(21);
        let params = ModelParams::init(&spec, &mut rng);
        let batch = random_batch(&mut rng, 4, 3);
        let labels = random_labels(&mut rng, 4, 2);
        let v = vec![0.0; spec.collapsed_param_count()];
        let hv = hessian_vector_product(&params, &batch, &labels, &v);
        assert!(hv.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hvp_is_linear_in_the_direction() {
        let spec = NetworkSpec::new(4, vec![3], 2, 1);
        let mut rng = RngStream::new(22);
        let params = ModelParams::init(&spec, &mut rng);
        let batch = random_batch(&mut rng, 6, 4);
        let labels = random_labels(&mut rng, 6, 2);
        let v: Vec<f64> = (0..spec.collapsed_param_count()).map(|_| rng.standard_normal()).collect();
        let v2: Vec<f64> = v.iter().map(|&x| 2.0 * x).collect();
        let hv = hessian_vector_product(&params, &batch, &labels, &v);
        let hv2 = hessian_vector_product(&params, &batch, &labels, &v2);
        for (a, b) in hv.iter().zip(&hv2) {
            let denom = a.abs().max(b.abs() / 2.0).max(1e-9);
            assert!((2.0 * a - b).abs() / denom < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn accuracy_breaks_ties_toward_smaller_index() {
        let logits = Matrix::from_vec(2, 3, vec![1.0, 1.0, 0.0, 0.5, 0.2, 0.9]);
        assert_eq!(accuracy(&logits, &[0, 2]), 1.0);
        assert_eq!(accuracy(&logits, &[1, 2]), 0.5);
    }
}
