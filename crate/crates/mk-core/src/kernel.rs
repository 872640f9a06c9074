//! Extended kernels and their stochastic aggregation.
//!
//! An [`ExtendedKernel`] stores `e` stacked `n x m` weight slices plus one
//! shared bias row. Training mixes the slices entry-wise with simplex
//! weights freshly sampled each step ([`sample_probability_tensor`],
//! [`ExtendedKernel::aggregate`]); inference averages them uniformly
//! ([`ExtendedKernel::collapse`]). The difference between the two views is
//! the per-step weight perturbation ([`perturbation_of`]), the quantity the
//! theory diagnostics study.

use crate::linalg::{Matrix, Tensor3};
use crate::rng::RngStream;

/// `e` stacked weight slices (`n x m x e`) plus one shared `1 x m` bias.
///
/// The bias is deliberately not expanded: every slice shares it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedKernel {
    pub weights: Tensor3,
    pub bias: Matrix,
}

impl ExtendedKernel {
    /// Panics unless `bias` is `1 x m` for the tensor's `m`.
    pub fn new(weights: Tensor3, bias: Matrix) -> Self {
        assert_eq!(
            (bias.rows(), bias.cols()),
            (1, weights.m()),
            "ExtendedKernel: bias must be 1x{} (got {}x{})",
            weights.m(),
            bias.rows(),
            bias.cols()
        );
        ExtendedKernel { weights, bias }
    }

    /// Wraps a plain matrix as a single-slice kernel with zero bias.
    pub fn from_matrix(w: &Matrix) -> Self {
        let t = Tensor3::from_fn(w.rows(), w.cols(), 1, |i, j, _| w.get(i, j));
        let bias = Matrix::zeros(1, w.cols());
        ExtendedKernel::new(t, bias)
    }

    /// `(n, m, e)` of the weight tensor.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.weights.dims()
    }

    pub fn expansion(&self) -> usize {
        self.weights.e()
    }

    /// Mixes the slices entry-wise with the given probabilities:
    /// `out[i][j] = sum_k weights[i][j][k] * p[i][j][k]` in exact
    /// arithmetic, computed in the mean-plus-displacement form
    ///
    /// ```text
    /// out[i][j] = collapse[i][j] + sum_k (p[i][j][k] - 1/e) * (w[i][j][k] - w[i][j][0])
    /// ```
    ///
    /// The two forms agree algebraically (the probabilities sum to 1, the
    /// shifted factors sum to 0); the second makes the degenerate cases
    /// exact in floating point: uniform probabilities or all-equal slices
    /// return the collapsed matrix bit for bit, because every displacement
    /// term has an exactly-zero factor. Panics on a shape mismatch.
    pub fn aggregate(&self, p: &ProbabilityTensor) -> Matrix {
        assert_eq!(
            self.weights.dims(),
            p.probs.dims(),
            "aggregate: kernel {:?} vs probability tensor {:?}",
            self.weights.dims(),
            p.probs.dims()
        );
        let (n, m, e) = self.weights.dims();
        let inv_e = 1.0 / e as f64;
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let row = out.row_mut(i);
            for (j, o) in row.iter_mut().enumerate() {
                let w = self.weights.fiber(i, j);
                let q = p.probs.fiber(i, j);
                let mut mean = 0.0;
                for &wk in w {
                    mean += wk;
                }
                mean *= inv_e;
                let w0 = w[0];
                let mut eps = 0.0;
                for (&wk, &qk) in w.iter().zip(q) {
                    eps += (qk - inv_e) * (wk - w0);
                }
                *o = mean + eps;
            }
        }
        out
    }

    /// Uniform average of the slices: `(1/e) * sum_k weights[..][..][k]`.
    ///
    /// Summed over `k` ascending, then divided once: the same arithmetic as
    /// the mean term of [`ExtendedKernel::aggregate`], which therefore
    /// returns this matrix bit for bit under uniform probabilities.
    pub fn collapse(&self) -> Matrix {
        let (n, m, e) = self.weights.dims();
        let inv_e = 1.0 / e as f64;
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let row = out.row_mut(i);
            for (j, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for &wk in self.weights.fiber(i, j) {
                    acc += wk;
                }
                *o = acc * inv_e;
            }
        }
        out
    }
}

/// Entry-wise simplex weights over the `e` slices: every `(i, j)` fiber is
/// nonnegative and sums to 1 (within 1e-12).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTensor {
    pub probs: Tensor3,
}

impl ProbabilityTensor {
    /// The uniform tensor, every entry exactly `1/e` (exactly 1.0 at e=1).
    pub fn uniform(n: usize, m: usize, e: usize) -> Self {
        assert!(n >= 1 && m >= 1 && e >= 1);
        ProbabilityTensor {
            probs: Tensor3::filled(n, m, e, 1.0 / e as f64),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.probs.dims()
    }
}

/// Samples a probability tensor: each `(i, j)` fiber is `e` i.i.d. Exp(1)
/// draws divided by their sum, i.e. a flat Dirichlet draw on the simplex.
///
/// At `e = 1` every entry is exactly 1.0 (`x / x`).
pub fn sample_probability_tensor(rng: &mut RngStream, n: usize, m: usize, e: usize) -> ProbabilityTensor {
    assert!(n >= 1 && m >= 1 && e >= 1, "sample_probability_tensor: dims must be >= 1");
    let mut t = Tensor3::zeros(n, m, e);
    for i in 0..n {
        for j in 0..m {
            let fiber = t.fiber_mut(i, j);
            let mut sum = 0.0;
            for slot in fiber.iter_mut() {
                let x = rng.exponential();
                *slot = x;
                sum += x;
            }
            for slot in fiber.iter_mut() {
                *slot /= sum;
            }
        }
    }
    ProbabilityTensor { probs: t }
}

/// The `n x m` displacement between the aggregated and collapsed views of a
/// kernel. Identically zero when all slices are equal, and exactly zero
/// under uniform probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub epsilon: Matrix,
}

impl Perturbation {
    pub fn max_abs(&self) -> f64 {
        self.epsilon.max_abs()
    }

    /// Euclidean norm over all entries.
    pub fn l2_norm(&self) -> f64 {
        self.epsilon.as_slice().iter().map(|&x| x * x).sum::<f64>().sqrt()
    }
}

/// The displacement `aggregate(kernel, p) - collapse(kernel)`, computed in
/// the algebraically equivalent form
///
/// ```text
/// eps[i][j] = sum_k (p[i][j][k] - 1/e) * (w[i][j][k] - w[i][j][0])
/// ```
///
/// Subtracting the first slice inside the product changes nothing
/// mathematically (the factors `p_k - 1/e` sum to zero over k), but makes
/// the two degenerate cases exact in floating point: uniform probabilities
/// zero the left factor of every term, equal slices zero the right factor.
/// Against the direct difference of `aggregate` and `collapse` the result
/// agrees to 1e-12.
pub fn perturbation_of(kernel: &ExtendedKernel, p: &ProbabilityTensor) -> Perturbation {
    assert_eq!(
        kernel.weights.dims(),
        p.probs.dims(),
        "perturbation_of: kernel {:?} vs probability tensor {:?}",
        kernel.weights.dims(),
        p.probs.dims()
    );
    let (n, m, e) = kernel.weights.dims();
    let inv_e = 1.0 / e as f64;
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let row = out.row_mut(i);
        for (j, o) in row.iter_mut().enumerate() {
            let w = kernel.weights.fiber(i, j);
            let q = p.probs.fiber(i, j);
            let w0 = w[0];
            let mut acc = 0.0;
            for (&wk, &qk) in w.iter().zip(q) {
                acc += (qk - inv_e) * (wk - w0);
            }
            *o = acc;
        }
    }
    Perturbation { epsilon: out }
}

/// Builds an extended kernel from a trained base matrix: every slice is
/// `base` plus independent Gaussian noise with standard deviation
/// `init_noise` (exact replication at zero noise). The bias starts at zero;
/// warm starts that carry a bias should set it afterwards.
pub fn expand_from(base: &Matrix, e: usize, init_noise: f64, rng: &mut RngStream) -> ExtendedKernel {
    assert!(e >= 1, "expand_from: e must be >= 1");
    assert!(init_noise >= 0.0, "expand_from: init_noise must be >= 0");
    let (n, m) = (base.rows(), base.cols());
    let mut t = Tensor3::zeros(n, m, e);
    // Slice-major draw order, rows then columns inside a slice; frozen.
    for k in 0..e {
        for i in 0..n {
            for j in 0..m {
                let noise = if init_noise == 0.0 { 0.0 } else { init_noise * rng.standard_normal() };
                t.set(i, j, k, base.get(i, j) + noise);
            }
        }
    }
    ExtendedKernel::new(t, Matrix::zeros(1, m))
}
