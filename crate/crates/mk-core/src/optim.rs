//! SGD and Adam update rules and the learning-rate grid protocol.
//!
//! Both optimizers update every extended-kernel entry and bias from a
//! [`GradientSet`]. A non-finite gradient aborts the step with a diagnostic
//! naming the offending layer and entry, so a blown-up run fails loudly
//! instead of training on NaNs.

use serde::{Deserialize, Serialize};

use crate::error::{MkError, Result};
use crate::network::{GradientSet, ModelParams};

pub(crate) const ADAM_BETA1: f64 = 0.9;
pub(crate) const ADAM_BETA2: f64 = 0.999;
pub(crate) const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::Sgd => write!(f, "sgd"),
            OptimizerKind::Adam => write!(f, "adam"),
        }
    }
}

/// Bias-correction denominators `(1 - β1^t, 1 - β2^t)` at step `t`.
/// Computed once per step and shared by every entry, which keeps sliced
/// updates (the subset trainer) bit-identical to full updates.
pub(crate) fn adam_bias_corrections(t: u64) -> (f64, f64) {
    (1.0 - ADAM_BETA1.powi(t as i32), 1.0 - ADAM_BETA2.powi(t as i32))
}

/// One Adam update of a single scalar given its moment state and the
/// precomputed bias corrections.
#[inline]
pub(crate) fn adam_update_scalar(x: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, bc1: f64, bc2: f64) {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
}

/// Optimizer state for one model: the rule, the rate, the step counter, and
/// (for Adam) first/second moments shaped exactly like the parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub step_count: u64,
    moments: Option<AdamMoments>,
}

#[derive(Debug, Clone)]
struct AdamMoments {
    m: GradientSet,
    v: GradientSet,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ModelParams) -> Result<OptimizerState> {
        if !(learning_rate > 0.0) {
            return Err(MkError::InvalidConfig(format!("learning_rate must be > 0 (got {learning_rate})")));
        }
        let moments = match kind {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam => Some(AdamMoments {
                m: GradientSet::zeros_like(params),
                v: GradientSet::zeros_like(params),
            }),
        };
        Ok(OptimizerState { kind, learning_rate, step_count: 0, moments })
    }

    /// Applies one update in place. SGD: `θ ← θ − ℓ·g`. Adam: standard
    /// bias-corrected update with β1=0.9, β2=0.999, ε=1e-8.
    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientSet) -> Result<()> {
        if let Some((layer, component, index, value)) = grads.find_non_finite() {
            return Err(MkError::NonFiniteGradient { layer, component, index, value });
        }
        assert_eq!(grads.weights.len(), params.layers.len(), "step: gradient/param layer count mismatch");
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.learning_rate;
                for (kernel, gw) in params.layers.iter_mut().zip(&grads.weights) {
                    assert_eq!(kernel.weights.dims(), gw.dims(), "step: weight gradient shape mismatch");
                    for (x, &g) in kernel.weights.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                        *x -= lr * g;
                    }
                }
                for (kernel, gb) in params.layers.iter_mut().zip(&grads.biases) {
                    for (x, &g) in kernel.bias.as_mut_slice().iter_mut().zip(gb.as_slice()) {
                        *x -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let lr = self.learning_rate;
                let (bc1, bc2) = adam_bias_corrections(self.step_count);
                let mo = self.moments.as_mut().expect("Adam state has moments");
                for (l, kernel) in params.layers.iter_mut().enumerate() {
                    assert_eq!(kernel.weights.dims(), grads.weights[l].dims(), "step: weight gradient shape mismatch");
                    let xs = kernel.weights.as_mut_slice();
                    let gs = grads.weights[l].as_slice();
                    let ms = mo.m.weights[l].as_mut_slice();
                    let vs = mo.v.weights[l].as_mut_slice();
                    for i in 0..xs.len() {
                        adam_update_scalar(&mut xs[i], gs[i], &mut ms[i], &mut vs[i], lr, bc1, bc2);
                    }
                    let xb = kernel.bias.as_mut_slice();
                    let gb = grads.biases[l].as_slice();
                    let mb = mo.m.biases[l].as_mut_slice();
                    let vb = mo.v.biases[l].as_mut_slice();
                    for i in 0..xb.len() {
                        adam_update_scalar(&mut xb[i], gb[i], &mut mb[i], &mut vb[i], lr, bc1, bc2);
                    }
                }
            }
        }
        Ok(())
    }
}

/// The tuning grid: rates `base · factor^i` for `i` in `exponents`.
#[derive(Debug, Clone)]
pub struct LrGrid {
    pub base: f64,
    pub factor: f64,
    pub exponents: std::ops::RangeInclusive<i32>,
}

impl LrGrid {
    /// The grid used for every experiment: Adam sweeps 0.001·1.5^i, SGD
    /// sweeps 0.025·1.5^i, i in [-4, 5].
    pub fn for_kind(kind: OptimizerKind) -> LrGrid {
        let base = match kind {
            OptimizerKind::Adam => 0.001,
            OptimizerKind::Sgd => 0.025,
        };
        LrGrid { base, factor: 1.5, exponents: -4..=5 }
    }

    pub fn rates(&self) -> Vec<f64> {
        self.exponents.clone().map(|i| self.base * self.factor.powi(i)).collect()
    }
}

/// The ten candidate learning rates for an optimizer, ascending.
pub fn grid_rates(kind: OptimizerKind) -> Vec<f64> {
    LrGrid::for_kind(kind).rates()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::kernel::ExtendedKernel;
    use crate::linalg::Tensor3;
    use crate::network::{backward, forward, NetworkSpec};
    use crate::rng::RngStream;

    fn one_param_model() -> ModelParams {
        let spec = NetworkSpec::new(1, vec![], 1, 1);
        let kernel = ExtendedKernel::new(Tensor3::filled(1, 1, 1, 1.0), Matrix::zeros(1, 1));
        ModelParams { spec, layers: vec![kernel] }
    }

    fn grad_of(value: f64, params: &ModelParams) -> GradientSet {
        let mut g = GradientSet::zeros_like(params);
        g.weights[0].set(0, 0, 0, value);
        g
    }

    #[test]
    fn sgd_arithmetic_is_exact() {
        let mut params = one_param_model();
        let grads = grad_of(2.0, &params);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, &params).unwrap();
        opt.step(&mut params, &grads).unwrap();
        assert_eq!(params.layers[0].weights.get(0, 0, 0), 1.0 - 0.1 * 2.0);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        let mut params = one_param_model();
        let g = 0.7;
        let grads = grad_of(g, &params);
        let lr = 0.01;
        let mut opt = OptimizerState::new(OptimizerKind::Adam, lr, &params).unwrap();
        opt.step(&mut params, &grads).unwrap();
        let delta = params.layers[0].weights.get(0, 0, 0) - 1.0;
        let expected = -lr * g / (g.abs() + ADAM_EPS);
        assert!((delta - expected).abs() < 1e-6, "delta {delta} vs {expected}");
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = one_param_model();
        let grads = GradientSet::zeros_like(&params);

        let mut sgd = OptimizerState::new(OptimizerKind::Sgd, 0.5, &params).unwrap();
        sgd.step(&mut params, &grads).unwrap();
        assert_eq!(params.layers[0].weights.get(0, 0, 0), 1.0);

        let mut adam = OptimizerState::new(OptimizerKind::Adam, 0.5, &params).unwrap();
        adam.step(&mut params, &grads).unwrap();
        assert!((params.layers[0].weights.get(0, 0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts_with_location() {
        let mut params = one_param_model();
        let grads = grad_of(f64::NAN, &params);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, &params).unwrap();
        let err = opt.step(&mut params, &grads).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer 0") && msg.contains("weights"), "message: {msg}");
        // Failed step must not move the parameters or the counter.
        assert_eq!(params.layers[0].weights.get(0, 0, 0), 1.0);
        assert_eq!(opt.step_count, 0);
    }

    #[test]
    fn rejects_nonpositive_learning_rate() {
        let params = one_param_model();
        assert!(OptimizerState::new(OptimizerKind::Sgd, 0.0, &params).is_err());
        assert!(OptimizerState::new(OptimizerKind::Adam, -1.0, &params).is_err());
    }

    #[test]
    fn grid_anchor_values() {
        let adam = grid_rates(OptimizerKind::Adam);
        let sgd = grid_rates(OptimizerKind::Sgd);
        assert_eq!(adam.len(), 10);
        assert_eq!(sgd.len(), 10);
        // i = 0 sits at index 4 of [-4, 5].
        assert_eq!(adam[4], 0.001);
        assert_eq!(sgd[4], 0.025);
        assert!((adam[0] - 0.001 / 1.5f64.powi(4)).abs() < 1e-18);
        assert!((adam[0] - 1.975_308_641_975e-4).abs() < 1e-9);
    }

    #[test]
    fn grids_are_strictly_increasing_and_positive() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let rates = grid_rates(kind);
            assert!(rates.iter().all(|&r| r > 0.0));
            assert!(rates.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn uniform_p_sgd_moves_collapsed_weights_like_scaled_vanilla() {
        let spec = NetworkSpec::new(5, vec![4], 3, 3);
        let mut rng = RngStream::new(40);
        let mut mk = ModelParams::init(&spec, &mut rng);
        let mut vanilla = mk.to_vanilla();
        let batch = Matrix::from_fn(6, 5, |_, _| rng.standard_normal());
        let labels: Vec<usize> = (0..6).map(|_| rng.next_below(3) as usize).collect();

        let lr = 0.09;
        let e = 3.0;
        let (_, cache) = forward(&mk, None, &batch);
        let g_mk = backward(&mk, None, &batch, &labels, &cache);
        let (_, vcache) = forward(&vanilla, None, &batch);
        let g_v = backward(&vanilla, None, &batch, &labels, &vcache);

        OptimizerState::new(OptimizerKind::Sgd, lr, &mk).unwrap().step(&mut mk, &g_mk).unwrap();
        OptimizerState::new(OptimizerKind::Sgd, lr / e, &vanilla).unwrap().step(&mut vanilla, &g_v).unwrap();

        // Collapsed weights coincide; the shared bias intentionally does not
        // (it moves at the full rate on the MK side).
        for (k_mk, k_v) in mk.layers.iter().zip(&vanilla.layers) {
            let diff = k_mk.collapse().max_abs_diff(&k_v.weights.slice_matrix(0));
            assert!(diff < 1e-10, "collapsed drift {diff}");
        }
    }
}
