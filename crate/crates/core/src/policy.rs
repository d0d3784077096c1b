//! Stationary stochastic policies: explicit tables and softmax policies
//! over the feature map.

use nalgebra::{DMatrix, DVector};

use crate::error::{FogasError, Result};
use crate::mdp::FeatureMap;

const ROW_TOL: f64 = 1e-10;

/// Anything that yields `pi(.|x)` on demand.
pub trait ActionDistribution {
    fn num_actions(&self) -> usize;

    /// Writes `pi(a|x)` for every action into `out`.
    fn fill_probs(&self, x: usize, out: &mut [f64]);
}

/// A policy stored as an `X x A` row-stochastic table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: DMatrix<f64>,
}

impl TabularPolicy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for (x, row) in probs.row_iter().enumerate() {
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(FogasError::InvalidArgument(format!(
                    "policy row {x} has a negative or non-finite entry"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(FogasError::InvalidArgument(format!(
                    "policy row {x} sums to {s}"
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64),
        }
    }

    /// Puts all mass on `actions[x]` in each state.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let mut probs = DMatrix::zeros(actions.len(), num_actions);
        for (x, &a) in actions.iter().enumerate() {
            probs[(x, a)] = 1.0;
        }
        Self { probs }
    }

    /// `(1 - eps) * self + eps * other`, row by row.
    pub fn mix(&self, other: &TabularPolicy, eps: f64) -> Result<Self> {
        if self.probs.shape() != other.probs.shape() {
            return Err(FogasError::Shape("policies differ in shape".into()));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(FogasError::InvalidArgument(format!("eps must lie in [0,1], got {eps}")));
        }
        Ok(Self {
            probs: &self.probs * (1.0 - eps) + &other.probs * eps,
        })
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[(x, a)]
    }
}

impl ActionDistribution for TabularPolicy {
    fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    fn fill_probs(&self, x: usize, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.probs[(x, a)];
        }
    }
}

/// `pi(a|x) ∝ exp(<phi(x,a), w>)` where `w` is the stored
/// `scale_times_param` (the product `alpha * theta_bar` during FOGAS).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    scale_times_param: DVector<f64>,
}

impl SoftmaxPolicy {
    pub fn new(scale_times_param: DVector<f64>) -> Result<Self> {
        if scale_times_param.iter().any(|v| !v.is_finite()) {
            return Err(FogasError::InvalidArgument(
                "softmax parameter must be finite".into(),
            ));
        }
        Ok(Self { scale_times_param })
    }

    /// The policy with all-zero logits, i.e. uniform.
    pub fn uniform(dim: usize) -> Self {
        Self { scale_times_param: DVector::zeros(dim) }
    }

    pub fn param(&self) -> &DVector<f64> {
        &self.scale_times_param
    }

    pub fn view<'a>(&'a self, features: &'a FeatureMap) -> SoftmaxView<'a> {
        SoftmaxView { features, param: &self.scale_times_param }
    }

    pub fn materialize(&self, features: &FeatureMap) -> TabularPolicy {
        let view = self.view(features);
        let (xs, acts) = (features.num_states(), features.num_actions());
        let mut probs = DMatrix::zeros(xs, acts);
        let mut buf = vec![0.0; acts];
        for x in 0..xs {
            view.fill_probs(x, &mut buf);
            for a in 0..acts {
                probs[(x, a)] = buf[a];
            }
        }
        TabularPolicy { probs }
    }
}

/// A softmax policy bound to its feature map.
#[derive(Debug, Clone, Copy)]
pub struct SoftmaxView<'a> {
    features: &'a FeatureMap,
    param: &'a DVector<f64>,
}

impl<'a> SoftmaxView<'a> {
    pub fn new(features: &'a FeatureMap, param: &'a DVector<f64>) -> Self {
        Self { features, param }
    }
}

impl ActionDistribution for SoftmaxView<'_> {
    fn num_actions(&self) -> usize {
        self.features.num_actions()
    }

    fn fill_probs(&self, x: usize, out: &mut [f64]) {
        softmax_row(self.features, self.param, x, out);
    }
}

/// Stable softmax of the logits `<phi(x,.), w>` with max subtraction.
pub(crate) fn softmax_row(features: &FeatureMap, w: &DVector<f64>, x: usize, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (a, o) in out.iter_mut().enumerate() {
        *o = features.dot(x, a, w);
        max = max.max(*o);
    }
    let mut z = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Builds `sigma(scaled_param)`, the softmax policy with logits
/// `<phi(x,a), scaled_param>`.
pub fn softmax_from_logit_param(
    features: &FeatureMap,
    scaled_param: DVector<f64>,
) -> Result<SoftmaxPolicy> {
    if scaled_param.len() != features.dim() {
        return Err(FogasError::Shape(format!(
            "parameter has length {}, expected dim = {}",
            scaled_param.len(),
            features.dim()
        )));
    }
    SoftmaxPolicy::new(scaled_param)
}

/// One mirror-ascent step in cumulative form: adds `alpha * theta` to the
/// stored parameter. Equivalent to `pi'(a|x) ∝ pi(a|x) exp(alpha <phi(x,a), theta>)`.
pub fn policy_update_step(prev: &SoftmaxPolicy, theta: &DVector<f64>, alpha: f64) -> SoftmaxPolicy {
    SoftmaxPolicy {
        scale_times_param: &prev.scale_times_param + theta * alpha,
    }
}
