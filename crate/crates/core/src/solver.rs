//! Feature-occupancy gradient ascent (FOGAS).
//!
//! Each iteration `t = 1..T`:
//!
//! 1. `Phi^T mu_hat(lambda_t, pi_t)` from the estimated transition model,
//! 2. `theta_t`, the best response over the ball of radius `D_theta`,
//! 3. `theta_bar_t = theta_bar_{t-1} + theta_t` and `pi_{t+1} = sigma(alpha Phi theta_bar_t)`,
//! 4. `g_t = omega + gamma Psi_hat v(theta_t, pi_t) - theta_t`,
//! 5. `lambda_{t+1} = (lambda_t + eta Lambda g_t) / (1 + rho eta)`.
//!
//! The output is `pi_J` for `J` uniform on `{1..T}`. The solver only reads
//! the policy at `x0` and at next states present in the data.

use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Covariance, OfflineDataset, PsiHat};
use crate::error::{FogasError, Result};
use crate::linalg::check_finite;
use crate::mdp::{FeatureMap, FeatureModel};
use crate::policy::{ActionDistribution, SoftmaxPolicy, SoftmaxView};

/// Below this norm the best response returns the origin.
const TIE_NORM: f64 = 1e-14;

/// FOGAS hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FogasConfig {
    /// Number of iterations `T`.
    pub iterations: usize,
    pub d_theta: f64,
    pub alpha: f64,
    pub rho: f64,
    pub eta: f64,
    pub beta: f64,
    /// Confidence parameter; only used by auto-tuning.
    pub delta: f64,
    pub auto_tune: bool,
    pub record_trajectory: bool,
    /// Seed for the output index `J`.
    pub seed: u64,
}

impl FogasConfig {
    /// `D_theta = sqrt(d) / (1 - gamma)`, the radius that contains every `theta^pi`.
    pub fn default_d_theta(model: &FeatureModel) -> f64 {
        (model.dim() as f64).sqrt() / (1.0 - model.gamma)
    }

    /// Smallest `T` with `T >= 2 R^2 n ln A / ln(1/delta)`, at least 1.
    pub fn recommended_iterations(model: &FeatureModel, n: usize, delta: f64) -> usize {
        let r2 = model.feature_bound * model.feature_bound;
        let t = 2.0 * r2 * n as f64 * (model.num_actions() as f64).ln() / (1.0 / delta).ln();
        (t.ceil() as usize).max(1)
    }

    /// Manual rates. `D_theta` defaults to `sqrt(d)/(1-gamma)` when `None`.
    #[allow(clippy::too_many_arguments)]
    pub fn manual(
        model: &FeatureModel,
        iterations: usize,
        alpha: f64,
        rho: f64,
        eta: f64,
        beta: f64,
        d_theta: Option<f64>,
        seed: u64,
    ) -> Self {
        Self {
            iterations,
            d_theta: d_theta.unwrap_or_else(|| Self::default_d_theta(model)),
            alpha,
            rho,
            eta,
            beta,
            delta: 0.05,
            auto_tune: false,
            record_trajectory: false,
            seed,
        }
    }

    /// Recommended rates for `n` samples, `T` iterations and
    /// confidence `delta`. Returns a warning when `T` is below the
    /// recommended minimum.
    pub fn auto_tuned(
        model: &FeatureModel,
        n: usize,
        iterations: usize,
        delta: f64,
        seed: u64,
    ) -> Result<(Self, Option<String>)> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(FogasError::InvalidArgument(format!("delta must lie in (0,1), got {delta}")));
        }
        if n == 0 || iterations == 0 {
            return Err(FogasError::InvalidArgument("n and T must be ≥ 1".into()));
        }
        let d = model.dim() as f64;
        let gamma = model.gamma;
        let r2 = model.feature_bound * model.feature_bound;
        let t = iterations as f64;
        let ln_a = (model.num_actions() as f64).ln();
        let one_minus = 1.0 - gamma;
        let cfg = Self {
            iterations,
            d_theta: Self::default_d_theta(model),
            alpha: (2.0 * one_minus * one_minus * ln_a / (r2 * d * t)).sqrt(),
            rho: gamma
                * (320.0 * d * d * (2.0 * t / delta).ln() / (one_minus * one_minus * n as f64)).sqrt(),
            eta: (one_minus * one_minus / (27.0 * r2 * d * d * t)).sqrt(),
            beta: r2 / (d * t),
            delta,
            auto_tune: true,
            record_trajectory: false,
            seed,
        };
        let needed = 2.0 * r2 * n as f64 * ln_a / (1.0 / delta).ln();
        let warning = (t < needed).then(|| {
            format!("T = {iterations} is below the recommended 2 R^2 n ln A / ln(1/delta) = {needed:.1}")
        });
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        Ok((cfg, warning))
    }

    pub fn with_trajectory(mut self, record: bool) -> Self {
        self.record_trajectory = record;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(FogasError::InvalidArgument(format!("{what} must be positive and finite, got {v}")))
        };
        if self.iterations == 0 {
            return Err(FogasError::InvalidArgument("T must be ≥ 1".into()));
        }
        if !(self.d_theta > 0.0 && self.d_theta.is_finite()) {
            return bad("d_theta", self.d_theta);
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", self.eta);
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta", self.beta);
        }
        // alpha = 0 only arises for single-action problems; rho = 0 disables stabilisation
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(FogasError::InvalidArgument(format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(FogasError::InvalidArgument(format!("rho must be ≥ 0, got {}", self.rho)));
        }
        Ok(())
    }

    /// True when `D_theta` is the default radius, the condition under which
    /// the gap-to-suboptimality identity is asserted.
    pub fn has_default_radius(&self, model: &FeatureModel) -> bool {
        (self.d_theta - Self::default_d_theta(model)).abs() <= 1e-12 * self.d_theta.max(1.0)
    }
}

/// Per-iteration record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `lambda_1 .. lambda_T`
    pub lambdas: Vec<DVector<f64>>,
    /// `theta_1 .. theta_T`
    pub thetas: Vec<DVector<f64>>,
    /// `theta_bar_0 .. theta_bar_{T-1}`; `pi_t = sigma(alpha Phi theta_bar_{t-1})`.
    pub theta_bars: Vec<DVector<f64>>,
    /// `||Lambda g_t||^2_{Lambda^{-1}} = g_t^T Lambda g_t` for each iteration.
    pub grad_norms_sq: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// The policy in force during iteration `t` (1-based).
    pub fn policy(&self, t: usize, alpha: f64) -> SoftmaxPolicy {
        SoftmaxPolicy::new(&self.theta_bars[t - 1] * alpha).expect("finite trajectory")
    }
}

/// Result of a FOGAS run.
#[derive(Debug, Clone, PartialEq)]
pub struct FogasRun {
    pub config: FogasConfig,
    /// `J`, 1-based.
    pub chosen_index: usize,
    /// `pi_J = sigma(alpha Phi theta_bar_{J-1})`
    pub output_policy: SoftmaxPolicy,
    /// `lambda_{T+1}`
    pub lambda_final: DVector<f64>,
    /// `theta_bar_T`
    pub theta_bar_final: DVector<f64>,
    /// `max_t ||lambda_t||^2_{Lambda^{-1}}` over `t = 1..T+1`.
    pub max_lambda_norm_sq: f64,
    /// `max_t ||alpha theta_bar_t||`, for comparison with the softmax radius.
    pub max_policy_param_norm: f64,
    pub max_grad_norm_sq: f64,
    pub trajectory: Option<Trajectory>,
    pub warnings: Vec<String>,
}

/// `sum_a pi(a|x) phi(x,a)`
pub fn mean_feature<P: ActionDistribution>(features: &FeatureMap, policy: &P, x: usize) -> DVector<f64> {
    let acts = features.num_actions();
    let mut probs = vec![0.0; acts];
    policy.fill_probs(x, &mut probs);
    let mut out = DVector::zeros(features.dim());
    for (a, p) in probs.into_iter().enumerate() {
        if p != 0.0 {
            out.axpy(p, &features.row(x, a), 1.0);
        }
    }
    out
}

/// Mean features at `x0` and at each observed next state, in the order of
/// `psi_hat.columns()`.
struct StateMeans {
    at_x0: DVector<f64>,
    observed: Vec<DVector<f64>>,
}

impl StateMeans {
    fn compute<P: ActionDistribution>(model: &FeatureModel, psi_hat: &PsiHat, policy: &P) -> Self {
        Self {
            at_x0: mean_feature(&model.features, policy, model.x0),
            observed: psi_hat
                .columns()
                .iter()
                .map(|(x, _)| mean_feature(&model.features, policy, *x))
                .collect(),
        }
    }
}

fn mu_hat_from_means(model: &FeatureModel, psi_hat: &PsiHat, means: &StateMeans, lambda: &DVector<f64>) -> DVector<f64> {
    let gamma = model.gamma;
    let mut out = &means.at_x0 * (1.0 - gamma);
    for ((_, col), m) in psi_hat.columns().iter().zip(&means.observed) {
        out.axpy(gamma * col.dot(lambda), m, 1.0);
    }
    out
}

/// `Phi^T mu_hat(lambda, pi)` where
/// `mu_hat(x,a) = pi(a|x) [(1-gamma) nu0(x) + gamma <psi_hat(x), lambda>]`.
///
/// Evaluates the policy only at `x0` and at observed next states.
pub fn mu_hat_features<P: ActionDistribution>(
    model: &FeatureModel,
    psi_hat: &PsiHat,
    policy: &P,
    lambda: &DVector<f64>,
) -> DVector<f64> {
    let means = StateMeans::compute(model, psi_hat, policy);
    mu_hat_from_means(model, psi_hat, &means, lambda)
}

/// The same quantity summed sample by sample:
/// `(1-gamma) sum_a pi(a|x0) phi(x0,a) + gamma (1/n) sum_i sum_a pi(a|x'_i) phi(x'_i,a) <phi_i, Lambda^{-1} lambda>`.
pub fn mu_hat_features_from_samples<P: ActionDistribution>(
    model: &FeatureModel,
    dataset: &OfflineDataset,
    cov: &Covariance,
    policy: &P,
    lambda: &DVector<f64>,
) -> DVector<f64> {
    let fm = &model.features;
    let gamma = model.gamma;
    let solved = cov.solve(lambda);
    let mut acc = DVector::zeros(fm.dim());
    for t in dataset.transitions() {
        let w = fm.dot(t.x, t.a, &solved);
        acc.axpy(w, &mean_feature(fm, policy, t.x_next), 1.0);
    }
    mean_feature(fm, policy, model.x0) * (1.0 - gamma) + acc * (gamma / dataset.len() as f64)
}

/// Minimiser of `<theta, g>` over the ball of radius `d_theta`:
/// `-d_theta g / ||g||`, or the origin when `g` vanishes.
pub fn best_response_theta(g: &DVector<f64>, d_theta: f64) -> DVector<f64> {
    let norm = g.norm();
    if norm > TIE_NORM {
        g * (-d_theta / norm)
    } else {
        DVector::zeros(g.len())
    }
}

/// `omega + gamma Psi_hat v - theta`. `v` is indexed by state but only read
/// at observed next states.
pub fn lambda_gradient(
    omega: &DVector<f64>,
    psi_hat: &PsiHat,
    v: &[f64],
    theta: &DVector<f64>,
    gamma: f64,
) -> DVector<f64> {
    omega + psi_hat.apply(v) * gamma - theta
}

/// Closed-form maximiser of
/// `<l, g> - ||l - lambda_t||^2_{Lambda^{-1}} / (2 eta) - rho ||l||^2_{Lambda^{-1}} / 2`.
pub fn lambda_update(lambda_t: &DVector<f64>, g: &DVector<f64>, cov: &Covariance, eta: f64, rho: f64) -> DVector<f64> {
    (lambda_t + cov.apply(g) * eta) / (1.0 + rho * eta)
}

/// `6 beta (d + D^2) + 3 d (1 + R D)^2 + 3 gamma^2 d R^2 D^2`, the bound on
/// `||Lambda g_t||^2_{Lambda^{-1}}`.
pub fn gradient_norm_bound(beta: f64, dim: usize, d_theta: f64, feature_bound: f64, gamma: f64) -> f64 {
    let d = dim as f64;
    let (r, dt) = (feature_bound, d_theta);
    6.0 * beta * (d + dt * dt) + 3.0 * d * (1.0 + r * dt).powi(2) + 3.0 * gamma * gamma * d * r * r * dt * dt
}

/// Whether the data and features satisfy the assumptions behind
/// [`gradient_norm_bound`].
fn gradient_bound_applies(model: &FeatureModel, dataset: &OfflineDataset) -> bool {
    let d = model.dim() as f64;
    let fm = &model.features;
    model.omega.norm() <= d.sqrt() + 1e-8
        && fm.max_row_norm() <= model.feature_bound + 1e-8
        && dataset.transitions().iter().all(|t| {
            let r = fm.dot(t.x, t.a, &model.omega);
            (-1e-10..=1.0 + 1e-10).contains(&r)
        })
}

/// Runs FOGAS on `dataset` with `config`. Builds `Lambda` and `Psi_hat` with
/// `config.beta`.
pub fn run_fogas(model: &FeatureModel, dataset: &OfflineDataset, config: &FogasConfig) -> Result<FogasRun> {
    config.validate()?;
    dataset.check_indices(&model.features)?;
    let cov = Covariance::build(dataset, &model.features, config.beta)?;
    let psi_hat = PsiHat::from_covariance(dataset, &model.features, &cov);
    run_with_estimates(model, dataset, &cov, &psi_hat, config)
}

/// Runs FOGAS with a prebuilt covariance and estimator (both for `config.beta`).
pub fn run_with_estimates(
    model: &FeatureModel,
    dataset: &OfflineDataset,
    cov: &Covariance,
    psi_hat: &PsiHat,
    config: &FogasConfig,
) -> Result<FogasRun> {
    config.validate()?;
    let d = model.dim();
    let t_max = config.iterations;
    let gamma = model.gamma;
    let fm = &model.features;

    let check_bound = cfg!(debug_assertions) && gradient_bound_applies(model, dataset);
    let gn_bound = gradient_norm_bound(config.beta, d, config.d_theta, model.feature_bound, gamma);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let chosen_index = rng.random_range(1..=t_max);

    let mut lambda = DVector::<f64>::zeros(d);
    let mut theta_bar = DVector::<f64>::zeros(d);
    let mut output_param = None;
    let mut v = vec![0.0; fm.num_states()];

    let mut max_lambda_norm_sq = 0.0_f64;
    let mut max_policy_param_norm = 0.0_f64;
    let mut max_grad_norm_sq = 0.0_f64;
    let mut traj = config.record_trajectory.then(|| Trajectory {
        lambdas: Vec::with_capacity(t_max),
        thetas: Vec::with_capacity(t_max),
        theta_bars: Vec::with_capacity(t_max),
        grad_norms_sq: Vec::with_capacity(t_max),
    });

    for t in 1..=t_max {
        let param = &theta_bar * config.alpha;
        if t == chosen_index {
            output_param = Some(param.clone());
        }
        let policy = SoftmaxView::new(fm, &param);
        let means = StateMeans::compute(model, psi_hat, &policy);

        let mu_feat = mu_hat_from_means(model, psi_hat, &means, &lambda);
        let theta = best_response_theta(&(mu_feat - &lambda), config.d_theta);

        for ((x, _), m) in psi_hat.columns().iter().zip(&means.observed) {
            v[*x] = m.dot(&theta);
        }
        let g = lambda_gradient(&model.omega, psi_hat, &v, &theta, gamma);
        if !check_finite(&g) {
            return Err(FogasError::NonFinite { iteration: t, quantity: "lambda gradient" });
        }
        let gn = cov.norm_sq(&g);
        if check_bound {
            debug_assert!(gn <= gn_bound + 1e-8, "gradient norm {gn} exceeds bound {gn_bound} at t = {t}");
        }
        max_grad_norm_sq = max_grad_norm_sq.max(gn);
        max_lambda_norm_sq = max_lambda_norm_sq.max(cov.inv_norm_sq(&lambda));

        let next_lambda = lambda_update(&lambda, &g, cov, config.eta, config.rho);
        if !check_finite(&next_lambda) {
            return Err(FogasError::NonFinite { iteration: t, quantity: "lambda" });
        }

        if let Some(tr) = traj.as_mut() {
            tr.lambdas.push(lambda.clone());
            tr.thetas.push(theta.clone());
            tr.theta_bars.push(theta_bar.clone());
            tr.grad_norms_sq.push(gn);
        }

        theta_bar += &theta;
        if !check_finite(&theta_bar) {
            return Err(FogasError::NonFinite { iteration: t, quantity: "theta_bar" });
        }
        max_policy_param_norm = max_policy_param_norm.max(config.alpha * theta_bar.norm());
        lambda = next_lambda;
    }
    max_lambda_norm_sq = max_lambda_norm_sq.max(cov.inv_norm_sq(&lambda));

    let output_policy = SoftmaxPolicy::new(output_param.expect("J lies in 1..=T"))?;
    Ok(FogasRun {
        config: config.clone(),
        chosen_index,
        output_policy,
        lambda_final: lambda,
        theta_bar_final: theta_bar,
        max_lambda_norm_sq,
        max_policy_param_norm,
        max_grad_norm_sq,
        trajectory: traj,
        warnings: Vec::new(),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunDocument {
    config: FogasConfig,
    chosen_index: usize,
    output_param: Vec<f64>,
    lambda_final: Vec<f64>,
    theta_bar_final: Vec<f64>,
    max_lambda_norm_sq: f64,
    max_policy_param_norm: f64,
    max_grad_norm_sq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambdas: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thetas: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_bars: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grad_norms_sq: Option<Vec<f64>>,
    #[serde(default)]
    warnings: Vec<String>,
}

fn to_vecs(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|x| x.as_slice().to_vec()).collect()
}

fn from_vecs(v: Vec<Vec<f64>>) -> Vec<DVector<f64>> {
    v.into_iter().map(DVector::from_vec).collect()
}

impl FogasRun {
    pub fn to_json_string(&self) -> Result<String> {
        let tr = self.trajectory.as_ref();
        let doc = RunDocument {
            config: self.config.clone(),
            chosen_index: self.chosen_index,
            output_param: self.output_policy.param().as_slice().to_vec(),
            lambda_final: self.lambda_final.as_slice().to_vec(),
            theta_bar_final: self.theta_bar_final.as_slice().to_vec(),
            max_lambda_norm_sq: self.max_lambda_norm_sq,
            max_policy_param_norm: self.max_policy_param_norm,
            max_grad_norm_sq: self.max_grad_norm_sq,
            lambdas: tr.map(|t| to_vecs(&t.lambdas)),
            thetas: tr.map(|t| to_vecs(&t.thetas)),
            theta_bars: tr.map(|t| to_vecs(&t.theta_bars)),
            grad_norms_sq: tr.map(|t| t.grad_norms_sq.clone()),
            warnings: self.warnings.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: RunDocument = serde_json::from_str(s)?;
        let trajectory = match (doc.lambdas, doc.thetas, doc.theta_bars, doc.grad_norms_sq) {
            (Some(l), Some(t), Some(b), Some(g)) => {
                if l.len() != t.len() || b.len() != t.len() || g.len() != t.len() {
                    return Err(FogasError::Parse("trajectory arrays differ in length".into()));
                }
                Some(Trajectory {
                    lambdas: from_vecs(l),
                    thetas: from_vecs(t),
                    theta_bars: from_vecs(b),
                    grad_norms_sq: g,
                })
            }
            (None, None, None, None) => None,
            _ => return Err(FogasError::Parse("incomplete trajectory in run document".into())),
        };
        Ok(Self {
            config: doc.config,
            chosen_index: doc.chosen_index,
            output_policy: SoftmaxPolicy::new(DVector::from_vec(doc.output_param))?,
            lambda_final: DVector::from_vec(doc.lambda_final),
            theta_bar_final: DVector::from_vec(doc.theta_bar_final),
            max_lambda_norm_sq: doc.max_lambda_norm_sq,
            max_policy_param_norm: doc.max_policy_param_norm,
            max_grad_norm_sq: doc.max_grad_norm_sq,
            trajectory,
            warnings: doc.warnings,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
