//! Exact tabular ground truth: value functions, occupancy measures, the
//! optimal policy and related quantities, all computed with the true `Psi`.

use nalgebra::{DMatrix, DVector};

use crate::data::Covariance;
use crate::error::{FogasError, Result};
use crate::linalg::{lu_solve, sup_norm};
use crate::mdp::LinearMdp;
use crate::policy::TabularPolicy;

/// Exact evaluation of one policy. State-action vectors are indexed like
/// the rows of `Phi`.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    /// `theta^pi = omega + gamma Psi v^pi`, so that `q = Phi theta^pi`.
    pub theta_pi: DVector<f64>,
    pub mu: DVector<f64>,
    pub nu: DVector<f64>,
    /// `lambda^pi = Phi^T mu^pi`
    pub lambda_pi: DVector<f64>,
    /// Normalised return `rho(pi) = <mu, r> = (1 - gamma) v(x0)`.
    pub return_value: f64,
}

/// `P_pi[x, x'] = sum_a pi(a|x) p(x'|x,a)` and `r_pi[x] = sum_a pi(a|x) r(x,a)`.
fn policy_kernel(mdp: &LinearMdp, policy: &TabularPolicy) -> (DMatrix<f64>, DVector<f64>) {
    let (xs, acts) = (mdp.num_states(), mdp.num_actions());
    let p = mdp.transitions();
    let r = mdp.rewards();
    let mut p_pi = DMatrix::zeros(xs, xs);
    let mut r_pi = DVector::zeros(xs);
    for x in 0..xs {
        for a in 0..acts {
            let w = policy.prob(x, a);
            if w == 0.0 {
                continue;
            }
            let row = x * acts + a;
            r_pi[x] += w * r[row];
            for y in 0..xs {
                p_pi[(x, y)] += w * p[(row, y)];
            }
        }
    }
    (p_pi, r_pi)
}

fn check_policy_shape(mdp: &LinearMdp, policy: &TabularPolicy) -> Result<()> {
    if policy.probs().shape() != (mdp.num_states(), mdp.num_actions()) {
        return Err(FogasError::Shape(format!(
            "policy is {:?}, MDP has {} states and {} actions",
            policy.probs().shape(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

/// Solves the Bellman equation and the flow condition by direct LU.
pub fn evaluate_policy(mdp: &LinearMdp, policy: &TabularPolicy) -> Result<PolicyEvaluation> {
    check_policy_shape(mdp, policy)?;
    let (xs, acts) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let (p_pi, r_pi) = policy_kernel(mdp, policy);
    let eye = DMatrix::<f64>::identity(xs, xs);

    let v = lu_solve(&eye - &p_pi * gamma, &r_pi, "policy evaluation")?;
    let q = mdp.rewards() + mdp.transitions() * &v * gamma;

    let mut init = DVector::zeros(xs);
    init[mdp.x0()] = 1.0 - gamma;
    let nu = lu_solve(&eye - p_pi.transpose() * gamma, &init, "occupancy")?;
    let mu = DVector::from_fn(xs * acts, |i, _| policy.prob(i / acts, i % acts) * nu[i / acts]);

    let theta_pi = mdp.omega() + mdp.psi() * &v * gamma;
    let lambda_pi = mdp.phi().transpose() * &mu;
    let return_value = mu.dot(mdp.rewards());
    Ok(PolicyEvaluation { q, v, theta_pi, mu, nu, lambda_pi, return_value })
}

/// Value iteration on `q` until successive iterates differ by at most
/// `tol (1 - gamma) / (2 gamma)` in sup norm, then the greedy policy (ties
/// to the lowest action index), evaluated exactly.
pub fn solve_optimal(mdp: &LinearMdp, tol: f64) -> Result<(TabularPolicy, PolicyEvaluation)> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(FogasError::InvalidArgument("tol must be positive".into()));
    }
    let (xs, acts) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let stop = tol * (1.0 - gamma) / (2.0 * gamma);
    let mut q = DVector::<f64>::zeros(xs * acts);
    loop {
        let v = DVector::from_fn(xs, |x, _| {
            (0..acts).map(|a| q[x * acts + a]).fold(f64::NEG_INFINITY, f64::max)
        });
        let next = mdp.rewards() + mdp.transitions() * &v * gamma;
        let gap = sup_norm(&(&next - &q));
        q = next;
        if gap <= stop {
            break;
        }
    }
    let greedy: Vec<usize> = (0..xs)
        .map(|x| {
            let mut best = 0;
            for a in 1..acts {
                if q[x * acts + a] > q[x * acts + best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    let pi = TabularPolicy::deterministic(&greedy, acts);
    let eval = evaluate_policy(mdp, &pi)?;
    Ok((pi, eval))
}

/// Feature coverage ratio `lambda^T Lambda^{-1} lambda`.
pub fn coverage_ratio(lambda_star: &DVector<f64>, cov: &Covariance) -> Result<f64> {
    if lambda_star.len() != cov.dim() {
        return Err(FogasError::Shape("lambda and covariance differ in dimension".into()));
    }
    Ok(cov.inv_norm_sq(lambda_star))
}

/// Residuals of the two equality constraints of the relaxed primal LP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpResiduals {
    /// `|| E^T mu - (1-gamma) nu0 - gamma Psi^T lambda ||_inf`
    pub flow: f64,
    /// `|| lambda - Phi^T mu ||_inf`
    pub feature: f64,
}

impl LpResiduals {
    pub fn max(&self) -> f64 {
        self.flow.max(self.feature)
    }
}

/// Residuals of the relaxed-LP constraints at an arbitrary `(lambda, mu)`.
pub fn relaxed_lp_residuals(mdp: &LinearMdp, lambda: &DVector<f64>, mu: &DVector<f64>) -> LpResiduals {
    let (xs, acts) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let back = mdp.psi().transpose() * lambda;
    let flow = (0..xs)
        .map(|x| {
            let marg: f64 = (0..acts).map(|a| mu[x * acts + a]).sum();
            let init = if x == mdp.x0() { 1.0 - gamma } else { 0.0 };
            (marg - init - gamma * back[x]).abs()
        })
        .fold(0.0, f64::max);
    let feature = sup_norm(&(lambda - mdp.phi().transpose() * mu));
    LpResiduals { flow, feature }
}

/// Evaluates `mu^pi`, sets `lambda = Phi^T mu^pi` and reports the relaxed-LP
/// residuals at that point.
pub fn relaxed_lp_feasibility(mdp: &LinearMdp, policy: &TabularPolicy) -> Result<LpResiduals> {
    let eval = evaluate_policy(mdp, policy)?;
    Ok(relaxed_lp_residuals(mdp, &eval.lambda_pi, &eval.mu))
}

/// Residuals of the Bellman equation and the flow condition for an
/// evaluation, in sup norm.
pub fn bellman_flow_residuals(mdp: &LinearMdp, eval: &PolicyEvaluation) -> (f64, f64) {
    let gamma = mdp.gamma();
    let bellman = sup_norm(&(&eval.q - (mdp.rewards() + mdp.transitions() * &eval.v * gamma)));
    let (xs, acts) = (mdp.num_states(), mdp.num_actions());
    let pt_mu = mdp.transitions().transpose() * &eval.mu;
    let flow = (0..xs)
        .map(|x| {
            let marg: f64 = (0..acts).map(|a| eval.mu[x * acts + a]).sum();
            let init = if x == mdp.x0() { 1.0 - gamma } else { 0.0 };
            (marg - init - gamma * pt_mu[x]).abs()
        })
        .fold(0.0, f64::max);
    (bellman, flow)
}
