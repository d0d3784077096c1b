//! Linear MDPs: transition and reward are linear in a known feature map,
//! `p(x'|x,a) = <phi(x,a), psi(x')>` and `r(x,a) = <phi(x,a), omega>`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Deserialize;

use crate::error::{FogasError, Result};
use crate::linalg::fmt_f64;

const NEG_TOL: f64 = 1e-10;
const ROW_SUM_TOL: f64 = 1e-8;
const REWARD_TOL: f64 = 1e-10;
const NORM_TOL: f64 = 1e-8;
const RANK_TOL: f64 = 1e-8;

/// The feature matrix `Phi`, one row per state-action pair.
///
/// Row `x * num_actions + a` holds `phi(x, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    num_states: usize,
    num_actions: usize,
    phi: DMatrix<f64>,
}

impl FeatureMap {
    pub fn new(num_states: usize, num_actions: usize, phi: DMatrix<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(FogasError::Shape(
                "num_states and num_actions must be positive".into(),
            ));
        }
        if phi.ncols() == 0 {
            return Err(FogasError::Shape("dim must be ≥ 1".into()));
        }
        if phi.nrows() != num_states * num_actions {
            return Err(FogasError::Shape(format!(
                "phi has {} rows, expected num_states*num_actions = {}",
                phi.nrows(),
                num_states * num_actions
            )));
        }
        Ok(Self { num_states, num_actions, phi })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    #[inline]
    pub fn index(&self, x: usize, a: usize) -> usize {
        x * self.num_actions + a
    }

    /// `<phi(x,a), w>`
    #[inline]
    pub fn dot(&self, x: usize, a: usize, w: &DVector<f64>) -> f64 {
        let row = self.index(x, a);
        (0..self.dim()).map(|j| self.phi[(row, j)] * w[j]).sum()
    }

    pub fn row(&self, x: usize, a: usize) -> DVector<f64> {
        self.phi.row(self.index(x, a)).transpose()
    }

    /// Largest Euclidean row norm.
    pub fn max_row_norm(&self) -> f64 {
        self.phi
            .row_iter()
            .map(|r| r.norm())
            .fold(0.0, f64::max)
    }
}

/// Everything a learner is allowed to know about the environment: the
/// feature map, reward weights, discount, initial state and feature bound.
/// The transition weights `Psi` are deliberately absent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub features: FeatureMap,
    pub omega: DVector<f64>,
    pub gamma: f64,
    pub x0: usize,
    /// `R >= 1`, an upper bound on every `||phi(x,a)||`.
    pub feature_bound: f64,
}

impl FeatureModel {
    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn num_states(&self) -> usize {
        self.features.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.features.num_actions()
    }
}

/// A validated-shape linear MDP with cached tabular `P` and `r`.
///
/// The initial distribution is always the delta at `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMdp {
    model: FeatureModel,
    psi: DMatrix<f64>,
    transitions: DMatrix<f64>,
    rewards: DVector<f64>,
}

impl LinearMdp {
    /// Builds an MDP after checking shapes. Semantic invariants (stochastic
    /// rows, reward range, norms, rank) are checked by [`LinearMdp::validate`].
    pub fn new(
        num_states: usize,
        num_actions: usize,
        phi: DMatrix<f64>,
        psi: DMatrix<f64>,
        omega: DVector<f64>,
        gamma: f64,
        x0: usize,
    ) -> Result<Self> {
        let features = FeatureMap::new(num_states, num_actions, phi)?;
        let d = features.dim();
        if psi.nrows() != d || psi.ncols() != num_states {
            return Err(FogasError::Shape(format!(
                "psi is {}x{}, expected dim x num_states = {}x{}",
                psi.nrows(),
                psi.ncols(),
                d,
                num_states
            )));
        }
        if omega.len() != d {
            return Err(FogasError::Shape(format!(
                "omega has length {}, expected dim = {d}",
                omega.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(FogasError::InvalidArgument(format!(
                "gamma must lie in (0,1), got {gamma}"
            )));
        }
        if x0 >= num_states {
            return Err(FogasError::Shape(format!(
                "x0 = {x0} out of range for {num_states} states"
            )));
        }
        let transitions = features.matrix() * &psi;
        let rewards = features.matrix() * &omega;
        let feature_bound = features.max_row_norm().max(1.0);
        Ok(Self {
            model: FeatureModel { features, omega, gamma, x0, feature_bound },
            psi,
            transitions,
            rewards,
        })
    }

    pub fn model(&self) -> &FeatureModel {
        &self.model
    }

    pub fn features(&self) -> &FeatureMap {
        &self.model.features
    }

    pub fn num_states(&self) -> usize {
        self.model.features.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.model.features.num_actions()
    }

    pub fn dim(&self) -> usize {
        self.model.features.dim()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        self.model.features.matrix()
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn omega(&self) -> &DVector<f64> {
        &self.model.omega
    }

    pub fn gamma(&self) -> f64 {
        self.model.gamma
    }

    pub fn x0(&self) -> usize {
        self.model.x0
    }

    pub fn feature_bound(&self) -> f64 {
        self.model.feature_bound
    }

    /// `P = Phi Psi`, shape `(X*A) x X`.
    pub fn transitions(&self) -> &DMatrix<f64> {
        &self.transitions
    }

    /// `r = Phi omega`, indexed like the rows of `Phi`.
    pub fn rewards(&self) -> &DVector<f64> {
        &self.rewards
    }

    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.rewards[self.model.features.index(x, a)]
    }

    /// Lists every violated linear-MDP invariant. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (xs, acts) = (self.num_states(), self.num_actions());
        let d = self.dim();
        let fm = self.features();
        for x in 0..xs {
            for a in 0..acts {
                let row = fm.index(x, a);
                let p = self.transitions.row(row);
                let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
                if min < -NEG_TOL {
                    out.push(Violation::at(ViolationKind::NegativeTransition, x, a, min));
                }
                let sum: f64 = p.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    out.push(Violation::at(ViolationKind::RowSum, x, a, sum));
                }
                let r = self.rewards[row];
                if !(-REWARD_TOL..=1.0 + REWARD_TOL).contains(&r) {
                    out.push(Violation::at(ViolationKind::RewardRange, x, a, r));
                }
                let norm = fm.matrix().row(row).norm();
                if norm > self.feature_bound() + NORM_TOL {
                    out.push(Violation::at(ViolationKind::FeatureNorm, x, a, norm));
                }
            }
        }
        let wn = self.omega().norm();
        if wn > (d as f64).sqrt() + NORM_TOL {
            out.push(Violation { kind: ViolationKind::OmegaNorm, location: None, magnitude: wn });
        }
        if let Some(ratio) = self.rank_deficiency() {
            out.push(Violation { kind: ViolationKind::RankDeficient, location: None, magnitude: ratio });
        }
        out
    }

    /// Returns `sigma_min / sigma_max` when it falls below the rank threshold.
    fn rank_deficiency(&self) -> Option<f64> {
        let phi = self.phi();
        if phi.nrows() < phi.ncols() {
            return Some(0.0);
        }
        let sv = phi.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        let ratio = if max > 0.0 { min / max } else { 0.0 };
        (ratio <= RANK_TOL).then_some(ratio)
    }

    /// Draws a random linear MDP with a mixture factorisation: `d` anchor
    /// next-state distributions form `Psi`, each `phi(x,a)` lies in the
    /// simplex, so `p(.|x,a)` is a convex combination of anchors. Rewards
    /// weights are uniform in `[0,1]`. The initial state is `0`.
    pub fn generate(
        num_states: usize,
        num_actions: usize,
        dim: usize,
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(FogasError::InvalidArgument("dim must be ≥ 1".into()));
        }
        if num_states == 0 || num_actions == 0 {
            return Err(FogasError::InvalidArgument(
                "states and actions must be ≥ 1".into(),
            ));
        }
        if dim > num_states * num_actions {
            return Err(FogasError::InvalidArgument(format!(
                "dim must be ≤ states*actions = {}",
                num_states * num_actions
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi = DMatrix::zeros(dim, num_states);
        for j in 0..dim {
            let q = simplex_draw(&mut rng, num_states);
            for (x, qx) in q.into_iter().enumerate() {
                psi[(j, x)] = qx;
            }
        }
        let mut phi = DMatrix::zeros(num_states * num_actions, dim);
        for row in 0..num_states * num_actions {
            let w = simplex_draw(&mut rng, dim);
            for (j, wj) in w.into_iter().enumerate() {
                phi[(row, j)] = wj;
            }
        }
        let omega = DVector::from_fn(dim, |_, _| rng.random::<f64>());
        Self::new(num_states, num_actions, phi, psi, omega, gamma, 0)
    }

    /// Writes the MDP document. Floats carry 17 significant digits.
    pub fn to_json_string(&self) -> String {
        fn list(it: impl Iterator<Item = f64>) -> String {
            let items: Vec<String> = it.map(fmt_f64).collect();
            format!("[{}]", items.join(", "))
        }
        let phi = self.phi();
        let psi = &self.psi;
        let phi_rm = (0..phi.nrows()).flat_map(|i| (0..phi.ncols()).map(move |j| phi[(i, j)]));
        let psi_rm = (0..psi.nrows()).flat_map(|i| (0..psi.ncols()).map(move |j| psi[(i, j)]));
        format!(
            "{{\n  \"num_states\": {},\n  \"num_actions\": {},\n  \"dim\": {},\n  \"gamma\": {},\n  \"x0\": {},\n  \"phi\": {},\n  \"psi\": {},\n  \"omega\": {}\n}}\n",
            self.num_states(),
            self.num_actions(),
            self.dim(),
            fmt_f64(self.gamma()),
            self.x0(),
            list(phi_rm),
            list(psi_rm),
            list(self.omega().iter().cloned()),
        )
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(s)?;
        let (xs, acts, d) = (doc.num_states, doc.num_actions, doc.dim);
        if doc.phi.len() != xs * acts * d {
            return Err(FogasError::Shape(format!(
                "phi has {} entries, expected {}",
                doc.phi.len(),
                xs * acts * d
            )));
        }
        if doc.psi.len() != d * xs {
            return Err(FogasError::Shape(format!(
                "psi has {} entries, expected {}",
                doc.psi.len(),
                d * xs
            )));
        }
        let phi = DMatrix::from_row_slice(xs * acts, d, &doc.phi);
        let psi = DMatrix::from_row_slice(d, xs, &doc.psi);
        Self::new(xs, acts, phi, psi, DVector::from_vec(doc.omega), doc.gamma, doc.x0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json_string().as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDocument {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    gamma: f64,
    x0: usize,
    phi: Vec<f64>,
    psi: Vec<f64>,
    omega: Vec<f64>,
}

fn simplex_draw(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NegativeTransition,
    RowSum,
    RewardRange,
    FeatureNorm,
    OmegaNorm,
    RankDeficient,
}

impl ViolationKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::NegativeTransition => "negative-transition",
            Self::RowSum => "row-sum",
            Self::RewardRange => "reward-range",
            Self::FeatureNorm => "feature-norm",
            Self::OmegaNorm => "omega-norm",
            Self::RankDeficient => "rank-deficient",
        }
    }
}

/// One failed invariant, with the offending `(x, a)` when it is local.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: Option<(usize, usize)>,
    pub magnitude: f64,
}

impl Violation {
    fn at(kind: ViolationKind, x: usize, a: usize, magnitude: f64) -> Self {
        Self { kind, location: Some((x, a)), magnitude }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some((x, a)) => write!(f, "{} at (x={x}, a={a}): {}", self.kind.name(), self.magnitude),
            None => write!(f, "{}: {}", self.kind.name(), self.magnitude),
        }
    }
}
