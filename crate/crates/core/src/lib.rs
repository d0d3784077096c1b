//! Feature-occupancy gradient ascent (FOGAS) for offline reinforcement
//! learning in discounted linear MDPs.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`] and [`policy`]: validated linear-MDP types, a synthetic
//!   generator and softmax policies over the known feature map.
//! - [`oracle`]: exact tabular solvers (policy evaluation, occupancy
//!   measures, optimal policy, coverage ratio, relaxed-LP residuals).
//! - [`data`]: offline transition datasets, the ridge feature covariance and
//!   the least-squares transition estimator.
//! - [`solver`]: the FOGAS iteration itself.
//! - [`diagnostics`]: duality gap, player regrets and estimation error on
//!   recorded runs.
//! - [`harness`]: experiment configuration, sweeps and CSV records used by
//!   the `fogas` binary.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod harness;
mod linalg;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod solver;

pub use data::{Covariance, OfflineDataset, PsiHat, SamplingMode, Transition};
pub use error::{FogasError, Result};
pub use mdp::{FeatureMap, FeatureModel, LinearMdp, Violation, ViolationKind};
pub use oracle::PolicyEvaluation;
pub use policy::{ActionDistribution, SoftmaxPolicy, TabularPolicy};
pub use solver::{FogasConfig, FogasRun, Trajectory};

pub use nalgebra::{DMatrix, DVector};
