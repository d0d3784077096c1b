//! Offline datasets, the ridge feature covariance `Lambda` and the
//! least-squares transition estimate `Psi_hat`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{FogasError, Result};
use crate::linalg::fmt_f64;
use crate::mdp::{FeatureMap, LinearMdp};
use crate::oracle;
use crate::policy::TabularPolicy;

/// One logged transition `(x, a, r, x')`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Transition {
    pub x: usize,
    pub a: usize,
    pub r: f64,
    pub x_next: usize,
}

/// How the state-action pairs of a dataset are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// i.i.d. from the discounted occupancy of the behaviour policy.
    Occupancy,
    /// i.i.d. uniform over all state-action pairs.
    Uniform,
}

impl std::str::FromStr for SamplingMode {
    type Err = FogasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occupancy" => Ok(Self::Occupancy),
            "uniform" => Ok(Self::Uniform),
            other => Err(FogasError::Parse(format!(
                "unknown sampling mode {other:?}, expected occupancy|uniform"
            ))),
        }
    }
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Occupancy => "occupancy",
            Self::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    transitions: Vec<Transition>,
}

impl OfflineDataset {
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(FogasError::InvalidArgument("dataset must hold at least one transition".into()));
        }
        Ok(Self { transitions })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Checks that every index fits the feature map.
    pub fn check_indices(&self, features: &FeatureMap) -> Result<()> {
        for (i, t) in self.transitions.iter().enumerate() {
            if t.x >= features.num_states()
                || t.x_next >= features.num_states()
                || t.a >= features.num_actions()
            {
                return Err(FogasError::Shape(format!(
                    "transition {i} ({}, {}, {}) is out of range",
                    t.x, t.a, t.x_next
                )));
            }
        }
        Ok(())
    }

    /// Draws `n` transitions. Next states always follow the true kernel and
    /// rewards are `r(x, a)`. Deterministic in `seed`.
    pub fn collect(
        mdp: &LinearMdp,
        behavior: &TabularPolicy,
        n: usize,
        mode: SamplingMode,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(FogasError::InvalidArgument("n must be ≥ 1".into()));
        }
        let (xs, acts) = (mdp.num_states(), mdp.num_actions());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let pair_dist = match mode {
            SamplingMode::Occupancy => {
                let eval = oracle::evaluate_policy(mdp, behavior)?;
                Some(weighted(eval.mu.iter().cloned())?)
            }
            SamplingMode::Uniform => None,
        };
        let next_dists = (0..xs * acts)
            .map(|row| weighted(mdp.transitions().row(row).iter().cloned()))
            .collect::<Result<Vec<_>>>()?;

        let transitions = (0..n)
            .map(|_| {
                let pair = match &pair_dist {
                    Some(d) => d.sample(&mut rng),
                    None => rng.random_range(0..xs * acts),
                };
                let x_next = next_dists[pair].sample(&mut rng);
                Transition {
                    x: pair / acts,
                    a: pair % acts,
                    r: mdp.rewards()[pair],
                    x_next,
                }
            })
            .collect();
        Ok(Self { transitions })
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "a", "r", "x_next"])?;
        for t in &self.transitions {
            wtr.write_record([
                t.x.to_string(),
                t.a.to_string(),
                fmt_f64(t.r),
                t.x_next.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "a", "r", "x_next"] {
            return Err(FogasError::Parse(format!(
                "dataset header must be x,a,r,x_next, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let transitions = rdr.deserialize().collect::<std::result::Result<Vec<Transition>, _>>()?;
        Self::new(transitions)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn weighted(weights: impl Iterator<Item = f64>) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights.map(|w| w.max(0.0)))
        .map_err(|e| FogasError::InvalidArgument(format!("cannot sample from weights: {e}")))
}

/// `Lambda = beta I + (1/n) sum_i phi_i phi_i^T` with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct Covariance {
    beta: f64,
    n: usize,
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Covariance {
    pub fn build(dataset: &OfflineDataset, features: &FeatureMap, beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(FogasError::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        let d = features.dim();
        let n = dataset.len();
        let mut sum = DMatrix::<f64>::zeros(d, d);
        for t in dataset.transitions() {
            let phi = features.row(t.x, t.a);
            sum.ger(1.0, &phi, &phi, 1.0);
        }
        let matrix = sum / n as f64 + DMatrix::identity(d, d) * beta;
        Self::from_matrix(matrix, beta, n)
    }

    /// Wraps an explicit SPD matrix. Used for tests and foreign callers.
    pub fn from_matrix(matrix: DMatrix<f64>, beta: f64, n: usize) -> Result<Self> {
        if !matrix.is_square() {
            return Err(FogasError::Shape("covariance must be square".into()));
        }
        let chol = Cholesky::new(matrix.clone()).ok_or(FogasError::NotPositiveDefinite)?;
        Ok(Self { beta, n, matrix, chol })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `Lambda^{-1} b`
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `Lambda v`
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    /// `||v||^2_{Lambda^{-1}} = v^T Lambda^{-1} v`
    pub fn inv_norm_sq(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.solve(v))
    }

    /// `||v||^2_{Lambda} = v^T Lambda v`
    pub fn norm_sq(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.apply(v))
    }
}

/// Sparse ridge estimate of `Psi`: only next states present in the data
/// carry a (generally nonzero) column.
#[derive(Debug, Clone)]
pub struct PsiHat {
    num_states: usize,
    dim: usize,
    columns: Vec<(usize, DVector<f64>)>,
}

impl PsiHat {
    /// `Psi_hat = (1/n) Lambda^{-1} sum_i phi_i e_{x'_i}^T`, with the
    /// features summed per next state before one solve each.
    pub fn from_covariance(dataset: &OfflineDataset, features: &FeatureMap, cov: &Covariance) -> Self {
        let d = features.dim();
        let n = dataset.len() as f64;
        let mut sums: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
        for t in dataset.transitions() {
            let acc = sums.entry(t.x_next).or_insert_with(|| DVector::zeros(d));
            *acc += features.row(t.x, t.a);
        }
        let columns = sums
            .into_iter()
            .map(|(x, s)| (x, cov.solve(&(s / n))))
            .collect();
        Self { num_states: features.num_states(), dim: d, columns }
    }

    /// Wraps a dense `d x X` matrix, every state carrying a column.
    pub fn from_dense(psi: &DMatrix<f64>) -> Self {
        Self {
            num_states: psi.ncols(),
            dim: psi.nrows(),
            columns: psi.column_iter().enumerate().map(|(x, c)| (x, c.into_owned())).collect(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `(state, psi_hat(state))` for each observed next state, ascending.
    pub fn columns(&self) -> &[(usize, DVector<f64>)] {
        &self.columns
    }

    pub fn column(&self, x: usize) -> Option<&DVector<f64>> {
        self.columns
            .binary_search_by_key(&x, |(s, _)| *s)
            .ok()
            .map(|i| &self.columns[i].1)
    }

    /// `Psi_hat v`; only reads `v` at observed next states.
    pub fn apply(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for (x, col) in &self.columns {
            out.axpy(v[*x], col, 1.0);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.num_states);
        for (x, col) in &self.columns {
            m.set_column(*x, col);
        }
        m
    }
}

/// Builds `Lambda` for `beta` and then `Psi_hat`.
pub fn estimate_psi(dataset: &OfflineDataset, features: &FeatureMap, beta: f64) -> Result<PsiHat> {
    let cov = Covariance::build(dataset, features, beta)?;
    Ok(PsiHat::from_covariance(dataset, features, &cov))
}

/// `(1/n) Lambda^{-1} sum_i phi_i v(x'_i)`, one pass over the samples and a
/// single solve.
pub fn apply_psi_hat(
    dataset: &OfflineDataset,
    features: &FeatureMap,
    cov: &Covariance,
    v: &[f64],
) -> DVector<f64> {
    let mut acc = DVector::zeros(features.dim());
    for t in dataset.transitions() {
        acc.axpy(v[t.x_next], &features.row(t.x, t.a), 1.0);
    }
    cov.solve(&(acc / dataset.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state_mdp() -> LinearMdp {
        let phi = DMatrix::from_element(1, 1, 1.0);
        let psi = DMatrix::from_element(1, 1, 1.0);
        LinearMdp::new(1, 1, phi, psi, DVector::from_vec(vec![0.4]), 0.9, 0).unwrap()
    }

    #[test]
    fn one_state_dataset_is_constant() {
        let m = one_state_mdp();
        let pi = TabularPolicy::uniform(1, 1);
        for mode in [SamplingMode::Uniform, SamplingMode::Occupancy] {
            let d = OfflineDataset::collect(&m, &pi, 3, mode, 0).unwrap();
            assert_eq!(d.len(), 3);
            for t in d.transitions() {
                assert_eq!(*t, Transition { x: 0, a: 0, r: 0.4, x_next: 0 });
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let m = LinearMdp::generate(5, 3, 4, 0.9, 3).unwrap();
        let pi = TabularPolicy::uniform(5, 3);
        let a = OfflineDataset::collect(&m, &pi, 200, SamplingMode::Occupancy, 9).unwrap();
        let b = OfflineDataset::collect(&m, &pi, 200, SamplingMode::Occupancy, 9).unwrap();
        assert_eq!(a, b);
        let c = OfflineDataset::collect(&m, &pi, 200, SamplingMode::Occupancy, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rewards_match_features() {
        let m = LinearMdp::generate(5, 3, 4, 0.9, 3).unwrap();
        let d = OfflineDataset::collect(&m, &TabularPolicy::uniform(5, 3), 100, SamplingMode::Uniform, 1).unwrap();
        for t in d.transitions() {
            let r = m.features().dot(t.x, t.a, m.omega());
            assert!((t.r - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_mode_frequencies() {
        let m = LinearMdp::generate(5, 3, 4, 0.9, 3).unwrap();
        let n = 100_000;
        let d = OfflineDataset::collect(&m, &TabularPolicy::uniform(5, 3), n, SamplingMode::Uniform, 5).unwrap();
        let mut counts = [0usize; 15];
        for t in d.transitions() {
            counts[t.x * 3 + t.a] += 1;
        }
        let p = 1.0 / 15.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - p).abs() <= 3.0 * se, "freq {f}");
        }
    }

    #[test]
    fn csv_round_trip_and_header() {
        let m = LinearMdp::generate(4, 2, 3, 0.9, 1).unwrap();
        let d = OfflineDataset::collect(&m, &TabularPolicy::uniform(4, 2), 10, SamplingMode::Uniform, 2).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,a,r,x_next\n"));
        assert_eq!(text.lines().count(), 11);
        assert_eq!(OfflineDataset::read_csv(&buf[..]).unwrap(), d);
        assert!(OfflineDataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    fn e1_dataset(d: usize, x_next: usize) -> (OfflineDataset, FeatureMap) {
        let mut phi = DMatrix::zeros(2, d);
        phi[(0, 0)] = 1.0;
        phi[(1, 1)] = 1.0;
        let fm = FeatureMap::new(2, 1, phi).unwrap();
        let ds = OfflineDataset::new(vec![Transition { x: 0, a: 0, r: 0.0, x_next }]).unwrap();
        (ds, fm)
    }

    #[test]
    fn covariance_rank_one_case() {
        let (ds, fm) = e1_dataset(3, 1);
        let cov = Covariance::build(&ds, &fm, 1.0).unwrap();
        assert_eq!(cov.matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 1.0])));
        assert!(Covariance::build(&ds, &fm, 0.0).is_err());
        assert!(Covariance::build(&ds, &fm, -1.0).is_err());
    }

    #[test]
    fn psi_hat_rank_one_case() {
        let (ds, fm) = e1_dataset(3, 1);
        let ph = estimate_psi(&ds, &fm, 1.0).unwrap();
        assert!((ph.column(1).unwrap() - DVector::from_vec(vec![0.5, 0.0, 0.0])).amax() < 1e-15);
        assert!(ph.column(0).is_none());
        let dense = ph.to_dense();
        assert_eq!(dense.column(0).amax(), 0.0);
        assert!(estimate_psi(&ds, &fm, 0.0).is_err());
    }

    #[test]
    fn covariance_matches_naive_loop_and_is_spd() {
        let m = LinearMdp::generate(5, 3, 4, 0.9, 6).unwrap();
        let ds = OfflineDataset::collect(&m, &TabularPolicy::uniform(5, 3), 300, SamplingMode::Uniform, 8).unwrap();
        let beta = 0.05;
        let cov = Covariance::build(&ds, m.features(), beta).unwrap();
        let mut naive = DMatrix::<f64>::zeros(4, 4);
        for j in 0..4 {
            for k in 0..4 {
                let mut s = 0.0;
                for t in ds.transitions() {
                    s += m.phi()[(t.x * 3 + t.a, j)] * m.phi()[(t.x * 3 + t.a, k)];
                }
                naive[(j, k)] = s / 300.0 + if j == k { beta } else { 0.0 };
            }
        }
        assert!((cov.matrix() - &naive).amax() <= 1e-12);
        assert!((cov.matrix() - cov.matrix().transpose()).amax() <= 1e-12);
        let eig = cov.matrix().clone().symmetric_eigenvalues();
        assert!(eig.min() >= beta - 1e-12);
    }

    #[test]
    fn apply_forms_agree_and_unobserved_columns_are_zero() {
        let m = LinearMdp::generate(8, 2, 3, 0.9, 2).unwrap();
        // behaviour rarely leaves a few states, so some next states may go unseen
        let ds = OfflineDataset::collect(&m, &TabularPolicy::uniform(8, 2), 6, SamplingMode::Uniform, 4).unwrap();
        let cov = Covariance::build(&ds, m.features(), 0.3).unwrap();
        let ph = PsiHat::from_covariance(&ds, m.features(), &cov);
        let seen: std::collections::BTreeSet<_> = ds.transitions().iter().map(|t| t.x_next).collect();
        let dense = ph.to_dense();
        for x in 0..8 {
            if !seen.contains(&x) {
                assert_eq!(dense.column(x).amax(), 0.0);
            }
        }
        let v: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let a = apply_psi_hat(&ds, m.features(), &cov, &v);
        let b = ph.apply(&v);
        let c = &dense * DVector::from_column_slice(&v);
        assert!((&a - &c).amax() <= 1e-12);
        assert!((&b - &c).amax() <= 1e-12);
        assert_eq!(apply_psi_hat(&ds, m.features(), &cov, &[0.0; 8]).amax(), 0.0);
        // column sums equal (1/n) Lambda^{-1} sum phi_i
        let ones = vec![1.0; 8];
        let mut mean = DVector::zeros(3);
        for t in ds.transitions() {
            mean += m.features().row(t.x, t.a);
        }
        let expect = cov.solve(&(mean / 6.0));
        assert!((apply_psi_hat(&ds, m.features(), &cov, &ones) - expect).amax() <= 1e-12);
    }

    /// Ridge regression as a stacked least-squares problem solved by SVD:
    /// minimise `||A w - y||^2` with `A = [Phi_D / sqrt(n); sqrt(beta) I]`.
    fn ridge_oracle(design: &DMatrix<f64>, y: &DVector<f64>, beta: f64) -> DVector<f64> {
        let (n, d) = design.shape();
        let mut a = DMatrix::zeros(n + d, d);
        let mut b = DVector::zeros(n + d);
        let s = (n as f64).sqrt();
        for i in 0..n {
            for j in 0..d {
                a[(i, j)] = design[(i, j)] / s;
            }
            b[i] = y[i] / s;
        }
        for j in 0..d {
            a[(n + j, j)] = beta.sqrt();
        }
        a.svd(true, true).solve(&b, 1e-14).unwrap()
    }

    #[test]
    fn psi_hat_matches_ridge_oracle() {
        for seed in 0..10 {
            let m = LinearMdp::generate(6, 2, 4, 0.9, seed).unwrap();
            let ds = OfflineDataset::collect(&m, &TabularPolicy::uniform(6, 2), 50, SamplingMode::Uniform, seed).unwrap();
            let beta = 0.1;
            let ph = estimate_psi(&ds, m.features(), beta).unwrap();
            let design = DMatrix::from_fn(50, 4, |i, j| {
                let t = &ds.transitions()[i];
                m.phi()[(t.x * 2 + t.a, j)]
            });
            for (x, col) in ph.columns() {
                let y = DVector::from_fn(50, |i, _| if ds.transitions()[i].x_next == *x { 1.0 } else { 0.0 });
                assert!((col - ridge_oracle(&design, &y, beta)).amax() <= 1e-8);
            }
        }
    }

    #[test]
    fn apply_is_linear() {
        let m = LinearMdp::generate(5, 3, 4, 0.9, 11).unwrap();
        let ds = OfflineDataset::collect(&m, &TabularPolicy::uniform(5, 3), 80, SamplingMode::Uniform, 3).unwrap();
        let ph = estimate_psi(&ds, m.features(), 0.2).unwrap();
        let v: Vec<f64> = (0..5).map(|i| (i as f64).cos()).collect();
        let w: Vec<f64> = (0..5).map(|i| 1.0 - 0.3 * i as f64).collect();
        let (a, b) = (1.7, -0.4);
        let mix: Vec<f64> = v.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
        let lhs = ph.apply(&mix);
        let rhs = ph.apply(&v) * a + ph.apply(&w) * b;
        assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn estimation_error_shrinks_with_n() {
        let m = LinearMdp::generate(5, 3, 4, 0.9, 0).unwrap();
        let v: Vec<f64> = (0..5).map(|i| (i as f64 * 1.3).sin()).collect();
        let vd = DVector::from_column_slice(&v);
        let err_at = |n: usize| {
            let mut errs: Vec<f64> = (0..20)
                .map(|seed| {
                    let ds = OfflineDataset::collect(&m, &TabularPolicy::uniform(5, 3), n, SamplingMode::Uniform, seed)
                        .unwrap();
                    let cov = Covariance::build(&ds, m.features(), 1.0 / n as f64).unwrap();
                    let ph = PsiHat::from_covariance(&ds, m.features(), &cov);
                    let diff = ph.apply(&v) - m.psi() * &vd;
                    cov.norm_sq(&diff).sqrt()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            0.5 * (errs[9] + errs[10])
        };
        assert!(err_at(16384) < err_at(256));
    }
}
