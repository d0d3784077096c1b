//! Experiment plumbing: configuration files, single runs evaluated against
//! the oracle, seed sweeps and result tables.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Covariance, OfflineDataset, PsiHat, SamplingMode};
use crate::error::{FogasError, Result};
use crate::linalg::fmt_f64;
use crate::mdp::LinearMdp;
use crate::oracle::{evaluate_policy, solve_optimal, PolicyEvaluation};
use crate::policy::TabularPolicy;
use crate::solver::{run_with_estimates, FogasConfig, FogasRun};

/// Stopping tolerance for value iteration when computing `pi*`.
pub const OPTIMAL_TOL: f64 = 1e-12;

/// Iteration cap applied to the recommended `T` in sweeps.
pub const DEFAULT_ITERATION_CAP: usize = 20_000;

/// Default grid: `n` values and number of seeds.
pub const DEFAULT_N_VALUES: [usize; 4] = [256, 1024, 4096, 16384];
pub const DEFAULT_SEED_COUNT: u64 = 10;

/// Mixed into the cell seed for the solver's own RNG so that it differs
/// from the data-collection stream.
const SOLVER_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Behaviour policy used to collect data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorSpec {
    Uniform,
    /// `(1 - eps) pi* + eps uniform`
    EpsOptimal(f64),
}

impl BehaviorSpec {
    pub fn policy(&self, mdp: &LinearMdp, pi_star: &TabularPolicy) -> Result<TabularPolicy> {
        let uniform = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
        match *self {
            BehaviorSpec::Uniform => Ok(uniform),
            BehaviorSpec::EpsOptimal(eps) => pi_star.mix(&uniform, eps),
        }
    }

    /// Like [`BehaviorSpec::policy`], solving for `pi*` only when needed.
    pub fn resolve(&self, mdp: &LinearMdp) -> Result<TabularPolicy> {
        match self {
            BehaviorSpec::Uniform => Ok(TabularPolicy::uniform(mdp.num_states(), mdp.num_actions())),
            BehaviorSpec::EpsOptimal(_) => self.policy(mdp, &solve_optimal(mdp, OPTIMAL_TOL)?.0),
        }
    }
}

impl FromStr for BehaviorSpec {
    type Err = FogasError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "uniform" {
            return Ok(Self::Uniform);
        }
        let bad = || FogasError::InvalidArgument(format!("behavior must be 'uniform' or 'eps:<v>' with v in [0,1], got '{s}'"));
        let v: f64 = s.strip_prefix("eps:").ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&v) {
            return Err(bad());
        }
        Ok(Self::EpsOptimal(v))
    }
}

impl fmt::Display for BehaviorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BehaviorSpec::Uniform => f.write_str("uniform"),
            BehaviorSpec::EpsOptimal(e) => write!(f, "eps:{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub states: usize,
    pub actions: usize,
    pub dim: usize,
    pub gamma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSource {
    File(PathBuf),
    Generate(GeneratorParams),
}

impl MdpSource {
    /// Loads or generates the MDP and returns it with a short identifier.
    pub fn resolve(&self) -> Result<(LinearMdp, String)> {
        match self {
            MdpSource::File(p) => {
                let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mdp".into());
                Ok((LinearMdp::load(p)?, id))
            }
            MdpSource::Generate(g) => Ok((
                LinearMdp::generate(g.states, g.actions, g.dim, g.gamma, g.seed)?,
                format!("gen-{}-{}-{}-{}-{}", g.states, g.actions, g.dim, g.gamma, g.seed),
            )),
        }
    }
}

/// Manual step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub alpha: f64,
    pub rho: f64,
    pub eta: f64,
    pub beta: f64,
    #[serde(default)]
    pub d_theta: Option<f64>,
}

fn default_delta() -> f64 {
    0.05
}

fn default_cap() -> usize {
    DEFAULT_ITERATION_CAP
}

/// Solver settings for every cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub auto_tune: bool,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Fixed `T`; when absent, the recommended formula capped at `iteration_cap`.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default = "default_cap")]
    pub iteration_cap: usize,
    /// Required when `auto_tune` is false.
    #[serde(default)]
    pub rates: Option<Rates>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { auto_tune: true, delta: 0.05, iterations: None, iteration_cap: DEFAULT_ITERATION_CAP, rates: None }
    }
}

impl SolverSpec {
    pub fn validate(&self) -> Result<()> {
        if self.auto_tune && self.rates.is_some() {
            return Err(FogasError::InvalidArgument("give either auto_tune or rates, not both".into()));
        }
        if !self.auto_tune && (self.rates.is_none() || self.iterations.is_none()) {
            return Err(FogasError::InvalidArgument("manual rates need both rates and iterations".into()));
        }
        if self.iteration_cap == 0 || self.iterations == Some(0) {
            return Err(FogasError::InvalidArgument("T must be ≥ 1".into()));
        }
        Ok(())
    }

    /// The solver configuration for a dataset of size `n`.
    pub fn config(&self, mdp: &LinearMdp, n: usize, seed: u64) -> Result<(FogasConfig, Option<String>)> {
        let model = mdp.model();
        let t = self
            .iterations
            .unwrap_or_else(|| FogasConfig::recommended_iterations(model, n, self.delta).min(self.iteration_cap));
        if self.auto_tune {
            let (mut cfg, warning) = FogasConfig::auto_tuned(model, n, t, self.delta, seed)?;
            cfg.delta = self.delta;
            Ok((cfg, warning))
        } else {
            let r = self.rates.as_ref().expect("validated");
            let mut cfg = FogasConfig::manual(model, t, r.alpha, r.rho, r.eta, r.beta, r.d_theta, seed);
            cfg.delta = self.delta;
            cfg.validate()?;
            Ok((cfg, None))
        }
    }
}

/// A sweep over `n_values x seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    #[serde(with = "behavior_serde")]
    pub behavior: BehaviorSpec,
    #[serde(with = "mode_serde")]
    pub sampling_mode: SamplingMode,
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub solver: SolverSpec,
    pub output_dir: PathBuf,
}

mod behavior_serde {
    use super::BehaviorSpec;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &BehaviorSpec, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&b.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BehaviorSpec, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

mod mode_serde {
    use crate::data::SamplingMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &SamplingMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(m.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SamplingMode, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl ExperimentConfig {
    /// The default grid on a generated `(5, 3, 4)` MDP with `gamma = 0.9`.
    pub fn default_grid(output_dir: PathBuf) -> Self {
        Self {
            mdp: MdpSource::Generate(GeneratorParams { states: 5, actions: 3, dim: 4, gamma: 0.9, seed: 0 }),
            behavior: BehaviorSpec::Uniform,
            sampling_mode: SamplingMode::Uniform,
            n_values: DEFAULT_N_VALUES.to_vec(),
            seeds: (0..DEFAULT_SEED_COUNT).collect(),
            solver: SolverSpec::default(),
            output_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(FogasError::InvalidArgument("seeds must not be empty".into()));
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(FogasError::InvalidArgument("n values must be nonempty and ≥ 1".into()));
        }
        self.solver.validate()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One row of the results table. Numeric fields are `None` for failed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub mdp_id: String,
    pub n: usize,
    pub seed: u64,
    pub iterations: Option<usize>,
    /// `||lambda^{pi*}||^2_{Lambda^{-1}}`
    pub coverage_ratio: Option<f64>,
    /// `rho(pi*) - rho(pi_J)`
    pub suboptimality: Option<f64>,
    /// `(1/T) sum_t (rho(pi*) - rho(pi_t))`
    pub mean_suboptimality: Option<f64>,
    pub wall_time_ms: f64,
    pub status: String,
}

impl ExperimentRecord {
    pub const CSV_HEADER: [&'static str; 9] = [
        "mdp_id",
        "n",
        "seed",
        "T",
        "coverage_ratio",
        "suboptimality",
        "mean_suboptimality",
        "wall_time_ms",
        "status",
    ];

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn fields(&self) -> [String; 9] {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        [
            self.mdp_id.clone(),
            self.n.to_string(),
            self.seed.to_string(),
            self.iterations.map(|t| t.to_string()).unwrap_or_default(),
            opt(self.coverage_ratio),
            opt(self.suboptimality),
            opt(self.mean_suboptimality),
            format!("{:.3}", self.wall_time_ms),
            self.status.clone(),
        ]
    }

    fn failed(mdp_id: &str, n: usize, seed: u64, wall_time_ms: f64, err: &FogasError) -> Self {
        Self {
            mdp_id: mdp_id.to_string(),
            n,
            seed,
            iterations: None,
            coverage_ratio: None,
            suboptimality: None,
            mean_suboptimality: None,
            wall_time_ms,
            status: format!("error: {err}"),
        }
    }
}

/// Writes a header and the given rows.
pub fn write_records<W: Write>(w: W, records: &[ExperimentRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(ExperimentRecord::CSV_HEADER)?;
    for r in records {
        wr.write_record(r.fields())?;
    }
    wr.flush()?;
    Ok(())
}

/// Appends rows to `path`, writing the header first if the file is new or empty.
pub fn append_records(path: impl AsRef<Path>, records: &[ExperimentRecord]) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut wr = csv::Writer::from_writer(file);
    if fresh {
        wr.write_record(ExperimentRecord::CSV_HEADER)?;
    }
    for r in records {
        wr.write_record(r.fields())?;
    }
    wr.flush()?;
    Ok(())
}

/// Oracle facts about an MDP shared by every cell.
#[derive(Debug, Clone)]
pub struct OracleContext {
    pub pi_star: TabularPolicy,
    pub star: PolicyEvaluation,
}

impl OracleContext {
    pub fn new(mdp: &LinearMdp) -> Result<Self> {
        let (pi_star, star) = solve_optimal(mdp, OPTIMAL_TOL)?;
        Ok(Self { pi_star, star })
    }
}

/// Oracle scores of a finished run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunScores {
    pub coverage_ratio: f64,
    pub suboptimality: f64,
    /// Present when the run carries a trajectory.
    pub mean_suboptimality: Option<f64>,
}

pub fn score_run(mdp: &LinearMdp, oracle: &OracleContext, cov: &Covariance, run: &FogasRun) -> Result<RunScores> {
    let rho_star = oracle.star.return_value;
    let rho = |pi: &TabularPolicy| evaluate_policy(mdp, pi).map(|e| e.return_value);
    let out = run.output_policy.materialize(mdp.features());
    let suboptimality = rho_star - rho(&out)?;
    let mean_suboptimality = match &run.trajectory {
        Some(tr) => {
            let mut total = 0.0;
            for t in 1..=tr.len() {
                total += rho_star - rho(&tr.policy(t, run.config.alpha).materialize(mdp.features()))?;
            }
            Some(total / tr.len() as f64)
        }
        None => None,
    };
    Ok(RunScores { coverage_ratio: cov.inv_norm_sq(&oracle.star.lambda_pi), suboptimality, mean_suboptimality })
}

/// Runs one solver configuration on a dataset and scores it. The run keeps
/// its trajectory only if `config.record_trajectory` was set.
pub fn solve_and_score(
    mdp: &LinearMdp,
    oracle: &OracleContext,
    dataset: &OfflineDataset,
    config: &FogasConfig,
) -> Result<(FogasRun, RunScores)> {
    let cov = Covariance::build(dataset, mdp.features(), config.beta)?;
    let psi_hat = PsiHat::from_covariance(dataset, mdp.features(), &cov);
    let keep = config.record_trajectory;
    let mut run = run_with_estimates(mdp.model(), dataset, &cov, &psi_hat, &config.clone().with_trajectory(true))?;
    let scores = score_run(mdp, oracle, &cov, &run)?;
    if !keep {
        run.trajectory = None;
        run.config.record_trajectory = false;
    }
    Ok((run, scores))
}

/// Collects `n` samples with `seed`, runs the solver and produces a record.
#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    mdp: &LinearMdp,
    mdp_id: &str,
    oracle: &OracleContext,
    behavior: &TabularPolicy,
    mode: SamplingMode,
    solver: &SolverSpec,
    n: usize,
    seed: u64,
) -> ExperimentRecord {
    let start = Instant::now();
    let result = (|| {
        let dataset = OfflineDataset::collect(mdp, behavior, n, mode, seed)?;
        let (config, _) = solver.config(mdp, n, seed ^ SOLVER_SEED_SALT)?;
        let (_, scores) = solve_and_score(mdp, oracle, &dataset, &config)?;
        Ok::<_, FogasError>((config.iterations, scores))
    })();
    let ms = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok((t, s)) => ExperimentRecord {
            mdp_id: mdp_id.to_string(),
            n,
            seed,
            iterations: Some(t),
            coverage_ratio: Some(s.coverage_ratio),
            suboptimality: Some(s.suboptimality),
            mean_suboptimality: s.mean_suboptimality,
            wall_time_ms: ms,
            status: "ok".into(),
        },
        Err(e) => {
            log::error!("cell n={n} seed={seed} failed: {e}");
            ExperimentRecord::failed(mdp_id, n, seed, ms, &e)
        }
    }
}

/// Median suboptimalities for one `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub median_suboptimality: f64,
    pub median_mean_suboptimality: f64,
    pub failures: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

pub fn summarize(n_values: &[usize], records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    n_values
        .iter()
        .map(|&n| {
            let rows: Vec<_> = records.iter().filter(|r| r.n == n).collect();
            let mut sub: Vec<f64> = rows.iter().filter_map(|r| r.suboptimality).collect();
            let mut mean: Vec<f64> = rows.iter().filter_map(|r| r.mean_suboptimality).collect();
            SummaryRow {
                n,
                median_suboptimality: median(&mut sub),
                median_mean_suboptimality: median(&mut mean),
                failures: rows.iter().filter(|r| !r.is_ok()).count(),
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["n", "median_suboptimality", "median_mean_suboptimality", "failures"])?;
    for r in rows {
        wr.write_record([
            r.n.to_string(),
            fmt_f64(r.median_suboptimality),
            fmt_f64(r.median_mean_suboptimality),
            r.failures.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<ExperimentRecord>,
    pub summary: Vec<SummaryRow>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| !r.is_ok()).count()
    }
}

/// Runs every `(n, seed)` cell, in parallel, and returns rows in grid order
/// (`n` outer, seed inner).
pub fn sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let (mdp, mdp_id) = config.mdp.resolve()?;
    let oracle = OracleContext::new(&mdp)?;
    let behavior = config.behavior.policy(&mdp, &oracle.pi_star)?;
    let cells: Vec<(usize, u64)> = config
        .n_values
        .iter()
        .flat_map(|&n| config.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let records: Vec<ExperimentRecord> = cells
        .par_iter()
        .map(|&(n, seed)| {
            run_cell(&mdp, &mdp_id, &oracle, &behavior, config.sampling_mode, &config.solver, n, seed)
        })
        .collect();
    let summary = summarize(&config.n_values, &records);
    Ok(SweepOutcome { records, summary })
}

/// Runs the sweep and writes `results.csv` and `summary.csv` into the
/// configured output directory.
pub fn sweep_to_dir(config: &ExperimentConfig) -> Result<SweepOutcome> {
    let out = sweep(config)?;
    std::fs::create_dir_all(&config.output_dir)?;
    write_records(std::fs::File::create(config.output_dir.join("results.csv"))?, &out.records)?;
    write_summary(std::fs::File::create(config.output_dir.join("summary.csv"))?, &out.summary)?;
    Ok(out)
}
