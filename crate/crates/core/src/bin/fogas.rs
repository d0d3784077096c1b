//! Command-line front end: generate MDPs, collect data, run the solver,
//! sweep seeds and diagnose recorded runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::warn;

use fogas::diagnostics::duality_gap_report;
use fogas::harness::{
    append_records, sweep_to_dir, write_summary, BehaviorSpec, ExperimentConfig, ExperimentRecord, MdpSource,
    OracleContext, DEFAULT_ITERATION_CAP,
};
use fogas::solver::FogasConfig;
use fogas::{FogasError, FogasRun, LinearMdp, OfflineDataset, SamplingMode};

#[derive(Parser)]
#[command(name = "fogas", version, about = "Offline RL in linear MDPs by feature-occupancy gradient ascent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random linear MDP.
    Generate {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check an MDP file against the linear-MDP conditions.
    Validate {
        #[arg(long)]
        mdp: PathBuf,
    },
    /// Sample an offline dataset.
    Collect {
        #[arg(long)]
        mdp: PathBuf,
        /// `uniform` or `eps:<v>` (optimal policy mixed with uniform)
        #[arg(long, default_value = "uniform")]
        behavior: String,
        #[arg(long, default_value = "occupancy")]
        mode: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the solver on a dataset and score the output policy.
    Solve {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Recommended step sizes.
        #[arg(long, conflicts_with = "rates")]
        auto_tune: bool,
        /// Manual `alpha,rho,eta,beta`.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        rates: Option<Vec<f64>>,
        /// Ball radius for the value parameter; manual mode only.
        #[arg(long, requires = "rates")]
        d_theta: Option<f64>,
        /// Iterations; defaults to the recommended formula (capped) with --auto-tune.
        #[arg(long = "T")]
        iterations: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        record_trajectory: bool,
        /// Run document to write.
        #[arg(long)]
        out: PathBuf,
        /// Results table to append to; defaults to `results.csv` next to `--out`.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Run an `n x seeds` grid.
    Sweep {
        /// Experiment config (JSON). Without it the default grid is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed list, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        n_values: Option<Vec<usize>>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Gap report for a run recorded with --record-trajectory.
    Diagnose {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<FogasError> for Failure {
    fn from(e: FogasError) -> Self {
        match e {
            FogasError::InvalidArgument(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Generate { states, actions, dim, gamma, seed, out } => generate(states, actions, dim, gamma, seed, out),
        Command::Validate { mdp } => validate(mdp),
        Command::Collect { mdp, behavior, mode, n, seed, out } => collect(mdp, &behavior, &mode, n, seed, out),
        Command::Solve {
            mdp,
            data,
            auto_tune,
            rates,
            d_theta,
            iterations,
            delta,
            seed,
            record_trajectory,
            out,
            results,
        } => solve(SolveArgs {
            mdp,
            data,
            auto_tune,
            rates,
            d_theta,
            iterations,
            delta,
            seed,
            record_trajectory,
            out,
            results,
        }),
        Command::Sweep { config, seeds, n_values, out_dir } => sweep(config, seeds, n_values, out_dir),
        Command::Diagnose { mdp, data, run, out } => diagnose(mdp, data, run, out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn generate(states: usize, actions: usize, dim: usize, gamma: f64, seed: u64, out: PathBuf) -> CliResult {
    let mdp = LinearMdp::generate(states, actions, dim, gamma, seed)?;
    mdp.save(&out)?;
    println!("R = {}", mdp.feature_bound());
    println!("d = {}", mdp.dim());
    Ok(())
}

fn validate(path: PathBuf) -> CliResult {
    let mdp = LinearMdp::load(&path)?;
    let violations = mdp.validate();
    if violations.is_empty() {
        println!("ok: {} states, {} actions, d = {}", mdp.num_states(), mdp.num_actions(), mdp.dim());
        return Ok(());
    }
    for v in &violations {
        println!("{v}");
    }
    Err(Failure::Runtime(format!("{} violation(s)", violations.len())))
}

fn collect(path: PathBuf, behavior: &str, mode: &str, n: usize, seed: u64, out: PathBuf) -> CliResult {
    let behavior: BehaviorSpec = behavior.parse()?;
    let mode: SamplingMode = mode.parse()?;
    let mdp = LinearMdp::load(&path)?;
    let policy = behavior.resolve(&mdp)?;
    OfflineDataset::collect(&mdp, &policy, n, mode, seed)?.save(&out)?;
    Ok(())
}

struct SolveArgs {
    mdp: PathBuf,
    data: PathBuf,
    auto_tune: bool,
    rates: Option<Vec<f64>>,
    d_theta: Option<f64>,
    iterations: Option<usize>,
    delta: f64,
    seed: u64,
    record_trajectory: bool,
    out: PathBuf,
    results: Option<PathBuf>,
}

fn solve(args: SolveArgs) -> CliResult {
    let mdp = LinearMdp::load(&args.mdp)?;
    let dataset = OfflineDataset::load(&args.data)?;
    dataset.check_indices(mdp.features())?;
    let n = dataset.len();
    let model = mdp.model();
    let mut config = match (&args.rates, args.auto_tune) {
        (Some(r), false) => {
            let &[alpha, rho, eta, beta] = r.as_slice() else {
                return Err(Failure::Usage(format!("--rates takes 4 values, got {}", r.len())));
            };
            let t = args.iterations.ok_or_else(|| Failure::Usage("--rates needs --T".into()))?;
            let mut cfg = FogasConfig::manual(model, t, alpha, rho, eta, beta, args.d_theta, args.seed);
            cfg.delta = args.delta;
            cfg.validate()?;
            cfg
        }
        (None, true) => {
            let t = args
                .iterations
                .unwrap_or_else(|| FogasConfig::recommended_iterations(model, n, args.delta).min(DEFAULT_ITERATION_CAP));
            let (cfg, warning) = FogasConfig::auto_tuned(model, n, t, args.delta, args.seed)?;
            if let Some(w) = warning {
                eprintln!("warning: {w}");
            }
            cfg
        }
        _ => return Err(Failure::Usage("give exactly one of --auto-tune or --rates".into())),
    };
    config.record_trajectory = args.record_trajectory;

    let oracle = OracleContext::new(&mdp)?;
    let start = std::time::Instant::now();
    let (run, scores) = fogas::harness::solve_and_score(&mdp, &oracle, &dataset, &config)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    run.save(&args.out)?;

    let record = ExperimentRecord {
        mdp_id: args.mdp.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        n,
        seed: args.seed,
        iterations: Some(config.iterations),
        coverage_ratio: Some(scores.coverage_ratio),
        suboptimality: Some(scores.suboptimality),
        mean_suboptimality: scores.mean_suboptimality,
        wall_time_ms: ms,
        status: "ok".into(),
    };
    let results = args.results.unwrap_or_else(|| {
        args.out.parent().map(|p| p.join("results.csv")).unwrap_or_else(|| PathBuf::from("results.csv"))
    });
    append_records(&results, std::slice::from_ref(&record))?;
    println!("J = {}", run.chosen_index);
    println!("suboptimality = {}", scores.suboptimality);
    if let Some(m) = scores.mean_suboptimality {
        println!("mean_suboptimality = {m}");
    }
    println!("coverage_ratio = {}", scores.coverage_ratio);
    Ok(())
}

fn sweep(
    config: Option<PathBuf>,
    seeds: Option<Vec<String>>,
    n_values: Option<Vec<usize>>,
    out_dir: Option<PathBuf>,
) -> CliResult {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<ExperimentConfig>(&text).map_err(|e| Failure::Usage(format!("config: {e}")))?
        }
        None => ExperimentConfig::default_grid(PathBuf::from("sweep-out")),
    };
    if let Some(s) = seeds {
        cfg.seeds = s
            .iter()
            .filter(|x| !x.trim().is_empty())
            .map(|x| x.trim().parse::<u64>().map_err(|_| Failure::Usage(format!("bad seed '{x}'"))))
            .collect::<std::result::Result<_, _>>()?;
    }
    if let Some(n) = n_values {
        cfg.n_values = n;
    }
    if let Some(d) = out_dir {
        cfg.output_dir = d;
    }
    cfg.validate()?;
    if let MdpSource::File(p) = &cfg.mdp {
        if !p.exists() {
            return Err(Failure::Runtime(format!("{}: no such file", p.display())));
        }
    }
    let outcome = sweep_to_dir(&cfg)?;
    write_summary(std::io::stdout().lock(), &outcome.summary)?;
    let failed = outcome.failures();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} cell(s) failed; see results.csv")));
    }
    Ok(())
}

fn diagnose(mdp: PathBuf, data: PathBuf, run: PathBuf, out: PathBuf) -> CliResult {
    let mdp = LinearMdp::load(&mdp)?;
    let dataset = OfflineDataset::load(&data)?;
    let run = FogasRun::load(&run)?;
    let oracle = OracleContext::new(&mdp)?;
    let report = duality_gap_report(&mdp, &dataset, &run, &oracle.pi_star)?;
    report.write_csv(std::fs::File::create(&out)?)?;
    if !report.identity_asserted {
        warn!("D_theta differs from sqrt(d)/(1-gamma); identity residual reported without assertion");
    } else if !report.identities_hold() {
        return Err(Failure::Runtime(format!(
            "identity residuals too large: decomposition {:e}, suboptimality {:e}",
            report.decomposition_residual, report.identity_residual
        )));
    }
    println!("gap = {}", report.gap);
    println!("decomposition_residual = {:e}", report.decomposition_residual);
    println!("identity_residual = {:e}", report.identity_residual);
    Ok(())
}
