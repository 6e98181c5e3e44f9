use clap::{Args, Parser, Subcommand};
use netmax_core::config::{ConfigError, ExperimentConfig, Protocol};
use netmax_core::linalg::Matrix;
use netmax_core::metrics::{self, MetricsError};
use netmax_core::network::Topology;
use netmax_core::policy::{self, PolicyError, PolicySearch};
use netmax_core::sim::{self, SimError};
use netmax_core::suite::{self, SuiteOptions, SuiteSelection};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_NO_POLICY: u8 = 3;
const EXIT_PROPERTY: u8 = 4;

#[derive(Parser)]
#[command(name = "netmax", version, about = "Network-aware decentralized consensus SGD simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one protocol on one seed and write trace.jsonl and summary.json
    Run(RunArgs),
    /// Generate a communication policy from an iteration-time matrix
    Policy(PolicyArgs),
    /// Run every configured protocol over the seed sweep and compare time to epsilon
    Compare(CompareArgs),
    /// Run the property suites
    Verify(VerifyArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// dotted-path override, e.g. --override stop.max_time=200
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    protocol: Option<Protocol>,
}

#[derive(Args)]
struct PolicyArgs {
    /// square JSON matrix of iteration times; zero off-diagonal entries mark missing links
    #[arg(long)]
    times: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// outer (rho) grid size K
    #[arg(long, default_value_t = 16)]
    outer_rounds: usize,
    /// inner (t-bar) grid size R
    #[arg(long, default_value_t = 16)]
    inner_rounds: usize,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, default_value_t = policy::DEFAULT_MARGIN, allow_hyphen_values = true)]
    margin: f64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// relative deviation target; defaults to stop.target_epsilon, then epsilon
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// policy, bounds or all
    #[arg(default_value = "all")]
    suite: SuiteSelection,
    /// LP edge-floor margin (a negative value injects a fault)
    #[arg(long, default_value_t = policy::DEFAULT_MARGIN, allow_hyphen_values = true)]
    margin: f64,
    #[arg(long, default_value_t = 200)]
    topologies: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            SimError::BetaOutOfRange(_) => Failure::new(EXIT_CONFIG, e.to_string()),
            other => Failure::new(EXIT_RUNTIME, other.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Sim(s) => s.into(),
            other => Failure::new(EXIT_RUNTIME, other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Policy(a) => cmd_policy(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if !common.overrides.is_empty() {
        cfg = cfg.with_overrides(&common.overrides)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(common: &CommonArgs, cfg: &ExperimentConfig) -> PathBuf {
    common.out.clone().or_else(|| cfg.output_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

fn print_json<T: Serialize>(v: &T) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Failure::new(EXIT_RUNTIME, e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.common)?;
    if let Some(p) = args.protocol {
        cfg.protocol = p;
    }
    let record = sim::run_simulation(&cfg)?;
    if !record.warnings.is_empty() {
        eprintln!("{} warnings recorded in the summary", record.warnings.len());
    }
    let dir = out_dir(&args.common, &cfg);
    let summary = metrics::write_metrics(&record, &dir)?;
    let times: Vec<String> = summary
        .time_to_epsilon
        .iter()
        .map(|e| format!("eps {}: {}", e.epsilon, e.time.map_or("not reached".into(), |t| format!("{t:.3}"))))
        .collect();
    println!(
        "{} seed {}: {} steps, end clock {:.3}, final deviation {:.3e}, {}; wrote {}",
        record.protocol.name(),
        record.seed,
        summary.steps,
        summary.end_clock,
        summary.final_deviation,
        times.join(", "),
        dir.display()
    );
    Ok(())
}

fn read_times(path: &Path) -> Result<(Matrix, Topology), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())))?;
    let times: Matrix = serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_CONFIG, format!("line {}, column {}: {e}", e.line(), e.column())))?;
    if !times.is_square() {
        return Err(Failure::new(EXIT_CONFIG, format!("time matrix is {}x{}, expected square", times.rows(), times.cols())));
    }
    let n = times.rows();
    let adjacency: Vec<Vec<u8>> = (0..n).map(|i| (0..n).map(|m| u8::from(i != m && times[(i, m)] != 0.0)).collect()).collect();
    let topology = Topology::from_adjacency(adjacency).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    Ok((times, topology))
}

fn cmd_policy(args: PolicyArgs) -> Result<(), Failure> {
    let (times, topology) = read_times(&args.times)?;
    let search = PolicySearch {
        alpha: args.alpha,
        outer_rounds: args.outer_rounds,
        inner_rounds: args.inner_rounds,
        epsilon: args.epsilon,
        margin: args.margin,
    };
    match policy::generate_policy_matrix(&search, &times, &topology) {
        Ok(res) => print_json(&res),
        Err(PolicyError::NoFeasiblePolicy) => Err(Failure::new(EXIT_NO_POLICY, PolicyError::NoFeasiblePolicy.to_string())),
        Err(e @ (PolicyError::NonPositiveAlpha(_) | PolicyError::InvalidArgument(_))) => Err(Failure::new(EXIT_CONFIG, e.to_string())),
        Err(e) => Err(Failure::new(EXIT_RUNTIME, e.to_string())),
    }
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = args.common.seed {
        cfg.seeds = vec![s];
    }
    if cfg.protocols.len() < 2 {
        return Err(Failure::new(EXIT_CONFIG, "compare needs at least two protocols in `protocols`"));
    }
    let eps = args.epsilon.or(cfg.stop.target_epsilon).unwrap_or(cfg.epsilon);
    let cmp = metrics::compare(&cfg, eps)?;
    for (r, (speedup, wins)) in cmp.runs.iter().zip(cmp.mean_speedup.iter().zip(&cmp.reference_wins)) {
        eprintln!(
            "{:<30} mean time {:>10}  ratio vs {} {:>7}  reference faster on {}/{} seeds",
            r.protocol.name(),
            r.mean_time.map_or("n/a".into(), |t| format!("{t:.3}")),
            cmp.runs[0].protocol.name(),
            speedup.map_or("n/a".into(), |s| format!("{s:.3}")),
            wins,
            r.seeds.len()
        );
    }
    if let Some(dir) = &args.common.out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_RUNTIME, e.to_string()))?;
        let text = serde_json::to_string_pretty(&cmp).map_err(|e| Failure::new(EXIT_RUNTIME, e.to_string()))?;
        std::fs::write(dir.join("comparison.json"), text).map_err(|e| Failure::new(EXIT_RUNTIME, e.to_string()))?;
    }
    print_json(&cmp)
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let opts = SuiteOptions { margin: args.margin, topologies: args.topologies, seed: args.seed };
    let report = suite::run_suite(args.suite, &opts);
    print!("{}", report.table());
    if report.passed() {
        println!("all {} checks passed", report.checks.len());
        Ok(())
    } else {
        let n = report.failures().count();
        Err(Failure::new(EXIT_PROPERTY, format!("{n} of {} checks failed", report.checks.len())))
    }
}
