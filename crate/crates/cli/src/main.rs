//! Command-line front end: tree/config ingestion, subcommand dispatch,
//! report and CSV emission, and the synthetic experiment driver.
//!
//! All outputs are byte-deterministic given flags, seeds and inputs:
//! seconds are printed with 9 decimal digits, byte counts as plain
//! integers.
//!
//! Exit codes: 0 success, 2 usage (clap), 3 file I/O, 4 document parse
//! error, 5 domain error (unknown loop id, guard exceeded, bad ranges).

use std::error::Error as _;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ckprof_core::binomial::{self, BinomialError};
use ckprof_core::model::{ConfigError, GenError, TreeError};
use ckprof_core::optimizer::{self, OptimizeError, ParetoError, Strategy, StrategyKind};
use ckprof_core::profiler::{self, ProfileError};
use ckprof_core::sim::{self, SimError};
use ckprof_core::{CallTree, CheckpointConfig, CostRanges};

#[derive(Parser)]
#[command(
    name = "ckprof",
    version,
    about = "Simulate, profile and tune call-tree checkpointing schedules for adjoint codes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay the adjoint round trip and print its exact cost.
    Simulate {
        #[command(flatten)]
        input: InputArgs,
        /// Write the callback event log here (tab-separated, one per line).
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Profile one run and report per-checkpoint inhibition suggestions.
    Profile {
        #[command(flatten)]
        input: InputArgs,
        /// Directory for suggestions.csv (created if absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeatedly follow profiling suggestions until none remains.
    Optimize {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        strategy: StrategyArgs,
        /// Directory for trajectory.csv and suggestions.log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate random checkpointing configurations.
    Random {
        #[command(flatten)]
        input: InputArgs,
        /// Number of configurations to sample.
        #[arg(long, default_value_t = 250)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for scatter.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive Pareto front over all inhibition subsets (small trees).
    Pareto {
        #[command(flatten)]
        input: InputArgs,
        /// Refuse trees with more static checkpoints than this.
        #[arg(long, default_value_t = optimizer::DEFAULT_PARETO_GUARD)]
        guard: usize,
        /// Directory for pareto.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Binomial checkpointing table for a loop of l steps and d slots.
    Revolve {
        #[arg(long)]
        l: u64,
        #[arg(long)]
        d: u64,
    },
    /// Generate a deterministic synthetic tree document.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 85)]
        n_calls: usize,
        #[arg(long, default_value_t = 3)]
        max_depth: usize,
        #[command(flatten)]
        ranges: RangeArgs,
        /// Directory for tree.json (created if absent).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a canned experiment pipeline into one output directory.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 85)]
        n_calls: usize,
        #[arg(long, default_value_t = 3)]
        max_depth: usize,
        /// Random configurations in the scatter baseline.
        #[arg(long, default_value_t = 250)]
        n_random: usize,
        #[arg(long, default_value_t = optimizer::DEFAULT_PARETO_GUARD)]
        guard: usize,
    },
}

#[derive(Args)]
struct InputArgs {
    /// Tree document.
    #[arg(long)]
    tree: PathBuf,
    /// Checkpointing configuration (default: everything active).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct StrategyArgs {
    #[arg(long, value_enum, default_value_t = StrategyChoice::TimeFirst)]
    strategy: StrategyChoice,
    /// Suggestions applied per re-profile.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Peak-stack budget in bytes; suggestions that would exceed it are skipped.
    #[arg(long)]
    budget: Option<u64>,
    /// Time-first only: postpone suggestions costing more peak than this.
    #[arg(long)]
    defer_above: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyChoice {
    /// Highest run-time gain first, deferring expensive peak growth.
    TimeFirst,
    /// Lowest memory cost first, regardless of run-time gain.
    MemoryFirst,
}

impl StrategyArgs {
    fn build(&self) -> Strategy {
        Strategy {
            kind: match self.strategy {
                StrategyChoice::TimeFirst => StrategyKind::TimeFirst,
                StrategyChoice::MemoryFirst => StrategyKind::MemoryFirst,
            },
            batch: self.batch.max(1),
            budget_bytes: self.budget,
            defer_above_bytes: self.defer_above,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    /// gen, random scatter, both greedy strategies, front when feasible.
    Fig6,
}

#[derive(Args)]
struct RangeArgs {
    /// Primal time per segment, MIN:MAX seconds.
    #[arg(long, value_parser = parse_frange)]
    t_primal: Option<(f64, f64)>,
    /// Taping overhead multiplier on t_primal, MIN:MAX.
    #[arg(long, value_parser = parse_frange)]
    fwd_overhead: Option<(f64, f64)>,
    /// Backward-sweep multiplier on t_primal, MIN:MAX.
    #[arg(long, value_parser = parse_frange)]
    bwd_factor: Option<(f64, f64)>,
    /// Tape bytes per segment, MIN:MAX.
    #[arg(long, value_parser = parse_urange)]
    tape: Option<(u64, u64)>,
    /// Snapshot bytes per call, MIN:MAX.
    #[arg(long, value_parser = parse_urange)]
    snap: Option<(u64, u64)>,
    /// Snapshot write/read seconds, MIN:MAX.
    #[arg(long, value_parser = parse_frange)]
    t_snp: Option<(f64, f64)>,
}

impl RangeArgs {
    fn build(&self) -> CostRanges {
        let mut ranges = CostRanges::default();
        if let Some(r) = self.t_primal {
            ranges.t_primal = r;
        }
        if let Some(r) = self.fwd_overhead {
            ranges.fwd_overhead = r;
        }
        if let Some(r) = self.bwd_factor {
            ranges.bwd_factor = r;
        }
        if let Some(r) = self.tape {
            ranges.tape_bytes = r;
        }
        if let Some(r) = self.snap {
            ranges.snapshot_bytes = r;
        }
        if let Some(r) = self.t_snp {
            ranges.t_snp = r;
        }
        ranges
    }
}

fn parse_frange(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected MIN:MAX, got {s:?}"))?;
    let lo: f64 = lo.parse().map_err(|_| format!("bad number {lo:?}"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("bad number {hi:?}"))?;
    Ok((lo, hi))
}

fn parse_urange(s: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected MIN:MAX, got {s:?}"))?;
    let lo: u64 = lo.parse().map_err(|_| format!("bad integer {lo:?}"))?;
    let hi: u64 = hi.parse().map_err(|_| format!("bad integer {hi:?}"))?;
    Ok((lo, hi))
}

#[derive(Debug)]
enum CliError {
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    TreeParse {
        path: PathBuf,
        source: TreeError,
    },
    ConfigParse {
        path: PathBuf,
        source: ConfigError,
    },
    Sim(SimError),
    Profile(ProfileError),
    Gen(GenError),
    Binomial(BinomialError),
    Pareto(ParetoError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::TreeParse { path, source } => {
                write!(f, "{}: {source}", path.display())
            }
            CliError::ConfigParse { path, source } => {
                write!(f, "{}: {source}", path.display())
            }
            CliError::Sim(e) => e.fmt(f),
            CliError::Profile(e) => e.fmt(f),
            CliError::Gen(e) => e.fmt(f),
            CliError::Binomial(e) => e.fmt(f),
            CliError::Pareto(e) => e.fmt(f),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 3,
            CliError::TreeParse { .. } | CliError::ConfigParse { .. } => 4,
            CliError::Sim(_)
            | CliError::Profile(_)
            | CliError::Gen(_)
            | CliError::Binomial(_)
            | CliError::Pareto(_) => 5,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Sim(e)
    }
}

impl From<ParetoError> for CliError {
    fn from(e: ParetoError) -> Self {
        CliError::Pareto(e)
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Sim(e) => CliError::Sim(e),
            OptimizeError::Profile(e) => CliError::Profile(e),
        }
    }
}

impl From<profiler::ProfileTreeError> for CliError {
    fn from(e: profiler::ProfileTreeError) -> Self {
        match e {
            profiler::ProfileTreeError::Sim(e) => CliError::Sim(e),
            profiler::ProfileTreeError::Profile(e) => CliError::Profile(e),
        }
    }
}

fn main() -> ExitCode {
    // Die quietly on closed pipes (`ckprof profile | head`) instead of
    // panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = match &err {
                CliError::Io { source, .. } => source.source(),
                CliError::TreeParse { source, .. } => source.source(),
                CliError::ConfigParse { source, .. } => source.source(),
                _ => None,
            };
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.code())
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_inputs(input: &InputArgs) -> Result<(CallTree, CheckpointConfig), CliError> {
    let tree = ckprof_core::parse_tree(&read_file(&input.tree)?).map_err(|source| {
        CliError::TreeParse {
            path: input.tree.clone(),
            source,
        }
    })?;
    let config = match &input.config {
        Some(path) => {
            ckprof_core::parse_config(&read_file(path)?).map_err(|source| CliError::ConfigParse {
                path: path.clone(),
                source,
            })?
        }
        None => CheckpointConfig::default(),
    };
    Ok((tree, config))
}

/// Either print to stdout or write into `dir/name`, echoing the path.
fn deliver(out: &Option<PathBuf>, name: &str, contents: &str) -> Result<(), CliError> {
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            let path = dir.join(name);
            write_file(&path, contents)?;
            println!("wrote {}", path.display());
        }
        None => print!("{contents}"),
    }
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { input, events } => cmd_simulate(&input, events.as_deref()),
        Command::Profile { input, out } => cmd_profile(&input, &out),
        Command::Optimize {
            input,
            strategy,
            out,
        } => cmd_optimize(&input, &strategy.build(), &out),
        Command::Random {
            input,
            n,
            seed,
            out,
        } => cmd_random(&input, n, seed, &out),
        Command::Pareto { input, guard, out } => cmd_pareto(&input, guard, &out),
        Command::Revolve { l, d } => cmd_revolve(l, d),
        Command::Gen {
            seed,
            n_calls,
            max_depth,
            ranges,
            out,
        } => cmd_gen(seed, n_calls, max_depth, &ranges.build(), &out),
        Command::Experiment {
            kind: ExperimentKind::Fig6,
            out,
            seed,
            n_calls,
            max_depth,
            n_random,
            guard,
        } => cmd_experiment_fig6(&out, seed, n_calls, max_depth, n_random, guard),
    }
}

fn cmd_simulate(input: &InputArgs, events_out: Option<&Path>) -> Result<(), CliError> {
    let (tree, config) = load_inputs(input)?;
    let cost = match events_out {
        Some(path) => {
            let (events, cost) = sim::capture_events(&tree, &config)?;
            let mut log = String::new();
            for ev in &events {
                log.push_str(&ev.log_line());
                log.push('\n');
            }
            write_file(path, &log)?;
            cost
        }
        None => sim::simulate(&tree, &config)?,
    };
    let primal = sim::simulate_primal(&tree);
    println!("time_s={:.9}", cost.time_s);
    println!("peak_bytes={}", cost.peak_bytes);
    println!("turn_bytes={}", cost.turn_bytes);
    println!("primal_s={primal:.9}");
    if primal > 0.0 {
        println!("slowdown={:.9}", cost.time_s / primal);
    } else {
        println!("slowdown=inf");
    }
    Ok(())
}

fn cmd_profile(input: &InputArgs, out: &Option<PathBuf>) -> Result<(), CliError> {
    let (tree, config) = load_inputs(input)?;
    let report = profiler::profile_tree(&tree, &config)?;
    print!("{}", report.to_table());
    if out.is_some() {
        deliver(out, "suggestions.csv", &report.to_csv())?;
    }
    Ok(())
}

fn cmd_optimize(
    input: &InputArgs,
    strategy: &Strategy,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let (tree, config) = load_inputs(input)?;
    let (points, reports) = optimizer::optimize_with_reports(&tree, &config, strategy)?;
    for p in &points {
        let applied: Vec<String> = p.applied.iter().map(|r| r.to_string()).collect();
        println!(
            "step={} time_s={:.9} peak_bytes={} applied={}",
            p.step,
            p.time_s,
            p.peak_bytes,
            if applied.is_empty() {
                "-".to_string()
            } else {
                applied.join(";")
            }
        );
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let trajectory = optimizer::trajectory_csv(&points);
        write_file(&dir.join("trajectory.csv"), &trajectory)?;
        let mut log = String::new();
        for (k, report) in reports.iter().enumerate() {
            let _ = writeln!(log, "== step {k}");
            let _ = writeln!(log, "inhibited: {}", points[k].config.inhibited_tokens());
            log.push_str(&report.to_table());
            let applied = points
                .get(k + 1)
                .map(|p| {
                    p.applied
                        .iter()
                        .map(|r| r.to_string())
                        .collect::<Vec<_>>()
                        .join(";")
                })
                .unwrap_or_else(|| "-".to_string());
            let _ = writeln!(log, "applied: {applied}");
            log.push('\n');
        }
        write_file(&dir.join("suggestions.log"), &log)?;
        println!("wrote {}", dir.join("trajectory.csv").display());
        println!("wrote {}", dir.join("suggestions.log").display());
    }
    Ok(())
}

fn cmd_random(
    input: &InputArgs,
    n: usize,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let (tree, config) = load_inputs(input)?;
    let rows = optimizer::random_configs(&tree, &config, n, seed)?;
    deliver(out, "scatter.csv", &optimizer::scatter_csv(&rows))
}

fn cmd_pareto(input: &InputArgs, guard: usize, out: &Option<PathBuf>) -> Result<(), CliError> {
    let (tree, config) = load_inputs(input)?;
    let front = optimizer::pareto(&tree, &config, guard)?;
    deliver(out, "pareto.csv", &optimizer::pareto_csv(&front))
}

fn cmd_revolve(l: u64, d: u64) -> Result<(), CliError> {
    let repetition = binomial::min_repetition(l, d).map_err(CliError::Binomial)?;
    let summary = binomial::schedule(l, d)
        .map_err(CliError::Binomial)?
        .summary();
    println!("l\td\tr\tE\tstores\trestores");
    println!(
        "{l}\t{d}\t{repetition}\t{}\t{}\t{}",
        summary.executions, summary.stores, summary.restores
    );
    Ok(())
}

fn cmd_gen(
    seed: u64,
    n_calls: usize,
    max_depth: usize,
    ranges: &CostRanges,
    out: &Path,
) -> Result<(), CliError> {
    let tree = ckprof_core::generate_tree(seed, n_calls, max_depth, ranges).map_err(CliError::Gen)?;
    ensure_dir(out)?;
    let path = out.join("tree.json");
    write_file(&path, &ckprof_core::serialize_tree(&tree))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_experiment_fig6(
    out: &Path,
    seed: u64,
    n_calls: usize,
    max_depth: usize,
    n_random: usize,
    guard: usize,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let ranges = CostRanges::default();
    let tree = ckprof_core::generate_tree(seed, n_calls, max_depth, &ranges).map_err(CliError::Gen)?;
    write_file(&out.join("tree.json"), &ckprof_core::serialize_tree(&tree))?;
    println!("wrote {}", out.join("tree.json").display());

    let base = CheckpointConfig::default();
    let rows = optimizer::random_configs(&tree, &base, n_random, seed)?;
    write_file(&out.join("scatter.csv"), &optimizer::scatter_csv(&rows))?;
    println!("wrote {}", out.join("scatter.csv").display());

    for (name, strategy) in [
        ("time_first", Strategy::time_first()),
        ("memory_first", Strategy::memory_first()),
    ] {
        let points = optimizer::optimize(&tree, &base, &strategy)?;
        let path = out.join(format!("trajectory_{name}.csv"));
        write_file(&path, &optimizer::trajectory_csv(&points))?;
        println!("wrote {}", path.display());
    }

    let checkpoints = tree.call_refs().len();
    if checkpoints <= guard {
        let front = optimizer::pareto(&tree, &base, guard)?;
        write_file(&out.join("pareto.csv"), &optimizer::pareto_csv(&front))?;
        println!("wrote {}", out.join("pareto.csv").display());
    } else {
        println!("pareto skipped: {checkpoints} checkpoints exceed the guard of {guard}");
    }
    Ok(())
}
