//! `al`: train associated-learning and backprop networks, benchmark the
//! component pipeline, and run the gradient checks.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 invalid configuration,
//! 3 numeric divergence, 4 gradient check failure.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use assoc_learn::al::NetworkPlan;
use assoc_learn::bp::BpLoss;
use assoc_learn::nn::gradcheck::GradCheckOptions;
use assoc_learn::suites::{self, SuiteOptions};
use assoc_learn::train::{bench_sleep, makespan, ThroughputReport};
use clap::{Args, Parser, Subcommand};

use config::{DatasetKind, PartialConfig, PlanSpec, RunConfig, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "al", version, about = "Associated learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write config, metrics CSV, summary and checkpoint.
    Train(TrainArgs),
    /// Time equal-cost sleeping tasks through a pipeline and sequentially.
    BenchPipeline(BenchArgs),
    /// Finite-difference checks of every gradient the trainers use.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<DatasetKind>,
    /// Directory holding the MNIST IDX files (falls back to $AL_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Built-in plan name.
    #[arg(long)]
    plan: Option<String>,
    /// al-seq, al-pipe or bp.
    #[arg(long)]
    mode: Option<String>,
    /// Baseline head: cross-entropy or mse.
    #[arg(long)]
    bp_loss: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs after which the rate is multiplied by --lr-factor, comma separated.
    #[arg(long, value_delimiter = ',')]
    lr_drops: Option<Vec<usize>>,
    #[arg(long)]
    lr_factor: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 64)]
    batches: usize,
    #[arg(long, default_value_t = 4)]
    components: usize,
    /// Cost of each task in milliseconds.
    #[arg(long, default_value_t = 5.0)]
    cost_ms: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value = "toy")]
    plan: String,
    #[arg(long)]
    seed: u64,
    /// Entries checked per tensor; 0 checks every entry.
    #[arg(long, default_value_t = 24)]
    max_entries: usize,
    #[arg(long, default_value_t = 6)]
    batch: usize,
    /// Corrupt one analytic gradient entry in every suite.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(2, message)
    }
}

fn train_partial(args: &TrainArgs) -> Result<PartialConfig, Failure> {
    let file = match &args.config {
        Some(p) => PartialConfig::from_file(p).map_err(Failure::config)?,
        None => PartialConfig::default(),
    };
    let parse = |s: &Option<String>| -> Result<_, Failure> {
        s.as_deref()
            .map(|m| {
                m.parse()
                    .map_err(|e: assoc_learn::Error| Failure::config(e.to_string()))
            })
            .transpose()
    };
    let bp_loss = match args.bp_loss.as_deref() {
        None => None,
        Some("cross-entropy" | "ce") => Some(BpLoss::CrossEntropy),
        Some("mse") => Some(BpLoss::Mse),
        Some(other) => return Err(Failure::config(format!("unknown --bp-loss {other:?}"))),
    };
    let flags = PartialConfig {
        dataset: args.dataset,
        data_dir: args.data_dir.clone(),
        plan: args.plan.clone().map(PlanSpec::Named),
        mode: parse(&args.mode)?,
        bp_loss,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        lr_drops: args.lr_drops.clone(),
        lr_factor: args.lr_factor,
        seed: args.seed,
        out: args.out.clone(),
    };
    Ok(file.overlay(flags))
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let partial = train_partial(&args)?;
    let env_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    let cfg = RunConfig::resolve(partial, env_dir).map_err(Failure::config)?;
    let summary = run::train(&cfg, !args.quiet)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    if args.components == 0 || args.batches == 0 {
        return Err(Failure::config(
            "--components and --batches must be at least 1",
        ));
    }
    if !(args.cost_ms.is_finite() && args.cost_ms >= 0.0) {
        return Err(Failure::config("--cost-ms must be a non-negative number"));
    }
    let cost = Duration::from_secs_f64(args.cost_ms / 1000.0);
    let (pipe, seq) = bench_sleep(args.batches, args.components, cost)
        .map_err(|e| Failure::new(1, e.to_string()))?;
    let report = ThroughputReport::from_trace(
        &pipe.trace,
        args.components,
        pipe.wall_clock,
        Some(seq.wall_clock),
    );
    println!(
        "batches {}  components {}  task {:.3} ms",
        args.batches, args.components, args.cost_ms
    );
    println!(
        "logical units: sequential {}  pipelined {}",
        makespan(&seq.trace),
        report.time_units
    );
    println!(
        "wall clock: sequential {:.1} ms  pipelined {:.1} ms",
        seq.wall_clock.as_secs_f64() * 1e3,
        pipe.wall_clock.as_secs_f64() * 1e3
    );
    let busy: Vec<String> = report
        .busy_fraction
        .iter()
        .map(|b| format!("{b:.2}"))
        .collect();
    println!("busy fraction per component: {}", busy.join(" "));
    println!(
        "speedup: {:.2}x (ideal {:.2}x)",
        report.speedup,
        ideal_speedup(args.batches, args.components)
    );
    Ok(())
}

fn ideal_speedup(n: usize, c: usize) -> f64 {
    (n * c) as f64 / (n + c - 1) as f64
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let plan = NetworkPlan::named(&args.plan).map_err(|e| Failure::config(e.to_string()))?;
    if args.batch == 0 {
        return Err(Failure::config("--batch must be positive"));
    }
    let opts = SuiteOptions {
        check: GradCheckOptions {
            max_entries: (args.max_entries > 0).then_some(args.max_entries),
            ..Default::default()
        },
        batch: args.batch,
        fault: args.inject_fault.then_some(0.5),
    };
    let report =
        suites::run_all(&plan, args.seed, &opts).map_err(|e| Failure::new(1, e.to_string()))?;
    print!("{report}");
    println!(
        "max relative error {:.3e} (limit {:.0e}); max cross-component derivative {:.3e} (limit {:.0e})",
        report.max_rel_error(),
        suites::REL_TOLERANCE,
        report.max_isolation_error(),
        suites::ISOLATION_TOLERANCE
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new(4, "gradient check failed"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::BenchPipeline(a) => cmd_bench(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
