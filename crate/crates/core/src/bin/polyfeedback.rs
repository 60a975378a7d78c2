use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use polyfeedback::benchmarks::{benchmark, BENCHMARK_NAMES};
use polyfeedback::experiment::{replay, run_experiment, ExperimentConfig, RunArtifact};
use polyfeedback::Error;

#[derive(Parser)]
#[command(name = "polyfeedback", version, about = "Learn sparse polynomial feedback laws")]
struct Cli {
    /// Worker threads for trajectory fan-out (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log level filter, e.g. info or debug.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate according to a JSON config.
    Run {
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-evaluate a stored run on a fresh test set.
    Replay {
        artifact: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Benchmark registry.
    Benchmarks {
        #[command(subcommand)]
        action: BenchmarkAction,
    },
}

#[derive(Subcommand)]
enum BenchmarkAction {
    List,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::InfeasibleInitialGuess(_) => 3,
        _ => 1,
    }
}

fn execute(cli: Cli) -> polyfeedback::Result<()> {
    match cli.command {
        Command::Run { config, output } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if output.is_some() {
                cfg.output_dir = output;
            }
            if cfg.output_dir.is_none() {
                cfg.output_dir = Some(PathBuf::from("runs").join(&cfg.benchmark));
            }
            let runs = run_experiment(&cfg)?;
            println!("size,degree,gamma,support,test_sse_u_pct,test_sse_y_pct,test_sse_j_pct,failures");
            for run in &runs {
                let (u, y, j, f) = run.test.as_ref().map_or((f64::NAN, f64::NAN, f64::NAN, 0), |t| {
                    (t.sse_u_percent(), t.sse_y_percent(), t.sse_j_percent(), t.failures)
                });
                println!(
                    "{},{},{:e},{},{u:.5},{y:.5},{j:.5},{f}",
                    run.training_size, run.degree, run.gamma, run.support
                );
            }
            if let Some(dir) = &cfg.output_dir {
                eprintln!("artifacts written to {}", dir.display());
            }
        }
        Command::Replay { artifact, seed, count } => {
            let artifact = RunArtifact::from_file(&artifact)?;
            let report = replay(&artifact, seed, count)?;
            println!("{}", report.summary_json()?);
        }
        Command::Benchmarks { action: BenchmarkAction::List } => {
            for name in BENCHMARK_NAMES {
                let spec = benchmark(name, None)?;
                println!(
                    "{name}\td={}\tm={}\t|X|={}\tT={}\tl={}",
                    spec.system.dim(),
                    spec.system.control_dim(),
                    spec.default_basis()?.len(),
                    spec.horizon,
                    spec.scale
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
