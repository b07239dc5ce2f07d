use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use decohist::harness::{
    emit_report, load_config, load_demo, run_experiment, LoadedConfig, ReportFormat, DEMOS,
};

/// Decoherent histories of lattice densities and large-N variance scaling.
#[derive(Parser)]
#[command(name = "decohist", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSVs and summary.
    Run {
        /// Config file, or `demo:NAME` for a bundled demo.
        config: String,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed; overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Parse and validate a config without running it.
    Validate { config: String },
    /// List the bundled demo configs.
    ListDemos,
}

const EXIT_USAGE: u8 = 1;
const EXIT_INVARIANT: u8 = 2;

fn load(config: &str) -> decohist::Result<LoadedConfig> {
    match config.strip_prefix("demo:") {
        Some(name) => load_demo(name),
        None => load_config(std::path::Path::new(config)),
    }
}

fn run(config: &str, out: Option<PathBuf>, seed: Option<u64>) -> decohist::Result<bool> {
    let mut loaded = load(config)?;
    if let Some(seed) = seed {
        loaded.config.seed = seed;
    }
    let dir = out.unwrap_or_else(|| PathBuf::from(&loaded.config.output.dir));
    let report = run_experiment(&loaded)?;
    emit_report(&report, &dir, ReportFormat::Csv)?;
    emit_report(&report, &dir, ReportFormat::TextSummary)?;
    print!("{}", report.text_summary());
    eprintln!(
        "wrote {} in {:.2} s",
        dir.display(),
        report.wall_clock.as_secs_f64()
    );
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::ListDemos => {
            for (name, _) in DEMOS {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok(loaded) => {
                println!("{}: ok (config_hash {})", loaded.path, loaded.config.hash());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_USAGE)
            }
        },
        Command::Run {
            config,
            out,
            seed,
            jobs,
        } => {
            let pool = match rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.unwrap_or(0))
                .build()
            {
                Ok(pool) => pool,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_USAGE);
                }
            };
            match pool.install(|| run(&config, out, seed)) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(EXIT_INVARIANT),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_USAGE)
                }
            }
        }
    }
}
