use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use doubling_clt::cli::{run_experiment, validate_config, RunOptions};

#[derive(Parser)]
#[command(version, about = "Audit the random-walk scheme for the heat equation")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in a config and write the reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides every per-experiment seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config and list every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match args.command {
        Command::Validate { config } => match validate_config(&config) {
            Ok(c) => {
                println!("ok: {} experiment(s)", c.experiments.len());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprint!("{e}");
                ExitCode::from(2)
            }
        },
        Command::Run {
            config,
            out,
            jobs,
            seed,
        } => {
            let cfg = match validate_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprint!("{e}");
                    return ExitCode::from(2);
                }
            };
            let Some(out) = out.or_else(|| cfg.output_dir.clone()) else {
                eprintln!("no output directory: pass --out or set output_dir");
                return ExitCode::from(2);
            };
            match run_experiment(&cfg, &RunOptions { out, jobs, seed }) {
                Ok(report) => {
                    for e in &report.experiments {
                        println!("{}: {}", e.id, e.status);
                    }
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
