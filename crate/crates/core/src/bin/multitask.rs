use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use multitask_core::config::{ArchSelection, RunConfig};
use multitask_core::runner::{self, RunError};
use multitask_core::truth::Challenge;

#[derive(Parser)]
#[command(name = "multitask", version, about = "Multi-agent autonomous lab simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed campaign sweep.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Architecture name or `all`; overrides the config file.
        #[arg(long)]
        arch: Option<String>,
        /// Base seed; overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the ground truth of a challenge as CSV.
    DumpTruth {
        #[arg(long)]
        challenge: u8,
    },
    /// Aggregate completed run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write summary.csv and per-architecture plot data here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(e: RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            arch,
            seed,
            out,
        } => {
            let mut cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(RunError::Config(e)),
            };
            if let Some(a) = arch {
                match a.parse::<ArchSelection>() {
                    Ok(a) => cfg.architecture = a,
                    Err(e) => return fail(RunError::Config(format!("--arch: {e}"))),
                }
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            match runner::run(&cfg) {
                Ok(sweep) => {
                    for (arch, runs) in &sweep.outcomes {
                        let finals: Vec<f64> = runs
                            .iter()
                            .filter_map(|r| r.mean_regret().last().copied())
                            .collect();
                        let mean = finals.iter().sum::<f64>() / finals.len().max(1) as f64;
                        println!(
                            "{arch}: {} runs, mean final regret {mean:.2}% -> {}",
                            runs.len(),
                            cfg.output_dir.join(arch.as_str()).join("summary.csv").display()
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::DumpTruth { challenge } => match Challenge::try_from(challenge) {
            Ok(c) => {
                print!("{}", runner::truth_csv(c));
                ExitCode::SUCCESS
            }
            Err(e) => fail(RunError::Config(e.to_string())),
        },
        Command::Report { dirs, out } => match runner::report(&dirs) {
            Ok((summary, plots)) => {
                if let Some(out) = out {
                    if let Err(e) = runner::write_report(&out, &summary, &plots) {
                        return fail(e);
                    }
                }
                print!("{summary}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}
