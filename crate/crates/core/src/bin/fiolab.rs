use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fiolab::runner::{run_scenario, RunOptions, Status, BUNDLED};

#[derive(Parser)]
#[command(name = "fiolab", version, about = "Fourier integral operator experiments")]
struct Cli {
    /// Worker threads for the parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving one subdirectory per scenario.
    #[arg(long, global = true, default_value = "fiolab-out")]
    out_dir: PathBuf,
    /// Config override `section.key=value`; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a bundled scenario by name.
    Run { scenario: String },
    /// List the bundled scenarios.
    ListScenarios,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match cli.command {
        Command::ListScenarios => {
            for (name, src) in BUNDLED {
                let desc = src
                    .lines()
                    .find_map(|l| l.trim().strip_prefix("description").and_then(|r| r.trim_start().strip_prefix('=')))
                    .map(str::trim)
                    .unwrap_or("");
                println!("{name:<20} {desc}");
            }
            ExitCode::SUCCESS
        }
        Command::Run { scenario } => {
            let opts = RunOptions {
                out_dir: cli.out_dir,
                overrides: cli.overrides,
            };
            match run_scenario(&scenario, &opts) {
                Ok(report) => {
                    for r in &report.results {
                        let tag = match r.status {
                            Status::Pass => "PASS",
                            Status::Fail => "FAIL",
                            Status::Error => "ERROR",
                        };
                        println!("{tag:<5} {} ({})", r.name, r.kind);
                        for c in r.checks.iter().filter(|c| !c.pass) {
                            println!("      failed {}: {}", c.name, c.detail.as_deref().unwrap_or(""));
                        }
                        if let Some(m) = &r.message {
                            println!("      {m}");
                        }
                    }
                    println!("results in {}", report.out_dir.display());
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
