use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use olshanski::experiments::{self, ExperimentConfig};
use olshanski::Error;

#[derive(Parser)]
#[command(
    name = "olshanski",
    version,
    about = "Run configured numerical experiments"
)]
struct Cli {
    /// Worker threads for the data-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write its report and CSV files.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Output directory; overrides the config's `output` field.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List experiment tags with their parameters.
    List {
        #[arg(long)]
        json: bool,
    },
}

fn run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let mut cfg = match ExperimentConfig::from_path(&config) {
        Ok(cfg) => cfg,
        Err(e @ (Error::Schema(_) | Error::Json(_) | Error::Io(_))) => {
            eprintln!("schema error: {e}");
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(seed) = seed {
        cfg.experiment.set_seed(seed);
    }
    let dir = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let report = experiments::run(&cfg)?;
    let files = experiments::write_outputs(&report, &dir)?;
    for chk in &report.checks {
        let status = match (chk.pass, chk.assertive) {
            (true, true) => "PASS",
            (false, true) => "FAIL",
            (true, false) => "ok  ",
            (false, false) => "note",
        };
        println!(
            "{status} {:<44} {} {} {}",
            chk.name,
            experiments::fmt17(chk.value),
            chk.comparison.symbol(),
            experiments::fmt17(chk.threshold)
        );
    }
    println!(
        "{} in {:.2}s -> {}",
        if report.passed { "passed" } else { "FAILED" },
        report.wall_time_s,
        files.report.display()
    );
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let body = || -> anyhow::Result<ExitCode> {
        match cli.command {
            Command::List { json } => {
                if json {
                    println!("{}", serde_json::to_string_pretty(&experiments::catalog())?);
                } else {
                    print!("{}", experiments::catalog_text());
                }
                Ok(ExitCode::SUCCESS)
            }
            Command::Run {
                config,
                seed_override,
                out,
            } => run(config, seed_override, out),
        }
    };
    let result = match cli.threads {
        Some(0) => {
            eprintln!("--threads must be positive");
            return ExitCode::from(2);
        }
        Some(k) => olshanski::par::with_threads(k, body),
        None => body(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
