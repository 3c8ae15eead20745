//! `htsoft` experiment harness.

mod config;
mod run;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use htsoft::validate::{validate, ValidateOptions};

use config::RawConfig;
use run::{run, summary, write_trace_file, RunError};

#[derive(Parser)]
#[command(
    name = "htsoft",
    version,
    about = "Soft-thresholded tensor solvers: runs, checks and sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its iteration trace as CSV.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Override a config entry, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Trace destination; defaults to the config's `out_path`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle cross-checks.
    Validate {
        #[arg(long, default_value_t = ValidateOptions::default().seed)]
        seed: u64,
    },
    /// Run every point of a parameter grid, one trace file per run.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn fail(e: RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn load(config: &Path, set: &[String]) -> Result<RawConfig, RunError> {
    let mut raw = RawConfig::load(config).map_err(|e| RunError::Config(e.to_string()))?;
    for s in set {
        raw.apply_override(s).map_err(|e| RunError::Config(e.to_string()))?;
    }
    Ok(raw)
}

fn solve(config: PathBuf, set: Vec<String>, out: Option<PathBuf>) -> Result<i32, RunError> {
    let exp = load(&config, &set)?
        .resolve()
        .map_err(|e| RunError::Config(e.to_string()))?;
    let out = out
        .or_else(|| exp.out_path.clone())
        .ok_or_else(|| RunError::Config("no output path: pass --out or set out_path".into()))?;
    let outcome = run(&exp)?;
    write_trace_file(&out, &outcome.trace, exp.timing)?;
    println!("{}", summary(&outcome));
    Ok(outcome.status.exit_code())
}

fn sweep_cmd(config: PathBuf, grid: PathBuf, out_dir: PathBuf) -> Result<i32, RunError> {
    let base = load(&config, &[])?;
    let grid_text = fs::read_to_string(&grid).map_err(|e| RunError::Config(format!("{}: {e}", grid.display())))?;
    let runs = sweep::sweep(&base, &grid_text, &out_dir)?;
    for r in &runs {
        match &r.result {
            Ok((_, iters, res)) => println!(
                "run_{:03}: exit {} after {iters} iterations, res_norm {res:e}",
                r.index,
                r.exit_code()
            ),
            Err(m) => println!("run_{:03}: {m}", r.index),
        }
    }
    Ok(runs.iter().map(|r| r.exit_code()).max().unwrap_or(0))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { config, set, out } => solve(config, set, out),
        Command::Validate { seed } => {
            let report = validate(&ValidateOptions {
                seed,
                ..ValidateOptions::default()
            });
            print!("{report}");
            Ok(if report.all_passed() { 0 } else { 1 })
        }
        Command::Sweep { config, grid, out_dir } => sweep_cmd(config, grid, out_dir),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => fail(e),
    }
}
