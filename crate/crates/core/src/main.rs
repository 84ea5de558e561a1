use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fmmi::selftest::run_selftest;
use fmmi::sweep::{emit_plotdata, run_sweep, GroupBy, SweepConfig};

#[derive(Parser)]
#[command(name = "fmmi", version, about = "Flow-matching mutual information benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark sweep and write a results CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; grid points run in parallel.
        #[arg(long, env = "FMMI_JOBS", default_value_t = 1)]
        jobs: usize,
        /// Overrides the `output` key of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a results CSV into per-(family, estimator) plot-data files.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long = "group-by")]
        group_by: GroupBy,
    },
    /// Run the analytic-field and oracle checks.
    Selftest,
}

fn run(config: PathBuf, jobs: usize, out: Option<PathBuf>) -> fmmi::Result<bool> {
    let cfg = SweepConfig::from_file(&config)?;
    let outcome = run_sweep(&cfg, jobs, out.as_deref())?;
    let path = out.unwrap_or(cfg.output_path);
    let ok = outcome.rows().count();
    let failed: Vec<_> = outcome.failures().collect();
    for (point, err) in &failed {
        eprintln!("failed {}: {err}", point.describe());
    }
    println!(
        "{} grid points, {ok} succeeded, {} failed; wrote {}",
        outcome.points.len(),
        failed.len(),
        path.display()
    );
    Ok(outcome.success())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, jobs, out } => run(config, jobs, out),
        Command::Plot { csv, group_by } => emit_plotdata(&csv, group_by).map(|paths| {
            for p in &paths {
                println!("{}", p.display());
            }
            true
        }),
        Command::Selftest => {
            let checks = run_selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
