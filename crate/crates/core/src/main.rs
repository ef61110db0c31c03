use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stability_audit::cli::{cmd_compare, cmd_report, cmd_run, cmd_simulate, write_atomic};
use stability_audit::config::Config;
use stability_audit::Error;

/// Retrain a risk model many times and measure how much individual
/// predictions move.
#[derive(Parser)]
#[command(name = "stability-audit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Campaign config (`key = value` lines) or a manifest JSON.
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set harness.runs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the simulated population and test set.
    Simulate(ConfigArgs),
    /// Retrain the model B times and write the prediction matrix.
    Run(ConfigArgs),
    /// Compute ePIW, eDFR, bias and MSE summaries for a finished run.
    Report(ConfigArgs),
    /// Compare binned metrics across report directories.
    Compare {
        /// Report directories (`<output.dir>/report`).
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Also write the comparison as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &ConfigArgs) -> Result<Config, Error> {
    let mut cfg = Config::load(&args.config)?;
    for o in &args.overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Simulate(args) => {
            let m = cmd_simulate(&load(&args)?)?;
            for f in &m.files {
                println!("{}  {}", f.sha256, f.path);
            }
        }
        Command::Run(args) => {
            let summary = cmd_run(&load(&args)?)?;
            if !summary.not_converged.is_empty() {
                eprintln!(
                    "warning: {} run(s) stopped at the iteration cap without converging: {:?}",
                    summary.not_converged.len(),
                    summary.not_converged
                );
            }
            for f in &summary.manifest.files {
                println!("{}  {}", f.sha256, f.path);
            }
        }
        Command::Report(args) => {
            let report = cmd_report(&load(&args)?)?;
            let s = &report.summary;
            println!(
                "{} ({}): {} of {} runs retained, BCE {:.4} ± {:.4}, accuracy {:.4} ± {:.4}",
                s.model,
                s.mode,
                s.runs_retained,
                s.runs_total,
                s.bce_mean,
                s.bce_sd,
                s.accuracy_mean,
                s.accuracy_sd
            );
            for (k, v) in &s.overall {
                println!("  mean {k}: {v:.4}");
            }
        }
        Command::Compare { reports, out } => {
            let cmp = cmd_compare(&reports)?;
            for w in &cmp.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", cmp.render());
            if let Some(path) = out {
                write_atomic(&path, cmp.to_csv().as_bytes())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
