use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blockval::experiment::{
    coefficient_checks, dump_coefficients, run_experiment, validate_config, write_report,
    ExperimentConfig, ReportFormat,
};
use blockval::Error;

#[derive(Parser)]
#[command(
    name = "blockval",
    version,
    about = "Exact data valuation over federated data blocks, with attack simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write report files.
    Run {
        /// Experiment configuration (JSON).
        config: PathBuf,
        /// Override the master seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the config's output_dir, then
        /// $BLOCKVAL_OUT, then ./blockval-out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for subset enumeration and retraining.
        #[arg(long)]
        jobs: Option<usize>,
        /// Report format.
        #[arg(long, default_value = "both", value_parser = ReportFormat::parse)]
        format: ReportFormat,
    },
    /// Check a configuration and print one diagnostic per violated invariant.
    Validate {
        /// Experiment configuration (JSON).
        config: PathBuf,
    },
    /// Write the exact per-subset coefficient table for one metric.
    Coeffs {
        /// Experiment configuration (JSON); supplies the game structure.
        config: PathBuf,
        /// Metric id: sv, loo, bv, bsv, bsv(alpha,beta), or tsv.
        #[arg(long)]
        metric: String,
        /// Output directory (same precedence as for run).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for coefficient extraction.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output format.
        #[arg(long, default_value = "both", value_parser = ReportFormat::parse)]
        format: ReportFormat,
    },
}

fn output_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os("BLOCKVAL_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("blockval-out"))
}

fn configure_threads(jobs: Option<usize>) -> Result<(), Error> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::InvalidConfig(vec![
                "--jobs: must be >= 1".to_string(),
            ]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(vec![format!("--jobs: {e}")]))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            jobs,
            format,
        } => {
            configure_threads(jobs)?;
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = output_dir(out, &cfg);
            let report = run_experiment(&cfg)?;
            let written = write_report(&report, &dir, format)?;
            println!(
                "{} runs x {} metrics, seed {}",
                report.runs.len(),
                cfg.metrics.len(),
                cfg.seed
            );
            for row in &report.aggregates {
                println!(
                    "{:<6} {:<40} mean {:>12.6} stderr {:>12.6} (n = {})",
                    row.metric, row.statistic, row.mean, row.std_error, row.n
                );
            }
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let diags = validate_config(&config)?;
            if diags.is_empty() {
                println!("ok: {}", config.display());
                Ok(())
            } else {
                Err(Error::InvalidConfig(diags))
            }
        }
        Command::Coeffs {
            config,
            metric,
            out,
            jobs,
            format,
        } => {
            configure_threads(jobs)?;
            let cfg = ExperimentConfig::load(&config)?;
            let dir = output_dir(out, &cfg);
            let written = dump_coefficients(&cfg, &metric, &dir, format)?;
            for line in coefficient_checks(&cfg, &metric)? {
                println!("{line}");
            }
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}
