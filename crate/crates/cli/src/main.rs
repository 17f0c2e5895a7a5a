use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ontram_cli::{cmd_cv, cmd_evaluate, cmd_report, cmd_simulate, cmd_train, CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "ontram", version, about = "Ordinal transformation models for trial outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cohort CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Sets every seed (split, train, bootstrap, truncation, simulate).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Bootstrap replicates for metric intervals; 0 skips them.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Epochs of the clinical training stage.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic randomized trial.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of patients.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit on the whole cohort and save the parameters.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Stratified cross-validation with pooled bootstrap metrics.
    Cv {
        #[command(flatten)]
        common: Common,
    },
    /// Score a cohort with saved parameters.
    Evaluate {
        /// params.json written by `train` or `cv`.
        #[arg(long)]
        params: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare report.json / evaluation.json files side by side.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn resolve(common: &Common, n: Option<usize>) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(None),
    };
    Overrides {
        input: common.input.clone(),
        output: common.out.clone(),
        folds: common.folds,
        seed: common.seed,
        bootstrap: common.bootstrap,
        epochs: common.epochs,
        n,
    }
    .apply(&mut config)?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common, n } => {
            println!("{}", cmd_simulate(&resolve(&common, n)?)?);
        }
        Command::Train { common } => {
            let config = resolve(&common, None)?;
            let params = cmd_train(&config)?;
            println!(
                "trained {} to {}",
                params.models.keys().cloned().collect::<Vec<_>>().join(", "),
                config.paths.output.join("params.json").display()
            );
        }
        Command::Cv { common } => {
            let config = resolve(&common, None)?;
            let report = cmd_cv(&config)?;
            for f in &report.failed_folds {
                eprintln!("fold {} failed: {}", f.fold, f.error);
            }
            println!("wrote {}", config.paths.output.join("report.json").display());
        }
        Command::Evaluate { params, common } => {
            let config = resolve(&common, None)?;
            cmd_evaluate(&params, &config)?;
            println!("wrote {}", config.paths.output.join("evaluation.json").display());
        }
        Command::Report { reports, out } => {
            print!("{}", cmd_report(&reports, &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
