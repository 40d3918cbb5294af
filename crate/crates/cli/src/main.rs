use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spademl_core::experiment::{
    emit_scatter, run_experiment, validate, ExperimentConfig, ExperimentError,
};

/// Photon-counting classification experiments.
#[derive(Parser)]
#[command(name = "spademl", version, about)]
#[command(after_help = "Worker threads: set SPADEML_WORKERS.\n\
Exit codes: 0 ok, 1 config error, 2 data error, 3 numerical guard tripped.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep and write accuracy, confusion and manifest files.
    Run { config: PathBuf },
    /// Write exact per-image moments of a sample of the selected images.
    Scatter { config: PathBuf },
    /// Check the config, data and numerical guards without training.
    Validate { config: PathBuf },
}

fn execute(command: &Command) -> Result<(), ExperimentError> {
    match command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_path(config)?;
            let report = run_experiment(&cfg)?;
            for cell in &report.cells {
                println!(
                    "sigma_eff={:.4} N={} accuracy={:.4} +- {:.4}",
                    cell.sigma_eff, cell.photons, cell.report.accuracy_mean, cell.report.accuracy_std
                );
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Scatter { config } => {
            let cfg = ExperimentConfig::from_path(config)?;
            let rows = emit_scatter(&cfg)?;
            println!("wrote {} rows to {}", rows.len(), cfg.output_dir.join("scatter.csv").display());
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_path(config)?;
            let summary = validate(&cfg)?;
            for c in &summary.realized_counts {
                println!("class {}: {} images", c.class, c.count);
            }
            println!("{} cells, sigma_eff {:?}", summary.cells, summary.sigma_eff);
            if !summary.di_half_extent.is_empty() {
                println!("DI grid half-widths {:?}", summary.di_half_extent);
            }
            println!("feature lengths {:?}", summary.feature_len);
            println!("ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
