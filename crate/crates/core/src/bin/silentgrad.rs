use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use silentgrad::cli;
use silentgrad::train::TrainConfig;

#[derive(Parser)]
#[command(name = "silentgrad", version, about = "Exact ELBO gradients for linear-Gaussian decoders")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check every closed form against enumeration, Monte Carlo and finite differences.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "n-mc", default_value_t = 200_000)]
        n_mc: usize,
    },
    /// Train one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Record wall-clock seconds per epoch (makes the CSV non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Encoder gradient variance of each estimator at the given epochs.
    Variance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "10,200,500")]
        epochs: String,
        #[arg(long = "n-samples", default_value_t = cli::DEFAULT_VARIANCE_SAMPLES)]
        n_samples: usize,
        /// Also write the table to this directory as variance.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several configurations on identical data and summarize them.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        config: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "variance-epochs", default_value = "10")]
        variance_epochs: String,
        #[arg(long = "n-samples", default_value_t = cli::DEFAULT_VARIANCE_SAMPLES)]
        n_samples: usize,
    },
}

fn run(args: Args) -> Result<()> {
    match args.cmd {
        Cmd::Verify { seed, n_mc } => {
            let cwd = std::env::current_dir()?;
            let v = cli::run_verify(seed, n_mc, &cwd)?;
            print!("{}", v.csv);
            if !v.passed() {
                let names: Vec<&str> = v.failures().map(|r| r.name.as_str()).collect();
                bail!("{} check(s) failed: {}", names.len(), names.join(", "));
            }
        }
        Cmd::Train { config, out, timing } => {
            let o = cli::run_train(&config, &out, timing)
                .with_context(|| format!("training {}", config.display()))?;
            let m = &o.summary;
            println!(
                "{} epochs, loss {}, bpd {}, mse {}; outputs in {}",
                m.epochs,
                m.total_loss,
                m.metrics.bpd,
                m.metrics.mse,
                out.display()
            );
        }
        Cmd::Variance { config, epochs, n_samples, out } => {
            let cfg = TrainConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let epochs = cli::parse_epoch_list(&epochs)?;
            let csv = cli::run_variance(&cfg, &epochs, n_samples)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("variance.csv"), &csv)?;
            }
            print!("{csv}");
        }
        Cmd::Compare { config, out, variance_epochs, n_samples } => {
            let epochs = cli::parse_epoch_list(&variance_epochs)?;
            let rows = cli::run_compare(&config, &out, &epochs, n_samples)?;
            print!("{}", cli::compare_csv(&rows, &epochs));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
