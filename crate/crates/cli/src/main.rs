use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use numembed_cli::{cmd_report, cmd_sweep_bins, cmd_synth, cmd_train, cmd_tune, load_config, CliError, Overrides};

#[derive(Parser)]
#[command(name = "numembed", version, about = "Numerical feature embeddings for tabular MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured model for every seed and write reports, checkpoints and metrics.
    Train(Common),
    /// Random search on the validation split, then train the winner.
    Tune(Common),
    /// Train a bin-based model at several bin counts and write sweep.csv.
    SweepBins(Common),
    /// Write the synthetic dataset as CSV with a schema sidecar.
    Synth(Common),
    /// Summarize an output directory.
    Report {
        /// Output directory of a previous run (defaults to --out or the config's `out`).
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// TOML run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use seeds 0..N.
    #[arg(long)]
    seed_count: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `synth` or the path of a CSV file.
    #[arg(long)]
    dataset: Option<String>,
    /// Model name such as MLP, MLP-Q-LR or MLP-PLR.
    #[arg(long)]
    model: Option<String>,
    /// Bin count, or a comma-separated list for sweep-bins.
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<usize>>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Number of random-search draws.
    #[arg(long)]
    budget: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed_count: self.seed_count,
            out: self.out.clone(),
            dataset: self.dataset.clone(),
            model: self.model.clone(),
            bins: self.bins.clone(),
            sigma: self.sigma,
            budget: self.budget,
        }
    }

    fn run_config(&self) -> Result<numembed_cli::RunConfig, CliError> {
        let mut config = load_config(self.config.as_deref())?;
        config.apply(&self.overrides())?;
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => {
            let config = c.run_config()?;
            let summary = cmd_train(&config)?;
            if let Some(m) = summary.single {
                println!(
                    "{} test {}: {} ± {} ({})",
                    summary.model,
                    summary.metric,
                    m.mean,
                    m.sd,
                    config.out.display()
                );
            }
        }
        Command::Tune(c) => {
            let config = c.run_config()?;
            let (record, summary) = cmd_tune(&config)?;
            let best = &record.trials[record.best];
            println!(
                "best trial {} (validation {:?}): {:?}",
                best.index, best.val_metric, best.params
            );
            if let Some(m) = summary.single {
                println!("{} test {}: {} ± {}", summary.model, summary.metric, m.mean, m.sd);
            }
        }
        Command::SweepBins(c) => {
            let config = c.run_config()?;
            for row in cmd_sweep_bins(&config)? {
                println!("{} bins: {} ± {}", row.bin_count, row.mean, row.sd);
            }
        }
        Command::Synth(c) => {
            let config = c.run_config()?;
            println!("{}", cmd_synth(&config)?.display());
        }
        Command::Report { dir, common } => {
            let dir = match dir {
                Some(d) => d,
                None => common.run_config()?.out,
            };
            print!("{}", cmd_report(&dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
