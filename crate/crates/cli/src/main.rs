use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use npmm_core::pipeline::commands::{self, DataPaths, DiagnoseInputs, RunContext};
use npmm_core::pipeline::{Config, Scale};

#[derive(Parser)]
#[command(name = "npmm", version, about = "Spatial extremes with a process mixture model and a neural synthetic likelihood")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed; drawn at random and recorded in the manifest when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory for outputs.
    #[arg(long, global = true, default_value = "npmm-run")]
    out: PathBuf,

    #[arg(long, global = true)]
    sites: Option<PathBuf>,

    #[arg(long, global = true)]
    obs: Option<PathBuf>,

    #[arg(long, global = true)]
    covs: Option<PathBuf>,

    #[arg(long, global = true)]
    gcm: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,

    /// Worker threads (1 gives a fully sequential run).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (scenario from `model.scenario`).
    Simulate,
    /// Simulate surrogate training rows for every site.
    MakeTraining,
    /// Train the per-site density networks.
    Train {
        /// Directory written by `make-training`; rows are simulated when absent.
        #[arg(long)]
        training: Option<PathBuf>,
    },
    /// Run the MCMC sampler on observed data.
    Fit {
        #[arg(long)]
        surrogate: PathBuf,
    },
    /// Bias-correct climate-model covariates and project quantiles.
    Project {
        /// Run directory of a previous `fit`.
        #[arg(long)]
        fit: PathBuf,
    },
    /// Surrogate calibration, posterior summaries and empirical tail dependence.
    Diagnose {
        #[arg(long)]
        surrogate: Option<PathBuf>,
        #[arg(long)]
        fit: Option<PathBuf>,
    },
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match p {
        Some(p) => Ok(p),
        None => bail!("--{flag} is required for this command"),
    }
}

fn data_paths(cli: &Cli) -> Result<DataPaths<'_>> {
    Ok(DataPaths {
        sites: need(&cli.sites, "sites")?,
        obs: need(&cli.obs, "obs")?,
        covs: need(&cli.covs, "covs")?,
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ctx = RunContext {
        config,
        seed: cli.seed.unwrap_or_else(commands::fresh_seed),
        scale: match cli.scale {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        },
        out: cli.out.clone(),
    };
    match &cli.command {
        Command::Simulate => commands::simulate(&ctx)?,
        Command::MakeTraining => commands::make_training(&ctx, need(&cli.sites, "sites")?)?,
        Command::Train { training } => {
            commands::train(&ctx, need(&cli.sites, "sites")?, training.as_deref())?;
        }
        Command::Fit { surrogate } => {
            let m = commands::fit(&ctx, data_paths(&cli)?, surrogate)?;
            for (block, rate) in &m.acceptance {
                println!("{block}\t{rate:.3}");
            }
        }
        Command::Project { fit } => commands::project(&ctx, data_paths(&cli)?, need(&cli.gcm, "gcm")?, fit)?,
        Command::Diagnose { surrogate, fit } => {
            let data = if cli.sites.is_some() && cli.obs.is_some() && cli.covs.is_some() {
                Some(data_paths(&cli)?)
            } else {
                None
            };
            commands::diagnose(
                &ctx,
                DiagnoseInputs {
                    surrogate: surrogate.as_deref(),
                    fit_dir: fit.as_deref(),
                    data,
                },
            )?;
        }
    }
    eprintln!("wrote {}", ctx.out.display());
    Ok(())
}
