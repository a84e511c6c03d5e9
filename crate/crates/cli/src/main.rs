use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hamid::config::{half_decades, ExperimentConfig, ExperimentKind, ModelKind, Overrides};

#[derive(Parser)]
#[command(
    name = "hamid",
    version,
    about = "Hamiltonian identification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Global,
}

#[derive(Args)]
struct Global {
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed of the random perturbations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of double-well levels.
    #[arg(long, global = true)]
    nd: Option<usize>,
    /// Number of time steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Newton stopping tolerance on the update norm.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config (or a previous manifest.json).
    Run { config: PathBuf },
    /// Newton runs over a grid of perturbation sizes.
    Sweep {
        #[arg(long, value_enum, default_value = "two-level")]
        model: Model,
        /// Comma-separated η values; defaults to half decades from 1e-5 to 1e-2.
        #[arg(long, value_delimiter = ',')]
        etas: Option<Vec<f64>>,
        /// Seeds per η.
        #[arg(long, default_value_t = 15)]
        seeds: usize,
        /// Newton iterations per run.
        #[arg(long, default_value_t = 9)]
        kmax: usize,
    },
    /// Canned demonstrations.
    Demo {
        #[arg(value_enum)]
        which: Demo,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    TwoLevel,
    DoubleWell,
}

#[derive(Clone, Copy, ValueEnum)]
enum Demo {
    Singularity,
}

fn config_for(command: Command) -> Result<ExperimentConfig> {
    Ok(match command {
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            ExperimentConfig::from_json(&text)
                .with_context(|| format!("in {}", config.display()))?
        }
        Command::Sweep {
            model,
            etas,
            seeds,
            kmax,
        } => {
            let mut cfg = ExperimentConfig::new(ExperimentKind::EtaSweep);
            cfg.sweep.model = match model {
                Model::TwoLevel => ModelKind::TwoLevel,
                Model::DoubleWell => ModelKind::DoubleWell,
            };
            cfg.sweep.etas = etas.unwrap_or_else(|| half_decades(1e-5, 1e-2));
            cfg.sweep.k_max = kmax;
            cfg.perturbation.n_seeds = seeds;
            cfg
        }
        Command::Demo {
            which: Demo::Singularity,
        } => ExperimentConfig::new(ExperimentKind::SingularityDemo),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = cli.overrides;
    let overrides = Overrides {
        out: g.out,
        seed: g.seed,
        nd: g.nd,
        steps: g.steps,
        tol: g.tol,
    };
    let result = config_for(cli.command).and_then(|mut cfg| {
        cfg.apply(&overrides);
        hamid::execute(cfg)
    });
    match result {
        Ok((cfg, out)) => {
            for line in &out.notes {
                println!("{line}");
            }
            println!(
                "wrote {} files to {}",
                out.files.len() + 1,
                cfg.out_dir().display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
