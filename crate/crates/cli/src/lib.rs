//! Experiment runner for the Hamiltonian identification library: config
//! loading, the individual studies, η-sweep aggregation and run manifests.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod sweep;

use std::time::Instant;

use anyhow::Result;

pub use config::{ExperimentConfig, ExperimentKind, ModelKind, Overrides};
pub use experiments::{run_experiment, Artifacts};
pub use sweep::{classify, Regime};

/// Resolves, runs and writes one experiment. Returns the artifacts so callers
/// can print the notes.
pub fn execute(cfg: ExperimentConfig) -> Result<(ExperimentConfig, Artifacts)> {
    let cfg = cfg.resolve()?;
    let start = Instant::now();
    let out = run_experiment(&cfg)?;
    let wall = start.elapsed().as_secs_f64();
    manifest::write_run(cfg.out_dir(), &cfg, &out, wall)?;
    Ok((cfg, out))
}
