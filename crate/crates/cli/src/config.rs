use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use hamid_core::models::{DOUBLE_WELL_DEFAULT_STEPS, TWO_LEVEL_DEFAULT_STEPS};
use hamid_core::{
    ContinuationConfig, DoubleWellParams, NewtonConfig, PerturbationSpec, TwoLevelParams,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    NewtonTwoLevel,
    NewtonDoubleWell,
    ContinuationTwoLevel,
    ContinuationDoubleWell,
    EtaSweep,
    SingularityDemo,
    CnOrderCheck,
    CpuScaling,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::NewtonTwoLevel => "newton-two-level",
            ExperimentKind::NewtonDoubleWell => "newton-double-well",
            ExperimentKind::ContinuationTwoLevel => "continuation-two-level",
            ExperimentKind::ContinuationDoubleWell => "continuation-double-well",
            ExperimentKind::EtaSweep => "eta-sweep",
            ExperimentKind::SingularityDemo => "singularity-demo",
            ExperimentKind::CnOrderCheck => "cn-order-check",
            ExperimentKind::CpuScaling => "cpu-scaling",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    TwoLevel,
    DoubleWell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub model: ModelKind,
    pub etas: Vec<f64>,
    /// Newton iterations per run.
    pub k_max: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            model: ModelKind::TwoLevel,
            etas: half_decades(1e-5, 1e-2),
            k_max: 9,
        }
    }
}

/// `lo, lo·√10, …, hi`.
pub fn half_decades(lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    let n = ((b - a) * 2.0).round() as usize;
    (0..=n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / n as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderCheckConfig {
    pub t_final: f64,
    /// Coarsest step count; the check also runs 2× and 4× this.
    pub n_steps: usize,
}

impl Default for OrderCheckConfig {
    fn default() -> Self {
        OrderCheckConfig {
            t_final: 1.0,
            n_steps: 32,
        }
    }
}

/// Identical continuation runs on the double well at several sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpuConfig {
    pub n_levels: Vec<usize>,
    pub n_steps: usize,
    pub n_intermediate: usize,
    pub max_iters: usize,
}

impl Default for CpuConfig {
    fn default() -> Self {
        CpuConfig {
            n_levels: vec![2, 6, 12],
            n_steps: 20_000,
            n_intermediate: 2,
            max_iters: 3,
        }
    }
}

/// One experiment. Every field except `kind` has a default; the manifest of
/// a run records the fully resolved form, which is itself a valid config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub two_level: TwoLevelParams,
    #[serde(default)]
    pub double_well: DoubleWellParams,
    /// `seed` is the base seed of every random draw in the run.
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub continuation: ContinuationConfig,
    /// Time steps; defaults depend on the model.
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub order_check: OrderCheckConfig,
    #[serde(default)]
    pub cpu: CpuConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub nd: Option<usize>,
    pub steps: Option<usize>,
    pub tol: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            two_level: TwoLevelParams::default(),
            double_well: DoubleWellParams::default(),
            perturbation: PerturbationSpec::default(),
            newton: NewtonConfig::default(),
            continuation: ContinuationConfig::default(),
            n_steps: None,
            sweep: SweepConfig::default(),
            order_check: OrderCheckConfig::default(),
            cpu: CpuConfig::default(),
            out_dir: None,
        }
    }

    /// Parses a config, or the `config` member of a run manifest.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).context("invalid JSON")?;
        let value = match value.get("config") {
            Some(inner) if inner.is_object() => inner.clone(),
            _ => value,
        };
        let cfg: ExperimentConfig = serde_json::from_value(value).context("invalid config")?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.out_dir = Some(out.clone());
        }
        if let Some(seed) = o.seed {
            self.perturbation.seed = seed;
        }
        if let Some(nd) = o.nd {
            self.double_well.n_levels = nd;
        }
        if let Some(steps) = o.steps {
            self.n_steps = Some(steps);
        }
        if let Some(tol) = o.tol {
            self.newton.tol = tol;
            self.continuation.newton.tol = tol;
        }
    }

    pub fn model(&self) -> ModelKind {
        match self.kind {
            ExperimentKind::NewtonDoubleWell
            | ExperimentKind::ContinuationDoubleWell
            | ExperimentKind::CpuScaling => ModelKind::DoubleWell,
            ExperimentKind::EtaSweep => self.sweep.model,
            _ => ModelKind::TwoLevel,
        }
    }

    /// Fills every model-dependent default and checks the result.
    pub fn resolve(mut self) -> Result<Self> {
        if self.n_steps.is_none() {
            self.n_steps = Some(match self.kind {
                ExperimentKind::CnOrderCheck => self.order_check.n_steps,
                ExperimentKind::CpuScaling => self.cpu.n_steps,
                _ => match self.model() {
                    ModelKind::TwoLevel => TWO_LEVEL_DEFAULT_STEPS,
                    ModelKind::DoubleWell => DOUBLE_WELL_DEFAULT_STEPS,
                },
            });
        }
        if self.two_level.e0.is_none() {
            self.two_level.e0 = Some(self.two_level.resolved_e0());
        }
        if self.out_dir.is_none() {
            self.out_dir = Some(PathBuf::from("out").join(self.kind.name()));
        }
        self.validate()?;
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.n_steps.expect("resolved config")
    }

    pub fn out_dir(&self) -> &PathBuf {
        self.out_dir.as_ref().expect("resolved config")
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_steps.is_none_or(|n| n > 0),
            "n_steps must be positive"
        );
        ensure!(
            self.perturbation.eta >= 0.0 && self.perturbation.eta.is_finite(),
            "perturbation.eta must be a non-negative number"
        );
        self.newton.validate()?;
        self.continuation.newton.validate()?;
        self.two_level.validate()?;
        match self.kind {
            ExperimentKind::NewtonTwoLevel | ExperimentKind::NewtonDoubleWell => {
                ensure!(
                    self.perturbation.n_seeds > 0,
                    "perturbation.n_seeds must be positive"
                );
            }
            ExperimentKind::ContinuationTwoLevel | ExperimentKind::ContinuationDoubleWell => {
                ensure!(
                    self.continuation.n_intermediate > 0,
                    "continuation.n_intermediate must be positive"
                );
            }
            ExperimentKind::EtaSweep => {
                ensure!(!self.sweep.etas.is_empty(), "sweep.etas must not be empty");
                ensure!(
                    self.sweep.etas.iter().all(|e| *e >= 0.0 && e.is_finite()),
                    "sweep.etas must be non-negative numbers"
                );
                ensure!(self.sweep.k_max > 0, "sweep.k_max must be positive");
                ensure!(
                    self.perturbation.n_seeds > 0,
                    "perturbation.n_seeds must be positive"
                );
            }
            ExperimentKind::CnOrderCheck => {
                ensure!(
                    self.order_check.t_final > 0.0,
                    "order_check.t_final must be positive"
                );
            }
            ExperimentKind::CpuScaling => {
                ensure!(
                    !self.cpu.n_levels.is_empty(),
                    "cpu.n_levels must not be empty"
                );
                ensure!(self.cpu.max_iters > 0, "cpu.max_iters must be positive");
                ensure!(
                    self.cpu.n_intermediate > 0,
                    "cpu.n_intermediate must be positive"
                );
                if self.cpu.n_levels.iter().any(|&n| n < 2) {
                    bail!("cpu.n_levels entries must be at least 2");
                }
            }
            ExperimentKind::SingularityDemo => {}
        }
        if self.model() == ModelKind::DoubleWell && self.kind != ExperimentKind::CpuScaling {
            self.double_well.validate()?;
        }
        Ok(())
    }
}
