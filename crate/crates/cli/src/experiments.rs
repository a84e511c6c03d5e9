use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use anyhow::{Context, Result};
use hamid_core::models::TWO_PS_AU;
use hamid_core::newton::assemble_jacobian_streaming;
use hamid_core::report::{fmt_opt, fmt_sig, log10};
use hamid_core::{
    build_double_well, continuation_identify_with_truth, hermitian_residual, intermediate_target,
    m0_seed, newton_identify, newton_identify_with_truth, perturb_pair, pi_pulse_field,
    propagate_final, reduce_system, sample_field, singularity_probe, solve_update, two_level_model,
    CMatrix, ControlField, Convergence, DoubleWellModel, Error, HamiltonianPair, NewtonConfig,
    NewtonReport, PerturbationSpec, SampledField, TargetDecomposition, TimeGrid, UnitaryMatrix,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind, ModelKind};
use crate::sweep::{self, Regime};

/// Files produced by a run, keyed by name, plus lines for the terminal.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: BTreeMap<String, Vec<u8>>,
    pub notes: Vec<String>,
    /// Values the run derived beyond the config (recorded in the manifest).
    pub derived: serde_json::Map<String, serde_json::Value>,
}

impl Artifacts {
    pub fn put(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) {
        let mut buf = Vec::new();
        write(&mut buf).expect("writing to memory");
        self.files.insert(name.to_string(), buf);
    }

    pub fn put_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_vec_pretty(value).expect("serializable");
        text.push(b'\n');
        self.files.insert(name.to_string(), text);
    }

    fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    fn derive(&mut self, key: &str, value: impl Serialize) {
        self.derived.insert(
            key.to_string(),
            serde_json::to_value(value).expect("serializable"),
        );
    }
}

/// A forward problem: true pair, field and the target it generates from `U_0 = I`.
pub struct Problem {
    pub truth: HamiltonianPair,
    pub field: ControlField,
    pub grid: TimeGrid,
    pub sampled: SampledField,
    pub u_tar: UnitaryMatrix,
    pub double_well: Option<DoubleWellModel>,
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig, model: ModelKind, n_steps: usize) -> Result<Problem> {
        let (truth, field, t_final, double_well) = match model {
            ModelKind::TwoLevel => {
                let (pair, field) = two_level_model(&cfg.two_level)?;
                (pair, field, cfg.two_level.t_final, None)
            }
            ModelKind::DoubleWell => {
                let m = build_double_well(&cfg.double_well).context("building the double well")?;
                let field = pi_pulse_field(&m, cfg.double_well.t_final)?;
                (m.pair.clone(), field, cfg.double_well.t_final, Some(m))
            }
        };
        let grid = TimeGrid::new(t_final, n_steps)?;
        let sampled = sample_field(&field, &grid)?;
        let u_tar = propagate_final(
            &UnitaryMatrix::identity(truth.dim()),
            &truth,
            &sampled,
            &grid,
        )?;
        Ok(Problem {
            truth,
            field,
            grid,
            sampled,
            u_tar,
            double_well,
        })
    }

    fn u0(&self) -> UnitaryMatrix {
        UnitaryMatrix::identity(self.truth.dim())
    }

    fn record(&self, out: &mut Artifacts) {
        out.derive("t_final", self.grid.t_final());
        out.derive("dt", self.grid.dt());
        out.derive("n_levels", self.truth.dim());
        out.derive("field", &self.field);
        if let Some(m) = &self.double_well {
            out.derive("omega_03", m.omega_03);
            out.derive("mu_03", m.mu_03);
            out.derive("boundary_ratio", m.boundary_ratio);
            out.put_json("model.json", m);
        }
    }
}

/// One Newton run from a perturbed guess.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub eta: f64,
    pub seed: u64,
    pub report: NewtonReport,
    pub regime: Regime,
    pub dev_h0: f64,
    pub dev_h1: f64,
    pub dev_u: f64,
}

pub fn run_seed(p: &Problem, spec: &PerturbationSpec, newton: &NewtonConfig) -> Result<SeedRun> {
    let guess = perturb_pair(&p.truth, spec);
    let (_, report) = newton_identify_with_truth(
        &p.u0(),
        &p.u_tar,
        &guess,
        &p.sampled,
        &p.grid,
        newton,
        Some(&p.truth),
    )
    .with_context(|| format!("Newton run eta={} seed={}", spec.eta, spec.seed))?;
    let (dev_h0, dev_h1, dev_u) = match report.last() {
        Some(r) => (
            r.dev_h0.unwrap_or(f64::NAN),
            r.dev_h1.unwrap_or(f64::NAN),
            r.dev_u,
        ),
        None => {
            let (d0, d1) = p.truth.deviation(&guess);
            let reached = propagate_final(&p.u0(), &guess, &p.sampled, &p.grid)?;
            (d0, d1, reached.distance(&p.u_tar)?)
        }
    };
    let regime = sweep::classify(dev_h0, dev_h1, dev_u);
    Ok(SeedRun {
        eta: spec.eta,
        seed: spec.seed,
        report,
        regime,
        dev_h0,
        dev_h1,
        dev_u,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut out = Artifacts::default();
    match cfg.kind {
        ExperimentKind::NewtonTwoLevel | ExperimentKind::NewtonDoubleWell => newton(cfg, &mut out)?,
        ExperimentKind::ContinuationTwoLevel | ExperimentKind::ContinuationDoubleWell => {
            continuation(cfg, &mut out)?
        }
        ExperimentKind::EtaSweep => eta_sweep(cfg, &mut out)?,
        ExperimentKind::SingularityDemo => singularity(cfg, &mut out)?,
        ExperimentKind::CnOrderCheck => order_check(cfg, &mut out)?,
        ExperimentKind::CpuScaling => cpu_scaling(cfg, &mut out)?,
    }
    Ok(out)
}

pub const TABLE_HEADER: &str = "k,log10_e_k,log10_dev_H0,log10_dev_H1,log10_dev_U";

pub fn write_table<W: Write>(report: &NewtonReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TABLE_HEADER}")?;
    for r in &report.records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.k,
            fmt_sig(log10(r.e_k)),
            fmt_opt(r.dev_h0.map(log10)),
            fmt_opt(r.dev_h1.map(log10)),
            fmt_sig(log10(r.dev_u))
        )?;
    }
    Ok(())
}

pub const SUMMARY_HEADER: &str = "eta,seed,convergence,iterations,dev_H0,dev_H1,dev_U,regime";

pub fn write_summary<W: Write>(runs: &[SeedRun], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in runs {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt_sig(r.eta),
            r.seed,
            convergence_name(r.report.convergence),
            r.report.iterations(),
            fmt_sig(r.dev_h0),
            fmt_sig(r.dev_h1),
            fmt_sig(r.dev_u),
            r.regime.name()
        )?;
    }
    Ok(())
}

pub fn convergence_name(c: Convergence) -> &'static str {
    match c {
        Convergence::Converged => "converged",
        Convergence::MaxIters => "max_iters",
        Convergence::SingularJacobian => "singular_jacobian",
    }
}

fn newton(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let p = Problem::build(cfg, cfg.model(), cfg.steps())?;
    p.record(out);
    let specs: Vec<_> = cfg
        .perturbation
        .seeds()
        .map(|s| cfg.perturbation.with_seed(s))
        .collect();
    let runs: Vec<SeedRun> = specs
        .par_iter()
        .map(|spec| run_seed(&p, spec, &cfg.newton))
        .collect::<Result<_>>()?;
    for r in &runs {
        out.put(&format!("newton_seed{}.csv", r.seed), |w| {
            r.report.write_csv(w)
        });
    }
    out.put("table.csv", |w| write_table(&runs[0].report, w));
    out.put("summary.csv", |w| write_summary(&runs, w));
    let recovered = runs
        .iter()
        .filter(|r| r.regime == Regime::RecoversOriginal)
        .count();
    out.note(format!(
        "{} of {} seeds recover the generating pair (eta = {:e})",
        recovered,
        runs.len(),
        cfg.perturbation.eta
    ));
    Ok(())
}

fn continuation(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let p = Problem::build(cfg, cfg.model(), cfg.steps())?;
    p.record(out);
    let (pair, report) = continuation_identify_with_truth(
        &p.u0(),
        &p.u_tar,
        &p.sampled,
        &p.grid,
        &cfg.continuation,
        Some(&p.truth),
    )?;
    let name = match cfg.model() {
        ModelKind::TwoLevel => "fig3.csv",
        ModelKind::DoubleWell => "fig6.csv",
    };
    out.put(name, |w| report.write_csv(w));
    for s in &report.stages {
        if let Some(n) = &s.newton {
            out.put(&format!("stage{:03}.csv", s.m), |w| n.write_csv(w));
        }
    }
    out.put_json("pair.json", &pair);
    let dec = TargetDecomposition::of(&p.u_tar)?;
    let a_norm = dec.a.matrix().norm();
    out.derive("antisymmetric_part_norm", a_norm);
    out.derive("outcome", report.outcome);
    out.derive("total_iterations", report.total_iterations());
    out.note(format!(
        "continuation {:?} after {} Newton iterations; |A| = {}",
        report.outcome,
        report.total_iterations(),
        fmt_sig(a_norm)
    ));
    if let Some(last) = report.stages.last() {
        out.note(format!(
            "final stage: dev_U = {}, dev_H0 = {}, dev_H1 = {}",
            fmt_sig(last.dev_u_stage),
            fmt_opt(last.dev_h0),
            fmt_opt(last.dev_h1)
        ));
    }
    Ok(())
}

fn eta_sweep(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let p = Problem::build(cfg, cfg.model(), cfg.steps())?;
    p.record(out);
    let newton = NewtonConfig {
        max_iters: cfg.sweep.k_max,
        ..cfg.newton
    };
    let jobs: Vec<PerturbationSpec> = cfg
        .sweep
        .etas
        .iter()
        .flat_map(|&eta| {
            let base = PerturbationSpec {
                eta,
                ..cfg.perturbation
            };
            base.seeds()
                .map(move |s| base.with_seed(s))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut runs: Vec<SeedRun> = jobs
        .par_iter()
        .map(|spec| run_seed(&p, spec, &newton))
        .collect::<Result<_>>()?;
    runs.sort_by(|a, b| a.eta.total_cmp(&b.eta).then(a.seed.cmp(&b.seed)));
    let rows = sweep::aggregate(&runs);
    out.put("fig2.csv", |w| sweep::write_fig2(&rows, w));
    out.put("fig2_raw.csv", |w| sweep::write_fig2_raw(&runs, w));
    for r in &rows {
        out.note(format!(
            "eta {:e}: recovers {:.2}, alternate {:.2}, diverges {:.2} -> {}",
            r.eta,
            r.frac_recovers,
            r.frac_alternate,
            r.frac_diverges,
            r.regime.name()
        ));
    }
    Ok(())
}

/// `σ_x`.
pub fn sigma_x() -> UnitaryMatrix {
    let m = CMatrix::from_row_slice(2, 2, &[0.0.into(), 1.0.into(), 1.0.into(), 0.0.into()]);
    UnitaryMatrix::new(m).expect("σ_x is unitary")
}

pub const PROBE_TOLERANCES: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

fn singularity(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let (_, field) = two_level_model(&cfg.two_level)?;
    let grid = TimeGrid::new(cfg.two_level.t_final, cfg.steps())?;
    let sampled = sample_field(&field, &grid)?;
    let u_tar = sigma_x();
    let dec = TargetDecomposition::of(&u_tar)?;
    let pair = m0_seed(&dec, grid.t_final())?;

    let probes = PROBE_TOLERANCES
        .iter()
        .map(|&tol| singularity_probe(&pair, &sampled, &grid, &u_tar, tol))
        .collect::<hamid_core::Result<Vec<_>>>()?;

    let (u_n, j0, j1) =
        assemble_jacobian_streaming(&UnitaryMatrix::identity(2), &pair, &sampled, &grid)?;
    let sys = reduce_system(&j0, &j1, &hermitian_residual(&u_n, &u_tar)?)?;
    let step = match solve_update(&sys, &cfg.newton) {
        Ok((_, cond)) => json!({ "refused": false, "condition": cond }),
        Err(Error::SingularJacobian { condition }) => {
            json!({ "refused": true, "error": "SingularJacobian", "condition": condition })
        }
        Err(e) => return Err(e.into()),
    };
    let (_, report) = newton_identify(
        &UnitaryMatrix::identity(2),
        &u_tar,
        &pair,
        &sampled,
        &grid,
        &cfg.newton,
    )?;

    for d in &probes {
        out.note(format!(
            "rank tolerance {:e}: numerical rank {} of {}, condition {}",
            d.rank_tolerance,
            d.numerical_rank,
            d.singular_values.len(),
            fmt_sig(d.condition_estimate)
        ));
    }
    out.note(match step["refused"].as_bool() {
        Some(true) => "Newton step refused: SingularJacobian".to_string(),
        _ => "Newton step accepted".to_string(),
    });
    out.put_json(
        "singularity.json",
        &json!({
            "target": "sigma_x",
            "s": dec.s,
            "pair": pair,
            "probes": probes,
            "newton_step": step,
            "newton_convergence": convergence_name(report.convergence),
            "newton_singular_at": report.singular_at,
        }),
    );
    Ok(())
}

pub const ORDER_HEADER: &str = "n_steps,dt,error,ratio";

fn order_check(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let spec = PerturbationSpec {
        eta: 1.0,
        ..cfg.perturbation
    };
    let pair = perturb_pair(&HamiltonianPair::zeros(2), &spec);
    let field = ControlField::Constant { value: 1.0 };
    let t = cfg.order_check.t_final;
    let n = cfg.steps();
    let first = hamid_core::cn_error_order(&pair, &field, t, n)?;
    let second = hamid_core::cn_error_order(&pair, &field, t, 2 * n)?;
    let rows = [
        (n, first.err_coarse, f64::NAN),
        (2 * n, first.err_fine, first.ratio),
        (4 * n, second.err_fine, second.err_coarse / second.err_fine),
    ];
    out.put("order.csv", |w| {
        writeln!(w, "{ORDER_HEADER}")?;
        for (steps, err, ratio) in rows {
            let ratio = if ratio.is_nan() {
                String::new()
            } else {
                fmt_sig(ratio)
            };
            writeln!(
                w,
                "{},{},{},{}",
                steps,
                fmt_sig(t / steps as f64),
                fmt_sig(err),
                ratio
            )?;
        }
        Ok(())
    });
    out.put_json("pair.json", &pair);
    out.note(format!(
        "halving ratios {:.4} and {:.4}",
        rows[1].2, rows[2].2
    ));
    Ok(())
}

pub const CPU_HEADER: &str = "n_d,n_steps,n_c,iterations,wall_seconds";

/// Wall-clock of a fixed-budget continuation: every size runs the same stage
/// count and per-stage iteration cap, from the same pulse.
fn cpu_scaling(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let steps = cfg.steps();
    let mut rows = Vec::new();
    for &n_d in &cfg.cpu.n_levels {
        let mut local = cfg.clone();
        local.double_well.n_levels = n_d;
        let p = Problem::build(&local, ModelKind::DoubleWell, steps)?;
        let newton = NewtonConfig {
            max_iters: cfg.cpu.max_iters,
            ..cfg.newton
        };
        let start = Instant::now();
        let iterations = fixed_budget_continuation(&p, cfg.cpu.n_intermediate, &newton)?;
        let wall = start.elapsed().as_secs_f64();
        out.note(format!(
            "N_d = {n_d}: {iterations} iterations in {wall:.3} s"
        ));
        rows.push((n_d, iterations, wall));
    }
    out.derive("t_final", cfg.double_well.t_final);
    out.derive("default_t_final", TWO_PS_AU);
    out.put("cpu.csv", |w| {
        writeln!(w, "{CPU_HEADER}")?;
        for (n_d, iterations, wall) in &rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                n_d,
                steps,
                cfg.cpu.n_intermediate,
                iterations,
                fmt_sig(*wall)
            )?;
        }
        Ok(())
    });
    Ok(())
}

/// Walks the continuation path, moving on after each stage whatever its
/// outcome; returns the Newton iterations spent.
pub fn fixed_budget_continuation(p: &Problem, n_c: usize, newton: &NewtonConfig) -> Result<usize> {
    let dec = TargetDecomposition::of(&p.u_tar)?;
    let mut pair = m0_seed(&dec, p.grid.t_final())?;
    let mut iterations = 0;
    for m in 0..=n_c {
        let target = intermediate_target(&dec, m, n_c)?;
        let (next, report) = newton_identify(&p.u0(), &target, &pair, &p.sampled, &p.grid, newton)?;
        iterations += report.iterations();
        pair = next;
    }
    Ok(iterations)
}
