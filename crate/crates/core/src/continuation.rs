//! Homotopy over intermediate targets `U^m = exp(iS + (m/N_c) A)`.
//!
//! The path starts at `exp(iS)`, which the free evolution under
//! `H0 = −S/t_f` (no coupling) reaches exactly, and ends at the real target.
//! Each stage runs the Newton solver warm-started from the previous stage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::{unitary_exp, RealSymZeroDiagMatrix, TargetDecomposition, UnitaryMatrix};
use crate::newton::{
    assemble_jacobian_streaming, hermitian_residual, newton_identify_with_truth, reduce_system,
    Convergence, HamiltonianPair, NewtonConfig, NewtonReport,
};
use crate::propagator::{propagate_final, SampledField, TimeGrid};
use crate::report::{fmt_opt, fmt_sig};

/// Relative cut-off for numerical rank in [`singularity_probe`].
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuationConfig {
    /// Number of intermediate targets `N_c`.
    pub n_intermediate: usize,
    pub newton: NewtonConfig,
    /// Polish the closed-form stage-0 pair with Newton on the discrete problem.
    pub refine_m0: bool,
    /// On a failed stage, restart once with `2·N_c`.
    pub retry_doubling: bool,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            n_intermediate: 20,
            newton: NewtonConfig::default(),
            refine_m0: true,
            retry_doubling: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub m: usize,
    /// Newton iterations spent on this stage (0 for an unrefined seed).
    pub iterations: usize,
    /// `‖U_N − U^m‖` at the end of the stage.
    pub dev_u_stage: f64,
    pub dev_h0: Option<f64>,
    pub dev_h1: Option<f64>,
    pub convergence: Convergence,
    pub newton: Option<NewtonReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ContinuationOutcome {
    Completed,
    Failed { stage: usize, reason: Convergence },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationReport {
    pub n_intermediate: usize,
    pub stages: Vec<StageRecord>,
    pub outcome: ContinuationOutcome,
    /// Set when the run was restarted with a doubled `N_c`.
    pub restarted: bool,
}

impl ContinuationReport {
    pub fn completed(&self) -> bool {
        self.outcome == ContinuationOutcome::Completed
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    pub const CSV_HEADER: &'static str = "m,iterations,dev_U_stage,dev_H0,dev_H1";

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for s in &self.stages {
            writeln!(
                w,
                "{},{},{},{},{}",
                s.m,
                s.iterations,
                fmt_sig(s.dev_u_stage),
                fmt_opt(s.dev_h0),
                fmt_opt(s.dev_h1)
            )?;
        }
        Ok(())
    }
}

/// `exp(iS + (m/N_c) A)`.
pub fn intermediate_target(
    dec: &TargetDecomposition,
    m: usize,
    n_intermediate: usize,
) -> Result<UnitaryMatrix> {
    if n_intermediate == 0 {
        return Err(Error::contract("need at least one intermediate target"));
    }
    if m > n_intermediate {
        return Err(Error::contract(format!(
            "stage {m} outside 0..={n_intermediate}"
        )));
    }
    unitary_exp(&dec.generator(m as f64 / n_intermediate as f64))
}

/// `(H0, H1) = (−S/t_f, 0)`: free evolution that reaches `exp(iS)` at `t_f`.
pub fn m0_seed(dec: &TargetDecomposition, t_final: f64) -> Result<HamiltonianPair> {
    if !(t_final > 0.0) {
        return Err(Error::contract("final time must be positive"));
    }
    HamiltonianPair::new(
        dec.s.scale(-1.0 / t_final),
        RealSymZeroDiagMatrix::zeros(dec.dim()),
    )
}

/// Runs the continuation from `U_0 = I` to `u_tar`.
pub fn continuation_identify(
    u0: &UnitaryMatrix,
    u_tar: &UnitaryMatrix,
    field: &SampledField,
    grid: &TimeGrid,
    cfg: &ContinuationConfig,
) -> Result<(HamiltonianPair, ContinuationReport)> {
    continuation_identify_with_truth(u0, u_tar, field, grid, cfg, None)
}

pub fn continuation_identify_with_truth(
    u0: &UnitaryMatrix,
    u_tar: &UnitaryMatrix,
    field: &SampledField,
    grid: &TimeGrid,
    cfg: &ContinuationConfig,
    truth: Option<&HamiltonianPair>,
) -> Result<(HamiltonianPair, ContinuationReport)> {
    if !u0.is_identity(1e-12) {
        return Err(Error::contract("continuation requires U_0 = I"));
    }
    if u0.dim() != u_tar.dim() {
        return Err(Error::dim("initial and target operators differ in size"));
    }
    let dec = TargetDecomposition::of(u_tar)?;
    let first = run_path(u0, &dec, field, grid, cfg, cfg.n_intermediate, truth)?;
    if first.1.completed() || !cfg.retry_doubling {
        return Ok(first);
    }
    let (pair, mut report) = run_path(u0, &dec, field, grid, cfg, 2 * cfg.n_intermediate, truth)?;
    report.restarted = true;
    Ok((pair, report))
}

fn run_path(
    u0: &UnitaryMatrix,
    dec: &TargetDecomposition,
    field: &SampledField,
    grid: &TimeGrid,
    cfg: &ContinuationConfig,
    n_c: usize,
    truth: Option<&HamiltonianPair>,
) -> Result<(HamiltonianPair, ContinuationReport)> {
    cfg.newton.validate()?;
    let mut pair = m0_seed(dec, grid.t_final())?;
    let mut stages = Vec::with_capacity(n_c + 1);
    let dev_h = |p: &HamiltonianPair| match truth {
        Some(t) => {
            let (d0, d1) = t.deviation(p);
            (Some(d0), Some(d1))
        }
        None => (None, None),
    };

    for m in 0..=n_c {
        let target = intermediate_target(dec, m, n_c)?;
        if m == 0 && !cfg.refine_m0 {
            let reached = propagate_final(u0, &pair, field, grid)?;
            let (dev_h0, dev_h1) = dev_h(&pair);
            stages.push(StageRecord {
                m,
                iterations: 0,
                dev_u_stage: reached.distance(&target)?,
                dev_h0,
                dev_h1,
                convergence: Convergence::Converged,
                newton: None,
            });
            continue;
        }
        let (next, report) =
            newton_identify_with_truth(u0, &target, &pair, field, grid, &cfg.newton, None)?;
        let dev_u_stage = match report.final_dev_u() {
            Some(d) => d,
            None => propagate_final(u0, &next, field, grid)?.distance(&target)?,
        };
        let (dev_h0, dev_h1) = dev_h(&next);
        let convergence = report.convergence;
        stages.push(StageRecord {
            m,
            iterations: report.iterations(),
            dev_u_stage,
            dev_h0,
            dev_h1,
            convergence,
            newton: Some(report),
        });
        if convergence != Convergence::Converged {
            // A refused step leaves `next` at the last accepted iterate.
            let report = ContinuationReport {
                n_intermediate: n_c,
                stages,
                outcome: ContinuationOutcome::Failed {
                    stage: m,
                    reason: convergence,
                },
                restarted: false,
            };
            return Ok((next, report));
        }
        pair = next;
    }
    let report = ContinuationReport {
        n_intermediate: n_c,
        stages,
        outcome: ContinuationOutcome::Completed,
        restarted: false,
    };
    Ok((pair, report))
}

/// Rank information for the reduced Newton system at a given point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularityDiagnostic {
    pub condition_estimate: f64,
    pub numerical_rank: usize,
    pub rank_tolerance: f64,
    /// Largest first.
    pub singular_values: Vec<f64>,
}

/// Assembles the reduced system at `pair` (propagating from `U_0 = I`) and
/// counts singular values above `rank_tolerance · σ_max`.
pub fn singularity_probe(
    pair: &HamiltonianPair,
    field: &SampledField,
    grid: &TimeGrid,
    u_tar: &UnitaryMatrix,
    rank_tolerance: f64,
) -> Result<SingularityDiagnostic> {
    if u_tar.dim() != pair.dim() {
        return Err(Error::dim("target and pair differ in size"));
    }
    if !(rank_tolerance > 0.0 && rank_tolerance < 1.0) {
        return Err(Error::contract("rank tolerance must lie in (0, 1)"));
    }
    let u0 = UnitaryMatrix::identity(pair.dim());
    let (u_n, j0, j1) = assemble_jacobian_streaming(&u0, pair, field, grid)?;
    let sys = reduce_system(&j0, &j1, &hermitian_residual(&u_n, u_tar)?)?;
    Ok(diagnose(&sys.singular_values()?, rank_tolerance))
}

fn diagnose(sv: &[f64], rank_tolerance: f64) -> SingularityDiagnostic {
    let max = sv.first().copied().unwrap_or(0.0);
    let min = sv.last().copied().unwrap_or(0.0);
    let numerical_rank = sv.iter().filter(|&&s| s > rank_tolerance * max).count();
    SingularityDiagnostic {
        condition_estimate: if min > 0.0 { max / min } else { f64::INFINITY },
        numerical_rank,
        rank_tolerance,
        singular_values: sv.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{CMatrix, RealAntiSymMatrix, RealSymMatrix};
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn sigma_x() -> UnitaryMatrix {
        let o = Complex64::new(0., 0.);
        let l = Complex64::new(1., 0.);
        UnitaryMatrix::new(CMatrix::from_row_slice(2, 2, &[o, l, l, o])).unwrap()
    }

    #[test]
    fn endpoints_of_the_path() {
        let dec = TargetDecomposition {
            s: RealSymMatrix::from_row_slice(2, &[0.3, -0.1, -0.1, 0.5]).unwrap(),
            a: RealAntiSymMatrix::from_row_slice(2, &[0., 0.4, -0.4, 0.]).unwrap(),
        };
        let start = intermediate_target(&dec, 0, 5).unwrap();
        let expected = unitary_exp(&dec.generator(0.0)).unwrap();
        assert!(start.distance(&expected).unwrap() < 1e-14);
        let end = intermediate_target(&dec, 5, 5).unwrap();
        assert!(
            end.distance(&unitary_exp(&dec.generator(1.0)).unwrap())
                .unwrap()
                < 1e-14
        );
        assert!(intermediate_target(&dec, 6, 5).is_err());
    }

    #[test]
    fn symmetric_only_path_is_constant() {
        let dec = TargetDecomposition {
            s: RealSymMatrix::from_row_slice(2, &[0.3, -0.1, -0.1, 0.5]).unwrap(),
            a: RealAntiSymMatrix::zeros(2),
        };
        let a = intermediate_target(&dec, 0, 4).unwrap();
        for m in 1..=4 {
            assert!(
                intermediate_target(&dec, m, 4)
                    .unwrap()
                    .distance(&a)
                    .unwrap()
                    < 1e-15
            );
        }
    }

    #[test]
    fn seed_for_sigma_x() {
        let tf = 9000.0;
        let dec = TargetDecomposition::of(&sigma_x()).unwrap();
        let seed = m0_seed(&dec, tf).unwrap();
        let k = -PI / (2.0 * tf);
        let expected = RealSymMatrix::from_row_slice(2, &[k, -k, -k, k]).unwrap();
        assert!((&seed.h0 - &expected).norm() < 1e-15);
        assert_eq!(seed.h1.norm(), 0.0);
    }

    #[test]
    fn seed_for_zero_and_diagonal_targets() {
        let dec = TargetDecomposition::of(&UnitaryMatrix::identity(3)).unwrap();
        assert_eq!(m0_seed(&dec, 2.0).unwrap(), HamiltonianPair::zeros(3));

        let theta = 0.4;
        let u = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::from_polar(1.0, theta),
            Complex64::from_polar(1.0, -theta),
        ]));
        let dec = TargetDecomposition::of(&UnitaryMatrix::new(u).unwrap()).unwrap();
        let seed = m0_seed(&dec, 2.0).unwrap();
        assert!((seed.h0.get(0, 0) + theta / 2.0).abs() < 1e-15);
        assert!((seed.h0.get(1, 1) - theta / 2.0).abs() < 1e-15);
        assert!(m0_seed(&dec, 0.0).is_err());
    }

    #[test]
    fn rejects_non_identity_start() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let field = SampledField::new(vec![0.0; 4]);
        let err = continuation_identify(
            &sigma_x(),
            &sigma_x(),
            &field,
            &grid,
            &ContinuationConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn diagnose_counts_rank() {
        let d = diagnose(&[10.0, 1.0, 1e-12], 1e-9);
        assert_eq!(d.numerical_rank, 2);
        assert!((d.condition_estimate - 1e13).abs() < 1.0);
    }
}
