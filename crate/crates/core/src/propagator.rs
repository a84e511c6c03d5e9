//! Crank-Nicolson propagation of the evolution operator.
//!
//! One step solves `(I + L_n) U_{n+1} = (I − L_n) U_n` with
//! `L_n = i dt/2 (H0 + E_n H1)` and `E_n` the field at the step midpoint.
//! The step is a Cayley transform of a Hermitian generator and is therefore
//! unitary up to round-off.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::{hermitian_evolution, unitarity_defect, CMatrix, UnitaryMatrix};
use crate::newton::HamiltonianPair;

/// Uniform grid on `[0, t_final]` with `n_steps` intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct TimeGrid {
    t_final: f64,
    n_steps: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    t_final: f64,
    n_steps: usize,
}

impl TryFrom<RawGrid> for TimeGrid {
    type Error = Error;
    fn try_from(raw: RawGrid) -> Result<Self> {
        TimeGrid::new(raw.t_final, raw.n_steps)
    }
}

impl From<TimeGrid> for RawGrid {
    fn from(g: TimeGrid) -> Self {
        RawGrid {
            t_final: g.t_final,
            n_steps: g.n_steps,
        }
    }
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::contract(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::contract("time grid needs at least one step"));
        }
        Ok(TimeGrid { t_final, n_steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// `t_n + dt/2`, where the field is sampled for step `n`.
    pub fn midpoint(&self, n: usize) -> f64 {
        (n as f64 + 0.5) * self.dt()
    }

    /// Same interval, twice the number of steps.
    pub fn refined(&self) -> TimeGrid {
        TimeGrid {
            t_final: self.t_final,
            n_steps: 2 * self.n_steps,
        }
    }
}

/// Closed-form or tabulated description of the scalar control field `E(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlField {
    /// `E(t) = ½ E0 sin²(πt/t_f)`.
    SinSqEnvelope { e0: f64 },
    /// `E(t) = amplitude · sin²(k π t/t_f) · cos(ω t)` with `k = envelope_freq_mult`.
    PiPulse {
        amplitude: f64,
        envelope_freq_mult: f64,
        carrier_freq: f64,
    },
    /// `E(t) = value`.
    Constant { value: f64 },
    /// Midpoint samples supplied directly, one per time step.
    Tabulated { samples: Vec<f64> },
}

impl ControlField {
    /// Field value at time `t`; `None` for tabulated fields.
    pub fn value_at(&self, t: f64, t_final: f64) -> Option<f64> {
        match *self {
            ControlField::SinSqEnvelope { e0 } => {
                let s = (PI * t / t_final).sin();
                Some(0.5 * e0 * s * s)
            }
            ControlField::PiPulse {
                amplitude,
                envelope_freq_mult,
                carrier_freq,
            } => {
                let s = (envelope_freq_mult * PI * t / t_final).sin();
                Some(amplitude * s * s * (carrier_freq * t).cos())
            }
            ControlField::Constant { value } => Some(value),
            ControlField::Tabulated { .. } => None,
        }
    }
}

/// Field samples `E_n = E(t_n + dt/2)`, `n = 0..N−1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledField {
    values: Vec<f64>,
}

impl SampledField {
    pub fn new(values: Vec<f64>) -> Self {
        SampledField { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, n: usize) -> f64 {
        self.values[n]
    }

    fn check(&self, grid: &TimeGrid) -> Result<()> {
        if self.values.len() != grid.n_steps() {
            return Err(Error::dim(format!(
                "field has {} samples, grid has {} steps",
                self.values.len(),
                grid.n_steps()
            )));
        }
        Ok(())
    }
}

pub fn sample_field(field: &ControlField, grid: &TimeGrid) -> Result<SampledField> {
    if let ControlField::Tabulated { samples } = field {
        let sampled = SampledField::new(samples.clone());
        sampled.check(grid)?;
        return Ok(sampled);
    }
    let values = (0..grid.n_steps())
        .map(|n| {
            field
                .value_at(grid.midpoint(n), grid.t_final())
                .expect("closed-form field")
        })
        .collect();
    Ok(SampledField { values })
}

/// `U_0 .. U_N` from one Crank-Nicolson run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    grid: TimeGrid,
    states: Vec<UnitaryMatrix>,
}

impl Trajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[UnitaryMatrix] {
        &self.states
    }

    pub fn final_state(&self) -> &UnitaryMatrix {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    /// `Ū_n = (U_{n+1} + U_n)/2`.
    pub fn midpoint_average(&self, n: usize) -> CMatrix {
        (self.states[n + 1].matrix() + self.states[n].matrix()) * Complex64::new(0.5, 0.0)
    }

    /// Largest `‖U_n†U_n − I‖` along the trajectory.
    pub fn max_unitarity_defect(&self) -> Result<f64> {
        self.states
            .iter()
            .try_fold(0.0_f64, |acc, u| Ok(acc.max(unitarity_defect(u.matrix())?)))
    }
}

fn check_pair_dim(u: &UnitaryMatrix, pair: &HamiltonianPair) -> Result<()> {
    if u.dim() != pair.dim() {
        return Err(Error::dim(format!(
            "operator is {0}x{0} but Hamiltonians are {1}x{1}",
            u.dim(),
            pair.dim()
        )));
    }
    Ok(())
}

/// Factors `I + L` once so that both the state and tangent updates can reuse it.
struct CayleyStep {
    plus: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    minus: CMatrix,
}

impl CayleyStep {
    fn new(h: &CMatrix, dt: f64) -> Self {
        let n = h.nrows();
        let l = h * Complex64::new(0.0, 0.5 * dt);
        let eye = CMatrix::identity(n, n);
        CayleyStep {
            plus: (&eye + &l).lu(),
            minus: eye - l,
        }
    }

    fn apply(&self, u: &CMatrix) -> Result<CMatrix> {
        self.solve(&self.minus * u)
    }

    fn solve(&self, rhs: CMatrix) -> Result<CMatrix> {
        self.plus
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("I + L_n is singular in the Crank-Nicolson step"))
    }
}

fn step_hamiltonian(h0: &CMatrix, h1: &CMatrix, e: f64) -> CMatrix {
    h0 + h1 * Complex64::new(e, 0.0)
}

/// One Crank-Nicolson step `U_{n+1} = (I + L_n)^{-1}(I − L_n) U_n`.
pub fn cn_step(
    u_n: &UnitaryMatrix,
    pair: &HamiltonianPair,
    e_n: f64,
    dt: f64,
) -> Result<UnitaryMatrix> {
    check_pair_dim(u_n, pair)?;
    let h = step_hamiltonian(&pair.h0.to_complex(), &pair.h1.to_complex(), e_n);
    let next = CayleyStep::new(&h, dt).apply(u_n.matrix())?;
    Ok(UnitaryMatrix::new_unchecked(next))
}

/// Propagates without storing the trajectory, calling `visit(n, U_n, U_{n+1})`
/// after each step. Returns `U_N`.
pub fn propagate_visit(
    u0: &UnitaryMatrix,
    pair: &HamiltonianPair,
    field: &SampledField,
    grid: &TimeGrid,
    mut visit: impl FnMut(usize, &CMatrix, &CMatrix),
) -> Result<UnitaryMatrix> {
    check_pair_dim(u0, pair)?;
    field.check(grid)?;
    let h0 = pair.h0.to_complex();
    let h1 = pair.h1.to_complex();
    let dt = grid.dt();
    let mut u = u0.matrix().clone();
    for (n, &e) in field.values().iter().enumerate() {
        let next = CayleyStep::new(&step_hamiltonian(&h0, &h1, e), dt).apply(&u)?;
        visit(n, &u, &next);
        u = next;
    }
    Ok(UnitaryMatrix::new_unchecked(u))
}

/// Full trajectory `U_0 .. U_N`.
pub fn propagate(
    u0: &UnitaryMatrix,
    pair: &HamiltonianPair,
    field: &SampledField,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    states.push(u0.clone());
    propagate_visit(u0, pair, field, grid, |_, _, next| {
        states.push(UnitaryMatrix::new_unchecked(next.clone()))
    })?;
    Ok(Trajectory {
        grid: *grid,
        states,
    })
}

/// Final operator `U_N` only.
pub fn propagate_final(
    u0: &UnitaryMatrix,
    pair: &HamiltonianPair,
    field: &SampledField,
    grid: &TimeGrid,
) -> Result<UnitaryMatrix> {
    propagate_visit(u0, pair, field, grid, |_, _, _| {})
}

/// Propagates `U` together with its derivative `δU` along `direction` by
/// differentiating the Crank-Nicolson recursion:
/// `(I + L_n) δU_{n+1} = (I − L_n) δU_n − δL_n (U_{n+1} + U_n)`.
pub fn propagate_tangent(
    u0: &UnitaryMatrix,
    pair: &HamiltonianPair,
    direction: &HamiltonianPair,
    field: &SampledField,
    grid: &TimeGrid,
) -> Result<(UnitaryMatrix, CMatrix)> {
    check_pair_dim(u0, pair)?;
    check_pair_dim(u0, direction)?;
    field.check(grid)?;
    let n = u0.dim();
    let (h0, h1) = (pair.h0.to_complex(), pair.h1.to_complex());
    let (dh0, dh1) = (direction.h0.to_complex(), direction.h1.to_complex());
    let dt = grid.dt();
    let mut u = u0.matrix().clone();
    let mut du = CMatrix::zeros(n, n);
    for &e in field.values() {
        let step = CayleyStep::new(&step_hamiltonian(&h0, &h1, e), dt);
        let next = step.apply(&u)?;
        let dl = step_hamiltonian(&dh0, &dh1, e) * Complex64::new(0.0, 0.5 * dt);
        du = step.solve(&step.minus * &du - dl * (&next + &u))?;
        u = next;
    }
    Ok((UnitaryMatrix::new_unchecked(u), du))
}

/// Result of the dt-halving accuracy check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrderCheck {
    pub err_coarse: f64,
    pub err_fine: f64,
    /// `err_coarse / err_fine`; NaN when the errors vanish.
    pub ratio: f64,
    pub degenerate: bool,
}

/// Compares Crank-Nicolson with `n_steps` and `2·n_steps` against the exact
/// exponential for a constant field. Second order gives a ratio near 4.
pub fn cn_error_order(
    pair: &HamiltonianPair,
    field: &ControlField,
    t_final: f64,
    n_steps: usize,
) -> Result<OrderCheck> {
    let value = match field {
        ControlField::Constant { value } => *value,
        _ => return Err(Error::contract("order check needs a constant field")),
    };
    let n = pair.dim();
    let u0 = UnitaryMatrix::identity(n);
    let h = step_hamiltonian(&pair.h0.to_complex(), &pair.h1.to_complex(), value);
    let exact = hermitian_evolution(&h, t_final)?;
    let err = |steps: usize| -> Result<f64> {
        let grid = TimeGrid::new(t_final, steps)?;
        let sampled = sample_field(field, &grid)?;
        propagate_final(&u0, pair, &sampled, &grid)?.distance(&exact)
    };
    let err_coarse = err(n_steps)?;
    let err_fine = err(2 * n_steps)?;
    let degenerate = err_fine <= 1e-15 || err_coarse <= 1e-15;
    let ratio = if degenerate {
        f64::NAN
    } else {
        err_coarse / err_fine
    };
    Ok(OrderCheck {
        err_coarse,
        err_fine,
        ratio,
        degenerate,
    })
}

/// Outcome of [`resolve_steps`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepResolution {
    pub n_steps: usize,
    /// `‖U_N(dt) − U_N(dt/2)‖` at the returned step count.
    pub change: f64,
    pub converged: bool,
}

/// Doubles the step count from `start` until halving dt moves the final
/// operator by at most `tol`, or `max_steps` would be exceeded.
pub fn resolve_steps(
    u0: &UnitaryMatrix,
    pair: &HamiltonianPair,
    field: &ControlField,
    t_final: f64,
    start: usize,
    tol: f64,
    max_steps: usize,
) -> Result<StepResolution> {
    let run = |steps: usize| -> Result<UnitaryMatrix> {
        let grid = TimeGrid::new(t_final, steps)?;
        propagate_final(u0, pair, &sample_field(field, &grid)?, &grid)
    };
    let mut steps = start.max(1);
    let mut coarse = run(steps)?;
    loop {
        let fine = run(2 * steps)?;
        let change = coarse.distance(&fine)?;
        if change <= tol || 4 * steps > max_steps {
            return Ok(StepResolution {
                n_steps: steps,
                change,
                converged: change <= tol,
            });
        }
        steps *= 2;
        coarse = fine;
    }
}

/// Populations `|⟨w|U_n|v⟩|²` of every level `w` starting from level `v`,
/// sampled every `stride` steps (one row per sample, times in the first column).
pub fn population_trace(
    pair: &HamiltonianPair,
    field: &SampledField,
    grid: &TimeGrid,
    initial_level: usize,
    stride: usize,
) -> Result<DMatrix<f64>> {
    let n = pair.dim();
    if initial_level >= n {
        return Err(Error::dim(format!(
            "level {initial_level} outside a {n}-level system"
        )));
    }
    let stride = stride.max(1);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let record = |t: f64, u: &CMatrix, rows: &mut Vec<Vec<f64>>| {
        let mut row = vec![t];
        row.extend((0..n).map(|w| u[(w, initial_level)].norm_sqr()));
        rows.push(row);
    };
    let u0 = UnitaryMatrix::identity(n);
    record(0.0, u0.matrix(), &mut rows);
    propagate_visit(&u0, pair, field, grid, |step, _, next| {
        if (step + 1) % stride == 0 || step + 1 == grid.n_steps() {
            record(grid.time(step + 1), next, &mut rows);
        }
    })?;
    Ok(DMatrix::from_fn(rows.len(), n + 1, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{RealSymMatrix, RealSymZeroDiagMatrix};
    use approx::assert_abs_diff_eq;

    fn pair(h0: &[f64], h1: &[f64]) -> HamiltonianPair {
        let n = (h0.len() as f64).sqrt() as usize;
        HamiltonianPair::new(
            RealSymMatrix::from_row_slice(n, h0).unwrap(),
            RealSymZeroDiagMatrix::from_row_slice(n, h1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn grid_step_is_consistent() {
        let g = TimeGrid::new(9000.0, 2000).unwrap();
        assert!((g.dt() * g.n_steps() as f64 - g.t_final()).abs() <= 1e-12 * g.t_final());
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn sin_sq_midpoint_samples() {
        let grid = TimeGrid::new(2.0, 2).unwrap();
        let s = sample_field(&ControlField::SinSqEnvelope { e0: 1.0 }, &grid).unwrap();
        assert_abs_diff_eq!(s.get(0), 0.25, epsilon = 1e-15);

        let grid = TimeGrid::new(7.0, 13).unwrap();
        let s = sample_field(&ControlField::SinSqEnvelope { e0: 3.0 }, &grid).unwrap();
        let first = 0.5 * 3.0 * (PI * (grid.dt() / 2.0) / 7.0).sin().powi(2);
        assert_abs_diff_eq!(s.get(0), first, epsilon = 1e-15);

        let zero = sample_field(&ControlField::SinSqEnvelope { e0: 0.0 }, &grid).unwrap();
        assert!(zero.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tabulated_field_passes_through_and_checks_length() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let f = ControlField::Tabulated {
            samples: vec![1.0, 2.0, 3.0],
        };
        assert_eq!(sample_field(&f, &grid).unwrap().values(), &[1.0, 2.0, 3.0]);
        let f = ControlField::Tabulated {
            samples: vec![1.0, 2.0],
        };
        assert!(matches!(sample_field(&f, &grid), Err(Error::Dimension(_))));
    }

    #[test]
    fn field_descriptor_json_is_tagged() {
        let f = ControlField::PiPulse {
            amplitude: 1.5,
            envelope_freq_mult: 4.0,
            carrier_freq: 0.2,
        };
        let text = serde_json::to_string(&f).unwrap();
        assert!(text.starts_with(r#"{"kind":"pi_pulse""#));
        let back: ControlField = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<TimeGrid>(r#"{"t_final":-1.0,"n_steps":3}"#).is_err());
    }

    #[test]
    fn zero_hamiltonian_step_is_identity_map() {
        let p = pair(&[0.; 4], &[0.; 4]);
        let u = hermitian_evolution(
            &CMatrix::from_row_slice(
                2,
                2,
                &[
                    Complex64::new(0.3, 0.),
                    Complex64::new(0.1, 0.),
                    Complex64::new(0.1, 0.),
                    Complex64::new(-0.2, 0.),
                ],
            ),
            1.0,
        )
        .unwrap();
        let next = cn_step(&u, &p, 0.7, 0.1).unwrap();
        assert!((next.matrix() - u.matrix()).camax() < 1e-16);
    }

    #[test]
    fn diagonal_step_matches_scalar_cayley() {
        let (h_a, h_b, dt) = (0.4, -1.3, 0.25);
        let p = pair(&[h_a, 0., 0., h_b], &[0.; 4]);
        let next = cn_step(&UnitaryMatrix::identity(2), &p, 0.0, dt).unwrap();
        for (k, h) in [h_a, h_b].into_iter().enumerate() {
            let half = Complex64::new(0.0, h * dt / 2.0);
            let expected = (Complex64::new(1.0, 0.0) - half) / (Complex64::new(1.0, 0.0) + half);
            assert!((next.matrix()[(k, k)] - expected).norm() < 1e-15);
        }
        assert!(next.matrix()[(0, 1)].norm() < 1e-16);
    }

    #[test]
    fn step_is_unitary_and_reversible() {
        let p = pair(&[0.7, -0.2, -0.2, 1.1], &[0., 0.9, 0.9, 0.]);
        let u = cn_step(&UnitaryMatrix::identity(2), &p, 0.3, 0.5).unwrap();
        assert!(unitarity_defect(u.matrix()).unwrap() <= 1e-13);
        let back = cn_step(&u, &p, 0.3, -0.5).unwrap();
        assert!(back.is_identity(1e-14));
    }

    #[test]
    fn zero_hamiltonians_keep_identity() {
        let p = pair(&[0.; 4], &[0.; 4]);
        let grid = TimeGrid::new(3.0, 10).unwrap();
        let f = sample_field(&ControlField::Constant { value: 2.0 }, &grid).unwrap();
        let traj = propagate(&UnitaryMatrix::identity(2), &p, &f, &grid).unwrap();
        assert_eq!(traj.states().len(), 11);
        assert!(traj.states().iter().all(|u| u.is_identity(0.0)));
    }

    #[test]
    fn order_check_flags_degenerate_case() {
        let p = pair(&[0.; 4], &[0.; 4]);
        let check = cn_error_order(&p, &ControlField::Constant { value: 0.0 }, 1.0, 10).unwrap();
        assert!(check.degenerate);
        assert!(check.ratio.is_nan());
        assert!(cn_error_order(&p, &ControlField::SinSqEnvelope { e0: 1.0 }, 1.0, 10).is_err());
    }

    #[test]
    fn order_check_is_second_order() {
        let p = pair(&[0.8, -0.35, -0.35, -0.45], &[0.; 4]);
        let f = ControlField::Constant { value: 0.0 };
        let c = cn_error_order(&p, &f, 1.0, 100).unwrap();
        assert!((3.5..=4.5).contains(&c.ratio), "ratio {}", c.ratio);
        let c = cn_error_order(&p, &f, 1.0, 400).unwrap();
        assert!((3.8..=4.2).contains(&c.ratio), "ratio {}", c.ratio);
    }

    #[test]
    fn resolve_steps_reaches_tolerance() {
        let p = pair(&[0.5, 0.1, 0.1, -0.5], &[0., 1., 1., 0.]);
        let f = ControlField::SinSqEnvelope { e0: 0.4 };
        let r = resolve_steps(&UnitaryMatrix::identity(2), &p, &f, 5.0, 8, 1e-6, 1 << 16).unwrap();
        assert!(r.converged);
        assert!(r.change <= 1e-6);
    }

    #[test]
    fn population_trace_rows_sum_to_one() {
        let p = pair(&[0., 0., 0., 0.], &[0., 1., 1., 0.]);
        let grid = TimeGrid::new(PI / 2.0, 200).unwrap();
        let f = sample_field(&ControlField::Constant { value: 1.0 }, &grid).unwrap();
        let trace = population_trace(&p, &f, &grid, 0, 50).unwrap();
        assert_eq!(trace.nrows(), 5);
        for i in 0..trace.nrows() {
            assert_abs_diff_eq!(trace[(i, 1)] + trace[(i, 2)], 1.0, epsilon = 1e-12);
        }
        // Rabi rotation by π/2 moves the population to the upper level.
        assert!(trace[(4, 2)] > 0.9999);
    }
}
