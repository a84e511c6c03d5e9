//! Newton solver for `(H0, H1)` given `U_0`, `U_tar` and a known field.
//!
//! Each iteration linearises the Crank-Nicolson map around the current pair:
//!
//! ```text
//! dt Σ_n Ū_n† (δH0 + E_n δH1) Ū_n = S^k,   Ū_n = (U_{n+1} + U_n)/2
//! ```
//!
//! where `S^k` is the Hermitian part of `i(U_N†U_tar − I)`. In column-major
//! vectorised form the left-hand side is `J0 vec(δH0) + J1 vec(δH1)` with
//! `J0 = dt Σ Ū_n^T ⊗ Ū_n†` and `J1 = dt Σ E_n Ū_n^T ⊗ Ū_n†`. Symmetry of the
//! unknowns and of `S^k` reduces this to a square real system of size `N_d²`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::{spec_norm, CMatrix, RealSymMatrix, RealSymZeroDiagMatrix, UnitaryMatrix};
use crate::propagator::{propagate_final, propagate_visit, SampledField, TimeGrid, Trajectory};
use crate::report::{fmt_opt, fmt_sig};

/// Field-free Hamiltonian `H0` and dipole coupling `H1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianPair {
    pub h0: RealSymMatrix,
    pub h1: RealSymZeroDiagMatrix,
}

impl HamiltonianPair {
    pub fn new(h0: RealSymMatrix, h1: RealSymZeroDiagMatrix) -> Result<Self> {
        if h0.dim() != h1.dim() {
            return Err(Error::dim(format!(
                "H0 is {0}x{0} but H1 is {1}x{1}",
                h0.dim(),
                h1.dim()
            )));
        }
        Ok(HamiltonianPair { h0, h1 })
    }

    pub fn zeros(dim: usize) -> Self {
        HamiltonianPair {
            h0: RealSymMatrix::zeros(dim),
            h1: RealSymZeroDiagMatrix::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn apply(&self, update: &NewtonUpdate) -> HamiltonianPair {
        HamiltonianPair {
            h0: &self.h0 + &update.dh0,
            h1: &self.h1 + &update.dh1,
        }
    }

    /// `(‖H0 − H0'‖, ‖H1 − H1'‖)` in the spectral norm.
    pub fn deviation(&self, other: &HamiltonianPair) -> (f64, f64) {
        ((&self.h0 - &other.h0).norm(), (&self.h1 - &other.h1).norm())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    /// Stop once `‖δH0‖ + ‖δH1‖` falls to this value.
    pub tol: f64,
    pub max_iters: usize,
    /// With [`LinearSolve::Lu`], reduced systems with a larger 2-norm
    /// condition number are refused.
    pub singular_cond_threshold: f64,
    pub solve: LinearSolve,
    /// Relative cut-off for singular values under [`LinearSolve::MinNorm`].
    pub rank_tolerance: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol: 1e-12,
            max_iters: 50,
            singular_cond_threshold: 1e12,
            solve: LinearSolve::Lu,
            rank_tolerance: 1e-9,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.singular_cond_threshold > 0.0 && self.max_iters > 0) {
            return Err(Error::contract(
                "Newton tolerances and iteration cap must be positive",
            ));
        }
        if !(self.rank_tolerance > 0.0 && self.rank_tolerance < 1.0) {
            return Err(Error::contract("rank tolerance must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// How the reduced Newton system is solved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolve {
    /// LU with partial pivoting; ill-conditioned systems are refused.
    #[default]
    Lu,
    /// Minimum-norm least-squares step from a truncated SVD. Never refuses a
    /// step; on a rank-deficient system it leaves the null-space component of
    /// the current pair untouched.
    MinNorm,
}

/// Correction `(δH0, δH1)` produced by one Newton step.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonUpdate {
    pub dh0: RealSymMatrix,
    pub dh1: RealSymZeroDiagMatrix,
}

impl NewtonUpdate {
    /// `‖δH0‖ + ‖δH1‖`.
    pub fn magnitude(&self) -> f64 {
        self.dh0.norm() + self.dh1.norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convergence {
    Converged,
    MaxIters,
    SingularJacobian,
}

/// State after iteration `k`: the pair `H^k` and its final operator `U_N^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonRecord {
    pub k: usize,
    pub e_k: f64,
    pub dev_h0: Option<f64>,
    pub dev_h1: Option<f64>,
    pub dev_u: f64,
    /// Condition number of the reduced system solved at this iteration.
    pub cond: f64,
    /// Norm of the anti-Hermitian part of `U_N†U_tar − I` that the
    /// Hermitian right-hand side discards, measured before the step.
    pub residual_skew: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub records: Vec<NewtonRecord>,
    pub convergence: Convergence,
    /// Iteration (1-based) and condition estimate of a refused step.
    pub singular_at: Option<(usize, f64)>,
}

impl NewtonReport {
    pub fn last(&self) -> Option<&NewtonRecord> {
        self.records.last()
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_dev_u(&self) -> Option<f64> {
        self.last().map(|r| r.dev_u)
    }

    pub const CSV_HEADER: &'static str = "k,e_k,dev_H0,dev_H1,dev_U,cond";

    /// One row per iteration, deviations as plain norms.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.k,
                fmt_sig(r.e_k),
                fmt_opt(r.dev_h0),
                fmt_opt(r.dev_h1),
                fmt_sig(r.dev_u),
                fmt_sig(r.cond)
            )?;
        }
        Ok(())
    }
}

/// `S = i(U_N†U_tar − U_tar†U_N)/2`, Hermitian entry by entry.
pub fn hermitian_residual(u_n: &UnitaryMatrix, u_tar: &UnitaryMatrix) -> Result<CMatrix> {
    if u_n.dim() != u_tar.dim() {
        return Err(Error::dim("residual of unitaries with different sizes"));
    }
    let x = u_n.matrix().adjoint() * u_tar.matrix();
    let n = x.nrows();
    let half_i = Complex64::new(0.0, 0.5);
    Ok(CMatrix::from_fn(n, n, |i, j| {
        half_i * (x[(i, j)] - x[(j, i)].conj())
    }))
}

/// `‖(X + X†)/2 − I‖` with `X = U_N†U_tar`: what the Hermitian residual drops.
pub fn residual_skew_norm(u_n: &UnitaryMatrix, u_tar: &UnitaryMatrix) -> Result<f64> {
    let x = u_n.matrix().adjoint() * u_tar.matrix();
    let n = x.nrows();
    let sym = (&x + x.adjoint()) * Complex64::new(0.5, 0.0) - CMatrix::identity(n, n);
    spec_norm(&sym)
}

const CHUNK: usize = 256;

/// Accumulates `J0` and `J1` one midpoint average `Ū_n` at a time.
///
/// Entry `((a,b),(c,d))` of `Ū^T ⊗ Ū†` equals `Ū[c,a]·conj(Ū[d,b])`, a
/// permutation of the outer product `vec(Ū) vec(Ū)^H`. Batches of steps are
/// therefore folded in with one real matrix product per weight set, in a
/// fixed order.
pub struct JacobianAccumulator {
    dim: usize,
    dt: f64,
    /// Rows `0..n²` hold `Re vec(Ū_n)`, rows `n²..2n²` hold `Im vec(Ū_n)`.
    batch: DMatrix<f64>,
    weights: Vec<f64>,
    filled: usize,
    gram0: DMatrix<f64>,
    gram1: DMatrix<f64>,
}

impl JacobianAccumulator {
    pub fn new(dim: usize, dt: f64) -> Self {
        let rows = 2 * dim * dim;
        JacobianAccumulator {
            dim,
            dt,
            batch: DMatrix::zeros(rows, CHUNK),
            weights: vec![0.0; CHUNK],
            filled: 0,
            gram0: DMatrix::zeros(rows, rows),
            gram1: DMatrix::zeros(rows, rows),
        }
    }

    /// Adds the step with midpoint average `ubar` and field sample `e_n`.
    pub fn push(&mut self, ubar: &CMatrix, e_n: f64) {
        let n2 = self.dim * self.dim;
        let col = self.filled;
        // nalgebra stores column-major, so iteration order is vec order.
        for (idx, z) in ubar.iter().enumerate() {
            self.batch[(idx, col)] = z.re;
            self.batch[(n2 + idx, col)] = z.im;
        }
        self.weights[col] = e_n;
        self.filled += 1;
        if self.filled == CHUNK {
            self.flush();
        }
    }

    /// Convenience for visitors that see `U_n` and `U_{n+1}`.
    pub fn push_step(&mut self, u_n: &CMatrix, u_next: &CMatrix, e_n: f64) {
        let ubar = (u_n + u_next) * Complex64::new(0.5, 0.0);
        self.push(&ubar, e_n);
    }

    fn flush(&mut self) {
        let k = self.filled;
        if k == 0 {
            return;
        }
        let r = self.batch.columns(0, k);
        let rt = r.transpose();
        let mut weighted = r.clone_owned();
        for (c, w) in self.weights[..k].iter().enumerate() {
            weighted.column_mut(c).scale_mut(*w);
        }
        self.gram0.gemm(self.dt, &r, &rt, 1.0);
        self.gram1.gemm(self.dt, &weighted, &rt, 1.0);
        self.filled = 0;
    }

    fn unpack(&self, gram: &DMatrix<f64>) -> CMatrix {
        let n = self.dim;
        let n2 = n * n;
        // G = Σ w vec(Ū) vec(Ū)^H with vec(Ū) = p + iq:
        // Re G = P Pᵀ + Q Qᵀ, Im G = Q Pᵀ − P Qᵀ.
        let g = |row: usize, col: usize| {
            Complex64::new(
                gram[(row, col)] + gram[(n2 + row, n2 + col)],
                gram[(n2 + row, col)] - gram[(row, n2 + col)],
            )
        };
        let mut j = CMatrix::zeros(n2, n2);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        j[(a * n + b, c * n + d)] = g(c + a * n, d + b * n);
                    }
                }
            }
        }
        j
    }

    /// Returns `(J0, J1)`.
    pub fn finish(mut self) -> (CMatrix, CMatrix) {
        self.flush();
        (self.unpack(&self.gram0), self.unpack(&self.gram1))
    }
}

/// `J0 = dt Σ Ū_n^T ⊗ Ū_n†` and `J1 = dt Σ E_n Ū_n^T ⊗ Ū_n†` from a stored trajectory.
pub fn assemble_jacobian(traj: &Trajectory, field: &SampledField) -> Result<(CMatrix, CMatrix)> {
    let steps = traj.grid().n_steps();
    if field.len() != steps || traj.states().len() != steps + 1 {
        return Err(Error::dim(format!(
            "field has {} samples for a {}-step trajectory",
            field.len(),
            steps
        )));
    }
    let mut acc = JacobianAccumulator::new(traj.dim(), traj.grid().dt());
    for n in 0..steps {
        acc.push(&traj.midpoint_average(n), field.get(n));
    }
    Ok(acc.finish())
}

/// Propagates and accumulates the Jacobians in one pass without storing states.
/// Returns `(U_N, J0, J1)`.
pub fn assemble_jacobian_streaming(
    u0: &UnitaryMatrix,
    pair: &HamiltonianPair,
    field: &SampledField,
    grid: &TimeGrid,
) -> Result<(UnitaryMatrix, CMatrix, CMatrix)> {
    let mut acc = JacobianAccumulator::new(pair.dim(), grid.dt());
    let values = field.values();
    let u_n = propagate_visit(u0, pair, field, grid, |n, u, next| {
        acc.push_step(u, next, values[n])
    })?;
    let (j0, j1) = acc.finish();
    Ok((u_n, j0, j1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operator {
    H0,
    H1,
}

/// One real unknown: entry `(i, j)`, `i <= j`, of `δH0` or `δH1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unknown {
    pub op: Operator,
    pub i: usize,
    pub j: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Part {
    Re,
    Im,
}

/// One real equation: the real or imaginary part of entry `(i, j)`, `i <= j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Equation {
    pub part: Part,
    pub i: usize,
    pub j: usize,
}

/// Square real system in the `N_d²` independent unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedSystem {
    pub dim: usize,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub unknowns: Vec<Unknown>,
    pub equations: Vec<Equation>,
}

/// H0 upper triangle (row-major, `i <= j`), then H1 strict upper triangle.
pub fn unknown_layout(dim: usize) -> Vec<Unknown> {
    let mut out = Vec::with_capacity(dim * dim);
    for op in [Operator::H0, Operator::H1] {
        for i in 0..dim {
            let start = if op == Operator::H0 { i } else { i + 1 };
            for j in start..dim {
                out.push(Unknown { op, i, j });
            }
        }
    }
    out
}

/// For each `i <= j` row-major: `Re(i,j)`, then `Im(i,j)` when `i < j`.
pub fn equation_layout(dim: usize) -> Vec<Equation> {
    let mut out = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in i..dim {
            out.push(Equation {
                part: Part::Re,
                i,
                j,
            });
            if i < j {
                out.push(Equation {
                    part: Part::Im,
                    i,
                    j,
                });
            }
        }
    }
    out
}

/// Merges symmetric columns and keeps one real equation per independent
/// entry of the Hermitian equation.
pub fn reduce_system(j0: &CMatrix, j1: &CMatrix, s: &CMatrix) -> Result<ReducedSystem> {
    let n = s.nrows();
    let n2 = n * n;
    for (name, j) in [("J0", j0), ("J1", j1)] {
        if j.nrows() != n2 || j.ncols() != n2 {
            return Err(Error::dim(format!(
                "{name} must be {n2}x{n2} for a {n}x{n} residual"
            )));
        }
    }
    if s.ncols() != n {
        return Err(Error::dim("residual must be square"));
    }
    let vec_idx = |i: usize, j: usize| i + j * n;
    let unknowns = unknown_layout(n);
    let equations = equation_layout(n);
    let mut matrix = DMatrix::zeros(n2, n2);
    let mut rhs = DVector::zeros(n2);
    for (r, eq) in equations.iter().enumerate() {
        let row = vec_idx(eq.i, eq.j);
        let pick = |z: Complex64| match eq.part {
            Part::Re => z.re,
            Part::Im => z.im,
        };
        rhs[r] = pick(s[(eq.i, eq.j)]);
        for (c, u) in unknowns.iter().enumerate() {
            let jac = match u.op {
                Operator::H0 => j0,
                Operator::H1 => j1,
            };
            let mut coeff = jac[(row, vec_idx(u.i, u.j))];
            if u.i != u.j {
                coeff += jac[(row, vec_idx(u.j, u.i))];
            }
            matrix[(r, c)] = pick(coeff);
        }
    }
    Ok(ReducedSystem {
        dim: n,
        matrix,
        rhs,
        unknowns,
        equations,
    })
}

impl ReducedSystem {
    /// Rebuilds `(δH0, δH1)` from a solution vector.
    pub fn expand(&self, x: &DVector<f64>) -> NewtonUpdate {
        let n = self.dim;
        let mut h0 = DMatrix::zeros(n, n);
        let mut h1 = DMatrix::zeros(n, n);
        for (u, v) in self.unknowns.iter().zip(x.iter()) {
            let target = match u.op {
                Operator::H0 => &mut h0,
                Operator::H1 => &mut h1,
            };
            target[(u.i, u.j)] = *v;
            target[(u.j, u.i)] = *v;
        }
        NewtonUpdate {
            dh0: RealSymMatrix::from_matrix(h0).expect("mirrored by construction"),
            dh1: RealSymZeroDiagMatrix::from_matrix(h1).expect("mirrored by construction"),
        }
    }

    /// Singular values, largest first.
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        let mut sv: Vec<f64> = svd(self.matrix.clone(), false)?
            .singular_values
            .iter()
            .copied()
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        Ok(sv)
    }

    /// 2-norm condition number; infinite when the smallest singular value is zero.
    pub fn condition(&self) -> Result<f64> {
        let sv = self.singular_values()?;
        Ok(ratio(sv[0], sv[sv.len() - 1]))
    }

    /// The matrix with every non-zero column scaled to unit 2-norm, and the
    /// scales (1 for zero columns).
    /// `H0` columns grow like `t_f` while `H1` columns grow like `∫E dt`, so
    /// the raw condition number mostly measures the choice of units.
    pub fn equilibrated(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = self.matrix.clone();
        let mut scales = DVector::zeros(a.ncols());
        for (c, mut col) in a.column_iter_mut().enumerate() {
            let norm = col.norm();
            scales[c] = if norm > 0.0 { norm } else { 1.0 };
            col /= scales[c];
        }
        (a, scales)
    }

    /// Condition number of [`ReducedSystem::equilibrated`].
    pub fn scaled_condition(&self) -> Result<f64> {
        let sv = svd(self.equilibrated().0, false)?.singular_values;
        Ok(ratio(sv.max(), sv.min()))
    }
}

fn ratio(max: f64, min: f64) -> f64 {
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn svd(a: DMatrix<f64>, vectors: bool) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(a, vectors, vectors, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::numerical("SVD of the reduced system did not converge"))
}

/// Solves the column-equilibrated reduced system. Returns the update and the
/// condition number of the equilibrated matrix.
pub fn solve_update(sys: &ReducedSystem, cfg: &NewtonConfig) -> Result<(NewtonUpdate, f64)> {
    let (a, scales) = sys.equilibrated();
    let sv = svd(a.clone(), cfg.solve == LinearSolve::MinNorm)?;
    let condition = ratio(sv.singular_values.max(), sv.singular_values.min());
    if cfg.solve == LinearSolve::MinNorm {
        let cut = cfg.rank_tolerance * sv.singular_values.max();
        let y = sv.solve(&sys.rhs, cut).map_err(Error::numerical)?;
        return Ok((sys.expand(&y.component_div(&scales)), condition));
    }
    if !(condition <= cfg.singular_cond_threshold) {
        return Err(Error::SingularJacobian { condition });
    }
    let y = a
        .lu()
        .solve(&sys.rhs)
        .ok_or(Error::SingularJacobian { condition })?;
    Ok((sys.expand(&y.component_div(&scales)), condition))
}

/// Newton iteration without a reference solution.
pub fn newton_identify(
    u0: &UnitaryMatrix,
    u_tar: &UnitaryMatrix,
    guess: &HamiltonianPair,
    field: &SampledField,
    grid: &TimeGrid,
    cfg: &NewtonConfig,
) -> Result<(HamiltonianPair, NewtonReport)> {
    newton_identify_with_truth(u0, u_tar, guess, field, grid, cfg, None)
}

/// Newton iteration; when `truth` is given the report tracks `‖H_p − H_p^k‖`.
///
/// A refused step (singular reduced system) ends the run with
/// [`Convergence::SingularJacobian`] and the last accepted iterate.
pub fn newton_identify_with_truth(
    u0: &UnitaryMatrix,
    u_tar: &UnitaryMatrix,
    guess: &HamiltonianPair,
    field: &SampledField,
    grid: &TimeGrid,
    cfg: &NewtonConfig,
    truth: Option<&HamiltonianPair>,
) -> Result<(HamiltonianPair, NewtonReport)> {
    cfg.validate()?;
    if u0.dim() != guess.dim() || u_tar.dim() != guess.dim() {
        return Err(Error::dim(
            "initial operator, target and guess must share a dimension",
        ));
    }
    if let Some(t) = truth {
        if t.dim() != guess.dim() {
            return Err(Error::dim("reference pair has the wrong dimension"));
        }
    }

    let mut pair = guess.clone();
    let (mut u_n, mut j0, mut j1) = assemble_jacobian_streaming(u0, &pair, field, grid)?;
    let mut records = Vec::new();
    let mut convergence = Convergence::MaxIters;
    let mut singular_at = None;

    for k in 1..=cfg.max_iters {
        let s = hermitian_residual(&u_n, u_tar)?;
        let residual_skew = residual_skew_norm(&u_n, u_tar)?;
        let sys = reduce_system(&j0, &j1, &s)?;
        let (update, cond) = match solve_update(&sys, cfg) {
            Ok(solved) => solved,
            Err(Error::SingularJacobian { condition }) => {
                convergence = Convergence::SingularJacobian;
                singular_at = Some((k, condition));
                break;
            }
            Err(e) => return Err(e),
        };
        pair = pair.apply(&update);
        let e_k = update.magnitude();
        let done = e_k <= cfg.tol || k == cfg.max_iters;
        if done {
            u_n = propagate_final(u0, &pair, field, grid)?;
        } else {
            (u_n, j0, j1) = assemble_jacobian_streaming(u0, &pair, field, grid)?;
        }
        let (dev_h0, dev_h1) = match truth {
            Some(t) => {
                let (d0, d1) = t.deviation(&pair);
                (Some(d0), Some(d1))
            }
            None => (None, None),
        };
        records.push(NewtonRecord {
            k,
            e_k,
            dev_h0,
            dev_h1,
            dev_u: u_tar.distance(&u_n)?,
            cond,
            residual_skew,
        });
        if e_k <= cfg.tol {
            convergence = Convergence::Converged;
            break;
        }
    }
    Ok((
        pair,
        NewtonReport {
            records,
            convergence,
            singular_at,
        },
    ))
}
