//! Dense matrix substrate for the identification problem.
//!
//! Structured real matrices (symmetric, symmetric with zero diagonal,
//! antisymmetric) hold the unknown Hamiltonians, while complex unitaries hold
//! evolution operators. Exponentials and logarithms are computed through
//! unitary diagonalisations so that degenerate spectra stay well behaved.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Default bound on `‖U†U − I‖` accepted when constructing a [`UnitaryMatrix`].
pub const UNITARITY_TOL: f64 = 1e-10;
/// Default bound on `‖exp(iS + A) − U‖` for a [`TargetDecomposition`].
pub const DECOMP_TOL: f64 = 1e-10;
/// Relative symmetry defect tolerated when ingesting structured matrices.
const STRUCTURE_TOL: f64 = 1e-10;
/// Eigenphases within this distance of `−π` are moved to `+π`.
const BRANCH_SNAP: f64 = 1e-10;
const EIG_MAX_ITERS: usize = 10_000;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

fn max_abs_real(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.norm()))
}

fn ensure_square<T>(m: &DMatrix<T>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::dim(format!("{what} must be non-empty")));
    }
    Ok(m.nrows())
}

pub(crate) fn real_to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Spectral norm of a real symmetric matrix (largest absolute eigenvalue).
pub(crate) fn symmetric_spec_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues
        .iter()
        .fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Spectral norm: the largest absolute eigenvalue for Hermitian input, the
/// largest singular value otherwise (the two agree on normal matrices).
pub fn spec_norm(m: &CMatrix) -> Result<f64> {
    ensure_square(m, "spec_norm argument")?;
    let scale = max_abs(m);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let herm_defect = max_abs(&(m - m.adjoint()));
    if herm_defect <= 1e-14 * scale {
        let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::try_new(h, f64::EPSILON, EIG_MAX_ITERS)
            .ok_or_else(|| Error::numerical("Hermitian eigensolver did not converge"))?;
        return Ok(eig
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, x| acc.max(x.abs())));
    }
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, EIG_MAX_ITERS)
        .ok_or_else(|| Error::numerical("SVD did not converge"))?;
    Ok(svd.singular_values.max())
}

/// `‖U†U − I‖` measured in the spectral norm.
pub fn unitarity_defect(m: &CMatrix) -> Result<f64> {
    let n = ensure_square(m, "unitarity check")?;
    spec_norm(&(m.adjoint() * m - CMatrix::identity(n, n)))
}

macro_rules! real_matrix_common {
    ($ty:ident) => {
        impl $ty {
            pub fn dim(&self) -> usize {
                self.0.nrows()
            }

            pub fn get(&self, i: usize, j: usize) -> f64 {
                self.0[(i, j)]
            }

            pub fn matrix(&self) -> &DMatrix<f64> {
                &self.0
            }

            pub fn into_matrix(self) -> DMatrix<f64> {
                self.0
            }

            pub fn to_complex(&self) -> CMatrix {
                real_to_complex(&self.0)
            }

            pub fn scale(&self, factor: f64) -> Self {
                $ty(&self.0 * factor)
            }
        }

        impl Add for &$ty {
            type Output = $ty;
            fn add(self, rhs: &$ty) -> $ty {
                assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in addition");
                $ty(&self.0 + &rhs.0)
            }
        }

        impl Sub for &$ty {
            type Output = $ty;
            fn sub(self, rhs: &$ty) -> $ty {
                assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in subtraction");
                $ty(&self.0 - &rhs.0)
            }
        }

        impl Mul<f64> for &$ty {
            type Output = $ty;
            fn mul(self, rhs: f64) -> $ty {
                self.scale(rhs)
            }
        }

        impl Neg for &$ty {
            type Output = $ty;
            fn neg(self) -> $ty {
                $ty(-&self.0)
            }
        }

        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(
                &self,
                s: S,
            ) -> std::result::Result<S::Ok, S::Error> {
                MatrixJson::from_real(&self.0).serialize(s)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(
                d: D,
            ) -> std::result::Result<Self, D::Error> {
                let raw = MatrixJson::deserialize(d)?;
                let m = raw.to_real().map_err(serde::de::Error::custom)?;
                $ty::from_matrix(m).map_err(serde::de::Error::custom)
            }
        }
    };
}

/// Real symmetric matrix; symmetry holds exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct RealSymMatrix(DMatrix<f64>);

real_matrix_common!(RealSymMatrix);

impl RealSymMatrix {
    pub fn zeros(dim: usize) -> Self {
        RealSymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        RealSymMatrix(DMatrix::from_fn(
            n,
            n,
            |i, j| if i == j { diag[i] } else { 0.0 },
        ))
    }

    /// Builds the matrix from its upper triangle (`i <= j`) and mirrors it.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            for i in 0..=j {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        RealSymMatrix(m)
    }

    /// Accepts a matrix that is symmetric up to round-off and symmetrises it.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        ensure_square(&m, "symmetric matrix")?;
        let defect = max_abs_real(&(&m - m.transpose()));
        if defect > STRUCTURE_TOL * max_abs_real(&m).max(1.0) {
            return Err(Error::contract(format!(
                "matrix is not symmetric (defect {defect:.3e})"
            )));
        }
        Ok(RealSymMatrix((&m + m.transpose()) * 0.5))
    }

    pub fn from_row_slice(dim: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::dim(format!(
                "expected {} entries, got {}",
                dim * dim,
                rows.len()
            )));
        }
        Self::from_matrix(DMatrix::from_row_slice(dim, dim, rows))
    }

    /// Largest absolute eigenvalue.
    pub fn norm(&self) -> f64 {
        symmetric_spec_norm(&self.0)
    }
}

/// Real symmetric matrix whose diagonal is exactly zero (dipole-type coupling).
#[derive(Clone, Debug, PartialEq)]
pub struct RealSymZeroDiagMatrix(DMatrix<f64>);

real_matrix_common!(RealSymZeroDiagMatrix);

impl RealSymZeroDiagMatrix {
    pub fn zeros(dim: usize) -> Self {
        RealSymZeroDiagMatrix(DMatrix::zeros(dim, dim))
    }

    /// Builds the matrix from its strict upper triangle (`i < j`).
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            for i in 0..j {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        RealSymZeroDiagMatrix(m)
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        let sym = RealSymMatrix::from_matrix(m)?;
        let scale = max_abs_real(&sym.0).max(1.0);
        let diag = sym.0.diagonal().amax();
        if diag > STRUCTURE_TOL * scale {
            return Err(Error::contract(format!(
                "diagonal must vanish (max |diag| {diag:.3e})"
            )));
        }
        let mut inner = sym.0;
        inner.fill_diagonal(0.0);
        Ok(RealSymZeroDiagMatrix(inner))
    }

    pub fn from_row_slice(dim: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::dim(format!(
                "expected {} entries, got {}",
                dim * dim,
                rows.len()
            )));
        }
        Self::from_matrix(DMatrix::from_row_slice(dim, dim, rows))
    }

    pub fn norm(&self) -> f64 {
        symmetric_spec_norm(&self.0)
    }

    pub fn to_sym(&self) -> RealSymMatrix {
        RealSymMatrix(self.0.clone())
    }
}

/// Real antisymmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RealAntiSymMatrix(DMatrix<f64>);

real_matrix_common!(RealAntiSymMatrix);

impl RealAntiSymMatrix {
    pub fn zeros(dim: usize) -> Self {
        RealAntiSymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        ensure_square(&m, "antisymmetric matrix")?;
        let defect = max_abs_real(&(&m + m.transpose()));
        if defect > STRUCTURE_TOL * max_abs_real(&m).max(1.0) {
            return Err(Error::contract(format!(
                "matrix is not antisymmetric (defect {defect:.3e})"
            )));
        }
        Ok(RealAntiSymMatrix((&m - m.transpose()) * 0.5))
    }

    pub fn from_row_slice(dim: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::dim(format!(
                "expected {} entries, got {}",
                dim * dim,
                rows.len()
            )));
        }
        Self::from_matrix(DMatrix::from_row_slice(dim, dim, rows))
    }
}

/// Complex matrix with `‖U†U − I‖ ≤ tol` checked at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryMatrix(CMatrix);

impl UnitaryMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::with_tolerance(m, UNITARITY_TOL)
    }

    pub fn with_tolerance(m: CMatrix, tol: f64) -> Result<Self> {
        let defect = unitarity_defect(&m)?;
        if !(defect <= tol) {
            return Err(Error::contract(format!(
                "matrix is not unitary (‖U†U − I‖ = {defect:.3e} > {tol:.1e})"
            )));
        }
        Ok(UnitaryMatrix(m))
    }

    /// Wraps a matrix produced by a unitarity-preserving computation.
    pub(crate) fn new_unchecked(m: CMatrix) -> Self {
        UnitaryMatrix(m)
    }

    pub fn identity(dim: usize) -> Self {
        UnitaryMatrix(CMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn adjoint(&self) -> UnitaryMatrix {
        UnitaryMatrix(self.0.adjoint())
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        let n = self.dim();
        max_abs(&(&self.0 - CMatrix::identity(n, n))) <= tol
    }

    /// Spectral-norm distance `‖self − other‖`.
    pub fn distance(&self, other: &UnitaryMatrix) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::dim("unitaries of different size"));
        }
        spec_norm(&(&self.0 - &other.0))
    }
}

impl Serialize for UnitaryMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson::from_complex(&self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for UnitaryMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(d)?;
        let m = raw.to_complex().map_err(serde::de::Error::custom)?;
        UnitaryMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// `U = exp(iS + A)` with `S` real symmetric and `A` real antisymmetric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetDecomposition {
    pub s: RealSymMatrix,
    pub a: RealAntiSymMatrix,
}

impl TargetDecomposition {
    /// Decomposes a unitary through its principal logarithm and checks the
    /// reconstruction against [`DECOMP_TOL`].
    pub fn of(u: &UnitaryMatrix) -> Result<Self> {
        let dec = split_log(&unitary_log(u)?)?;
        let back = unitary_exp(&dec.generator(1.0))?;
        let err = back.distance(u)?;
        if err > DECOMP_TOL {
            return Err(Error::numerical(format!(
                "exp(iS + A) misses the target by {err:.3e}"
            )));
        }
        Ok(dec)
    }

    pub fn dim(&self) -> usize {
        self.s.dim()
    }

    /// `iS + w·A`.
    pub fn generator(&self, antisym_weight: f64) -> CMatrix {
        let n = self.dim();
        CMatrix::from_fn(n, n, |i, j| {
            Complex64::new(antisym_weight * self.a.get(i, j), self.s.get(i, j))
        })
    }
}

fn principal_phase(z: Complex64) -> f64 {
    let theta = z.arg();
    if theta <= -PI + BRANCH_SNAP {
        PI
    } else {
        theta
    }
}

/// Principal logarithm of a unitary: `V diag(iθ_k) V†` with `θ_k ∈ (−π, π]`.
///
/// The eigenbasis comes from a complex Schur factorisation, which is unitary
/// even when eigenvalues repeat.
pub fn unitary_log(u: &UnitaryMatrix) -> Result<CMatrix> {
    let n = u.dim();
    let schur = Schur::try_new(u.matrix().clone(), f64::EPSILON, EIG_MAX_ITERS)
        .ok_or_else(|| Error::numerical("Schur factorisation did not converge"))?;
    let (q, t) = schur.unpack();
    let mut log_diag = CMatrix::zeros(n, n);
    for k in 0..n {
        log_diag[(k, k)] = Complex64::new(0.0, principal_phase(t[(k, k)]));
    }
    let m = &q * log_diag * q.adjoint();
    Ok((&m - m.adjoint()) * Complex64::new(0.5, 0.0))
}

/// Eigenphases of a unitary, each in `(−π, π]`, sorted ascending.
pub fn eigenphases(u: &UnitaryMatrix) -> Result<Vec<f64>> {
    let schur = Schur::try_new(u.matrix().clone(), f64::EPSILON, EIG_MAX_ITERS)
        .ok_or_else(|| Error::numerical("Schur factorisation did not converge"))?;
    let (_, t) = schur.unpack();
    let mut phases: Vec<f64> = (0..u.dim()).map(|k| principal_phase(t[(k, k)])).collect();
    phases.sort_by(f64::total_cmp);
    Ok(phases)
}

fn check_anti_hermitian(m: &CMatrix) -> Result<()> {
    ensure_square(m, "generator")?;
    let defect = max_abs(&(m + m.adjoint()));
    if defect > STRUCTURE_TOL * max_abs(m).max(1.0) {
        return Err(Error::contract(format!(
            "matrix is not anti-Hermitian (defect {defect:.3e})"
        )));
    }
    Ok(())
}

/// Splits an anti-Hermitian `M` into `iS + A`.
pub fn split_log(m: &CMatrix) -> Result<TargetDecomposition> {
    check_anti_hermitian(m)?;
    let a = RealAntiSymMatrix::from_matrix(m.map(|z| z.re))?;
    let s = RealSymMatrix::from_matrix(m.map(|z| z.im))?;
    Ok(TargetDecomposition { s, a })
}

/// `exp(M)` for anti-Hermitian `M`, via the eigendecomposition of `−iM`.
pub fn unitary_exp(m: &CMatrix) -> Result<UnitaryMatrix> {
    check_anti_hermitian(m)?;
    let n = m.nrows();
    let k = m * Complex64::new(0.0, -1.0);
    let k = (&k + k.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::try_new(k, f64::EPSILON, EIG_MAX_ITERS)
        .ok_or_else(|| Error::numerical("Hermitian eigensolver did not converge"))?;
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (col, lambda) in eig.eigenvalues.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, *lambda);
        for row in 0..n {
            scaled[(row, col)] *= phase;
        }
    }
    UnitaryMatrix::new(scaled * v.adjoint())
}

/// Exact evolution `exp(−iHt)` under a constant Hermitian `H`.
pub fn hermitian_evolution(h: &CMatrix, t: f64) -> Result<UnitaryMatrix> {
    unitary_exp(&(h * Complex64::new(0.0, -t)))
}

/// JSON layout `{ "dim": n, "re": [[..]], "im": [[..]] }`, rows outermost.
/// Real matrices omit `im`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

impl MatrixJson {
    pub fn from_real(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect();
        MatrixJson {
            dim: m.nrows(),
            re: rows,
            im: None,
        }
    }

    pub fn from_complex(m: &CMatrix) -> Self {
        let part = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().map(f).collect())
                .collect()
        };
        MatrixJson {
            dim: m.nrows(),
            re: part(|z| z.re),
            im: Some(part(|z| z.im)),
        }
    }

    fn check_block(&self, block: &[Vec<f64>], name: &str) -> Result<()> {
        if block.len() != self.dim || block.iter().any(|r| r.len() != self.dim) {
            return Err(Error::dim(format!("`{name}` must be {0}x{0}", self.dim)));
        }
        Ok(())
    }

    pub fn to_real(&self) -> Result<DMatrix<f64>> {
        self.check_block(&self.re, "re")?;
        if let Some(im) = &self.im {
            self.check_block(im, "im")?;
            if im.iter().flatten().any(|x| *x != 0.0) {
                return Err(Error::contract("real matrix has a non-zero imaginary part"));
            }
        }
        Ok(DMatrix::from_fn(self.dim, self.dim, |i, j| self.re[i][j]))
    }

    pub fn to_complex(&self) -> Result<CMatrix> {
        self.check_block(&self.re, "re")?;
        if let Some(im) = &self.im {
            self.check_block(im, "im")?;
        }
        Ok(CMatrix::from_fn(self.dim, self.dim, |i, j| {
            let im = self.im.as_ref().map_or(0.0, |b| b[i][j]);
            Complex64::new(self.re[i][j], im)
        }))
    }
}
