//! Benchmark systems: a resonantly driven two-level atom in the rotating
//! frame, and an asymmetric double well expressed in its lowest eigenstates.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::{RealSymMatrix, RealSymZeroDiagMatrix};
use crate::newton::HamiltonianPair;
use crate::propagator::ControlField;

/// One atomic unit of time in seconds.
pub const AU_TIME_SECONDS: f64 = 2.418884326e-17;
/// 2 ps in atomic units of time.
pub const TWO_PS_AU: f64 = 2e-12 / AU_TIME_SECONDS;
/// Default Crank-Nicolson step count for the two-level runs.
pub const TWO_LEVEL_DEFAULT_STEPS: usize = 2000;
/// Default Crank-Nicolson step count for the double-well runs.
pub const DOUBLE_WELL_DEFAULT_STEPS: usize = 1_200_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoLevelParams {
    /// Detuning Δ (a.u.).
    pub delta: f64,
    /// Dipole strength μ (a.u.).
    pub mu: f64,
    pub t_final: f64,
    /// Field amplitude; `None` selects the resonant π-pulse value.
    pub e0: Option<f64>,
}

impl Default for TwoLevelParams {
    fn default() -> Self {
        TwoLevelParams {
            delta: 1e-7,
            mu: 1.0,
            t_final: 9000.0,
            e0: None,
        }
    }
}

impl TwoLevelParams {
    /// `E0 = 2π/(μ t_f)`: the envelope `½E0 sin²(πt/t_f)` then rotates the
    /// resonant pair by `μ∫E dt = π/2`, a complete population transfer.
    pub fn resolved_e0(&self) -> f64 {
        self.e0.unwrap_or(2.0 * PI / (self.mu * self.t_final))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) {
            return Err(Error::Model("t_f must be positive".into()));
        }
        if self.mu == 0.0 || !self.mu.is_finite() {
            return Err(Error::Model("μ must be non-zero".into()));
        }
        Ok(())
    }
}

/// `H0 = diag(0, Δ)`, `H1 = μ σ_x`, and the sin² envelope field.
pub fn two_level_model(p: &TwoLevelParams) -> Result<(HamiltonianPair, ControlField)> {
    p.validate()?;
    let h0 = RealSymMatrix::from_diagonal(&[0.0, p.delta]);
    let h1 = RealSymZeroDiagMatrix::from_upper_fn(2, |_, _| p.mu);
    let pair = HamiltonianPair::new(h0, h1)?;
    Ok((
        pair,
        ControlField::SinSqEnvelope {
            e0: p.resolved_e0(),
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoubleWellParams {
    pub mass: f64,
    pub t_final: f64,
    pub n_levels: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Grid points including both (Dirichlet) end points.
    pub n_points: usize,
}

impl Default for DoubleWellParams {
    fn default() -> Self {
        DoubleWellParams {
            mass: 1000.0,
            t_final: TWO_PS_AU,
            n_levels: 12,
            r_min: -2.5,
            r_max: 2.5,
            n_points: 513,
        }
    }
}

impl DoubleWellParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min < self.r_max) {
            return Err(Error::Model("r_min must be below r_max".into()));
        }
        if self.n_levels < 2 {
            return Err(Error::Model("need at least two levels".into()));
        }
        if self.n_points < 4 * self.n_levels {
            return Err(Error::Model(format!(
                "{} grid points cannot resolve {} levels",
                self.n_points, self.n_levels
            )));
        }
        if !(self.mass > 0.0 && self.t_final > 0.0) {
            return Err(Error::Model("mass and t_f must be positive".into()));
        }
        Ok(())
    }
}

/// `V(r) = r⁴ − r² − r/20`.
pub fn double_well_potential(r: f64) -> f64 {
    r.powi(4) - r * r - r / 20.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleWellModel {
    /// `H0 = diag(E_v)`, `H1 = ⟨v|r/2|w⟩` with the diagonal removed.
    pub pair: HamiltonianPair,
    pub omega_03: f64,
    pub mu_03: f64,
    pub eigenenergies: Vec<f64>,
    /// `⟨v|r/2|v⟩`, dropped from `H1` so the model lies in the search space.
    pub dropped_diagonal: Vec<f64>,
    /// Largest `|ψ_v|` at the grid edge relative to its maximum.
    pub boundary_ratio: f64,
    /// Eigenvectors on the interior grid points, one column per level.
    #[serde(skip)]
    pub eigenvectors: DMatrix<f64>,
    #[serde(skip)]
    pub grid: Vec<f64>,
}

/// Kinetic energy in the sine-basis DVR on `(a, b)` with `intervals` intervals
/// (Dirichlet ends; `intervals − 1` interior points).
fn sine_dvr_kinetic(a: f64, b: f64, intervals: usize, mass: f64) -> DMatrix<f64> {
    let n = intervals as f64;
    let pref = PI * PI / (2.0 * (b - a).powi(2)) / (2.0 * mass);
    let m = intervals - 1;
    DMatrix::from_fn(m, m, |i, j| {
        let (i, j) = ((i + 1) as f64, (j + 1) as f64);
        if i == j {
            pref * ((2.0 * n * n + 1.0) / 3.0 - 1.0 / (PI * i / n).sin().powi(2))
        } else {
            let sign = if ((i - j) as i64).rem_euclid(2) == 0 {
                1.0
            } else {
                -1.0
            };
            pref * sign
                * (1.0 / (PI * (i - j) / (2.0 * n)).sin().powi(2)
                    - 1.0 / (PI * (i + j) / (2.0 * n)).sin().powi(2))
        }
    })
}

/// Diagonalises `−(1/2M) d²/dr² + V(r)` on the grid and keeps the lowest
/// `n_levels` states. `ω_03` and `μ_03` come from the untruncated levels, so
/// models with fewer than four levels still carry the same pulse parameters.
pub fn build_double_well(p: &DoubleWellParams) -> Result<DoubleWellModel> {
    p.validate()?;
    let intervals = p.n_points - 1;
    let h = (p.r_max - p.r_min) / intervals as f64;
    let grid: Vec<f64> = (1..intervals).map(|i| p.r_min + i as f64 * h).collect();
    let mut ham = sine_dvr_kinetic(p.r_min, p.r_max, intervals, p.mass);
    for (k, r) in grid.iter().enumerate() {
        ham[(k, k)] += double_well_potential(*r);
    }
    let eig = SymmetricEigen::try_new(ham, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::numerical("grid eigensolver did not converge"))?;

    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let kept = p.n_levels.max(4);
    let order = &order[..kept];

    let npts = grid.len();
    let mut vecs = DMatrix::zeros(npts, kept);
    let mut boundary_ratio: f64 = 0.0;
    for (col, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let peak = v
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = peak.signum();
        vecs.set_column(col, &(v * sign));
        let edge = v[0].abs().max(v[npts - 1].abs());
        boundary_ratio = boundary_ratio.max(edge / peak.abs());
    }
    if boundary_ratio >= 1e-8 {
        return Err(Error::Grid(format!(
            "level wavefunctions reach the grid edge (ratio {boundary_ratio:.2e})"
        )));
    }

    let energies: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    if energies.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::numerical(
            "retained eigenenergies are not strictly increasing",
        ));
    }

    let r_half = DMatrix::from_fn(npts, npts, |i, j| if i == j { 0.5 * grid[i] } else { 0.0 });
    let dipole = vecs.transpose() * r_half * &vecs;
    let dipole = (&dipole + dipole.transpose()) * 0.5;
    let n = p.n_levels;
    let dropped_diagonal: Vec<f64> = (0..n).map(|v| dipole[(v, v)]).collect();
    let mu_03 = dipole[(0, 3)];
    let omega_03 = energies[3] - energies[0];
    let mut h1 = dipole.view((0, 0), (n, n)).into_owned();
    h1.fill_diagonal(0.0);
    let energies = energies[..n].to_vec();
    let pair = HamiltonianPair::new(
        RealSymMatrix::from_diagonal(&energies),
        RealSymZeroDiagMatrix::from_matrix(h1)?,
    )?;
    Ok(DoubleWellModel {
        pair,
        omega_03,
        mu_03,
        eigenenergies: energies,
        dropped_diagonal,
        boundary_ratio,
        eigenvectors: vecs.columns(0, n).into_owned(),
        grid,
    })
}

/// `E(t) = 2π/(t_f μ_03) · sin²(4πt/t_f) · cos(ω_03 t)`.
pub fn pi_pulse_field(model: &DoubleWellModel, t_final: f64) -> Result<ControlField> {
    if model.mu_03.abs() < 1e-12 {
        return Err(Error::Model("transition dipole μ_03 vanishes".into()));
    }
    Ok(ControlField::PiPulse {
        amplitude: 2.0 * PI / (t_final * model.mu_03),
        envelope_freq_mult: 4.0,
        carrier_freq: model.omega_03,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    pub eta: f64,
    pub seed: u64,
    pub n_seeds: usize,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            eta: 1e-3,
            seed: 0,
            n_seeds: 15,
        }
    }
}

impl PerturbationSpec {
    /// The `n_seeds` consecutive seeds starting at `seed`.
    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        let base = self.seed;
        (0..self.n_seeds as u64).map(move |i| base + i)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PerturbationSpec { seed, ..*self }
    }
}

/// `(H0 + η δH0, H1 + η δH1)` with `δH0`, `δH1` drawn uniformly from `[−1, 1]`
/// entry-wise (upper triangle, mirrored; `δH1` keeps a zero diagonal).
pub fn perturb_pair(pair: &HamiltonianPair, spec: &PerturbationSpec) -> HamiltonianPair {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = pair.dim();
    let d0 = RealSymMatrix::from_upper_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
    let d1 = RealSymZeroDiagMatrix::from_upper_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
    HamiltonianPair {
        h0: &pair.h0 + &d0.scale(spec.eta),
        h1: &pair.h1 + &d1.scale(spec.eta),
    }
}
