use hamid_core::models::{double_well_potential, TWO_PS_AU};
use hamid_core::{
    build_double_well, pi_pulse_field, propagate_final, sample_field, two_level_model,
    ControlField, DoubleWellParams, TimeGrid, TwoLevelParams, UnitaryMatrix,
};
use nalgebra::DMatrix;
use std::sync::OnceLock;

/// Second-order finite differences on 20000 and 40000 interior points of
/// [−2.5, 2.5], Richardson-extrapolated (scipy tridiagonal eigensolver).
const ORACLE_ENERGIES: [f64; 12] = [
    -0.253706049147,
    -0.191854939074,
    -0.184772722122,
    -0.133491369753,
    -0.1268648116,
    -0.079413478543,
    -0.073372581352,
    -0.031398189749,
    -0.02601096925,
    0.003887186624,
    0.017450583189,
    0.041671666548,
];
const ORACLE_OMEGA_03: f64 = 0.1202146793937;
const ORACLE_MU_03: f64 = 0.0042585855417;
/// Retained levels may sit above the barrier top; this bounds how far.
const BARRIER_MARGIN: f64 = 0.05;

fn model() -> &'static hamid_core::DoubleWellModel {
    static MODEL: OnceLock<hamid_core::DoubleWellModel> = OnceLock::new();
    MODEL.get_or_init(|| build_double_well(&DoubleWellParams::default()).unwrap())
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    assert!(f(a) * f(b) < 0.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(a) * f(m) <= 0.0 {
            b = m
        } else {
            a = m
        }
    }
    0.5 * (a + b)
}

fn dv(r: f64) -> f64 {
    4.0 * r.powi(3) - 2.0 * r - 0.05
}

#[test]
fn potential_has_deeper_right_well() {
    let left = bisect(dv, -1.0, -0.3);
    let right = bisect(dv, 0.3, 1.0);
    let top = bisect(dv, -0.3, 0.3);
    assert!((right - 0.7193).abs() < 1e-3 && (left + 0.6943).abs() < 1e-3);
    assert!(double_well_potential(right) < double_well_potential(left));
    assert!(double_well_potential(top) > double_well_potential(left));
}

#[test]
fn energies_and_transition_match_fine_grid_oracle() {
    let m = model();
    for (v, (e, o)) in m.eigenenergies.iter().zip(ORACLE_ENERGIES).enumerate() {
        assert!((e - o).abs() < 1e-9, "E_{v}: {e} vs {o}");
    }
    assert!((m.omega_03 - ORACLE_OMEGA_03).abs() < 1e-9);
    assert!((m.mu_03 - ORACLE_MU_03).abs() < 1e-9);
    assert!((m.omega_03 - (m.eigenenergies[3] - m.eigenenergies[0])).abs() < 1e-15);
}

#[test]
fn energies_are_converged_in_the_grid() {
    let fine = build_double_well(&DoubleWellParams {
        n_points: 1025,
        ..Default::default()
    })
    .unwrap();
    for (a, b) in model().eigenenergies.iter().zip(&fine.eigenenergies) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn basis_is_orthonormal_and_dipole_symmetric() {
    let m = model();
    let gram = m.eigenvectors.transpose() * &m.eigenvectors;
    assert!((gram - DMatrix::<f64>::identity(12, 12)).amax() < 1e-10);

    let h1 = m.pair.h1.matrix();
    assert!((h1 - h1.transpose()).amax() < 1e-10);
    assert!(h1.diagonal().iter().all(|&d| d == 0.0));
    assert_eq!(h1[(0, 3)], m.mu_03);
    assert!(m.dropped_diagonal.iter().any(|d| d.abs() > 0.1));
}

#[test]
fn spectrum_is_increasing_and_bounded_by_the_barrier() {
    let m = model();
    let top = double_well_potential(bisect(dv, -0.3, 0.3));
    assert!(m.eigenenergies.windows(2).all(|w| w[1] > w[0]));
    assert!(m.eigenenergies.iter().all(|&e| e < top + BARRIER_MARGIN));
    assert!(m.boundary_ratio < 1e-8);
}

#[test]
fn pulse_field_matches_closed_form() {
    let m = model();
    let field = pi_pulse_field(m, TWO_PS_AU).unwrap();
    let amplitude = 2.0 * std::f64::consts::PI / (TWO_PS_AU * m.mu_03);
    assert_eq!(field.value_at(0.0, TWO_PS_AU), Some(0.0));
    let t = TWO_PS_AU / 8.0;
    let expected = amplitude * (m.omega_03 * t).cos();
    assert!((field.value_at(t, TWO_PS_AU).unwrap() - expected).abs() < 1e-12 * amplitude);
    assert!((TWO_PS_AU - 82682.0).abs() < 1.0);
}

#[test]
fn resonant_two_level_pulse_transfers_population() {
    let p = TwoLevelParams::default();
    let (pair, field) = two_level_model(&p).unwrap();
    assert!(matches!(field, ControlField::SinSqEnvelope { .. }));
    let grid = TimeGrid::new(p.t_final, 2000).unwrap();
    let u = propagate_final(
        &UnitaryMatrix::identity(2),
        &pair,
        &sample_field(&field, &grid).unwrap(),
        &grid,
    )
    .unwrap();
    assert!(u.matrix()[(1, 0)].norm_sqr() >= 0.999);
}

/// About a minute in an optimised build.
#[test]
#[ignore = "long: 1.2M steps of a 12-level system"]
fn pi_pulse_moves_ground_state_to_third_level() {
    let m = model();
    let grid = TimeGrid::new(TWO_PS_AU, hamid_core::models::DOUBLE_WELL_DEFAULT_STEPS).unwrap();
    let field = sample_field(&pi_pulse_field(m, TWO_PS_AU).unwrap(), &grid).unwrap();
    let u = propagate_final(&UnitaryMatrix::identity(12), &m.pair, &field, &grid).unwrap();
    assert!(u.matrix()[(3, 0)].norm_sqr() >= 0.95);
}

#[test]
fn truncated_models_keep_the_pulse_parameters() {
    let full = model();
    for n in [2, 3, 6] {
        let m = build_double_well(&DoubleWellParams {
            n_levels: n,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(m.pair.dim(), n);
        assert_eq!(m.omega_03, full.omega_03);
        assert!((m.mu_03 - full.mu_03).abs() < 1e-15);
        assert_eq!(m.eigenenergies[..], full.eigenenergies[..n]);
    }
}
