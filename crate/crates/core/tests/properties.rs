use hamid_core::hermitian::eigenphases;
use hamid_core::{
    perturb_pair, spec_norm, split_log, unitary_exp, unitary_log, CMatrix, HamiltonianPair,
    PerturbationSpec, RealSymMatrix, RealSymZeroDiagMatrix, UnitaryMatrix,
};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use proptest::prelude::*;

/// `i H` with `H = V diag(θ) V†`, `θ ∈ [−3, 3]`, so the principal log is `iH` itself.
fn generator(n: usize, entries: &[f64], phases: &[f64]) -> CMatrix {
    let m = DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(entries[i * n + j], entries[n * n + i * n + j])
    });
    let herm = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let v = eig.eigenvectors;
    let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        phases.iter().take(n).map(|&t| Complex64::new(0.0, t)),
    ));
    &v * d * v.adjoint()
}

fn case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (2usize..=12).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(-1.0..1.0f64, 2 * n * n),
            prop::collection::vec(-3.0..3.0f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn log_inverts_exp((n, entries, phases) in case()) {
        let g = generator(n, &entries, &phases);
        let u = unitary_exp(&g).unwrap();
        let back = unitary_log(&u).unwrap();
        prop_assert!((&back - &g).camax() < 1e-10);
    }

    #[test]
    fn exp_inverts_log((n, entries, phases) in case()) {
        let u = unitary_exp(&generator(n, &entries, &phases)).unwrap();
        let again = unitary_exp(&unitary_log(&u).unwrap()).unwrap();
        prop_assert!(u.distance(&again).unwrap() < 1e-10);
        for p in eigenphases(&u).unwrap() {
            prop_assert!(p > -std::f64::consts::PI && p <= std::f64::consts::PI);
        }
    }

    #[test]
    fn split_recombines((n, entries, phases) in case()) {
        let g = generator(n, &entries, &phases);
        let dec = split_log(&g).unwrap();
        prop_assert!((dec.generator(1.0) - &g).camax() < 1e-12);
        let s = dec.s.matrix();
        let a = dec.a.matrix();
        prop_assert!((s - s.transpose()).amax() == 0.0);
        prop_assert!((a + a.transpose()).amax() == 0.0);
    }

    #[test]
    fn spectral_norm_properties(
        (n, entries, phases) in case(),
        c in -5.0..5.0f64,
    ) {
        let m = DMatrix::from_fn(n, n, |i, j| Complex64::new(entries[i * n + j], entries[n * n + i * n + j]));
        let other = m.transpose();
        let norm = spec_norm(&m).unwrap();
        prop_assert!(norm >= 0.0);
        let scaled = spec_norm(&(&m * Complex64::new(c, 0.0))).unwrap();
        prop_assert!((scaled - c.abs() * norm).abs() <= 1e-12 * (1.0 + norm));
        let sum = spec_norm(&(&m + &other)).unwrap();
        prop_assert!(sum <= norm + spec_norm(&other).unwrap() + 1e-12);
        let u = unitary_exp(&generator(n, &entries, &phases)).unwrap();
        let rotated = spec_norm(&(u.matrix() * &m * u.matrix().adjoint())).unwrap();
        prop_assert!((rotated - norm).abs() <= 1e-10 * (1.0 + norm));
    }

    #[test]
    fn distance_is_a_metric((n, entries, phases) in case()) {
        let u = unitary_exp(&generator(n, &entries, &phases)).unwrap();
        let id = UnitaryMatrix::identity(n);
        prop_assert_eq!(u.distance(&u).unwrap(), 0.0);
        prop_assert!((u.distance(&id).unwrap() - id.distance(&u).unwrap()).abs() < 1e-14);
        prop_assert!(u.distance(&id).unwrap() <= 2.0 + 1e-12);
    }

    #[test]
    fn perturbation_is_bitwise_deterministic(
        n in 2usize..=12,
        eta in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let pair = HamiltonianPair {
            h0: RealSymMatrix::from_upper_fn(n, |i, j| (i + 2 * j) as f64),
            h1: RealSymZeroDiagMatrix::from_upper_fn(n, |i, j| (i * j) as f64),
        };
        let spec = PerturbationSpec { eta, seed, n_seeds: 1 };
        let a = perturb_pair(&pair, &spec);
        let b = perturb_pair(&pair, &spec);
        for (x, y) in a.h0.matrix().iter().zip(b.h0.matrix().iter()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a.h1.matrix().iter().zip(b.h1.matrix().iter()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
        let (d0, d1) = pair.deviation(&a);
        prop_assert!(d0 <= eta * n as f64 + 1e-12 && d1 <= eta * n as f64 + 1e-12);
    }
}
