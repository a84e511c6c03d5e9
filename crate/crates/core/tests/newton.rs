mod common;

use common::{random_field, random_pair, rng};
use hamid_core::{
    newton_identify, newton_identify_with_truth, perturb_pair, propagate_final, Convergence,
    LinearSolve, NewtonConfig, PerturbationSpec, TimeGrid, UnitaryMatrix,
};

fn log10(x: f64) -> f64 {
    x.max(1e-300).log10()
}

#[test]
fn recovers_a_generic_pair_quadratically() {
    let mut r = rng(31);
    for n in [2, 3, 4] {
        let steps = 200;
        let grid = TimeGrid::new(5.0, steps).unwrap();
        let field = random_field(&mut r, steps);
        let truth = random_pair(&mut r, n, 0.5);
        let u0 = UnitaryMatrix::identity(n);
        let u_tar = propagate_final(&u0, &truth, &field, &grid).unwrap();
        let guess = perturb_pair(
            &truth,
            &PerturbationSpec {
                eta: 1e-2,
                seed: n as u64,
                n_seeds: 1,
            },
        );
        let cfg = NewtonConfig {
            max_iters: 12,
            ..Default::default()
        };
        let (found, report) =
            newton_identify_with_truth(&u0, &u_tar, &guess, &field, &grid, &cfg, Some(&truth))
                .unwrap();
        assert_eq!(
            report.convergence,
            Convergence::Converged,
            "n={n}: {report:?}"
        );
        let (d0, d1) = truth.deviation(&found);
        assert!(d0 < 1e-10 && d1 < 1e-10, "n={n}: {d0:e} {d1:e}");
        assert!(report.final_dev_u().unwrap() < 1e-12);

        // Some pair of consecutive late steps at least doubles −log10 ‖δH‖.
        let e: Vec<f64> = report.records.iter().map(|r| -log10(r.e_k)).collect();
        assert!(
            e.windows(2).any(|w| w[0] > 2.0 && w[1] >= 1.8 * w[0]),
            "n={n}: {e:?}"
        );
    }
}

#[test]
fn exact_guess_is_a_fixed_point() {
    let mut r = rng(32);
    let grid = TimeGrid::new(3.0, 50).unwrap();
    let field = random_field(&mut r, 50);
    let truth = random_pair(&mut r, 3, 1.0);
    let u0 = UnitaryMatrix::identity(3);
    let u_tar = propagate_final(&u0, &truth, &field, &grid).unwrap();
    let cfg = NewtonConfig::default();
    let (_, report) = newton_identify(&u0, &u_tar, &truth, &field, &grid, &cfg).unwrap();
    assert_eq!(report.convergence, Convergence::Converged);
    assert!(report.iterations() <= 2);
    assert!(report.records[0].e_k <= cfg.tol * 1e3);
    assert!(report.final_dev_u().unwrap() <= 1e-12);
    assert!(report.records[0].dev_h0.is_none());
}

#[test]
fn min_norm_solve_matches_lu_on_regular_systems() {
    let mut r = rng(33);
    let grid = TimeGrid::new(4.0, 80).unwrap();
    let field = random_field(&mut r, 80);
    let truth = random_pair(&mut r, 3, 0.5);
    let u0 = UnitaryMatrix::identity(3);
    let u_tar = propagate_final(&u0, &truth, &field, &grid).unwrap();
    let guess = perturb_pair(
        &truth,
        &PerturbationSpec {
            eta: 1e-3,
            seed: 1,
            n_seeds: 1,
        },
    );
    let lu = NewtonConfig {
        max_iters: 1,
        ..Default::default()
    };
    let mn = NewtonConfig {
        solve: LinearSolve::MinNorm,
        ..lu
    };
    let (a, _) = newton_identify(&u0, &u_tar, &guess, &field, &grid, &lu).unwrap();
    let (b, _) = newton_identify(&u0, &u_tar, &guess, &field, &grid, &mn).unwrap();
    let (d0, d1) = a.deviation(&b);
    assert!(d0 + d1 < 1e-12, "{d0:e} {d1:e}");
}
