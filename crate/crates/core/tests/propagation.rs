mod common;

use common::{random_field, random_pair, rng};
use hamid_core::hermitian::unitarity_defect;
use hamid_core::newton::assemble_jacobian_streaming;
use hamid_core::{
    hermitian_residual, propagate, propagate_final, reduce_system, two_level_model,
    HamiltonianPair, SampledField, TimeGrid, TwoLevelParams, UnitaryMatrix,
};

#[test]
fn reversed_field_and_negated_pair_undo_the_evolution() {
    let mut r = rng(21);
    for n in [2, 4, 6] {
        let steps = 500;
        let grid = TimeGrid::new(20.0, steps).unwrap();
        let field = random_field(&mut r, steps);
        let pair = random_pair(&mut r, n, 1.0);
        let u_n = propagate_final(&UnitaryMatrix::identity(n), &pair, &field, &grid).unwrap();
        let mut reversed = field.values().to_vec();
        reversed.reverse();
        let back_pair = HamiltonianPair {
            h0: -&pair.h0,
            h1: -&pair.h1,
        };
        let back = propagate_final(&u_n, &back_pair, &SampledField::new(reversed), &grid).unwrap();
        assert!(back.is_identity(1e-11), "n={n}");
    }
}

#[test]
fn unitarity_drift_stays_small_at_two_level_scale() {
    let p = TwoLevelParams::default();
    let (pair, field) = two_level_model(&p).unwrap();
    let grid = TimeGrid::new(p.t_final, 2000).unwrap();
    let sampled = hamid_core::sample_field(&field, &grid).unwrap();
    let traj = propagate(&UnitaryMatrix::identity(2), &pair, &sampled, &grid).unwrap();
    assert!(traj.max_unitarity_defect().unwrap() <= 1e-9);
}

#[test]
fn unitarity_drift_stays_small_over_many_steps() {
    let mut r = rng(22);
    let steps = 100_000;
    let grid = TimeGrid::new(1e4, steps).unwrap();
    let field = random_field(&mut r, steps);
    let pair = random_pair(&mut r, 6, 0.1);
    let u = propagate_final(&UnitaryMatrix::identity(6), &pair, &field, &grid).unwrap();
    assert!(unitarity_defect(u.matrix()).unwrap() <= 1e-9);
}

/// With real Hamiltonians and time-symmetric samples every Cayley factor is
/// complex symmetric and the product is a palindrome, so `U_N = U_Nᵀ`. The
/// reduced system then has rank at most `N_d(N_d+1)/2`.
#[test]
fn time_symmetric_fields_give_symmetric_operators_and_rank_loss() {
    let mut r = rng(23);
    for n in [2, 3] {
        let steps = 64;
        let grid = TimeGrid::new(8.0, steps).unwrap();
        let half = random_field(&mut r, steps / 2).values().to_vec();
        let mut values = half.clone();
        values.extend(half.iter().rev());
        let field = SampledField::new(values);
        let pair = random_pair(&mut r, n, 1.0);
        let (u_n, j0, j1) =
            assemble_jacobian_streaming(&UnitaryMatrix::identity(n), &pair, &field, &grid).unwrap();
        let u = u_n.matrix();
        assert!((u - u.transpose()).camax() < 1e-13);

        let sys = reduce_system(&j0, &j1, &hermitian_residual(&u_n, &u_n).unwrap()).unwrap();
        let sv = sys.singular_values().unwrap();
        let rank = sv.iter().filter(|&&s| s > 1e-9 * sv[0]).count();
        assert_eq!(rank, n * (n + 1) / 2, "n={n}: {sv:?}");
    }
}
