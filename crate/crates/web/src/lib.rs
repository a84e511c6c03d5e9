//! Browser front end for the two-level identification problem. Every export
//! returns a JSON string; the page in `www/` draws it on a canvas.

use std::f64::consts::PI;

use hamid_core::propagator::population_trace;
use hamid_core::{
    m0_seed, newton_identify_with_truth, perturb_pair, propagate_final, singularity_probe,
    two_level_model, HamiltonianPair, LinearSolve, NewtonConfig, PerturbationSpec, SampledField,
    TargetDecomposition, TimeGrid, TwoLevelParams, UnitaryMatrix,
};
use num_complex::Complex64;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const STEPS: usize = 2000;

/// Two-level pair and the sin² pulse tilted by `skew`:
/// `½E0 sin²(πt/t_f)(1 + skew(2t/t_f − 1))`. A nonzero tilt breaks the
/// time symmetry that makes the untilted problem singular.
fn setup(skew: f64) -> Result<(HamiltonianPair, SampledField, TimeGrid), String> {
    let p = TwoLevelParams::default();
    let (pair, _) = two_level_model(&p).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(p.t_final, STEPS).map_err(|e| e.to_string())?;
    let e0 = p.resolved_e0();
    let samples = (0..STEPS)
        .map(|n| {
            let t = grid.midpoint(n) / p.t_final;
            0.5 * e0 * (PI * t).sin().powi(2) * (1.0 + skew * (2.0 * t - 1.0))
        })
        .collect();
    Ok((pair, SampledField::new(samples), grid))
}

pub fn populations_json(skew: f64) -> Result<Value, String> {
    let (pair, field, grid) = setup(skew)?;
    let trace = population_trace(&pair, &field, &grid, 0, 20).map_err(|e| e.to_string())?;
    let col = |j: usize| trace.column(j).iter().copied().collect::<Vec<f64>>();
    Ok(json!({ "t": col(0), "p0": col(1), "p1": col(2), "field": field.values() }))
}

pub fn newton_json(eta: f64, seed: u64, skew: f64, min_norm: bool) -> Result<Value, String> {
    let (truth, field, grid) = setup(skew)?;
    let u0 = UnitaryMatrix::identity(2);
    let u_tar = propagate_final(&u0, &truth, &field, &grid).map_err(|e| e.to_string())?;
    let guess = perturb_pair(
        &truth,
        &PerturbationSpec {
            eta,
            seed,
            n_seeds: 1,
        },
    );
    let cfg = NewtonConfig {
        max_iters: 12,
        solve: if min_norm {
            LinearSolve::MinNorm
        } else {
            LinearSolve::Lu
        },
        ..NewtonConfig::default()
    };
    let (_, report) =
        newton_identify_with_truth(&u0, &u_tar, &guess, &field, &grid, &cfg, Some(&truth))
            .map_err(|e| e.to_string())?;
    Ok(json!({
        "convergence": format!("{:?}", report.convergence),
        "singular_at": report.singular_at,
        "records": report.records,
    }))
}

/// Rank of the reduced system at the stage-0 pair for target `exp(iθσ_x)`.
pub fn singularity_json(theta: f64, skew: f64, rank_tolerance: f64) -> Result<Value, String> {
    let (_, field, grid) = setup(skew)?;
    let (zero, i_theta) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, theta));
    let gen = hamid_core::CMatrix::from_row_slice(2, 2, &[zero, i_theta, i_theta, zero]);
    let u_tar = hamid_core::unitary_exp(&gen).map_err(|e| e.to_string())?;
    let dec = TargetDecomposition::of(&u_tar).map_err(|e| e.to_string())?;
    let pair = m0_seed(&dec, grid.t_final()).map_err(|e| e.to_string())?;
    let d = singularity_probe(&pair, &field, &grid, &u_tar, rank_tolerance)
        .map_err(|e| e.to_string())?;
    serde_json::to_value(d).map_err(|e| e.to_string())
}

fn respond(v: Result<Value, String>) -> String {
    match v {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

#[wasm_bindgen]
pub fn populations(skew: f64) -> String {
    respond(populations_json(skew))
}

#[wasm_bindgen]
pub fn newton(eta: f64, seed: u32, skew: f64, min_norm: bool) -> String {
    respond(newton_json(eta, seed as u64, skew, min_norm))
}

#[wasm_bindgen]
pub fn singularity(theta: f64, skew: f64, rank_tolerance: f64) -> String {
    respond(singularity_json(theta, skew, rank_tolerance))
}
