#![allow(dead_code)]

use hamid_core::{HamiltonianPair, RealSymMatrix, RealSymZeroDiagMatrix, SampledField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pair(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> HamiltonianPair {
    HamiltonianPair {
        h0: RealSymMatrix::from_upper_fn(n, |_, _| scale * rng.gen_range(-1.0..1.0)),
        h1: RealSymZeroDiagMatrix::from_upper_fn(n, |_, _| scale * rng.gen_range(-1.0..1.0)),
    }
}

/// Samples with no time-reversal symmetry, so the reduced system is regular.
pub fn random_field(rng: &mut ChaCha8Rng, steps: usize) -> SampledField {
    SampledField::new((0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect())
}
