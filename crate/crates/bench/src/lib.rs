//! Shared fixtures for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic unit directions in `dim` dimensions.
pub fn unit_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Training radii and a smooth response with one sign change.
pub fn training_set(points: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..points).map(|i| 8.0 * i as f64 / (points - 1) as f64).collect();
    let y = x.iter().map(|r| 3.5 - r + 0.1 * (2.0 * r).sin()).collect();
    (x, y)
}
