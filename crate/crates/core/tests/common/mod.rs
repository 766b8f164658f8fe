#![allow(dead_code)]

use mirrorflow::mirror::DistanceGenerator;
use mirrorflow::objective::{CostSet, QuadraticCost};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Least-squares instance whose optimum sits near a planted point with
/// coordinates in `[0.5, 2]`, so it lies inside the entropy domain too.
pub fn planted_instance(n: usize, d: usize, seed: u64) -> CostSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = d + 2;
    let planted = DVector::from_fn(d, |_, _| rng.random_range(0.5..2.0));
    let costs = (0..n)
        .map(|_| {
            let a = DMatrix::from_fn(rows, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise = DVector::from_fn(rows, |_, _| 0.01 * rng.sample::<f64, _>(StandardNormal));
            let b = &a * &planted + noise;
            QuadraticCost::new(a, b).unwrap()
        })
        .collect();
    CostSet::new(costs).unwrap()
}

pub fn both_generators(d: usize) -> [DistanceGenerator; 2] {
    [DistanceGenerator::euclidean(d), DistanceGenerator::negative_entropy(d)]
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
