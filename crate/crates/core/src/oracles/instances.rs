//! Small random trials for oracle comparisons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::trial_data::{ClusterRecord, Sign, TrialDataset};

const PATHWAYS: [(Sign, Option<Sign>); 6] = [
    (Sign::Plus, None),
    (Sign::Plus, Some(Sign::Plus)),
    (Sign::Plus, Some(Sign::Minus)),
    (Sign::Minus, None),
    (Sign::Minus, Some(Sign::Plus)),
    (Sign::Minus, Some(Sign::Minus)),
];

/// For negative `icc`, removes part of the member average so members are
/// anticorrelated.
fn within(e: &[f64], icc: f64) -> Vec<f64> {
    if icc >= 0.0 {
        return e.to_vec();
    }
    let lambda = (-5.0 * icc).min(1.0);
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    e.iter().map(|v| v - lambda * mean).collect()
}

/// `n ≥ 6` clusters covering every pathway, sizes uniform on `sizes`,
/// `p` standard-normal covariates and a random-intercept outcome.
pub fn random_instance(seed: u64, n: usize, sizes: (usize, usize), p: usize) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let icc: f64 = rng.random_range(-0.2..0.6);
    let clusters = (0..n)
        .map(|i| {
            let (a1, a2) = if i < 6 { PATHWAYS[i] } else { PATHWAYS[rng.random_range(0..6)] };
            let m = rng.random_range(sizes.0..=sizes.1);
            let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let shift = a1.value() + 0.5 * a2.map_or(0.3, Sign::value) + x.iter().sum::<f64>();
            let b: f64 = rng.sample(StandardNormal);
            let e: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            let y = within(&e, icc).into_iter().map(|v| shift + icc.max(0.0).sqrt() * b + v).collect();
            let id = format!("c{i}");
            match a2 {
                None => ClusterRecord::responder(id, a1, x, y),
                Some(a2) => ClusterRecord::non_responder(id, a1, a2, x, y),
            }
        })
        .collect();
    TrialDataset::new(clusters, p)
}

/// `n` non-responders to `(1, 1)` of size `m`, with within-cluster
/// correlation `rho` (negative values give anticorrelated members).
pub fn single_regimen_instance(seed: u64, n: usize, m: usize, p: usize, rho: f64) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let mean = 2.0 + 0.7 * x.iter().sum::<f64>();
            let b: f64 = rng.sample(StandardNormal);
            let e: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            let y = within(&e, rho).into_iter().map(|v| mean + rho.max(0.0).sqrt() * 2.0 * b + v).collect();
            ClusterRecord::non_responder(format!("s{i}"), Sign::Plus, Sign::Plus, x, y)
        })
        .collect();
    TrialDataset::new(clusters, p)
}
