//! Monte Carlo moments of a two-pathway mixture of compound-symmetry
//! clusters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathwayMoments {
    pub mean: f64,
    pub variance: f64,
    pub icc: f64,
}

/// Estimates with batch-means standard errors, each `[mean, variance, icc]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureEstimate {
    pub estimate: [f64; 3],
    pub se: [f64; 3],
}

const BATCHES: usize = 50;

fn batch_stats(ys: &[Vec<f64>]) -> [f64; 3] {
    let count: usize = ys.iter().map(Vec::len).sum();
    let mean = ys.iter().flatten().sum::<f64>() / count as f64;
    let var = ys.iter().flatten().map(|y| (y - mean).powi(2)).sum::<f64>() / count as f64;
    let mut cross = 0.0;
    let mut pairs = 0.0;
    for y in ys {
        let m = y.len();
        for j in 0..m {
            for k in 0..m {
                if j != k {
                    cross += (y[j] - mean) * (y[k] - mean);
                }
            }
        }
        pairs += (m * (m - 1)) as f64;
    }
    [mean, var, cross / pairs / var]
}

/// Draws `draws` clusters of size `m`: with probability `p` from pathway
/// `a`, otherwise from `b`, each as a shared normal effect plus independent
/// noise.
pub fn mixture_moment_mc(
    p: f64,
    a: PathwayMoments,
    b: PathwayMoments,
    m: usize,
    draws: usize,
    seed: u64,
) -> Result<MixtureEstimate> {
    if draws < 10_000 {
        return Err(Error::InvalidParameter(format!("{draws} draws; at least 10000 needed")));
    }
    if m < 2 {
        return Err(Error::InvalidParameter("an ICC needs clusters of size at least 2".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("mixing probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ys: Vec<Vec<f64>> = (0..draws)
        .map(|_| {
            let pw = if rng.random::<f64>() < p { a } else { b };
            let shared: f64 = rng.sample::<f64, _>(StandardNormal) * (pw.icc * pw.variance).sqrt();
            let own = ((1.0 - pw.icc) * pw.variance).sqrt();
            (0..m)
                .map(|_| pw.mean + shared + own * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let estimate = batch_stats(&ys);
    let size = draws / BATCHES;
    let per_batch: Vec<[f64; 3]> = ys.chunks(size).take(BATCHES).map(batch_stats).collect();
    let k = per_batch.len() as f64;
    let mut se = [0.0; 3];
    for (j, s) in se.iter_mut().enumerate() {
        let mean = per_batch.iter().map(|b| b[j]).sum::<f64>() / k;
        let var = per_batch.iter().map(|b| (b[j] - mean).powi(2)).sum::<f64>() / (k - 1.0);
        *s = (var / k).sqrt();
    }
    Ok(MixtureEstimate { estimate, se })
}
