use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nullcal::simulate_null_t2;
use crate::randdist::{chisq_sf, derive_stream_id};

const MD_TAG: u64 = 0x6d64_6368; // "mdch"
const GUMBEL_TAG: u64 = 0x6775_6d62; // "gumb"
const MIN_EXPECTED: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub x2: f64,
    pub chisq_tail: f64,
    pub empirical_tail: f64,
    pub ratio: f64,
    pub mc_stderr: f64,
}

/// Ratio of the simulated null tail `P(T² >= x²)` to `P(χ²(d) >= x²)` on a
/// grid, from `reps` standard-normal replicates.
pub fn md_ratio_check(n1: usize, n2: usize, d: usize, reps: u64, x2_grid: &[f64], seed: u64) -> Result<Vec<RatioPoint>> {
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be >= 1".into()));
    }
    let mut tails = Vec::with_capacity(x2_grid.len());
    for &x2 in x2_grid {
        let tail = chisq_sf(d, x2)?;
        let expected = tail * reps as f64;
        if expected < MIN_EXPECTED {
            return Err(Error::InvalidGrid { x2, expected });
        }
        tails.push(tail);
    }
    let tag = derive_stream_id(&[MD_TAG, n1 as u64, n2 as u64, d as u64]);
    let mut draws = simulate_null_t2(n1, n2, d, reps, seed, tag)?;
    draws.sort_unstable_by(f64::total_cmp);
    Ok(x2_grid
        .iter()
        .zip(tails)
        .map(|(&x2, chisq_tail)| {
            let above = draws.len() - draws.partition_point(|&v| v < x2);
            let empirical_tail = above as f64 / reps as f64;
            let se = (empirical_tail * (1.0 - empirical_tail) / reps as f64).sqrt();
            RatioPoint { x2, chisq_tail, empirical_tail, ratio: empirical_tail / chisq_tail, mc_stderr: se / chisq_tail }
        })
        .collect())
}

/// `reps` draws of `max_i T²_i − 2 ln m − (d − 2) ln ln m` over `m`
/// independent standard-normal blocks of dimension `d`.
pub fn centered_max_sample(m: usize, d: usize, n1: usize, n2: usize, reps: u64, seed: u64) -> Result<Vec<f64>> {
    if m < 3 {
        return Err(Error::InvalidInput("m >= 3 required".into()));
    }
    let lm = (m as f64).ln();
    let shift = 2.0 * lm + (d as f64 - 2.0) * lm.ln();
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let t2 = simulate_null_t2(n1, n2, d, m as u64, seed, derive_stream_id(&[GUMBEL_TAG, rep]))?;
            Ok(t2.into_iter().fold(f64::NEG_INFINITY, f64::max) - shift)
        })
        .collect()
}

/// Kolmogorov–Smirnov distance between the empirical law of `sample` and `cdf`.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}
