//! Global tests of "no block differs between the groups".
//!
//! * [`Method::Star`]: max block T² against the table threshold `y_n(α)`.
//! * [`Method::Dagger`]: mixed block dimensions; each T² is mapped through
//!   its own table to `G = 1 - F(T²)` and the max is compared to
//!   `g_m(α) = 1 + ln(1 - α)/m`.
//! * [`Method::Extreme`]: max block T² against the Gumbel-limit threshold.
//! * [`Method::HCStar`]: higher criticism over coordinate-wise normal p-values.
//! * [`Method::UTMax`]: max coordinate t², calibrated by a `d = 1` table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hotelling::{self, BlockPair};
use crate::nullcal::{g_threshold, NullTable, CHUNK};
use crate::randdist::{chisq_sf_unchecked, derive_stream_id, ln_gamma_unchecked, normal_two_sided_p, SeededStream};

pub const MAX_BLOCK_DIM: usize = 64;
pub const HC_MIN_B: u64 = 10_000;
const HC_TAG: u64 = 0x6863_7374_6172; // "hcstar"

/// Null tables keyed by block dimension.
pub type TableMap = BTreeMap<usize, Arc<NullTable>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n1: usize,
    n2: usize,
    pairs: Vec<BlockPair>,
}

impl Dataset {
    pub fn new(pairs: Vec<BlockPair>) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::InvalidInput("dataset has no blocks".into()))?;
        let (n1, n2) = (first.x().n(), first.y().n());
        for (i, p) in pairs.iter().enumerate() {
            if p.x().n() != n1 || p.y().n() != n2 {
                return Err(Error::InvalidInput(format!(
                    "block {i} has group sizes ({}, {}), expected ({n1}, {n2})",
                    p.x().n(),
                    p.y().n()
                )));
            }
            if p.d() > MAX_BLOCK_DIM {
                return Err(Error::InvalidInput(format!(
                    "block {i} has dimension {} > {MAX_BLOCK_DIM}",
                    p.d()
                )));
            }
        }
        Ok(Self { n1, n2, pairs })
    }

    pub fn m(&self) -> usize {
        self.pairs.len()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn pairs(&self) -> &[BlockPair] {
        &self.pairs
    }

    pub fn dims(&self) -> Vec<usize> {
        self.pairs.iter().map(BlockPair::d).collect()
    }

    /// The common block dimension, if all blocks share one.
    pub fn uniform_dim(&self) -> Option<usize> {
        let d = self.pairs[0].d();
        self.pairs.iter().all(|p| p.d() == d).then_some(d)
    }

    /// Total number of scalar coordinates `Σ d_i`.
    pub fn total_dim(&self) -> usize {
        self.pairs.iter().map(BlockPair::d).sum()
    }
}

/// Per-block statistics shared by all methods: block T² values and the
/// signed coordinate t statistics (in block order, then coordinate order).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    pub n1: usize,
    pub n2: usize,
    pub dims: Vec<usize>,
    pub t2: Vec<f64>,
    pub t: Vec<f64>,
}

impl BlockStats {
    pub fn compute(ds: &Dataset) -> Result<Self> {
        Self::compute_with(ds, true)
    }

    /// Skips the coordinate t statistics when `coordinates` is false; the
    /// hc and ut methods then refuse the result.
    pub fn compute_with(ds: &Dataset, coordinates: bool) -> Result<Self> {
        let per_block: Vec<(f64, Vec<f64>)> = ds
            .pairs
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let t2 = hotelling::two_sample_t2(p).map_err(|e| e.in_block(i))?;
                let ts = if coordinates {
                    hotelling::coordinate_ts(p).map_err(|e| e.in_block(i))?
                } else {
                    Vec::new()
                };
                Ok((t2, ts))
            })
            .collect::<Result<_>>()?;
        let mut t2 = Vec::with_capacity(per_block.len());
        let mut t = Vec::with_capacity(ds.total_dim());
        for (v, ts) in per_block {
            t2.push(v);
            t.extend(ts);
        }
        Ok(Self { n1: ds.n1, n2: ds.n2, dims: ds.dims(), t2, t })
    }

    pub fn m(&self) -> usize {
        self.t2.len()
    }

    fn uniform_dim(&self) -> Result<usize> {
        let d = self.dims[0];
        if let Some(i) = self.dims.iter().position(|&di| di != d) {
            return Err(Error::DimensionMismatch(format!(
                "block {i} has d = {} but block 0 has d = {d}; mixed dimensions need the dagger test",
                self.dims[i]
            )));
        }
        Ok(d)
    }

    fn check_coordinates(&self) -> Result<()> {
        if self.t.len() != self.dims.iter().sum::<usize>() {
            return Err(Error::InvalidInput("coordinate t statistics were not computed".into()));
        }
        Ok(())
    }

    fn max_t2(&self) -> f64 {
        self.t2.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Coordinate t values of each block.
    fn block_ts(&self) -> impl Iterator<Item = &[f64]> {
        let mut offset = 0;
        self.dims.iter().map(move |&d| {
            let s = &self.t[offset..offset + d];
            offset += d;
            s
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "star")]
    Star,
    #[serde(rename = "dagger")]
    Dagger,
    #[serde(rename = "extreme")]
    Extreme,
    #[serde(rename = "hc")]
    HCStar,
    #[serde(rename = "ut")]
    UTMax,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Star, Method::Dagger, Method::Extreme, Method::HCStar, Method::UTMax];

    pub fn key(self) -> &'static str {
        match self {
            Method::Star => "star",
            Method::Dagger => "dagger",
            Method::Extreme => "extreme",
            Method::HCStar => "hc",
            Method::UTMax => "ut",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method {s:?} (expected star, dagger, extreme, hc or ut)")))
    }
}

/// One block's contribution to a global test.
///
/// `statistic` is the block quantity the method maximizes (block T² for
/// star, dagger and extreme; largest coordinate t² for ut and hc), and
/// `tail_value` is its calibrated tail: table tail for star and ut, `G` for
/// dagger, chi-squared p-value for extreme, smallest normal p-value for hc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostic {
    pub d: usize,
    pub t2: f64,
    pub statistic: f64,
    pub tail_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalTestResult {
    pub method: Method,
    pub reject: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub m: usize,
    pub per_block: Vec<BlockDiagnostic>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_table(table: &NullTable, n1: usize, n2: usize, d: usize) -> Result<()> {
    if !table.matches(n1, n2, d) {
        return Err(Error::DimensionMismatch(format!(
            "null table is for (n1, n2, d) = ({}, {}, {}), data needs ({n1}, {n2}, {d})",
            table.n1(),
            table.n2(),
            table.d()
        )));
    }
    Ok(())
}

fn result(method: Method, statistic: f64, threshold: f64, alpha: f64, per_block: Vec<BlockDiagnostic>) -> GlobalTestResult {
    GlobalTestResult {
        method,
        reject: statistic >= threshold,
        statistic,
        threshold,
        alpha,
        m: per_block.len(),
        per_block,
    }
}

fn t2_diagnostics(stats: &BlockStats, tail: impl Fn(usize, f64) -> f64) -> Vec<BlockDiagnostic> {
    stats
        .t2
        .iter()
        .zip(&stats.dims)
        .map(|(&t2, &d)| BlockDiagnostic { d, t2, statistic: t2, tail_value: tail(d, t2) })
        .collect()
}

pub fn phi_star_stats(stats: &BlockStats, table: &NullTable, alpha: f64) -> Result<GlobalTestResult> {
    check_alpha(alpha)?;
    let d = stats.uniform_dim()?;
    check_table(table, stats.n1, stats.n2, d)?;
    let threshold = table.y_alpha(stats.m(), alpha)?;
    let per_block = t2_diagnostics(stats, |_, t2| table.null_sf(t2));
    Ok(result(Method::Star, stats.max_t2(), threshold, alpha, per_block))
}

pub fn phi_star(ds: &Dataset, table: &NullTable, alpha: f64) -> Result<GlobalTestResult> {
    phi_star_stats(&BlockStats::compute(ds)?, table, alpha)
}

pub fn phi_dagger_stats(stats: &BlockStats, tables: &TableMap, alpha: f64) -> Result<GlobalTestResult> {
    check_alpha(alpha)?;
    let m = stats.m();
    for &d in &stats.dims {
        let table = tables.get(&d).ok_or(Error::MissingTable(d))?;
        check_table(table, stats.n1, stats.n2, d)?;
        // same resolution floor as the star threshold
        table.y_alpha(m, alpha)?;
    }
    let per_block = t2_diagnostics(stats, |d, t2| 1.0 - tables[&d].null_sf(t2));
    let statistic = per_block.iter().map(|b| b.tail_value).fold(f64::NEG_INFINITY, f64::max);
    Ok(result(Method::Dagger, statistic, g_threshold(m, alpha), alpha, per_block))
}

pub fn phi_dagger(ds: &Dataset, tables: &TableMap, alpha: f64) -> Result<GlobalTestResult> {
    phi_dagger_stats(&BlockStats::compute(ds)?, tables, alpha)
}

/// `q_α = -2 ln Γ(d/2) - 2 ln ln (1 - α)⁻¹`.
pub fn q_alpha(d: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if d == 0 {
        return Err(Error::Domain("d must be >= 1".into()));
    }
    let lnln = (-(-alpha).ln_1p()).ln();
    Ok(-2.0 * ln_gamma_unchecked(0.5 * d as f64) - 2.0 * lnln)
}

/// `2 ln m + (d - 2) ln ln m + q_α`.
pub fn extreme_threshold(m: usize, d: usize, alpha: f64) -> Result<f64> {
    if m < 3 {
        return Err(Error::InvalidInput(format!("extreme-value test: m >= 3 required, got m = {m}")));
    }
    let lm = (m as f64).ln();
    Ok(2.0 * lm + (d as f64 - 2.0) * lm.ln() + q_alpha(d, alpha)?)
}

pub fn phi_extreme_stats(stats: &BlockStats, alpha: f64) -> Result<GlobalTestResult> {
    check_alpha(alpha)?;
    let threshold = extreme_threshold(stats.m(), stats.uniform_dim()?, alpha)?;
    let per_block = t2_diagnostics(stats, chisq_sf_unchecked);
    Ok(result(Method::Extreme, stats.max_t2(), threshold, alpha, per_block))
}

pub fn phi_extreme(ds: &Dataset, alpha: f64) -> Result<GlobalTestResult> {
    if ds.m() < 3 {
        return Err(Error::InvalidInput(format!("extreme-value test: m >= 3 required, got m = {}", ds.m())));
    }
    phi_extreme_stats(&BlockStats::compute(ds)?, alpha)
}

/// Limit law `exp(-e^{-y/2} / Γ(d/2))` of the centered max of `m` T² values.
pub fn gumbel_limit_cdf(y: f64, d: usize) -> f64 {
    (-(-0.5 * y - ln_gamma_unchecked(0.5 * d as f64)).exp()).exp()
}

/// Higher criticism over `q = pvals.len()` p-values: the max of
/// `√q (j/q - p₍ⱼ₎) / √(p₍ⱼ₎(1 - p₍ⱼ₎))` over sorted p-values in `[1/q, 1/2]`.
/// Returns `-∞` when no p-value falls in that range.
pub fn hc_star(pvals: &[f64]) -> f64 {
    let mut sorted = pvals.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    hc_star_sorted(&sorted)
}

fn hc_star_sorted(sorted: &[f64]) -> f64 {
    let q = sorted.len() as f64;
    let lo = 1.0 / q;
    let sqrt_q = q.sqrt();
    sorted
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= lo && p <= 0.5)
        .map(|(j, &p)| sqrt_q * ((j + 1) as f64 / q - p) / (p * (1.0 - p)).sqrt())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Monte-Carlo upper-`α` critical value of HC* under i.i.d. uniform p-values,
/// using the same `⌈α·b⌉`-th largest convention as the null tables.
pub fn hc_critical(q: usize, alpha: f64, b: u64, seed: u64) -> Result<f64> {
    if b < HC_MIN_B {
        return Err(Error::InvalidInput(format!("hc_critical needs b >= {HC_MIN_B}, got {b}")));
    }
    if q == 0 {
        return Err(Error::InvalidInput("hc_critical needs q >= 1".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let tag = derive_stream_id(&[HC_TAG, q as u64]);
    let chunks = b.div_ceil(CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(b - c * CHUNK) as usize;
            let mut rng = SeededStream::new(seed, derive_stream_id(&[tag, c])).rng();
            let mut p = vec![0.0; q];
            (0..len)
                .map(|_| {
                    for v in p.iter_mut() {
                        *v = rng.random::<f64>();
                    }
                    p.sort_unstable_by(f64::total_cmp);
                    hc_star_sorted(&p)
                })
                .collect()
        })
        .collect();
    let mut all = parts.concat();
    all.sort_unstable_by(f64::total_cmp);
    let n = all.len();
    let pb = alpha * n as f64;
    let k = ((pb - 1e-9 * pb).ceil() as usize).clamp(1, n);
    Ok(all[n - k])
}

pub fn hc_test_stats(stats: &BlockStats, critical: f64, alpha: f64) -> Result<GlobalTestResult> {
    stats.check_coordinates()?;
    let pvals: Vec<f64> = stats.t.iter().map(|&t| normal_two_sided_p(t)).collect();
    let per_block = stats
        .block_ts()
        .zip(stats.t2.iter().zip(&stats.dims))
        .map(|(ts, (&t2, &d))| {
            let max_t2 = ts.iter().map(|t| t * t).fold(0.0, f64::max);
            BlockDiagnostic { d, t2, statistic: max_t2, tail_value: normal_two_sided_p(max_t2.sqrt()) }
        })
        .collect();
    Ok(result(Method::HCStar, hc_star(&pvals), critical, alpha, per_block))
}

/// HC* test of a dataset against a precomputed critical value
/// (see [`hc_critical`] with `q` equal to the total coordinate count).
pub fn hc_test(ds: &Dataset, critical: f64, alpha: f64) -> Result<GlobalTestResult> {
    hc_test_stats(&BlockStats::compute(ds)?, critical, alpha)
}

pub fn ut_max_stats(stats: &BlockStats, table1: &NullTable, alpha: f64) -> Result<GlobalTestResult> {
    check_alpha(alpha)?;
    check_table(table1, stats.n1, stats.n2, 1)?;
    stats.check_coordinates()?;
    let total = stats.t.len();
    let threshold = table1.y_alpha(total, alpha)?;
    let per_block: Vec<BlockDiagnostic> = stats
        .block_ts()
        .zip(stats.t2.iter().zip(&stats.dims))
        .map(|(ts, (&t2, &d))| {
            let max_t2 = ts.iter().map(|t| t * t).fold(0.0, f64::max);
            BlockDiagnostic { d, t2, statistic: max_t2, tail_value: table1.null_sf(max_t2) }
        })
        .collect();
    let statistic = per_block.iter().map(|b| b.statistic).fold(f64::NEG_INFINITY, f64::max);
    Ok(result(Method::UTMax, statistic, threshold, alpha, per_block))
}

pub fn ut_max(ds: &Dataset, table1: &NullTable, alpha: f64) -> Result<GlobalTestResult> {
    ut_max_stats(&BlockStats::compute(ds)?, table1, alpha)
}
