//! One- and two-sample Hotelling T² statistics.
//!
//! Sample covariances use the `1/n` divisor throughout, so the two-sample
//! statistic is
//!
//! ```text
//! T² = (x̄ - ȳ)ᵀ (V₁/n₁ + V₂/n₂)⁻¹ (x̄ - ȳ),   Vₖ = (1/nₖ) Σ (zᵢ - z̄)(zᵢ - z̄)ᵀ
//! ```
//!
//! and the univariate t used by the coordinate-wise baselines is the signed
//! square root of the `d = 1` case.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_in_place, forward_sq_norm, SymMatrix};
use crate::randdist::chisq_sf;

/// `n` observations of a `d`-vector, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl SampleBlock {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput(format!("block needs n >= 1 and d >= 1, got n = {n}, d = {d}")));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch(format!("{n}x{d} block given {} values", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value in row {}", pos / d)));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch("rows of unequal length".into()));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    /// Wraps data already known to be finite and correctly shaped.
    pub(crate) fn from_trusted(n: usize, d: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * d);
        Self { n, d, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New block with `f` applied to every row.
    pub fn map_rows(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = self.data.chunks_exact(self.d).map(&mut f).collect();
        Self::from_rows(&rows)
    }

    /// Column `j` as a `d = 1` block.
    pub fn column(&self, j: usize) -> SampleBlock {
        let data = self.data.chunks_exact(self.d).map(|r| r[j]).collect();
        SampleBlock::from_trusted(self.n, 1, data)
    }
}

/// The two groups of one block hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPair {
    x: SampleBlock,
    y: SampleBlock,
}

impl BlockPair {
    pub fn new(x: SampleBlock, y: SampleBlock) -> Result<Self> {
        if x.d != y.d {
            return Err(Error::DimensionMismatch(format!("group dimensions differ: {} vs {}", x.d, y.d)));
        }
        check_sizes(x.n, y.n, x.d)?;
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &SampleBlock {
        &self.x
    }

    pub fn y(&self) -> &SampleBlock {
        &self.y
    }

    pub fn d(&self) -> usize {
        self.x.d
    }

    pub fn swapped(&self) -> Self {
        Self { x: self.y.clone(), y: self.x.clone() }
    }

    /// Coordinate `j` of both groups as a `d = 1` pair.
    pub fn coordinate(&self, j: usize) -> BlockPair {
        BlockPair { x: self.x.column(j), y: self.y.column(j) }
    }
}

/// Minimum sizes for a nonsingular pooled scale matrix.
pub fn check_sizes(n1: usize, n2: usize, d: usize) -> Result<()> {
    if n1 < 2 || n2 < 2 || n1 + n2 < d + 2 {
        return Err(Error::InvalidInput(format!(
            "need n1, n2 >= 2 and n1 + n2 >= d + 2, got n1 = {n1}, n2 = {n2}, d = {d}"
        )));
    }
    Ok(())
}

/// Mean vector and `1/n`-divisor covariance.
pub fn sample_mean_cov(b: &SampleBlock) -> (Vec<f64>, SymMatrix) {
    let d = b.d;
    let mut mean = vec![0.0; d];
    let mut cross = vec![0.0; d * d];
    accumulate_mean_cross(&b.data, b.n, d, &mut mean, &mut cross, 1.0 / b.n as f64);
    let cov = SymMatrix::from_fn(d, |i, j| cross[j * d + i]);
    (mean, cov)
}

/// Writes the row mean into `mean` and adds `scale * Σ (z - z̄)(z - z̄)ᵀ`
/// into the lower triangle of `cross`.
#[inline]
fn accumulate_mean_cross(data: &[f64], n: usize, d: usize, mean: &mut [f64], cross: &mut [f64], scale: f64) {
    mean.fill(0.0);
    for row in data.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let inv_n = 1.0 / n as f64;
    for m in mean.iter_mut() {
        *m *= inv_n;
    }
    for row in data.chunks_exact(d) {
        for i in 0..d {
            let ci = (row[i] - mean[i]) * scale;
            let dst = &mut cross[i * d..i * d + i + 1];
            for (j, c) in dst.iter_mut().enumerate() {
                *c += ci * (row[j] - mean[j]);
            }
        }
    }
}

/// Reusable buffers for evaluating many statistics of one dimension.
#[derive(Debug, Clone)]
pub struct T2Workspace {
    d: usize,
    mean_x: Vec<f64>,
    mean_y: Vec<f64>,
    scale: Vec<f64>,
}

impl T2Workspace {
    pub fn new(d: usize) -> Self {
        Self { d, mean_x: vec![0.0; d], mean_y: vec![0.0; d], scale: vec![0.0; d * d] }
    }

    fn resize(&mut self, d: usize) {
        if self.d != d {
            *self = Self::new(d);
        }
    }

    /// Two-sample T² of row-major group buffers of sizes `n1` and `n2`.
    /// Sizes are assumed to satisfy [`check_sizes`].
    pub fn two_sample(&mut self, x: &[f64], n1: usize, y: &[f64], n2: usize, d: usize) -> Result<f64> {
        if d == 1 {
            let (diff, scale) = univariate_parts(x, y);
            if !(scale > 0.0) {
                return Err(Error::SingularScale { block: None });
            }
            return Ok(diff * diff / scale);
        }
        self.resize(d);
        self.scale.fill(0.0);
        let (n1f, n2f) = (n1 as f64, n2 as f64);
        accumulate_mean_cross(x, n1, d, &mut self.mean_x, &mut self.scale, 1.0 / (n1f * n1f));
        accumulate_mean_cross(y, n2, d, &mut self.mean_y, &mut self.scale, 1.0 / (n2f * n2f));
        cholesky_in_place(&mut self.scale, d).map_err(|_| Error::SingularScale { block: None })?;
        for (a, b) in self.mean_x.iter_mut().zip(&self.mean_y) {
            *a -= b;
        }
        Ok(forward_sq_norm(&self.scale, d, &mut self.mean_x))
    }
}

/// Mean difference and pooled scale `v₁/n₁ + v₂/n₂` for scalar samples.
#[inline]
fn univariate_parts(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    (mx - my, vx / x.len() as f64 + vy / y.len() as f64)
}

#[inline]
fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / n)
}

pub fn two_sample_t2(p: &BlockPair) -> Result<f64> {
    let d = p.d();
    T2Workspace::new(d).two_sample(&p.x.data, p.x.n, &p.y.data, p.y.n, d)
}

/// Signed two-sample t for a `d = 1` pair; its square is the `d = 1` T².
pub fn univariate_t(p: &BlockPair) -> Result<f64> {
    if p.d() != 1 {
        return Err(Error::DimensionMismatch(format!("univariate t needs d = 1, got d = {}", p.d())));
    }
    let (diff, scale) = univariate_parts(&p.x.data, &p.y.data);
    if !(scale > 0.0) {
        return Err(Error::SingularScale { block: None });
    }
    Ok(diff / scale.sqrt())
}

/// Signed t statistics of every coordinate of a pair, in coordinate order.
pub fn coordinate_ts(p: &BlockPair) -> Result<Vec<f64>> {
    (0..p.d()).map(|j| univariate_t(&p.coordinate(j))).collect()
}

/// `n (x̄ - μ₀)ᵀ V⁻¹ (x̄ - μ₀)` with the `1/n` covariance `V`.
pub fn one_sample_t2(b: &SampleBlock, mu0: &[f64]) -> Result<f64> {
    if mu0.len() != b.d {
        return Err(Error::DimensionMismatch(format!("mu0 has length {}, block has d = {}", mu0.len(), b.d)));
    }
    if b.n <= b.d {
        return Err(Error::SingularScale { block: None });
    }
    let d = b.d;
    let mut mean = vec![0.0; d];
    let mut cross = vec![0.0; d * d];
    accumulate_mean_cross(&b.data, b.n, d, &mut mean, &mut cross, 1.0 / b.n as f64);
    cholesky_in_place(&mut cross, d).map_err(|_| Error::SingularScale { block: None })?;
    for (m, mu) in mean.iter_mut().zip(mu0) {
        *m -= mu;
    }
    Ok(b.n as f64 * forward_sq_norm(&cross, d, &mut mean))
}

/// Chi-squared calibrated p-value `P(χ²(d) >= t2)`.
pub fn chisq_pvalue(t2: f64, d: usize) -> Result<f64> {
    chisq_sf(d, t2)
}
