//! Dense symmetric-matrix kernels.
//!
//! Matrices are stored in full row-major form. The block dimensions handled by
//! the Hotelling statistics are tiny (1 to 64), while data-generation
//! covariances go up to a few thousand rows, so everything here is plain
//! loops over contiguous slices.

use crate::error::{Error, Result};

/// Relative pivot floor for Cholesky: a pivot at or below `PIVOT_FLOOR * trace`
/// is treated as singular.
pub const PIVOT_FLOOR: f64 = 1e-14;

/// Eigenvalues in `[-PSD_CLAMP * ||S||_F, 0)` are treated as rounding noise.
pub const PSD_CLAMP: f64 = 1e-10;

/// Jacobi sweeps stop once the off-diagonal Frobenius norm drops below
/// `JACOBI_TOL * ||S||_F`.
pub const JACOBI_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self::from_fn(values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    /// Builds a matrix by evaluating `f` on the upper triangle and mirroring it.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Validates symmetry (exact equality) of a row-major square array.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {dim}x{dim} entries, got {}",
                data.len()
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(Error::InvalidInput(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("rows must form a square matrix".into()));
        }
        Self::from_row_major(dim, rows.concat())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|v| v * c).collect() }
    }

    /// `self * self`, which is symmetric because `self` is.
    pub fn square(&self) -> Self {
        let n = self.dim;
        Self::from_fn(n, |i, j| dot(self.row(i), self.row(j)))
    }

    /// Row vector times matrix: `out = z * self`.
    pub fn left_mul_into(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        out.fill(0.0);
        for (k, &zk) in z.iter().enumerate() {
            if zk == 0.0 {
                continue;
            }
            for (o, &r) in out.iter_mut().zip(self.row(k)) {
                *o += zk * r;
            }
        }
    }
}

/// Lower-triangular Cholesky factor, full row-major storage with zeros above
/// the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Reconstructs `L * L^T`.
    pub fn gram(&self) -> SymMatrix {
        let n = self.dim;
        SymMatrix::from_fn(n, |i, j| {
            let k = i.min(j) + 1;
            dot(&self.data[i * n..i * n + k], &self.data[j * n..j * n + k])
        })
    }

    /// Squared norm of `L^{-1} v`, i.e. `v^T (L L^T)^{-1} v`.
    pub fn inv_sq_norm(&self, v: &[f64]) -> f64 {
        let mut work = v.to_vec();
        forward_sq_norm(&self.data, self.dim, &mut work)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cholesky(s: &SymMatrix) -> Result<LowerTriangular> {
    let n = s.dim;
    let mut data = s.data.clone();
    cholesky_in_place(&mut data, n)?;
    for i in 0..n {
        for j in (i + 1)..n {
            data[i * n + j] = 0.0;
        }
    }
    Ok(LowerTriangular { dim: n, data })
}

/// In-place lower Cholesky of a row-major `n x n` buffer. Only the lower
/// triangle is read and written; the strict upper triangle is left stale.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<()> {
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let floor = (PIVOT_FLOOR * trace).max(0.0);
    for j in 0..n {
        let (upper, below) = a.split_at_mut((j + 1) * n);
        let row_j = &mut upper[j * n..];
        let pivot = row_j[j] - dot(&row_j[..j], &row_j[..j]);
        if !(pivot > floor) {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let diag = pivot.sqrt();
        row_j[j] = diag;
        let row_j = &upper[j * n..];
        for row_i in below.chunks_exact_mut(n) {
            row_i[j] = (row_i[j] - dot(&row_i[..j], &row_j[..j])) / diag;
        }
    }
    Ok(())
}

/// Solves `L z = v` in place and returns `||z||^2`.
pub(crate) fn forward_sq_norm(l: &[f64], n: usize, v: &mut [f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let z = (v[i] - dot(row, &v[..i])) / l[i * n + i];
        v[i] = z;
        acc += z * z;
    }
    acc
}

/// `v^T S^{-1} v` through a Cholesky solve.
pub fn quad_form_inv(s: &SymMatrix, v: &[f64]) -> Result<f64> {
    if v.len() != s.dim {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} against {}x{} matrix",
            v.len(),
            s.dim,
            s.dim
        )));
    }
    Ok(cholesky(s)?.inv_sq_norm(v))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues, in no particular order.
    pub values: Vec<f64>,
    /// Row `k` of this row-major array is the unit eigenvector for `values[k]`.
    pub vectors: Vec<f64>,
    pub sweeps: usize,
}

pub fn sym_eigen(s: &SymMatrix) -> SymEigen {
    let n = s.dim;
    let mut a = s.data.clone();
    let mut vt = SymMatrix::identity(n).data;
    let target = JACOBI_TOL * s.frobenius_norm();
    let mut sweeps = 0;

    let off_norm = |a: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                acc += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        acc.sqrt()
    };

    while sweeps < MAX_SWEEPS && off_norm(&a) >= target && target > 0.0 {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // rotation is numerically a no-op
                if apq.abs() < 1e-300 || (apq.abs() * 1e18 < app.abs() && apq.abs() * 1e18 < aqq.abs()) {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;

                for k in 0..n {
                    let akp = a[p * n + k];
                    let akq = a[q * n + k];
                    a[p * n + k] = c * akp - sn * akq;
                    a[q * n + k] = sn * akp + c * akq;
                }
                for k in 0..n {
                    a[k * n + p] = a[p * n + k];
                    a[k * n + q] = a[q * n + k];
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                let (lo, hi) = vt.split_at_mut(q * n);
                let vp = &mut lo[p * n..(p + 1) * n];
                let vq = &mut hi[..n];
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - sn * xq;
                    *y = sn * xp + c * xq;
                }
            }
        }
    }

    SymEigen { values: (0..n).map(|i| a[i * n + i]).collect(), vectors: vt, sweeps }
}

/// Symmetric square root together with the number of clamped eigenvalues.
#[derive(Debug, Clone)]
pub struct SqrtReport {
    pub root: SymMatrix,
    pub clamped: usize,
}

pub fn sym_sqrt_report(s: &SymMatrix) -> Result<SqrtReport> {
    let n = s.dim;
    let eig = sym_eigen(s);
    let tolerance = PSD_CLAMP * s.frobenius_norm();
    let mut clamped = 0;
    let mut roots = Vec::with_capacity(n);
    for &lambda in &eig.values {
        if lambda < -tolerance {
            return Err(Error::NotPsd { eigenvalue: lambda, tolerance });
        }
        if lambda < 0.0 {
            clamped += 1;
            roots.push(0.0);
        } else {
            roots.push(lambda.sqrt());
        }
    }
    let mut root = SymMatrix::zeros(n);
    for (k, &r) in roots.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let v = &eig.vectors[k * n..(k + 1) * n];
        for i in 0..n {
            let w = r * v[i];
            if w == 0.0 {
                continue;
            }
            let row = &mut root.data[i * n..(i + 1) * n];
            for (dst, &vj) in row.iter_mut().zip(v) {
                *dst += w * vj;
            }
        }
    }
    // symmetrize away rounding asymmetry
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (root.data[i * n + j] + root.data[j * n + i]);
            root.data[i * n + j] = avg;
            root.data[j * n + i] = avg;
        }
    }
    Ok(SqrtReport { root, clamped })
}

pub fn sym_sqrt(s: &SymMatrix) -> Result<SymMatrix> {
    sym_sqrt_report(s).map(|r| r.root)
}
