//! Symmetric positive definite solvers used by the Gram-matrix layer.
//!
//! Everything here is Cholesky-based: a banded factorization for Gram
//! matrices (bandwidth k - 1), a dense one for arbitrary index subsets, and
//! an append-only variant for subsets that grow one index at a time.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayD, Axis};

/// Symmetric banded matrix; `bands[[w, i]]` holds A[i, i+w] for w <= bandwidth.
#[derive(Debug, Clone)]
pub struct SymBanded {
    dim: usize,
    bandwidth: usize,
    bands: Array2<f64>,
}

impl SymBanded {
    pub fn zeros(dim: usize, bandwidth: usize) -> Self {
        SymBanded {
            dim,
            bandwidth,
            bands: Array2::zeros((bandwidth + 1, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        if hi - lo > self.bandwidth {
            0.0
        } else {
            self.bands[[hi - lo, lo]]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        assert!(hi - lo <= self.bandwidth, "entry outside the band");
        self.bands[[hi - lo, lo]] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        self.bands[[hi - lo, lo]] += v;
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.dim, self.dim));
        for i in 0..self.dim {
            for j in i..(i + self.bandwidth + 1).min(self.dim) {
                a[[i, j]] = self.get(i, j);
                a[[j, i]] = a[[i, j]];
            }
        }
        a
    }

    /// Quadratic form x^T A x.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            acc += self.bands[[0, i]] * x[i] * x[i];
            for w in 1..=self.bandwidth.min(self.dim - 1 - i) {
                acc += 2.0 * self.bands[[w, i]] * x[i] * x[i + w];
            }
        }
        acc
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            y[i] += self.bands[[0, i]] * x[i];
            for w in 1..=self.bandwidth.min(self.dim - 1 - i) {
                y[i] += self.bands[[w, i]] * x[i + w];
                y[i + w] += self.bands[[w, i]] * x[i];
            }
        }
        y
    }
}

/// Cholesky factor of a banded SPD matrix; `lower[[w, j]]` holds L[j+w, j].
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    dim: usize,
    bandwidth: usize,
    lower: Array2<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &SymBanded) -> Result<Self> {
        let n = a.dim;
        let bw = a.bandwidth;
        let mut l = Array2::zeros((bw + 1, n));
        for j in 0..n {
            let start = j.saturating_sub(bw);
            let mut s = a.bands[[0, j]];
            for m in start..j {
                let v = l[[j - m, m]];
                s -= v * v;
            }
            if s <= 0.0 || !s.is_finite() {
                return Err(Error::NotPositiveDefinite { row: j, pivot: s });
            }
            let d = s.sqrt();
            l[[0, j]] = d;
            for i in (j + 1)..(j + bw + 1).min(n) {
                let mut s = a.get(i, j);
                let start = i.saturating_sub(bw);
                for m in start.max(0)..j {
                    s -= l[[i - m, m]] * l[[j - m, m]];
                }
                l[[i - j, j]] = s / d;
            }
        }
        Ok(BandedCholesky {
            dim: n,
            bandwidth: bw,
            lower: l,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        let bw = self.bandwidth;
        for j in 0..n {
            b[j] /= self.lower[[0, j]];
            let v = b[j];
            for i in (j + 1)..(j + bw + 1).min(n) {
                b[i] -= self.lower[[i - j, j]] * v;
            }
        }
        for j in (0..n).rev() {
            let mut s = b[j];
            for i in (j + 1)..(j + bw + 1).min(n) {
                s -= self.lower[[i - j, j]] * b[i];
            }
            b[j] = s / self.lower[[0, j]];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Rough condition estimate from the extreme Cholesky pivots.
    pub fn condition_estimate(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for j in 0..self.dim {
            let d = self.lower[[0, j]];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (hi / lo) * (hi / lo)
    }
}

/// Dense Cholesky factorization for subset Gram matrices.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    l: Array2<f64>,
}

impl DenseCholesky {
    pub fn factor(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut s = a[[j, j]];
            for m in 0..j {
                s -= l[[j, m]] * l[[j, m]];
            }
            if s <= 0.0 || !s.is_finite() {
                return Err(Error::NotPositiveDefinite { row: j, pivot: s });
            }
            let d = s.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for m in 0..j {
                    s -= l[[i, m]] * l[[j, m]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(DenseCholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for j in 0..n {
            b[j] /= self.l[[j, j]];
            let v = b[j];
            for i in (j + 1)..n {
                b[i] -= self.l[[i, j]] * v;
            }
        }
        for j in (0..n).rev() {
            let mut s = b[j];
            for i in (j + 1)..n {
                s -= self.l[[i, j]] * b[i];
            }
            b[j] = s / self.l[[j, j]];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Full inverse by solving against identity columns, symmetrized.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.dim();
        let mut inv = Array2::<f64>::zeros((n, n));
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[[i, j]] = col[i];
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
                inv[[i, j]] = v;
                inv[[j, i]] = v;
            }
        }
        inv
    }

    pub fn condition_estimate(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for j in 0..self.dim() {
            let d = self.l[[j, j]];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (hi / lo) * (hi / lo)
    }
}

/// Cholesky factor of an SPD matrix that grows by one row/column at a time.
///
/// Appending costs O(n^2); the factor rows are stored ragged.
#[derive(Debug, Clone, Default)]
pub struct GrowingCholesky {
    rows: Vec<Vec<f64>>,
}

impl GrowingCholesky {
    pub fn new() -> Self {
        GrowingCholesky { rows: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Appends the new matrix row: `off` contains A[new, i] for existing i,
    /// `diag` is A[new, new].
    pub fn push(&mut self, off: &[f64], diag: f64) -> Result<()> {
        let n = self.dim();
        assert_eq!(off.len(), n, "off-diagonal row length mismatch");
        // Forward solve L y = off.
        let mut y = off.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for m in 0..i {
                s -= self.rows[i][m] * y[m];
            }
            y[i] = s / self.rows[i][i];
        }
        let s = diag - y.iter().map(|v| v * v).sum::<f64>();
        if s <= 0.0 || !s.is_finite() {
            return Err(Error::NotPositiveDefinite { row: n, pivot: s });
        }
        y.push(s.sqrt());
        self.rows.push(y);
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for m in 0..i {
                s -= self.rows[i][m] * x[m];
            }
            x[i] = s / self.rows[i][i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.rows[j][i] * x[j];
            }
            x[i] = s / self.rows[i][i];
        }
        x
    }

    /// Solves A z = e_last; `z[last]` is then 1 / (Schur complement), the
    /// squared reciprocal norm of the associated dual element.
    pub fn last_inverse_column(&self) -> Vec<f64> {
        let n = self.dim();
        let mut x = vec![0.0; n];
        x[n - 1] = 1.0 / self.rows[n - 1][n - 1];
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.rows[j][i] * x[j];
            }
            x[i] = s / self.rows[i][i];
        }
        x
    }
}

/// Contracts `matrix` against `tensor` along `axis`:
/// out[..., r, ...] = sum_c matrix[r, c] * tensor[..., c, ...].
pub fn apply_matrix_along_axis(
    tensor: &ArrayD<f64>,
    matrix: &Array2<f64>,
    axis: usize,
) -> ArrayD<f64> {
    assert_eq!(tensor.shape()[axis], matrix.ncols(), "axis length mismatch");
    let mut out_shape: Vec<usize> = tensor.shape().to_vec();
    out_shape[axis] = matrix.nrows();
    let mut out = ArrayD::<f64>::zeros(out_shape);
    for (lane_in, mut lane_out) in tensor
        .lanes(Axis(axis))
        .into_iter()
        .zip(out.lanes_mut(Axis(axis)))
    {
        for r in 0..matrix.nrows() {
            let mut acc = 0.0;
            for c in 0..matrix.ncols() {
                acc += matrix[[r, c]] * lane_in[c];
            }
            lane_out[r] = acc;
        }
    }
    out
}

/// Solves the banded system along every lane of `axis` in place.
pub fn solve_along_axis(tensor: &mut ArrayD<f64>, chol: &BandedCholesky, axis: usize) {
    let mut buf = vec![0.0; tensor.shape()[axis]];
    for mut lane in tensor.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        chol.solve_in_place(&mut buf);
        for (v, b) in lane.iter_mut().zip(&buf) {
            *v = *b;
        }
    }
}
