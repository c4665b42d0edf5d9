//! Gram matrices of B-spline bases and their dual (biorthogonal) systems.
//!
//! Gram matrices are symmetric positive definite and banded with bandwidth
//! k - 1. Dual coefficients are rows of the inverse of a principal
//! submatrix; they inherit a checkerboard sign pattern and geometric decay
//! away from the diagonal, which `fit_decay` quantifies empirically.

use crate::bspline::{BSplineBasis, Spline};
use crate::error::{Error, Result};
use crate::fitting::{fit_envelope_decay, DecayFit};
use crate::linalg::{DenseCholesky, SymBanded};
use crate::quadrature::GaussRule;
use itertools::Itertools;
use ndarray::Array2;
use std::sync::Arc;

/// Tolerances for dual-system construction and sign checks.
#[derive(Debug, Clone)]
pub struct Tolerances {
    /// Max-norm residual allowed in A * G - I.
    pub residual: f64,
    /// Slack allowed when checking sign patterns.
    pub sign: f64,
    /// Relative pivot floor for the delete-one inverse update.
    pub pivot: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            residual: 1e-8,
            sign: 1e-10,
            pivot: 1e-12,
        }
    }
}

/// Gram matrix of a basis, stored banded.
pub fn gram_matrix(basis: &BSplineBasis) -> SymBanded {
    let k = basis.order();
    let part = basis.partition();
    let mut g = SymBanded::zeros(basis.dim(), k - 1);
    let rule = GaussRule::new(k);
    for a in 0..part.atom_count() {
        let (lo, hi) = part.atom(a).unwrap();
        let xs = rule.mapped_nodes(lo, hi);
        let ws = rule.mapped_weights(lo, hi);
        for (x, w) in xs.iter().zip(&ws) {
            let vals = basis.nonzero_on_atom(a, *x);
            for i in 0..k {
                for j in i..k {
                    g.add(a + i, a + j, w * vals[i] * vals[j]);
                }
            }
        }
    }
    g
}

/// Matrix of inner products `<rows_i, cols_j>` between two bases on the
/// same interval, via quadrature on the merged breakpoint grid.
pub fn mixed_gram(rows: &BSplineBasis, cols: &BSplineBasis) -> Result<Array2<f64>> {
    let pr = rows.partition();
    let pc = cols.partition();
    if pr.left() != pc.left() || pr.right() != pc.right() {
        return Err(Error::IncompatibleBases(
            "mixed Gram matrix requires equal intervals".into(),
        ));
    }
    let mut edges: Vec<f64> = pr.edges().iter().chain(pc.edges()).copied().collect();
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup();
    let deg = (rows.order() - 1) + (cols.order() - 1);
    let rule = GaussRule::new(deg / 2 + 1);
    let mut m = Array2::<f64>::zeros((rows.dim(), cols.dim()));
    for w in edges.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let ra = pr.atom_of(mid).unwrap();
        let ca = pc.atom_of(mid).unwrap();
        let xs = rule.mapped_nodes(w[0], w[1]);
        let qs = rule.mapped_weights(w[0], w[1]);
        for (x, q) in xs.iter().zip(&qs) {
            let rv = rows.nonzero_on_atom(ra, *x);
            let cv = cols.nonzero_on_atom(ca, *x);
            for (i, rvi) in rv.iter().enumerate() {
                for (j, cvj) in cv.iter().enumerate() {
                    m[[ra + i, ca + j]] += q * rvi * cvj;
                }
            }
        }
    }
    Ok(m)
}

/// Inverse of a principal submatrix of a Gram matrix, giving the
/// coefficients of the dual functions of the selected B-splines.
#[derive(Debug, Clone)]
pub struct DualSystem {
    /// Selected original indices, strictly increasing.
    pub subset: Vec<usize>,
    /// Inverse of G(subset, subset), in subset order.
    pub inverse: Array2<f64>,
    /// Max-norm residual of inverse * G(subset, subset) - I.
    pub residual: f64,
    /// Envelope decay fit of the coefficients, if computed.
    pub decay: Option<DecayFit>,
}

impl DualSystem {
    /// Dual function of subset member `pos` as a spline on `basis`.
    pub fn dual_function(&self, basis: &Arc<BSplineBasis>, pos: usize) -> Result<Spline> {
        if pos >= self.subset.len() {
            return Err(Error::BasisIndex {
                index: pos,
                dim: self.subset.len(),
            });
        }
        let mut coeffs = vec![0.0; basis.dim()];
        for (q, &j) in self.subset.iter().enumerate() {
            coeffs[j] = self.inverse[[pos, q]];
        }
        Spline::new(basis.clone(), coeffs)
    }

    /// Most negative value of (-1)^{i+j} a_ij over the coefficient matrix;
    /// nonnegative values mean the checkerboard sign pattern holds.
    pub fn checkerboard_min(&self) -> f64 {
        let n = self.subset.len();
        let mut worst = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                worst = worst.min(sign * self.inverse[[i, j]]);
            }
        }
        worst
    }
}

fn principal_submatrix(g: &SymBanded, subset: &[usize]) -> Array2<f64> {
    let n = subset.len();
    let mut a = Array2::<f64>::zeros((n, n));
    for (p, &i) in subset.iter().enumerate() {
        for (q, &j) in subset.iter().enumerate() {
            a[[p, q]] = g.get(i, j);
        }
    }
    a
}

/// Computes the dual coefficients for `subset` (all indices if `None`).
pub fn dual_coefficients(
    g: &SymBanded,
    subset: Option<&[usize]>,
    tol: &Tolerances,
) -> Result<DualSystem> {
    let subset: Vec<usize> = match subset {
        Some(s) => {
            for w in s.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::InvalidParameter(
                        "subset must be strictly increasing".into(),
                    ));
                }
            }
            if let Some(&last) = s.last() {
                if last >= g.dim() {
                    return Err(Error::BasisIndex {
                        index: last,
                        dim: g.dim(),
                    });
                }
            }
            if s.is_empty() {
                return Err(Error::InvalidParameter("subset must be nonempty".into()));
            }
            s.to_vec()
        }
        None => (0..g.dim()).collect(),
    };
    let sub = principal_submatrix(g, &subset);
    let chol = DenseCholesky::factor(&sub).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::IllConditioned {
            cond: f64::INFINITY,
        },
        other => other,
    })?;
    let inverse = chol.inverse();
    let n = subset.len();
    let prod = inverse.dot(&sub);
    let mut residual = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            residual = residual.max((prod[[i, j]] - want).abs());
        }
    }
    if residual > tol.residual {
        return Err(Error::IllConditioned {
            cond: chol.condition_estimate(),
        });
    }
    Ok(DualSystem {
        subset,
        inverse,
        residual,
        decay: None,
    })
}

/// Removes index position `ell` from an inverse matrix by the rank-one
/// update E(i,j) = D(i,j) - D(i,ell) D(ell,j) / D(ell,ell), where D is the
/// inverse of the larger principal submatrix.
pub fn inverse_delete_update(inv: &Array2<f64>, ell: usize, tol: &Tolerances) -> Result<Array2<f64>> {
    let n = inv.nrows();
    if ell >= n {
        return Err(Error::BasisIndex { index: ell, dim: n });
    }
    let pivot = inv[[ell, ell]];
    let scale = (0..n).map(|i| inv[[i, i]].abs()).fold(0.0f64, f64::max);
    if pivot.abs() <= tol.pivot * scale.max(1e-300) {
        return Err(Error::ZeroPivot {
            index: ell,
            value: pivot,
        });
    }
    let mut out = Array2::<f64>::zeros((n - 1, n - 1));
    for i in 0..n - 1 {
        let ii = if i < ell { i } else { i + 1 };
        for j in 0..n - 1 {
            let jj = if j < ell { j } else { j + 1 };
            out[[i, j]] = inv[[ii, jj]] - inv[[ii, ell]] * inv[[ell, jj]] / pivot;
        }
    }
    Ok(out)
}

/// Report of an exhaustive minor scan.
#[derive(Debug, Clone)]
pub struct TotalPositivityReport {
    /// Smallest minor value encountered.
    pub min_minor: f64,
    /// Number of minors evaluated.
    pub minors_checked: usize,
    /// True when no minor fell below -slack.
    pub certified: bool,
}

/// Checks all square minors up to `max_order` for nonnegativity.
///
/// The scan is exponential, so matrices larger than 12 x 12 are rejected.
pub fn certify_total_positivity(
    a: &Array2<f64>,
    max_order: usize,
    slack: f64,
) -> Result<TotalPositivityReport> {
    const LIMIT: usize = 12;
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidParameter("matrix must be square".into()));
    }
    if n > LIMIT {
        return Err(Error::MinorLimit { n, max: LIMIT });
    }
    let max_order = max_order.min(n).max(1);
    let mut min_minor = f64::INFINITY;
    let mut count = 0usize;
    for r in 1..=max_order {
        for rows in (0..n).combinations(r) {
            for cols in (0..n).combinations(r) {
                let mut sub = Array2::<f64>::zeros((r, r));
                for (p, &i) in rows.iter().enumerate() {
                    for (q, &j) in cols.iter().enumerate() {
                        sub[[p, q]] = a[[i, j]];
                    }
                }
                min_minor = min_minor.min(det_in_place(sub));
                count += 1;
            }
        }
    }
    Ok(TotalPositivityReport {
        min_minor,
        minors_checked: count,
        certified: min_minor >= -slack,
    })
}

fn det_in_place(mut a: Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut det = 1.0;
    for c in 0..n {
        let mut p = c;
        for r in c + 1..n {
            if a[[r, c]].abs() > a[[p, c]].abs() {
                p = r;
            }
        }
        if a[[p, c]] == 0.0 {
            return 0.0;
        }
        if p != c {
            for j in 0..n {
                let t = a[[c, j]];
                a[[c, j]] = a[[p, j]];
                a[[p, j]] = t;
            }
            det = -det;
        }
        det *= a[[c, c]];
        for r in c + 1..n {
            let f = a[[r, c]] / a[[c, c]];
            for j in c..n {
                a[[r, j]] -= f * a[[c, j]];
            }
        }
    }
    det
}

/// Fits the envelope of |a_ij| * |conv(F_i, F_j)| against the index
/// distance |i - j|, storing the result on the dual system.
///
/// Fails when the fitted ratio does not decay (q >= 1).
pub fn fit_decay(ds: &mut DualSystem, basis: &BSplineBasis) -> Result<DecayFit> {
    let n = ds.subset.len();
    let mut pts = Vec::with_capacity(n * n);
    for p in 0..n {
        let (alo, ahi) = basis.support_interval(ds.subset[p])?;
        for q in 0..n {
            let (blo, bhi) = basis.support_interval(ds.subset[q])?;
            let conv = bhi.max(ahi) - blo.min(alo);
            let dist = ds.subset[p].abs_diff(ds.subset[q]);
            pts.push((dist, ds.inverse[[p, q]].abs() * conv));
        }
    }
    let fit = fit_envelope_decay(pts);
    if fit.q >= 1.0 {
        return Err(Error::Degenerate(format!(
            "dual coefficients do not decay: fitted ratio {:.4}",
            fit.q
        )));
    }
    ds.decay = Some(fit.clone());
    Ok(fit)
}
