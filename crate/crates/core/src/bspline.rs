//! Clamped B-spline bases over interval partitions.
//!
//! A basis of order k on a partition with m atoms has dimension m + k - 1;
//! boundary knots carry multiplicity k, interior breakpoints multiplicity 1,
//! so splines are C^{k-2} across interior breakpoints. Evaluation uses the
//! triangular recurrence; inner products use per-atom Gauss rules, which are
//! exact because all integrands are polynomials on atoms.

use crate::error::{Error, Result};
use crate::partition::Partition1D;
use crate::quadrature::{integrate_adaptive, GaussRule};
use ndarray::ArrayD;
use std::sync::Arc;

/// B-spline basis of order `k` (degree k - 1) on a fixed partition.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    k: usize,
    partition: Partition1D,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(partition: Partition1D, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidParameter("spline order must be >= 1".into()));
        }
        let mut knots = Vec::with_capacity(partition.atom_count() + 2 * k - 1);
        for _ in 0..k {
            knots.push(partition.left());
        }
        knots.extend_from_slice(partition.breakpoints());
        for _ in 0..k {
            knots.push(partition.right());
        }
        Ok(BSplineBasis {
            k,
            partition,
            knots,
        })
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn partition(&self) -> &Partition1D {
        &self.partition
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions: atoms + k - 1.
    pub fn dim(&self) -> usize {
        self.partition.atom_count() + self.k - 1
    }

    /// Values of the k basis functions that are nonzero on the atom
    /// containing `x`; returns the index of the first one.
    pub fn nonzero_at(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        let atom = self.partition.atom_of(x)?;
        Ok((atom, self.nonzero_on_atom(atom, x)))
    }

    /// Same as `nonzero_at` but with the atom fixed by the caller; `x` must
    /// lie in the closure of that atom.
    pub fn nonzero_on_atom(&self, atom: usize, x: f64) -> Vec<f64> {
        let p = self.k - 1;
        let span = atom + p;
        let t = &self.knots;
        let mut vals = vec![0.0; self.k];
        let mut left = vec![0.0; self.k];
        let mut right = vec![0.0; self.k];
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        vals
    }

    /// Value of basis function `i` at `x`.
    pub fn eval(&self, i: usize, x: f64) -> Result<f64> {
        if i >= self.dim() {
            return Err(Error::BasisIndex {
                index: i,
                dim: self.dim(),
            });
        }
        let (first, vals) = self.nonzero_at(x)?;
        if i < first || i >= first + self.k {
            return Ok(0.0);
        }
        Ok(vals[i - first])
    }

    /// Inclusive atom range [lo, hi] on which basis function `i` lives.
    pub fn support_atoms(&self, i: usize) -> Result<(usize, usize)> {
        if i >= self.dim() {
            return Err(Error::BasisIndex {
                index: i,
                dim: self.dim(),
            });
        }
        let lo = i.saturating_sub(self.k - 1);
        let hi = i.min(self.partition.atom_count() - 1);
        Ok((lo, hi))
    }

    /// Endpoints of the support interval of basis function `i`.
    pub fn support_interval(&self, i: usize) -> Result<(f64, f64)> {
        let (lo, hi) = self.support_atoms(i)?;
        Ok((self.partition.edges()[lo], self.partition.edges()[hi + 1]))
    }

    pub fn support_len(&self, i: usize) -> Result<f64> {
        let (a, b) = self.support_interval(i)?;
        Ok(b - a)
    }

    /// Leftmost atom of maximal length inside the support of function `i`.
    pub fn largest_support_atom(&self, i: usize) -> Result<usize> {
        let (lo, hi) = self.support_atoms(i)?;
        let mut best = lo;
        for a in lo..=hi {
            if self.partition.atom_len(a) > self.partition.atom_len(best) + 0.0 {
                best = a;
            }
        }
        Ok(best)
    }

    /// True if the two bases share order, interval and breakpoints.
    pub fn same_space(&self, other: &BSplineBasis) -> bool {
        self.k == other.k && self.partition == other.partition
    }
}

/// Index of the basis function added when atom `atom` of the coarse
/// partition is split, in the refined basis of order `k`. Its support
/// contains the split point in the interior.
pub fn inserted_index(k: usize, atom: usize) -> usize {
    k + atom - 1
}

/// A spline as a coefficient vector over a shared basis.
#[derive(Debug, Clone)]
pub struct Spline {
    basis: Arc<BSplineBasis>,
    coeffs: Vec<f64>,
}

impl Spline {
    pub fn new(basis: Arc<BSplineBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.dim() {
            return Err(Error::IncompatibleBases(format!(
                "coefficient count {} does not match dimension {}",
                coeffs.len(),
                basis.dim()
            )));
        }
        Ok(Spline { basis, coeffs })
    }

    pub fn zero(basis: Arc<BSplineBasis>) -> Self {
        let d = basis.dim();
        Spline {
            basis,
            coeffs: vec![0.0; d],
        }
    }

    pub fn basis(&self) -> &Arc<BSplineBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let (first, vals) = self.basis.nonzero_at(x)?;
        Ok(vals
            .iter()
            .enumerate()
            .map(|(r, v)| v * self.coeffs[first + r])
            .sum())
    }

    /// Evaluates with the atom pinned; used on atom closures where `atom_of`
    /// would pick the neighbouring atom.
    pub fn eval_on_atom(&self, atom: usize, x: f64) -> f64 {
        let vals = self.basis.nonzero_on_atom(atom, x);
        vals.iter()
            .enumerate()
            .map(|(r, v)| v * self.coeffs[atom + r])
            .sum()
    }

    pub fn scaled(&self, s: f64) -> Spline {
        Spline {
            basis: self.basis.clone(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn axpy(&mut self, a: f64, other: &Spline) -> Result<()> {
        if !self.basis.same_space(&other.basis) {
            return Err(Error::IncompatibleBases(
                "axpy requires identical bases".into(),
            ));
        }
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
        Ok(())
    }

    /// Re-expresses the spline on a finer basis whose breakpoints contain
    /// the current ones, by repeated single-knot insertion.
    pub fn refined_to(&self, finer: &Arc<BSplineBasis>) -> Result<Spline> {
        let k = self.basis.order();
        if finer.order() != k {
            return Err(Error::IncompatibleBases(
                "knot insertion requires equal orders".into(),
            ));
        }
        let coarse_p = self.basis.partition();
        let fine_p = finer.partition();
        if coarse_p.left() != fine_p.left() || coarse_p.right() != fine_p.right() {
            return Err(Error::IncompatibleBases(
                "knot insertion requires equal intervals".into(),
            ));
        }
        let coarse_set = coarse_p.breakpoints();
        let mut missing = Vec::new();
        {
            let mut it = coarse_set.iter().peekable();
            for &b in fine_p.breakpoints() {
                match it.peek() {
                    Some(&&c) if c == b => {
                        it.next();
                    }
                    _ => missing.push(b),
                }
            }
            if it.peek().is_some() {
                return Err(Error::IncompatibleBases(
                    "target breakpoints do not contain the current ones".into(),
                ));
            }
        }
        let mut knots = self.basis.knots().to_vec();
        let mut coeffs = self.coeffs.clone();
        for x in missing {
            insert_knot(k, &mut knots, &mut coeffs, x);
        }
        Spline::new(finer.clone(), coeffs)
    }

    /// L^p norm for 1 <= p <= infinity.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "L^p norm requires p >= 1, got {p}"
            )));
        }
        let part = self.basis.partition();
        if p.is_infinite() {
            let mut best = 0.0f64;
            for a in 0..part.atom_count() {
                let (lo, hi) = part.atom(a)?;
                best = best.max(self.atom_sup(a, lo, hi));
            }
            return Ok(best);
        }
        let k = self.basis.order();
        let even = p.fract() == 0.0 && (p as u64) % 2 == 0;
        let mut acc = 0.0;
        if even {
            let deg = (p as usize) * (k - 1);
            let rule = GaussRule::new(deg / 2 + 1);
            for a in 0..part.atom_count() {
                let (lo, hi) = part.atom(a)?;
                acc += rule.integrate(lo, hi, |x| self.eval_on_atom(a, x).powf(p));
            }
        } else {
            for a in 0..part.atom_count() {
                let (lo, hi) = part.atom(a)?;
                acc += integrate_adaptive(
                    &|x| self.eval_on_atom(a, x).abs().powf(p),
                    lo,
                    hi,
                    1e-12,
                );
            }
        }
        Ok(acc.max(0.0).powf(1.0 / p))
    }

    /// Sup of |f| over one atom: dense Chebyshev sampling followed by a
    /// golden-section polish around the best sample.
    fn atom_sup(&self, atom: usize, lo: f64, hi: f64) -> f64 {
        const SAMPLES: usize = 33;
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let mut xs = Vec::with_capacity(SAMPLES + 2);
        xs.push(lo);
        for i in 0..SAMPLES {
            let theta = std::f64::consts::PI * (i as f64 + 0.5) / SAMPLES as f64;
            xs.push(mid - half * theta.cos());
        }
        xs.push(hi);
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best_i = 0;
        let mut best_v = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            let v = self.eval_on_atom(atom, x).abs();
            if v > best_v {
                best_v = v;
                best_i = i;
            }
        }
        let a = if best_i == 0 { xs[0] } else { xs[best_i - 1] };
        let b = if best_i + 1 == xs.len() {
            xs[best_i]
        } else {
            xs[best_i + 1]
        };
        best_v.max(self.golden_max(atom, a, b))
    }

    fn golden_max(&self, atom: usize, mut a: f64, mut b: f64) -> f64 {
        const INV_PHI: f64 = 0.618_033_988_749_894_8;
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = self.eval_on_atom(atom, c).abs();
        let mut fd = self.eval_on_atom(atom, d).abs();
        for _ in 0..90 {
            if b - a < 1e-14 * (1.0 + a.abs() + b.abs()) {
                break;
            }
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = self.eval_on_atom(atom, c).abs();
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = self.eval_on_atom(atom, d).abs();
            }
        }
        fc.max(fd)
    }
}

fn insert_knot(k: usize, knots: &mut Vec<f64>, coeffs: &mut Vec<f64>, x: f64) {
    // Span s with t[s] <= x < t[s+1], leftmost occurrence of x after insert.
    let s = knots.partition_point(|&t| t <= x) - 1;
    let p = k - 1;
    let n = coeffs.len();
    let mut out = vec![0.0; n + 1];
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = if j + p <= s {
            coeffs[j]
        } else if j <= s {
            if p == 0 {
                coeffs[j]
            } else {
                let denom = knots[j + p] - knots[j];
                let alpha = if denom > 0.0 {
                    (x - knots[j]) / denom
                } else {
                    0.0
                };
                alpha * coeffs[j] + (1.0 - alpha) * coeffs[j - 1]
            }
        } else {
            coeffs[j - 1]
        };
    }
    knots.insert(s + 1, x);
    *coeffs = out;
}

/// Integral of f * g over the intersection of their intervals, by Gauss
/// quadrature on the merged breakpoint grid. Exact for any pair of orders.
pub fn mixed_inner_1d(f: &Spline, g: &Spline) -> f64 {
    let pf = f.basis().partition();
    let pg = g.basis().partition();
    let lo = pf.left().max(pg.left());
    let hi = pf.right().min(pg.right());
    if lo >= hi {
        return 0.0;
    }
    let mut edges: Vec<f64> = pf
        .edges()
        .iter()
        .chain(pg.edges())
        .copied()
        .filter(|&e| e > lo && e < hi)
        .collect();
    edges.push(lo);
    edges.push(hi);
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup();
    let deg = (f.basis().order() - 1) + (g.basis().order() - 1);
    let rule = GaussRule::new(deg / 2 + 1);
    let mut acc = 0.0;
    for w in edges.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let fa = pf.atom_of(mid).unwrap();
        let ga = pg.atom_of(mid).unwrap();
        acc += rule.integrate(w[0], w[1], |x| f.eval_on_atom(fa, x) * g.eval_on_atom(ga, x));
    }
    acc
}

/// Tensor-product spline: a d-dimensional coefficient array over per-direction bases.
#[derive(Debug, Clone)]
pub struct TensorSpline {
    bases: Vec<Arc<BSplineBasis>>,
    coeffs: ArrayD<f64>,
}

impl TensorSpline {
    pub fn new(bases: Vec<Arc<BSplineBasis>>, coeffs: ArrayD<f64>) -> Result<Self> {
        let shape: Vec<usize> = bases.iter().map(|b| b.dim()).collect();
        if coeffs.shape() != shape.as_slice() {
            return Err(Error::IncompatibleBases(format!(
                "coefficient shape {:?} does not match basis dimensions {:?}",
                coeffs.shape(),
                shape
            )));
        }
        Ok(TensorSpline { bases, coeffs })
    }

    pub fn zero(bases: Vec<Arc<BSplineBasis>>) -> Self {
        let shape: Vec<usize> = bases.iter().map(|b| b.dim()).collect();
        TensorSpline {
            coeffs: ArrayD::zeros(shape),
            bases,
        }
    }

    /// Rank-one tensor from per-direction coefficient vectors.
    pub fn rank_one(bases: Vec<Arc<BSplineBasis>>, factors: &[Vec<f64>]) -> Result<Self> {
        let shape: Vec<usize> = bases.iter().map(|b| b.dim()).collect();
        for (f, s) in factors.iter().zip(&shape) {
            if f.len() != *s {
                return Err(Error::IncompatibleBases(
                    "factor length does not match basis dimension".into(),
                ));
            }
        }
        let mut coeffs = ArrayD::zeros(shape);
        for (idx, slot) in coeffs.indexed_iter_mut() {
            let mut v = 1.0;
            for (d, f) in factors.iter().enumerate() {
                v *= f[idx[d]];
            }
            *slot = v;
        }
        Ok(TensorSpline { bases, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[Arc<BSplineBasis>] {
        &self.bases
    }

    pub fn coeffs(&self) -> &ArrayD<f64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut ArrayD<f64> {
        &mut self.coeffs
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                got: x.len(),
                expected: self.dim(),
            });
        }
        let mut firsts = Vec::with_capacity(self.dim());
        let mut vals = Vec::with_capacity(self.dim());
        for (d, b) in self.bases.iter().enumerate() {
            let (f, v) = b.nonzero_at(x[d])?;
            firsts.push(f);
            vals.push(v);
        }
        let mut acc = 0.0;
        let mut idx = vec![0usize; self.dim()];
        loop {
            let mut w = 1.0;
            let mut full = Vec::with_capacity(self.dim());
            for d in 0..self.dim() {
                w *= vals[d][idx[d]];
                full.push(firsts[d] + idx[d]);
            }
            acc += w * self.coeffs[full.as_slice()];
            // odometer over the k-box of nonzero functions
            let mut d = 0;
            loop {
                if d == self.dim() {
                    return Ok(acc);
                }
                idx[d] += 1;
                if idx[d] < vals[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> TensorSpline {
        TensorSpline {
            bases: self.bases.clone(),
            coeffs: &self.coeffs * s,
        }
    }

    pub fn axpy(&mut self, a: f64, other: &TensorSpline) -> Result<()> {
        if self.coeffs.shape() != other.coeffs.shape() {
            return Err(Error::IncompatibleBases(
                "axpy requires identical shapes".into(),
            ));
        }
        self.coeffs.zip_mut_with(&other.coeffs, |c, o| *c += a * o);
        Ok(())
    }
}
