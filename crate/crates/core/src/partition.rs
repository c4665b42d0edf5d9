//! Interval partitions and their one-split-at-a-time refinement histories.
//!
//! A `Partition1D` divides an interval [a, b) into finitely many half-open
//! atoms; the rightmost atom additionally contains b. A `Filtration1D`
//! records an ordered sequence of single-atom splits, and `TensorFiltration`
//! combines d such factor histories through a schedule that names which
//! direction is refined at every global step. All indices are 0-based and
//! atoms are ordered left to right.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Smallest admissible atom length relative to the interval length.
pub const MIN_ATOM_REL: f64 = 1e-12;

/// An interval [a, b) split into consecutive half-open atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition1D {
    edges: Vec<f64>,
}

impl Partition1D {
    /// Single-atom partition of [left, right).
    pub fn trivial(left: f64, right: f64) -> Result<Self> {
        Self::new(left, right, &[])
    }

    /// Partition with the given strictly increasing interior breakpoints.
    pub fn new(left: f64, right: f64, breakpoints: &[f64]) -> Result<Self> {
        if !left.is_finite() || !right.is_finite() || left >= right {
            return Err(Error::InvalidPartition(format!(
                "interval [{left}, {right}) is empty or not finite"
            )));
        }
        let mut edges = Vec::with_capacity(breakpoints.len() + 2);
        edges.push(left);
        edges.extend_from_slice(breakpoints);
        edges.push(right);
        let span = right - left;
        for w in edges.windows(2) {
            if !w[1].is_finite() || w[1] - w[0] < MIN_ATOM_REL * span {
                return Err(Error::InvalidPartition(format!(
                    "edges {} and {} leave an atom below the minimum length {:.3e}",
                    w[0],
                    w[1],
                    MIN_ATOM_REL * span
                )));
            }
        }
        Ok(Partition1D { edges })
    }

    /// Uniform partition into `n` equal atoms.
    pub fn uniform(left: f64, right: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPartition("need at least one atom".into()));
        }
        let h = (right - left) / n as f64;
        let breaks: Vec<f64> = (1..n).map(|i| left + h * i as f64).collect();
        Self::new(left, right, &breaks)
    }

    pub fn left(&self) -> f64 {
        self.edges[0]
    }

    pub fn right(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    pub fn span(&self) -> f64 {
        self.right() - self.left()
    }

    pub fn atom_count(&self) -> usize {
        self.edges.len() - 1
    }

    /// Interior breakpoints, excluding the interval endpoints.
    pub fn breakpoints(&self) -> &[f64] {
        &self.edges[1..self.edges.len() - 1]
    }

    /// All edges including both endpoints.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Endpoints of atom `i`.
    pub fn atom(&self, i: usize) -> Result<(f64, f64)> {
        if i >= self.atom_count() {
            return Err(Error::AtomIndex {
                index: i,
                count: self.atom_count(),
            });
        }
        Ok((self.edges[i], self.edges[i + 1]))
    }

    pub fn atom_len(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn atom_midpoint(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// Index of the atom containing `x`.
    ///
    /// Interior edges belong to the atom on their right; the right endpoint
    /// of the interval belongs to the last atom.
    pub fn atom_of(&self, x: f64) -> Result<usize> {
        if !(x >= self.left() && x <= self.right()) {
            return Err(Error::OutOfDomain {
                x,
                left: self.left(),
                right: self.right(),
            });
        }
        if x == self.right() {
            return Ok(self.atom_count() - 1);
        }
        let idx = self.edges.partition_point(|&e| e <= x);
        Ok(idx - 1)
    }

    /// Splits atom `i` at `x`, returning the refined partition.
    pub fn refine(&self, i: usize, x: f64) -> Result<Partition1D> {
        if i >= self.atom_count() {
            return Err(Error::AtomIndex {
                index: i,
                count: self.atom_count(),
            });
        }
        let (lo, hi) = self.atom(i)?;
        if !x.is_finite() || x <= lo || x >= hi {
            return Err(Error::InvalidSplit {
                atom: i,
                x,
                reason: format!("must lie strictly inside ({lo}, {hi})"),
            });
        }
        let floor = MIN_ATOM_REL * self.span();
        if x - lo < floor || hi - x < floor {
            return Err(Error::InvalidSplit {
                atom: i,
                x,
                reason: format!("pieces would fall below the minimum length {floor:.3e}"),
            });
        }
        let mut edges = self.edges.clone();
        edges.insert(i + 1, x);
        Ok(Partition1D { edges })
    }
}

/// One refinement step: atom `atom` of the current partition is split at `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub atom: usize,
    pub x: f64,
}

/// A base partition together with the splits applied to it, one per step.
#[derive(Debug, Clone)]
pub struct Filtration1D {
    splits: Vec<Split>,
    stages: Vec<Partition1D>,
}

impl Filtration1D {
    pub fn new(base: Partition1D) -> Self {
        Filtration1D {
            splits: Vec::new(),
            stages: vec![base],
        }
    }

    /// Replays `splits` on `base`, validating every stage.
    pub fn from_splits(base: Partition1D, splits: &[Split]) -> Result<Self> {
        let mut f = Filtration1D::new(base);
        for s in splits {
            f.push_split(*s)?;
        }
        Ok(f)
    }

    pub fn push_split(&mut self, split: Split) -> Result<()> {
        let next = self.current().refine(split.atom, split.x)?;
        self.splits.push(split);
        self.stages.push(next);
        Ok(())
    }

    /// Number of refinement steps applied so far.
    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn base(&self) -> &Partition1D {
        &self.stages[0]
    }

    pub fn current(&self) -> &Partition1D {
        self.stages.last().unwrap()
    }

    /// Partition after `step` splits (step 0 is the base).
    pub fn stage(&self, step: usize) -> Result<&Partition1D> {
        self.stages.get(step).ok_or(Error::StepRange {
            step,
            len: self.len(),
        })
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Indices of the two atoms produced by split number `step` (1-based),
    /// as atoms of the stage-`step` partition.
    pub fn split_children(&self, step: usize) -> Result<(usize, usize)> {
        if step == 0 || step > self.len() {
            return Err(Error::StepRange {
                step,
                len: self.len(),
            });
        }
        let atom = self.splits[step - 1].atom;
        Ok((atom, atom + 1))
    }

    /// Atom of the stage-`t` partition containing atom `i` of stage `s` (t <= s).
    pub fn ancestor_atom(&self, s: usize, i: usize, t: usize) -> Result<usize> {
        let fine = self.stage(s)?;
        let coarse = self.stage(t)?;
        if t > s {
            return Err(Error::StepRange { step: t, len: s });
        }
        coarse.atom_of(fine.atom_midpoint(i))
    }
}

/// Per-direction atom indices identifying one rectangular atom.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomRef(pub Vec<usize>);

impl AtomRef {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl std::fmt::Display for AtomRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// One global refinement step of a tensor filtration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorStep {
    /// Direction whose factor is refined.
    pub dir: usize,
    /// Atom index within that factor's current partition.
    pub atom: usize,
    /// Split point.
    pub x: f64,
}

/// A d-dimensional filtration: every global step splits exactly one atom of
/// exactly one factor. All factors start from the trivial partition.
#[derive(Debug, Clone)]
pub struct TensorFiltration {
    factors: Vec<Filtration1D>,
    steps: Vec<TensorStep>,
    /// Per global step, how many splits each factor has absorbed.
    factor_steps: Vec<Vec<usize>>,
}

impl TensorFiltration {
    /// Trivial filtration over the product of the given intervals.
    pub fn new(intervals: &[(f64, f64)]) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one direction".into(),
            ));
        }
        let factors = intervals
            .iter()
            .map(|&(a, b)| Ok(Filtration1D::new(Partition1D::trivial(a, b)?)))
            .collect::<Result<Vec<_>>>()?;
        let dim = factors.len();
        Ok(TensorFiltration {
            factors,
            steps: Vec::new(),
            factor_steps: vec![vec![0; dim]],
        })
    }

    pub fn from_steps(intervals: &[(f64, f64)], steps: &[TensorStep]) -> Result<Self> {
        let mut f = TensorFiltration::new(intervals)?;
        for s in steps {
            f.push_step(*s)?;
        }
        Ok(f)
    }

    pub fn push_step(&mut self, step: TensorStep) -> Result<()> {
        if step.dir >= self.dim() {
            return Err(Error::Direction {
                dir: step.dir,
                dim: self.dim(),
            });
        }
        self.factors[step.dir].push_split(Split {
            atom: step.atom,
            x: step.x,
        })?;
        self.steps.push(step);
        let mut counts = self.factor_steps.last().unwrap().clone();
        counts[step.dir] += 1;
        self.factor_steps.push(counts);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    /// Number of global steps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[TensorStep] {
        &self.steps
    }

    pub fn factor(&self, dir: usize) -> &Filtration1D {
        &self.factors[dir]
    }

    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.factors
            .iter()
            .map(|f| (f.base().left(), f.base().right()))
            .collect()
    }

    /// Per-direction split counts after `step` global steps.
    pub fn factor_steps(&self, step: usize) -> Result<&[usize]> {
        self.factor_steps
            .get(step)
            .map(|v| v.as_slice())
            .ok_or(Error::StepRange {
                step,
                len: self.len(),
            })
    }

    /// Factor partition in direction `dir` after `step` global steps.
    pub fn factor_stage(&self, step: usize, dir: usize) -> Result<&Partition1D> {
        if dir >= self.dim() {
            return Err(Error::Direction {
                dir,
                dim: self.dim(),
            });
        }
        let counts = self.factor_steps(step)?;
        self.factors[dir].stage(counts[dir])
    }

    /// Direction refined by global step `step` (1-based step number).
    pub fn split_dir(&self, step: usize) -> Result<usize> {
        if step == 0 || step > self.len() {
            return Err(Error::StepRange {
                step,
                len: self.len(),
            });
        }
        Ok(self.steps[step - 1].dir)
    }

    /// The two child atoms of step `step` in the refined direction, as atom
    /// indices of that factor's stage-`step` partition.
    pub fn split_children(&self, step: usize) -> Result<(usize, usize)> {
        let dir = self.split_dir(step)?;
        let counts = self.factor_steps(step)?;
        self.factors[dir].split_children(counts[dir])
    }

    /// Per-direction atom counts after `step` global steps.
    pub fn atom_counts(&self, step: usize) -> Result<Vec<usize>> {
        (0..self.dim())
            .map(|d| Ok(self.factor_stage(step, d)?.atom_count()))
            .collect()
    }

    pub fn total_atoms(&self, step: usize) -> Result<usize> {
        Ok(self.atom_counts(step)?.iter().product())
    }

    /// Atom containing the point `x`, after `step` global steps.
    pub fn atom_of(&self, step: usize, x: &[f64]) -> Result<AtomRef> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                got: x.len(),
                expected: self.dim(),
            });
        }
        let mut idx = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            idx.push(self.factor_stage(step, d)?.atom_of(x[d])?);
        }
        Ok(AtomRef(idx))
    }

    /// Componentwise index distance from atom `a` to atom `b` at `step`.
    pub fn atom_distance(&self, step: usize, a: &AtomRef, b: &AtomRef) -> Result<Vec<i64>> {
        let counts = self.atom_counts(step)?;
        for r in [a, b] {
            if r.dim() != self.dim() {
                return Err(Error::DimensionMismatch {
                    got: r.dim(),
                    expected: self.dim(),
                });
            }
            for (d, &i) in r.0.iter().enumerate() {
                if i >= counts[d] {
                    return Err(Error::AtomIndex {
                        index: i,
                        count: counts[d],
                    });
                }
            }
        }
        Ok(a.0
            .iter()
            .zip(&b.0)
            .map(|(&i, &j)| j as i64 - i as i64)
            .collect())
    }

    /// Rectangle (per-direction endpoints) of the atom `at` at `step`.
    pub fn atom_box(&self, step: usize, at: &AtomRef) -> Result<Vec<(f64, f64)>> {
        (0..self.dim())
            .map(|d| self.factor_stage(step, d)?.atom(at.0[d]))
            .collect()
    }

    pub fn atom_volume(&self, step: usize, at: &AtomRef) -> Result<f64> {
        Ok(self
            .atom_box(step, at)?
            .iter()
            .map(|(a, b)| b - a)
            .product())
    }
}

fn format_version_default() -> u32 {
    1
}

/// Serialized form of a tensor filtration.
#[derive(Debug, Serialize, Deserialize)]
pub struct FiltrationFile {
    #[serde(default = "format_version_default")]
    pub format_version: u32,
    pub dim: usize,
    pub intervals: Vec<[f64; 2]>,
    pub schedule: Vec<TensorStep>,
}

impl TensorFiltration {
    pub fn to_file(&self) -> FiltrationFile {
        FiltrationFile {
            format_version: 1,
            dim: self.dim(),
            intervals: self
                .intervals()
                .iter()
                .map(|&(a, b)| [a, b])
                .collect(),
            schedule: self.steps.clone(),
        }
    }

    pub fn from_file(file: &FiltrationFile) -> Result<Self> {
        if file.dim != file.intervals.len() {
            return Err(Error::InvalidParameter(format!(
                "dim {} does not match {} intervals",
                file.dim,
                file.intervals.len()
            )));
        }
        let intervals: Vec<(f64, f64)> = file.intervals.iter().map(|p| (p[0], p[1])).collect();
        TensorFiltration::from_steps(&intervals, &file.schedule)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FiltrationFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn atom_of_uses_right_atom_on_interior_edges() {
        let p = Partition1D::new(0.0, 1.0, &[0.25, 0.5]).unwrap();
        assert_eq!(p.atom_of(0.25).unwrap(), 1);
        assert_eq!(p.atom_of(0.5).unwrap(), 2);
        assert_eq!(p.atom_of(0.0).unwrap(), 0);
        assert_eq!(p.atom_of(1.0).unwrap(), 2);
        assert_eq!(p.atom_of(0.1).unwrap(), 0);
    }

    #[test]
    fn atom_of_rejects_outside_points() {
        let p = Partition1D::trivial(0.0, 1.0).unwrap();
        assert!(matches!(p.atom_of(-0.1), Err(Error::OutOfDomain { .. })));
        assert!(matches!(p.atom_of(1.5), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn refine_rejects_boundary_and_outside_points() {
        let p = Partition1D::new(0.0, 1.0, &[0.5]).unwrap();
        assert!(p.refine(0, 0.0).is_err());
        assert!(p.refine(0, 0.5).is_err());
        assert!(p.refine(1, 0.4).is_err());
        assert!(p.refine(2, 0.7).is_err());
        let refined = p.refine(1, 0.75).unwrap();
        assert_eq!(refined.breakpoints(), &[0.5, 0.75]);
    }

    #[test]
    fn refine_rejects_degenerate_pieces() {
        let p = Partition1D::trivial(0.0, 1.0).unwrap();
        assert!(p.refine(0, 1e-15).is_err());
        assert!(p.refine(0, 1.0 - 1e-15).is_err());
    }

    #[test]
    fn filtration_replay_is_deterministic() {
        let base = Partition1D::trivial(-1.0, 1.0).unwrap();
        let splits = [
            Split { atom: 0, x: 0.25 },
            Split { atom: 0, x: -0.5 },
            Split { atom: 2, x: 0.5 },
        ];
        let f = Filtration1D::from_splits(base.clone(), &splits).unwrap();
        let g = Filtration1D::from_splits(base, &splits).unwrap();
        assert_eq!(f.current(), g.current());
        assert_eq!(f.current().atom_count(), 4);
        assert_eq!(f.split_children(2).unwrap(), (0, 1));
    }

    #[test]
    fn tensor_standard_form_counts() {
        let mut tf = TensorFiltration::new(&[(0.0, 1.0), (0.0, 2.0)]).unwrap();
        tf.push_step(TensorStep {
            dir: 0,
            atom: 0,
            x: 0.5,
        })
        .unwrap();
        tf.push_step(TensorStep {
            dir: 1,
            atom: 0,
            x: 1.0,
        })
        .unwrap();
        tf.push_step(TensorStep {
            dir: 0,
            atom: 1,
            x: 0.75,
        })
        .unwrap();
        assert_eq!(tf.atom_counts(0).unwrap(), vec![1, 1]);
        assert_eq!(tf.atom_counts(2).unwrap(), vec![2, 2]);
        assert_eq!(tf.atom_counts(3).unwrap(), vec![3, 2]);
        // Each step multiplies the total count by (m+1)/m in one direction.
        for n in 1..=tf.len() {
            let before = tf.total_atoms(n - 1).unwrap();
            let after = tf.total_atoms(n).unwrap();
            let dir = tf.split_dir(n).unwrap();
            let m = tf.factor_stage(n - 1, dir).unwrap().atom_count();
            assert_eq!(after * m, before * (m + 1));
        }
    }

    #[test]
    fn atom_distance_is_componentwise_signed() {
        let mut tf = TensorFiltration::new(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        for (dir, x) in [(0, 0.2), (0, 0.4), (0, 0.6), (1, 0.3), (1, 0.7), (1, 0.9)] {
            let stage = tf.factor(dir).current().clone();
            let atom = stage.atom_of(x - 0.05).unwrap();
            tf.push_step(TensorStep { dir, atom, x }).unwrap();
        }
        let n = tf.len();
        let d = tf
            .atom_distance(n, &AtomRef(vec![1, 3]), &AtomRef(vec![3, 0]))
            .unwrap();
        assert_eq!(d, vec![2, -3]);
        // Out-of-range references are rejected.
        assert!(tf
            .atom_distance(1, &AtomRef(vec![1, 3]), &AtomRef(vec![0, 0]))
            .is_err());
    }

    #[test]
    fn midpoint_roundtrip_identifies_atoms() {
        let base = Partition1D::trivial(0.0, 1.0).unwrap();
        let mut f = Filtration1D::new(base);
        let xs = [0.3, 0.7, 0.15, 0.45, 0.85];
        for &x in &xs {
            let atom = f.current().atom_of(x).unwrap();
            f.push_split(Split { atom, x }).unwrap();
        }
        let p = f.current();
        for i in 0..p.atom_count() {
            assert_eq!(p.atom_of(p.atom_midpoint(i)).unwrap(), i);
        }
    }

    #[test]
    fn json_roundtrip_preserves_bits() {
        let mut tf = TensorFiltration::new(&[(0.0, 1.0), (-1.0, 1.0)]).unwrap();
        let xs = [(0usize, 0.3f64), (1, -0.123456789123), (0, 0.9871)];
        for (dir, x) in xs {
            let atom = tf.factor(dir).current().atom_of(x).unwrap();
            tf.push_step(TensorStep { dir, atom, x }).unwrap();
        }
        let text = tf.to_json().unwrap();
        let back = TensorFiltration::from_json(&text).unwrap();
        for (a, b) in tf.steps().iter().zip(back.steps()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
        }
        assert_eq!(
            tf.factor(0).current().edges(),
            back.factor(0).current().edges()
        );
    }

    #[test]
    fn ancestor_atoms_follow_refinement() {
        let base = Partition1D::trivial(0.0, 1.0).unwrap();
        let mut f = Filtration1D::new(base);
        for (atom, x) in [(0usize, 0.5f64), (0, 0.25), (2, 0.75)] {
            f.push_split(Split { atom, x }).unwrap();
        }
        // Final atoms: [0,.25) [.25,.5) [.5,.75) [.75,1)
        assert_eq!(f.ancestor_atom(3, 0, 1).unwrap(), 0);
        assert_eq!(f.ancestor_atom(3, 1, 1).unwrap(), 0);
        assert_eq!(f.ancestor_atom(3, 2, 1).unwrap(), 1);
        assert_eq!(f.ancestor_atom(3, 3, 0).unwrap(), 0);
        assert_abs_diff_eq!(f.stage(1).unwrap().atom_len(0), 0.5);
    }
}
