//! The covering family behind the localized maximal function.
//!
//! Members are boxes built at some filtration stage as products of runs of
//! 1 to 3k neighboring atoms per direction, where each run contains a
//! B-spline support of that direction's order and has first and last atom
//! lengths no smaller than a fixed fraction of the run. Families from all
//! stages up to a chosen depth are pooled, keeping for every box the
//! smallest stage where it occurs.
//!
//! The depth is chosen constructively: the smallest stage whose family
//! covers every atom of the target stage from inside. When the given
//! filtration is too shallow for that, it is extended by midpoint levels
//! first.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;

use orthospline::partition::{Partition1D, TensorFiltration};
use orthospline::regularity::{dyadic_extension, regularity_parameter, support_windows, SplitRule};

use crate::error::{Error, Result};

/// One member box: a product of atom runs at stage `step`.
#[derive(Debug, Clone, Serialize)]
pub struct CSet {
    /// Smallest stage at which the box arises.
    pub step: usize,
    /// Inclusive atom index ranges at that stage, one per direction.
    pub runs: Vec<(usize, usize)>,
    pub bbox: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize)]
pub struct Collection {
    #[serde(skip)]
    pub filtration: Arc<TensorFiltration>,
    /// Ordered by stage, then lexicographically by atom runs.
    pub sets: Vec<CSet>,
    /// Stage whose atoms the family covers from inside.
    pub depth: usize,
    /// Stage whose atoms are being covered.
    pub target_step: usize,
    pub orders: Vec<usize>,
    pub gamma: Vec<f64>,
    /// Per direction, the boundary-atom length fraction required of a run.
    pub c_bd: Vec<f64>,
    /// Midpoint levels appended to the input filtration to reach coverage.
    pub extended_levels: usize,
}

fn boundary_fraction(k: usize, gamma: f64) -> f64 {
    let g = gamma.max(1.0);
    1.0 / (k as f64 * g * (2.0 * g + 1.0))
}

/// Inclusive atom index ranges eligible as run factors at one stage.
fn eligible_runs(part: &Partition1D, k: usize, c: f64) -> Vec<(usize, usize)> {
    let count = part.atom_count();
    let edges = part.edges();
    let windows = support_windows(part, k);
    let mut runs = Vec::new();
    for start in 0..count {
        for len in 1..=(3 * k).min(count - start) {
            let end = start + len - 1;
            let has_support = windows.iter().any(|&(w0, w1)| w0 >= start && w1 <= end);
            if !has_support {
                continue;
            }
            let total = edges[end + 1] - edges[start];
            let first = edges[start + 1] - edges[start];
            let last = edges[end + 1] - edges[end];
            if first.min(last) + 1e-12 * total < c * total {
                continue;
            }
            runs.push((start, end));
        }
    }
    runs
}

/// True when every atom index inside `lo..=hi` lies in some run that is
/// itself contained in `lo..=hi`.
fn range_covered(runs: &[(usize, usize)], lo: usize, hi: usize) -> bool {
    let mut covered = vec![false; hi - lo + 1];
    for &(s, e) in runs {
        if s >= lo && e <= hi {
            for c in covered[s - lo..=e - lo].iter_mut() {
                *c = true;
            }
        }
    }
    covered.into_iter().all(|c| c)
}

/// Index range the interval `(lo, hi)` occupies in a finer partition.
fn range_in(part: &Partition1D, lo: f64, hi: f64) -> Result<(usize, usize)> {
    let edges = part.edges();
    let tol = 1e-9 * part.span();
    let first = edges.partition_point(|&e| e < lo - tol);
    let last = edges.partition_point(|&e| e < hi - tol);
    if first >= last || (edges[first] - lo).abs() > tol || (edges[last] - hi).abs() > tol {
        return Err(Error::Config(format!(
            "interval ({lo}, {hi}) is not a union of atoms of the partition"
        )));
    }
    Ok((first, last - 1))
}

/// Whether the stage-`a` family covers every target-stage atom from inside,
/// per direction.
fn covers_at(filt: &TensorFiltration, orders: &[usize], c_bd: &[f64], target: usize, a: usize) -> Result<bool> {
    for dir in 0..filt.dim() {
        let coarse = filt.factor_stage(target, dir)?;
        let fine = filt.factor_stage(a, dir)?;
        let runs = eligible_runs(fine, orders[dir], c_bd[dir]);
        for t in 0..coarse.atom_count() {
            let (lo, hi) = coarse.atom(t)?;
            let (s, e) = range_in(fine, lo, hi)?;
            if !range_covered(&runs, s, e) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

pub fn build_collection(
    filt: &Arc<TensorFiltration>,
    orders: &[usize],
    max_extra_levels: usize,
) -> Result<Collection> {
    if orders.len() != filt.dim() {
        return Err(Error::Config(format!(
            "{} orders for a {}-dimensional filtration",
            orders.len(),
            filt.dim()
        )));
    }
    let target = filt.len();
    let report = regularity_parameter(filt, orders)?;
    let c_bd: Vec<f64> = orders
        .iter()
        .zip(&report.per_direction)
        .map(|(&k, &g)| boundary_fraction(k, g))
        .collect();

    let mut current = filt.clone();
    let mut extended = 0usize;
    let mut from = target;
    let depth = 'search: loop {
        for a in from..=current.len() {
            if covers_at(&current, orders, &c_bd, target, a)? {
                break 'search a;
            }
        }
        if extended >= max_extra_levels {
            return Err(Error::Config(format!(
                "no covering depth for stage {target} within {max_extra_levels} extra levels"
            )));
        }
        from = current.len() + 1;
        current = Arc::new(dyadic_extension(&current, 1, SplitRule::Midpoint)?);
        extended += 1;
    };

    let dim = current.dim();
    let mut sets: Vec<CSet> = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for n in 0..=depth {
        let per_dir: Vec<Vec<(usize, usize)>> = (0..dim)
            .map(|dir| {
                Ok(eligible_runs(
                    current.factor_stage(n, dir)?,
                    orders[dir],
                    c_bd[dir],
                ))
            })
            .collect::<Result<_>>()?;
        if per_dir.iter().any(|r| r.is_empty()) {
            continue;
        }
        let mut idx = vec![0usize; dim];
        'sets: loop {
            let runs: Vec<(usize, usize)> = (0..dim).map(|d| per_dir[d][idx[d]]).collect();
            let bbox: Vec<(f64, f64)> = (0..dim)
                .map(|d| {
                    let edges = current.factor_stage(n, d)?.edges();
                    Ok((edges[runs[d].0], edges[runs[d].1 + 1]))
                })
                .collect::<Result<_>>()?;
            let key: Vec<u64> = bbox
                .iter()
                .flat_map(|&(a, b)| [a.to_bits(), b.to_bits()])
                .collect();
            if !seen.contains_key(&key) {
                seen.insert(key, sets.len());
                sets.push(CSet { step: n, runs, bbox });
            }
            let mut d = dim;
            while d > 0 {
                d -= 1;
                idx[d] += 1;
                if idx[d] < per_dir[d].len() {
                    continue 'sets;
                }
                idx[d] = 0;
            }
            break;
        }
    }
    if sets.is_empty() {
        return Err(Error::Config("the covering family is empty".into()));
    }

    Ok(Collection {
        filtration: current,
        sets,
        depth,
        target_step: target,
        orders: orders.to_vec(),
        gamma: report.per_direction,
        c_bd,
        extended_levels: extended,
    })
}

impl Collection {
    /// Index ranges of a member in the finest-stage tensor grid.
    pub fn finest_ranges(&self, set: &CSet) -> Result<Vec<(usize, usize)>> {
        (0..self.filtration.dim())
            .map(|d| {
                let fine = self.filtration.factor_stage(self.filtration.len(), d)?;
                range_in(fine, set.bbox[d].0, set.bbox[d].1)
            })
            .collect()
    }

    pub fn volume(&self, set: &CSet) -> f64 {
        set.bbox.iter().map(|&(a, b)| b - a).product()
    }

    /// Per-member averages of a cellwise quantity, and the pointwise
    /// supremum of those averages over members containing each cell.
    ///
    /// `cell_values` holds one number per finest-stage tensor cell in
    /// row-major order, interpreted as the integral of the quantity over
    /// that cell.
    pub fn maximal_values(&self, cell_values: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let counts = self.filtration.atom_counts(self.filtration.len())?;
        let total: usize = counts.iter().product();
        assert_eq!(cell_values.len(), total);
        let mut averages = Vec::with_capacity(self.sets.len());
        let mut pointwise = vec![0.0f64; total];
        for set in &self.sets {
            let ranges = self.finest_ranges(set)?;
            let mut mass = 0.0;
            for_each_cell(&counts, &ranges, |lin| mass += cell_values[lin]);
            let avg = mass / self.volume(set);
            averages.push(avg);
            for_each_cell(&counts, &ranges, |lin| {
                pointwise[lin] = pointwise[lin].max(avg);
            });
        }
        Ok((averages, pointwise))
    }
}

/// Visits the row-major linear index of every cell in a box of ranges.
pub fn for_each_cell(counts: &[usize], ranges: &[(usize, usize)], mut visit: impl FnMut(usize)) {
    let dim = counts.len();
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    'cells: loop {
        let mut lin = 0usize;
        for d in 0..dim {
            lin = lin * counts[d] + idx[d];
        }
        visit(lin);
        let mut d = dim;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            if idx[d] <= ranges[d].1 {
                continue 'cells;
            }
            idx[d] = ranges[d].0;
        }
        return;
    }
}
