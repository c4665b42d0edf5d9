//! Height-based decomposition of a function against the covering family.
//!
//! Above the level set of the family's maximal function, the function is
//! replaced by local spline projections onto the member boxes; the
//! remainder is locally orthogonal to those spline spaces. The split is
//! f = h + g with
//!
//!   h = f on the complement plus the sum of local projections,
//!   g = the sum of (f restricted to an ownership cell minus its
//!       projection).

use std::sync::Arc;

use ndarray::ArrayD;
use serde::Serialize;

use orthospline::bspline::{BSplineBasis, TensorSpline};
use orthospline::gram::gram_matrix;
use orthospline::linalg::{solve_along_axis, BandedCholesky};
use orthospline::partition::Partition1D;

use crate::collection::{for_each_cell, Collection};
use crate::error::{Error, Result};
use crate::grid::EvalGrid;

#[derive(Debug, Clone, Serialize)]
pub struct CzOutcome {
    pub format_version: u32,
    pub lambda: f64,
    /// Set when the mass guard made the split degenerate (h = f, g = 0).
    pub trivial: bool,
    pub f_l1: f64,
    pub g_measure: f64,
    pub e_count: usize,
    pub overlap_max: usize,
    pub overlap_ceiling: usize,
    /// max |f - h - g| over the grid.
    pub recon_residual: f64,
    pub h_l2_sq: f64,
    pub h_inf: f64,
    /// ||h||_2^2 / (lambda ||f||_1).
    pub c_fit: f64,
    /// max_j of ||Q_j(f 1_V_j)||_2^2 / (lambda^2 |E_j|).
    pub localproj_max: f64,
    /// Every superlevel cell lies in a selected box.
    pub cover_ok: bool,
}

/// Pointwise byproducts of the split, on the same grid it was computed on.
pub struct CzParts {
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    /// For each finest cell, the position in the selection owning it.
    pub owner: Vec<Option<usize>>,
    /// Indices into the collection's set list, in enumeration order.
    pub e_indices: Vec<usize>,
}

fn contains(big: &[(f64, f64)], small: &[(f64, f64)], tol: f64) -> bool {
    big.iter()
        .zip(small)
        .all(|(&(bl, bh), &(sl, sh))| bl <= sl + tol && bh >= sh - tol)
}

pub fn overlap_ceiling(orders: &[usize]) -> usize {
    orders.iter().map(|&k| 3 * k * (3 * k + 1) / 2).product()
}

pub fn cz_decompose(
    col: &Collection,
    grid: &EvalGrid,
    values: &[f64],
    lambda: f64,
) -> Result<(CzOutcome, CzParts)> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("level {lambda} must be positive")));
    }
    let filt = &col.filtration;
    let points = grid.len();
    assert_eq!(values.len(), points);
    let counts = grid.atom_counts().to_vec();
    assert_eq!(counts, filt.atom_counts(filt.len())?);
    let cell_count = grid.cell_count();

    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let f_l1 = grid.integrate(&abs);
    let domain: f64 = filt.intervals().iter().map(|&(a, b)| b - a).product();
    let ceiling = overlap_ceiling(&col.orders);

    if f_l1 > lambda * domain / 2.0 {
        let h_l2_sq = grid.integrate(&values.iter().map(|v| v * v).collect::<Vec<_>>());
        let h_inf = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let outcome = CzOutcome {
            format_version: 1,
            lambda,
            trivial: true,
            f_l1,
            g_measure: 0.0,
            e_count: 0,
            overlap_max: 0,
            overlap_ceiling: ceiling,
            recon_residual: 0.0,
            h_l2_sq,
            h_inf,
            c_fit: h_l2_sq / (lambda * f_l1.max(1e-300)),
            localproj_max: 0.0,
            cover_ok: true,
        };
        let parts = CzParts {
            h: values.to_vec(),
            g: vec![0.0; points],
            owner: vec![None; cell_count],
            e_indices: Vec::new(),
        };
        return Ok((outcome, parts));
    }

    let mut cell_l1 = vec![0.0f64; cell_count];
    for cell in 0..cell_count {
        for p in grid.cell_points(cell) {
            cell_l1[cell] += grid.weight(p) * values[p].abs();
        }
    }
    let (averages, pointwise) = col.maximal_values(&cell_l1)?;

    let candidates: Vec<usize> = (0..col.sets.len())
        .filter(|&j| averages[j] > lambda)
        .collect();
    let span_tol: f64 = 1e-12 * domain.max(1.0);
    let e_indices: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&j| {
            !candidates.iter().any(|&i| {
                i != j && contains(&col.sets[i].bbox, &col.sets[j].bbox, span_tol)
            })
        })
        .collect();

    let mut owner: Vec<Option<usize>> = vec![None; cell_count];
    let mut overlap = vec![0usize; cell_count];
    for (pos, &j) in e_indices.iter().enumerate() {
        let ranges = col.finest_ranges(&col.sets[j])?;
        for_each_cell(&counts, &ranges, |lin| {
            overlap[lin] += 1;
            if owner[lin].is_none() {
                owner[lin] = Some(pos);
            }
        });
    }
    let overlap_max = overlap.iter().copied().max().unwrap_or(0);

    let in_g: Vec<bool> = (0..cell_count).map(|c| pointwise[c] > lambda).collect();
    let cover_ok = (0..cell_count).all(|c| !in_g[c] || owner[c].is_some());
    let g_measure: f64 = (0..cell_count)
        .filter(|&c| in_g[c])
        .fold(0.0, |acc, c| acc + grid.cell_volume(c));

    let mut proj_sum = vec![0.0f64; points];
    let mut localproj_max = 0.0f64;
    for (pos, &j) in e_indices.iter().enumerate() {
        let set = &col.sets[j];
        let n = set.step;
        let ranges = col.finest_ranges(set)?;
        let ks = &col.orders;

        let mut bases: Vec<Arc<BSplineBasis>> = Vec::with_capacity(filt.dim());
        for d in 0..filt.dim() {
            let part = filt.factor_stage(n, d)?;
            let edges = part.edges();
            let (s, e) = set.runs[d];
            let inner = &edges[s + 1..=e];
            let sub = Partition1D::new(edges[s], edges[e + 1], inner)?;
            bases.push(Arc::new(BSplineBasis::new(sub, ks[d])?));
        }
        let shape: Vec<usize> = bases.iter().map(|b| b.dim()).collect();
        let mut rhs = ArrayD::<f64>::zeros(shape.clone());

        for_each_cell(&counts, &ranges, |lin| {
            if owner[lin] != Some(pos) {
                return;
            }
            for p in grid.cell_points(lin) {
                let x = grid.point(p);
                let w = grid.weight(p) * values[p];
                if w == 0.0 {
                    continue;
                }
                let per_dir: Vec<(usize, Vec<f64>)> = (0..filt.dim())
                    .map(|d| bases[d].nonzero_at(x[d]).expect("point inside the box"))
                    .collect();
                let mut idx: Vec<usize> = vec![0; filt.dim()];
                'entries: loop {
                    let mut weight = w;
                    let mut flat: Vec<usize> = Vec::with_capacity(filt.dim());
                    for d in 0..filt.dim() {
                        weight *= per_dir[d].1[idx[d]];
                        flat.push(per_dir[d].0 + idx[d]);
                    }
                    rhs[flat.as_slice()] += weight;
                    let mut d = filt.dim();
                    while d > 0 {
                        d -= 1;
                        idx[d] += 1;
                        if idx[d] < per_dir[d].1.len() {
                            continue 'entries;
                        }
                        idx[d] = 0;
                    }
                    break;
                }
            }
        });

        for (d, basis) in bases.iter().enumerate() {
            let chol = BandedCholesky::factor(&gram_matrix(basis))?;
            solve_along_axis(&mut rhs, &chol, d);
        }
        let q = TensorSpline::new(bases, rhs)?;

        let mut q_l2 = 0.0f64;
        let mut local_err: Option<orthospline::Error> = None;
        for_each_cell(&counts, &ranges, |lin| {
            for p in grid.cell_points(lin) {
                match q.eval(grid.point(p)) {
                    Ok(v) => {
                        proj_sum[p] += v;
                        q_l2 += grid.weight(p) * v * v;
                    }
                    Err(e) => local_err = Some(e),
                }
            }
        });
        if let Some(e) = local_err {
            return Err(e.into());
        }
        localproj_max = localproj_max.max(q_l2 / (lambda * lambda * col.volume(set)));
    }

    let mut h = vec![0.0f64; points];
    let mut g = vec![0.0f64; points];
    for p in 0..points {
        let cell = grid.cell_of(p);
        let outside = if in_g[cell] { 0.0 } else { values[p] };
        let owned = if owner[cell].is_some() { values[p] } else { 0.0 };
        h[p] = outside + proj_sum[p];
        g[p] = owned - proj_sum[p];
    }
    let recon_residual = (0..points)
        .map(|p| (values[p] - h[p] - g[p]).abs())
        .fold(0.0, f64::max);
    let h_l2_sq = grid.integrate(&h.iter().map(|v| v * v).collect::<Vec<_>>());
    let h_inf = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let outcome = CzOutcome {
        format_version: 1,
        lambda,
        trivial: false,
        f_l1,
        g_measure,
        e_count: e_indices.len(),
        overlap_max,
        overlap_ceiling: ceiling,
        recon_residual,
        h_l2_sq,
        h_inf,
        c_fit: h_l2_sq / (lambda * f_l1.max(1e-300)),
        localproj_max,
        cover_ok,
    };
    Ok((
        outcome,
        CzParts {
            h,
            g,
            owner,
            e_indices,
        },
    ))
}
