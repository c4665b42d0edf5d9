//! Orthogonal projection onto tensor spline spaces, partial projections
//! that walk through one block of the orthonormal system, kernel operator
//! norms, and the decay-weighted maximal function with its domination
//! check.

use std::sync::Arc;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::bspline::{BSplineBasis, Spline, TensorSpline};
use crate::error::{Error, Result};
use crate::gram::{gram_matrix, mixed_gram};
use crate::linalg::{apply_matrix_along_axis, solve_along_axis, BandedCholesky};
use crate::partition::TensorFiltration;
use crate::quadrature::GaussRule;
use crate::tensor_system::{expand_functions, TensorSystem};

/// Orthogonal projector onto the tensor spline space of one filtration
/// stage. The Gram system splits into one banded solve per direction, so no
/// dense tensor Gram matrix is ever formed.
pub struct Projector {
    step: usize,
    bases: Vec<Arc<BSplineBasis>>,
    chols: Vec<BandedCholesky>,
}

impl Projector {
    pub fn new(filtration: &TensorFiltration, orders: &[usize], n: usize) -> Result<Self> {
        let d = filtration.dim();
        if orders.len() != d {
            return Err(Error::DimensionMismatch {
                got: orders.len(),
                expected: d,
            });
        }
        let mut bases = Vec::with_capacity(d);
        let mut chols = Vec::with_capacity(d);
        for dir in 0..d {
            let basis = Arc::new(BSplineBasis::new(
                filtration.factor_stage(n, dir)?.clone(),
                orders[dir],
            )?);
            chols.push(BandedCholesky::factor(&gram_matrix(&basis))?);
            bases.push(basis);
        }
        Ok(Self {
            step: n,
            bases,
            chols,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn bases(&self) -> &[Arc<BSplineBasis>] {
        &self.bases
    }

    /// Projection of a spline living on bases that share the domain; its
    /// partitions need not be related to this stage.
    pub fn project_spline(&self, f: &TensorSpline) -> Result<TensorSpline> {
        let mut acc = f.coeffs().clone();
        for (axis, basis) in self.bases.iter().enumerate() {
            let m = mixed_gram(basis, &f.bases()[axis])?;
            acc = apply_matrix_along_axis(&acc, &m, axis);
        }
        for (axis, chol) in self.chols.iter().enumerate() {
            solve_along_axis(&mut acc, chol, axis);
        }
        TensorSpline::new(self.bases.clone(), acc)
    }

    /// Projection of a plain function through per-atom product Gauss rules;
    /// the second value estimates the quadrature error as the largest
    /// coefficient shift when the rule grows by one node.
    pub fn project_fn<F>(&self, f: F, nodes: usize) -> Result<(TensorSpline, f64)>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut coarse = self.rhs_fn(&f, nodes)?;
        let mut fine = self.rhs_fn(&f, nodes + 1)?;
        for (axis, chol) in self.chols.iter().enumerate() {
            solve_along_axis(&mut coarse, chol, axis);
            solve_along_axis(&mut fine, chol, axis);
        }
        let err = coarse
            .iter()
            .zip(fine.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok((TensorSpline::new(self.bases.clone(), fine)?, err))
    }

    fn rhs_fn<F>(&self, f: &F, nodes: usize) -> Result<ArrayD<f64>>
    where
        F: Fn(&[f64]) -> f64,
    {
        let d = self.bases.len();
        let rule = GaussRule::new(nodes);
        // Flattened per-direction grids: point, weight, first active basis
        // index, and the k nonzero basis values there.
        struct Grid {
            xs: Vec<f64>,
            ws: Vec<f64>,
            firsts: Vec<usize>,
            vals: Vec<Vec<f64>>,
        }
        let mut grids = Vec::with_capacity(d);
        for basis in &self.bases {
            let part = basis.partition();
            let mut g = Grid {
                xs: Vec::new(),
                ws: Vec::new(),
                firsts: Vec::new(),
                vals: Vec::new(),
            };
            for a in 0..part.atom_count() {
                let (lo, hi) = part.atom(a)?;
                for (x, w) in rule
                    .mapped_nodes(lo, hi)
                    .into_iter()
                    .zip(rule.mapped_weights(lo, hi))
                {
                    g.xs.push(x);
                    g.ws.push(w);
                    g.firsts.push(a);
                    g.vals.push(basis.nonzero_on_atom(a, x));
                }
            }
            grids.push(g);
        }
        let shape: Vec<usize> = self.bases.iter().map(|b| b.dim()).collect();
        let mut rhs = ArrayD::<f64>::zeros(IxDyn(&shape));
        let counts: Vec<usize> = grids.iter().map(|g| g.xs.len()).collect();
        let mut pt = vec![0usize; d];
        let mut x = vec![0.0; d];
        let mut win = vec![0usize; d];
        let k_counts: Vec<usize> = self.bases.iter().map(|b| b.order()).collect();
        loop {
            let mut w = 1.0;
            for dir in 0..d {
                x[dir] = grids[dir].xs[pt[dir]];
                w *= grids[dir].ws[pt[dir]];
            }
            let fv = f(&x) * w;
            if fv != 0.0 {
                win.iter_mut().for_each(|t| *t = 0);
                'window: loop {
                    let mut v = fv;
                    let mut id = Vec::with_capacity(d);
                    for dir in 0..d {
                        v *= grids[dir].vals[pt[dir]][win[dir]];
                        id.push(grids[dir].firsts[pt[dir]] + win[dir]);
                    }
                    rhs[IxDyn(&id)] += v;
                    let mut t = d;
                    loop {
                        if t == 0 {
                            break 'window;
                        }
                        t -= 1;
                        win[t] += 1;
                        if win[t] < k_counts[t] {
                            break;
                        }
                        win[t] = 0;
                    }
                }
            }
            let mut t = d;
            loop {
                if t == 0 {
                    return Ok(rhs);
                }
                t -= 1;
                pt[t] += 1;
                if pt[t] < counts[t] {
                    break;
                }
                pt[t] = 0;
            }
        }
    }

    /// Value of the projection kernel at a point pair, the product of the
    /// per-direction kernels N(y)ᵀ G⁻¹ N(x).
    pub fn kernel_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let d = self.bases.len();
        if x.len() != d || y.len() != d {
            return Err(Error::DimensionMismatch {
                got: x.len().max(y.len()),
                expected: d,
            });
        }
        let mut out = 1.0;
        for dir in 0..d {
            let basis = &self.bases[dir];
            let (fx, vx) = basis.nonzero_at(x[dir])?;
            let mut rhs = vec![0.0; basis.dim()];
            for (t, v) in vx.iter().enumerate() {
                rhs[fx + t] = *v;
            }
            self.chols[dir].solve_in_place(&mut rhs);
            let (fy, vy) = basis.nonzero_at(y[dir])?;
            let mut acc = 0.0;
            for (t, v) in vy.iter().enumerate() {
                acc += v * rhs[fy + t];
            }
            out *= acc;
        }
        Ok(out)
    }

    /// Operator norms on L¹ and L∞ through the kernel: the L∞ norm is
    /// sup_x ∫|K(x,y)|dy on per-atom Gauss grids, and since the kernel is
    /// symmetric in its arguments the L¹ norm coincides with it.
    pub fn operator_norms(&self) -> Result<(f64, f64)> {
        let mut prod = 1.0;
        for (basis, chol) in self.bases.iter().zip(&self.chols) {
            prod *= direction_norm(basis, chol)?;
        }
        Ok((prod, prod))
    }
}

fn direction_norm(basis: &Arc<BSplineBasis>, chol: &BandedCholesky) -> Result<f64> {
    let part = basis.partition();
    let k = basis.order();
    let rule = GaussRule::new(k + 2);
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    let mut firsts = Vec::new();
    let mut vals = Vec::new();
    for a in 0..part.atom_count() {
        let (lo, hi) = part.atom(a)?;
        for (x, w) in rule
            .mapped_nodes(lo, hi)
            .into_iter()
            .zip(rule.mapped_weights(lo, hi))
        {
            xs.push(x);
            ws.push(w);
            firsts.push(a);
            vals.push(basis.nonzero_on_atom(a, x));
        }
    }
    let mut worst = 0.0f64;
    for p in 0..xs.len() {
        let mut dual = vec![0.0; basis.dim()];
        for (t, v) in vals[p].iter().enumerate() {
            dual[firsts[p] + t] = *v;
        }
        chol.solve_in_place(&mut dual);
        let mut integral = 0.0;
        for q in 0..xs.len() {
            let mut kv = 0.0;
            for (t, v) in vals[q].iter().enumerate() {
                kv += v * dual[firsts[q] + t];
            }
            integral += ws[q] * kv.abs();
        }
        worst = worst.max(integral);
    }
    Ok(worst)
}

/// Re-express a tensor spline on bases whose knots refine the current ones.
pub fn refine_tensor(f: &TensorSpline, bases: &[Arc<BSplineBasis>]) -> Result<TensorSpline> {
    if bases.len() != f.bases().len() {
        return Err(Error::DimensionMismatch {
            got: bases.len(),
            expected: f.bases().len(),
        });
    }
    let mut acc = f.coeffs().clone();
    for (axis, (src, dst)) in f.bases().iter().zip(bases).enumerate() {
        if src.same_space(dst) {
            continue;
        }
        let mut m = Array2::zeros((dst.dim(), src.dim()));
        for j in 0..src.dim() {
            let mut unit = Spline::zero(src.clone());
            unit.coeffs_mut()[j] = 1.0;
            for (i, v) in unit.refined_to(dst)?.coeffs().iter().enumerate() {
                m[[i, j]] = *v;
            }
        }
        acc = apply_matrix_along_axis(&acc, &m, axis);
    }
    TensorSpline::new(bases.to_vec(), acc)
}

/// Partial projection after m functions of block n: the previous stage's
/// projection plus the leading part of the block expansion. With m equal to
/// the block size this is the next full projection.
pub fn project_partial(
    system: &TensorSystem,
    n: usize,
    m: usize,
    f: &TensorSpline,
) -> Result<TensorSpline> {
    let filt = &system.filtration;
    let block = system.block(n)?;
    if m > block.len() {
        return Err(Error::BasisIndex {
            index: m,
            dim: block.len(),
        });
    }
    let d = filt.dim();
    let bases: Vec<Arc<BSplineBasis>> = (0..d)
        .map(|dir| {
            Ok(Arc::new(BSplineBasis::new(
                filt.factor_stage(n, dir)?.clone(),
                system.orders[dir],
            )?))
        })
        .collect::<Result<_>>()?;
    let mut acc = if n == 0 {
        TensorSpline::zero(bases.clone())
    } else {
        let prev = Projector::new(filt, &system.orders, n - 1)?;
        refine_tensor(&prev.project_spline(f)?, &bases)?
    };
    if m > 0 {
        let coeffs = expand_functions(&block[..m], f)?;
        for (c, func) in coeffs.iter().zip(&block[..m]) {
            let factors: Vec<Vec<f64>> = func
                .factors
                .iter()
                .zip(&bases)
                .map(|(s, b)| Ok(s.refined_to(b)?.coeffs().to_vec()))
                .collect::<Result<_>>()?;
            acc.axpy(*c, &TensorSpline::rank_one(bases.clone(), &factors)?)?;
        }
    }
    Ok(acc)
}

/// Decay-weighted maximal function over a finite filtration. Its value at x
/// is the largest, over the stages, of the hull-normalized sums of |f|
/// integrals weighted geometrically in the atom distance; each stage's sum
/// is constant on that stage's atoms, so the whole function is constant on
/// the finest cells.
pub struct MaximalEvaluator {
    filtration: Arc<TensorFiltration>,
    rho: f64,
    shape: Vec<usize>,
    /// For each step and direction, finest atom index to stage atom index.
    maps: Vec<Vec<Vec<usize>>>,
    /// For each step and direction, the weight matrix ρ^|a−b| / hull(a, b).
    weights: Vec<Vec<Array2<f64>>>,
}

impl MaximalEvaluator {
    pub fn new(filtration: Arc<TensorFiltration>, rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!(
                "decay parameter must lie in [0,1), got {rho}"
            )));
        }
        let d = filtration.dim();
        let last = filtration.len();
        let shape: Vec<usize> = filtration.atom_counts(last)?;
        let mut maps = Vec::with_capacity(last + 1);
        let mut weights = Vec::with_capacity(last + 1);
        for n in 0..=last {
            let mut step_maps = Vec::with_capacity(d);
            let mut step_weights = Vec::with_capacity(d);
            for dir in 0..d {
                let stage = filtration.factor_stage(n, dir)?;
                let fine = filtration.factor_stage(last, dir)?;
                let map: Vec<usize> = (0..fine.atom_count())
                    .map(|i| stage.atom_of(fine.atom_midpoint(i)))
                    .collect::<Result<_>>()?;
                let count = stage.atom_count();
                let mut w = Array2::zeros((count, count));
                for b in 0..count {
                    let (bl, br) = stage.atom(b)?;
                    for a in 0..count {
                        let (al, ar) = stage.atom(a)?;
                        let hull = ar.max(br) - al.min(bl);
                        let dist = a.abs_diff(b) as i32;
                        w[[b, a]] = rho.powi(dist) / hull;
                    }
                }
                step_maps.push(map);
                step_weights.push(w);
            }
            maps.push(step_maps);
            weights.push(step_weights);
        }
        Ok(Self {
            filtration,
            rho,
            shape,
            maps,
            weights,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn grid_shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn cell_volumes(&self) -> Result<ArrayD<f64>> {
        let last = self.filtration.len();
        let d = self.filtration.dim();
        let mut out = ArrayD::ones(IxDyn(&self.shape));
        for dir in 0..d {
            let part = self.filtration.factor_stage(last, dir)?;
            let lens: Vec<f64> = (0..part.atom_count()).map(|a| part.atom_len(a)).collect();
            for (mut idx, v) in out.indexed_iter_mut() {
                let _ = &mut idx;
                *v *= lens[idx[dir]];
            }
        }
        Ok(out)
    }

    /// Integrals of |f| over the finest cells for a pointwise-evaluable f,
    /// with `nodes` Gauss points per cell per direction.
    pub fn cell_integrals_fn<F>(&self, f: F, nodes: usize) -> Result<ArrayD<f64>>
    where
        F: Fn(&[f64]) -> f64,
    {
        let d = self.filtration.dim();
        let last = self.filtration.len();
        let rule = GaussRule::new(nodes);
        let mut node_grid = Vec::with_capacity(d);
        for dir in 0..d {
            let part = self.filtration.factor_stage(last, dir)?;
            let per_atom: Vec<(Vec<f64>, Vec<f64>)> = (0..part.atom_count())
                .map(|a| {
                    let (lo, hi) = part.atom(a)?;
                    Ok((rule.mapped_nodes(lo, hi), rule.mapped_weights(lo, hi)))
                })
                .collect::<Result<_>>()?;
            node_grid.push(per_atom);
        }
        let mut out = ArrayD::zeros(IxDyn(&self.shape));
        let mut x = vec![0.0; d];
        for (idx, slot) in out.indexed_iter_mut() {
            let mut acc = 0.0;
            let mut node = vec![0usize; d];
            loop {
                let mut w = 1.0;
                for dir in 0..d {
                    let (xs, ws) = &node_grid[dir][idx[dir]];
                    x[dir] = xs[node[dir]];
                    w *= ws[node[dir]];
                }
                acc += w * f(&x).abs();
                let mut t = d;
                let mut done = false;
                loop {
                    if t == 0 {
                        done = true;
                        break;
                    }
                    t -= 1;
                    node[t] += 1;
                    if node[t] < nodes {
                        break;
                    }
                    node[t] = 0;
                }
                if done {
                    break;
                }
            }
            *slot = acc;
        }
        Ok(out)
    }

    pub fn cell_integrals_spline(&self, f: &TensorSpline, nodes: usize) -> Result<ArrayD<f64>> {
        let failure = std::cell::RefCell::new(None);
        let vals = self.cell_integrals_fn(
            |x| match f.eval(x) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            },
            nodes,
        );
        match failure.into_inner() {
            Some(e) => Err(e),
            None => vals,
        }
    }

    /// The stage-n sum, evaluated per finest cell.
    pub fn step_values(&self, n: usize, cells: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        if n >= self.maps.len() {
            return Err(Error::StepRange {
                step: n,
                len: self.maps.len() - 1,
            });
        }
        if cells.shape() != self.shape.as_slice() {
            return Err(Error::DimensionMismatch {
                got: cells.len(),
                expected: self.shape.iter().product(),
            });
        }
        let d = self.filtration.dim();
        let counts: Vec<usize> = self.weights[n].iter().map(|w| w.nrows()).collect();
        let mut stage = ArrayD::<f64>::zeros(IxDyn(&counts));
        for (idx, v) in cells.indexed_iter() {
            let id: Vec<usize> = (0..d).map(|dir| self.maps[n][dir][idx[dir]]).collect();
            stage[IxDyn(&id)] += *v;
        }
        for (axis, w) in self.weights[n].iter().enumerate() {
            stage = apply_matrix_along_axis(&stage, w, axis);
        }
        let mut out = ArrayD::zeros(IxDyn(&self.shape));
        for (idx, v) in out.indexed_iter_mut() {
            let id: Vec<usize> = (0..d).map(|dir| self.maps[n][dir][idx[dir]]).collect();
            *v = stage[IxDyn(&id)];
        }
        Ok(out)
    }

    /// The maximal function per finest cell: the sup over all stages.
    pub fn values(&self, cells: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let mut out = self.step_values(0, cells)?;
        for n in 1..self.maps.len() {
            let sv = self.step_values(n, cells)?;
            for (o, v) in out.iter_mut().zip(sv.iter()) {
                *o = o.max(*v);
            }
        }
        Ok(out)
    }

    /// Lebesgue measure of the strict superlevel set {values > λ}.
    ///
    /// An empty superlevel set reports `0.0`; a bare `Sum` over nothing
    /// would give `-0.0`.
    pub fn superlevel_measure(&self, values: &ArrayD<f64>, lambda: f64) -> Result<f64> {
        let vols = self.cell_volumes()?;
        Ok(values
            .iter()
            .zip(vols.iter())
            .filter(|(v, _)| **v > lambda)
            .fold(0.0, |acc, (_, vol)| acc + vol))
    }
}

#[derive(Debug, Clone)]
pub struct DominationReport {
    /// Largest observed |P_{n,m} f| / 𝓜f over the sample grid.
    pub ratio: f64,
    /// Sample point attaining it.
    pub argmax: Vec<f64>,
    /// Largest observed |P_{n,m} f| alone.
    pub sup_projection: f64,
}

/// Compare a partial projection against the maximal function on a per-cell
/// Gauss sample grid.
pub fn check_domination(
    system: &TensorSystem,
    n: usize,
    m: usize,
    f: &TensorSpline,
    evaluator: &MaximalEvaluator,
    samples: usize,
) -> Result<DominationReport> {
    let p = project_partial(system, n, m, f)?;
    let max_k = system.orders.iter().copied().max().unwrap_or(1);
    let cells = evaluator.cell_integrals_spline(f, max_k + 2)?;
    let mvals = evaluator.values(&cells)?;
    let d = system.filtration.dim();
    let last = system.filtration.len();
    let rule = GaussRule::new(samples);
    let mut grids = Vec::with_capacity(d);
    for dir in 0..d {
        let part = system.filtration.factor_stage(last, dir)?;
        let per_atom: Vec<Vec<f64>> = (0..part.atom_count())
            .map(|a| {
                let (lo, hi) = part.atom(a)?;
                Ok(rule.mapped_nodes(lo, hi))
            })
            .collect::<Result<_>>()?;
        grids.push(per_atom);
    }
    let mut ratio = 0.0f64;
    let mut sup_p = 0.0f64;
    let mut argmax = vec![0.0; d];
    let mut x = vec![0.0; d];
    for (idx, mv) in mvals.indexed_iter() {
        let mut node = vec![0usize; d];
        loop {
            for dir in 0..d {
                x[dir] = grids[dir][idx[dir]][node[dir]];
            }
            let pv = p.eval(&x)?.abs();
            sup_p = sup_p.max(pv);
            let r = if *mv > 0.0 {
                pv / mv
            } else if pv <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            if r > ratio {
                ratio = r;
                argmax.copy_from_slice(&x);
            }
            let mut t = d;
            let mut done = false;
            loop {
                if t == 0 {
                    done = true;
                    break;
                }
                t -= 1;
                node[t] += 1;
                if node[t] < samples {
                    break;
                }
                node[t] = 0;
            }
            if done {
                break;
            }
        }
    }
    Ok(DominationReport {
        ratio,
        argmax,
        sup_projection: sup_p,
    })
}
