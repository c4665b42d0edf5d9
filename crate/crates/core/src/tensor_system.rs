//! Inductive construction of the orthonormal tensor spline system.
//!
//! Each filtration step splits one direction. The new function in that
//! direction is the one-dimensional orthonormal increment; the remaining
//! directions sweep through their B-spline bases with an odometer driven by
//! a priority permutation, producing normalized duals inside growing index
//! sets. The block for step n has one function per combination of the
//! non-split basis indices, and concatenating blocks in step order gives the
//! full system.

use std::sync::Arc;

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineBasis, Spline, TensorSpline};
use crate::error::{Error, Result};
use crate::fitting::{fit_envelope_decay, DecayFit};
use crate::gram::gram_matrix;
use crate::linalg::{GrowingCholesky, SymBanded};
use crate::ortho1d::{decay_resolved, next_ortho_function};
use crate::partition::{AtomRef, TensorFiltration};
use crate::quadrature::GaussRule;

/// One member of the tensor system: a product of per-direction factors.
#[derive(Debug, Clone)]
pub struct TensorOrthoFunction {
    /// Filtration step n whose block this function belongs to.
    pub step: usize,
    /// One-based position m inside the block.
    pub within: usize,
    /// Per-direction factor splines on the stage-n factor bases.
    pub factors: Vec<Spline>,
    /// Characteristic rectangle, one atom index per direction at stage n.
    pub j_rect: AtomRef,
}

impl TensorOrthoFunction {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.factors.len() {
            return Err(Error::DimensionMismatch {
                got: x.len(),
                expected: self.factors.len(),
            });
        }
        let mut v = 1.0;
        for (f, &xi) in self.factors.iter().zip(x) {
            v *= f.eval(xi)?;
        }
        Ok(v)
    }

    /// Product of the factor p-norms, which is the p-norm of the function.
    pub fn norm_product(&self, p: f64) -> Result<f64> {
        let mut v = 1.0;
        for f in &self.factors {
            v *= f.lp_norm(p)?;
        }
        Ok(v)
    }
}

/// Choice hooks for the construction. The defaults below realize the
/// left-to-right sweep; anything satisfying the membership rules is valid.
pub trait SelectionPolicy {
    /// Distinct priority per non-split direction; `dirs` lists those
    /// coordinates in ascending order and the result must be a permutation
    /// of 0..dirs.len(). The incomplete direction with the highest priority
    /// advances, and completed directions of higher priority restart.
    fn priorities(&mut self, n: usize, dirs: &[usize]) -> Vec<usize>;
    /// Basis index to start from when direction `dir` (dimension `dim`)
    /// restarts its index set.
    fn pick_initial(&mut self, n: usize, dir: usize, dim: usize) -> usize;
    /// Next basis index for direction `dir`; must avoid `taken`.
    fn pick_next(&mut self, n: usize, dir: usize, dim: usize, taken: &[usize]) -> usize;
}

/// Identity priorities; indices chosen in increasing order.
#[derive(Debug, Default, Clone)]
pub struct LeftToRight;

impl SelectionPolicy for LeftToRight {
    fn priorities(&mut self, _n: usize, dirs: &[usize]) -> Vec<usize> {
        (0..dirs.len()).collect()
    }

    fn pick_initial(&mut self, _n: usize, _dir: usize, _dim: usize) -> usize {
        0
    }

    fn pick_next(&mut self, _n: usize, _dir: usize, dim: usize, taken: &[usize]) -> usize {
        (0..dim).find(|i| !taken.contains(i)).unwrap_or(dim)
    }
}

/// Seeded random priorities and picks; used to exercise the freedom the
/// construction leaves open.
pub struct RandomPolicy {
    rng: rand_chacha::ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl SelectionPolicy for RandomPolicy {
    fn priorities(&mut self, _n: usize, dirs: &[usize]) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut p: Vec<usize> = (0..dirs.len()).collect();
        p.shuffle(&mut self.rng);
        p
    }

    fn pick_initial(&mut self, _n: usize, _dir: usize, dim: usize) -> usize {
        use rand::Rng;
        self.rng.gen_range(0..dim)
    }

    fn pick_next(&mut self, _n: usize, _dir: usize, dim: usize, taken: &[usize]) -> usize {
        use rand::seq::SliceRandom;
        let free: Vec<usize> = (0..dim).filter(|i| !taken.contains(i)).collect();
        *free.choose(&mut self.rng).unwrap_or(&dim)
    }
}

struct DirectionState {
    dir: usize,
    priority: usize,
    basis: Arc<BSplineBasis>,
    gram: SymBanded,
    omega: Vec<usize>,
    chol: GrowingCholesky,
    current: Spline,
    j_atom: usize,
}

impl DirectionState {
    fn complete(&self) -> bool {
        self.omega.len() == self.basis.dim()
    }

    fn restart(&mut self, idx: usize) -> Result<()> {
        if idx >= self.basis.dim() {
            return Err(Error::PolicyIndex {
                dir: self.dir,
                index: idx,
            });
        }
        self.omega = vec![idx];
        self.chol = GrowingCholesky::new();
        self.chol.push(&[], self.gram.get(idx, idx))?;
        let mut s = Spline::zero(self.basis.clone());
        s.coeffs_mut()[idx] = 1.0 / self.gram.get(idx, idx).sqrt();
        self.current = s;
        self.j_atom = self.basis.largest_support_atom(idx)?;
        Ok(())
    }

    fn advance(&mut self, idx: usize) -> Result<()> {
        if idx >= self.basis.dim() || self.omega.contains(&idx) {
            return Err(Error::PolicyIndex {
                dir: self.dir,
                index: idx,
            });
        }
        let off: Vec<f64> = self.omega.iter().map(|&w| self.gram.get(idx, w)).collect();
        self.chol.push(&off, self.gram.get(idx, idx))?;
        self.omega.push(idx);
        // Inverse column for the newest index: the resulting combination is
        // orthogonal to every previously taken B-spline, and its squared
        // norm is the column's last entry.
        let z = self.chol.last_inverse_column();
        let scale = 1.0 / z[z.len() - 1].sqrt();
        let mut s = Spline::zero(self.basis.clone());
        for (&w, &zi) in self.omega.iter().zip(&z) {
            s.coeffs_mut()[w] = zi * scale;
        }
        self.current = s;
        self.j_atom = self.basis.largest_support_atom(idx)?;
        Ok(())
    }
}

/// Observable construction state for one block, mainly for inspection in
/// tests and diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstructionState {
    /// Non-split directions in ascending coordinate order.
    pub dirs: Vec<usize>,
    /// Priority assigned to each entry of `dirs`.
    pub priorities: Vec<usize>,
    /// Final index sets, in insertion order, per entry of `dirs`.
    pub omegas: Vec<Vec<usize>>,
}

/// The block of functions for step n, in construction order.
pub fn build_block(
    filtration: &TensorFiltration,
    n: usize,
    orders: &[usize],
    policy: &mut dyn SelectionPolicy,
) -> Result<Vec<TensorOrthoFunction>> {
    Ok(build_block_traced(filtration, n, orders, policy)?.0)
}

/// Same as [`build_block`], returning the final construction state too.
pub fn build_block_traced(
    filtration: &TensorFiltration,
    n: usize,
    orders: &[usize],
    policy: &mut dyn SelectionPolicy,
) -> Result<(Vec<TensorOrthoFunction>, ConstructionState)> {
    let d = filtration.dim();
    if orders.len() != d {
        return Err(Error::DimensionMismatch {
            got: orders.len(),
            expected: d,
        });
    }
    if n == 0 || n > filtration.len() {
        return Err(Error::StepRange {
            step: n,
            len: filtration.len(),
        });
    }
    let delta0 = filtration.split_dir(n)?;
    let factor_step = filtration.factor_steps(n)?[delta0];
    let head = next_ortho_function(filtration.factor(delta0), factor_step, orders[delta0])?;

    let dirs: Vec<usize> = (0..d).filter(|&j| j != delta0).collect();
    let priorities = policy.priorities(n, &dirs);
    {
        let mut seen = vec![false; dirs.len()];
        for &p in &priorities {
            if p >= dirs.len() || seen[p] {
                return Err(Error::InvalidParameter(format!(
                    "policy priorities {priorities:?} are not a permutation"
                )));
            }
            seen[p] = true;
        }
    }

    let mut states: Vec<DirectionState> = Vec::with_capacity(dirs.len());
    for (t, &dir) in dirs.iter().enumerate() {
        let basis = Arc::new(BSplineBasis::new(
            filtration.factor_stage(n, dir)?.clone(),
            orders[dir],
        )?);
        let gram = gram_matrix(&basis);
        states.push(DirectionState {
            dir,
            priority: priorities[t],
            current: Spline::zero(basis.clone()),
            omega: Vec::new(),
            chol: GrowingCholesky::new(),
            j_atom: 0,
            gram,
            basis,
        });
    }

    let block_len: usize = states.iter().map(|s| s.basis.dim()).product();
    let mut out = Vec::with_capacity(block_len);
    for m in 1..=block_len {
        if m == 1 {
            for s in states.iter_mut() {
                let idx = policy.pick_initial(n, s.dir, s.basis.dim());
                s.restart(idx)?;
            }
        } else {
            let j0 = states
                .iter()
                .filter(|s| !s.complete())
                .map(|s| s.priority)
                .max()
                .ok_or_else(|| {
                    Error::Degenerate(format!("block at step {n} exhausted before m = {m}"))
                })?;
            for s in states.iter_mut() {
                if s.priority == j0 {
                    let idx = policy.pick_next(n, s.dir, s.basis.dim(), &s.omega);
                    s.advance(idx)?;
                } else if s.priority > j0 {
                    let idx = policy.pick_initial(n, s.dir, s.basis.dim());
                    s.restart(idx)?;
                }
            }
        }

        let mut factors = Vec::with_capacity(d);
        let mut rect = Vec::with_capacity(d);
        let mut t = 0usize;
        for dir in 0..d {
            if dir == delta0 {
                factors.push(head.spline.clone());
                rect.push(head.char_atom);
            } else {
                factors.push(states[t].current.clone());
                rect.push(states[t].j_atom);
                t += 1;
            }
        }
        out.push(TensorOrthoFunction {
            step: n,
            within: m,
            factors,
            j_rect: AtomRef(rect),
        });
    }
    let state = ConstructionState {
        dirs,
        priorities,
        omegas: states.iter().map(|s| s.omega.clone()).collect(),
    };
    Ok((out, state))
}

fn binomial(n: usize, r: usize) -> f64 {
    let r = r.min(n - r);
    let mut v = 1.0;
    for i in 0..r {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// Orthonormal polynomial basis on a single-atom basis, lowest degree first.
pub fn orthonormal_polynomials(basis: &Arc<BSplineBasis>) -> Result<Vec<Spline>> {
    let part = basis.partition();
    if part.atom_count() != 1 {
        return Err(Error::InvalidParameter(format!(
            "polynomial block needs a single atom, got {}",
            part.atom_count()
        )));
    }
    let k = basis.order();
    let (a, b) = (part.left(), part.right());

    // Legendre polynomials in the local variable u over [0, 1], stored by
    // monomial coefficients.
    let mut mono: Vec<Vec<f64>> = vec![vec![1.0]];
    if k > 1 {
        mono.push(vec![-1.0, 2.0]);
    }
    for q in 2..k {
        let prev = &mono[q - 1];
        let prev2 = &mono[q - 2];
        let mut next = vec![0.0; q + 1];
        for (t, &c) in prev.iter().enumerate() {
            next[t + 1] += (2 * q - 1) as f64 * 2.0 * c;
            next[t] -= (2 * q - 1) as f64 * c;
        }
        for (t, &c) in prev2.iter().enumerate() {
            next[t] -= (q - 1) as f64 * c;
        }
        for c in &mut next {
            *c /= q as f64;
        }
        mono.push(next);
    }

    // The clamped single-atom basis is the Bernstein basis of degree k - 1;
    // u^t expands there with coefficients C(i,t)/C(k-1,t).
    let deg = k - 1;
    let mut out = Vec::with_capacity(k);
    for (q, poly) in mono.iter().enumerate() {
        let scale = ((2 * q + 1) as f64 / (b - a)).sqrt();
        let mut coeffs = vec![0.0; k];
        for (i, slot) in coeffs.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, &c) in poly.iter().enumerate() {
                if t <= i {
                    acc += c * binomial(i, t) / binomial(deg, t);
                }
            }
            *slot = acc * scale;
        }
        out.push(Spline::new(basis.clone(), coeffs)?);
    }
    Ok(out)
}

/// Block for step 0: tensor products of per-direction orthonormal
/// polynomials, last direction revolving fastest.
pub fn block_zero(filtration: &TensorFiltration, orders: &[usize]) -> Result<Vec<TensorOrthoFunction>> {
    let d = filtration.dim();
    if orders.len() != d {
        return Err(Error::DimensionMismatch {
            got: orders.len(),
            expected: d,
        });
    }
    let mut polys = Vec::with_capacity(d);
    for (dir, &k) in orders.iter().enumerate() {
        let basis = Arc::new(BSplineBasis::new(
            filtration.factor_stage(0, dir)?.clone(),
            k,
        )?);
        polys.push(orthonormal_polynomials(&basis)?);
    }
    let total: usize = orders.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; d];
    for m in 1..=total {
        let factors: Vec<Spline> = digits
            .iter()
            .zip(&polys)
            .map(|(&q, ps)| ps[q].clone())
            .collect();
        out.push(TensorOrthoFunction {
            step: 0,
            within: m,
            factors,
            j_rect: AtomRef(vec![0; d]),
        });
        for t in (0..d).rev() {
            digits[t] += 1;
            if digits[t] < orders[t] {
                break;
            }
            digits[t] = 0;
        }
    }
    Ok(out)
}

/// The assembled system in its final enumeration: block 0, then the block of
/// each step in filtration order.
pub struct TensorSystem {
    pub filtration: Arc<TensorFiltration>,
    pub orders: Vec<usize>,
    pub functions: Vec<TensorOrthoFunction>,
    /// Cumulative function counts; entry n is the count through block n.
    pub cumulative: Vec<usize>,
}

impl TensorSystem {
    pub fn build(
        filtration: Arc<TensorFiltration>,
        orders: &[usize],
        policy: &mut dyn SelectionPolicy,
    ) -> Result<Self> {
        let mut functions = block_zero(&filtration, orders)?;
        let mut cumulative = vec![functions.len()];
        for n in 1..=filtration.len() {
            let block = build_block(&filtration, n, orders, policy)?;
            functions.extend(block);
            cumulative.push(functions.len());
        }
        Ok(Self {
            filtration,
            orders: orders.to_vec(),
            functions,
            cumulative,
        })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Step index of the σ-algebra attached to function `l`.
    pub fn sigma_step(&self, l: usize) -> Result<usize> {
        self.functions
            .get(l)
            .map(|f| f.step)
            .ok_or(Error::BasisIndex {
                index: l,
                dim: self.functions.len(),
            })
    }

    /// Functions of block n.
    pub fn block(&self, n: usize) -> Result<&[TensorOrthoFunction]> {
        if n >= self.cumulative.len() {
            return Err(Error::StepRange {
                step: n,
                len: self.cumulative.len(),
            });
        }
        let lo = if n == 0 { 0 } else { self.cumulative[n - 1] };
        Ok(&self.functions[lo..self.cumulative[n]])
    }

    /// Final per-direction bases, the natural home for refined factors.
    pub fn final_bases(&self) -> Result<Vec<Arc<BSplineBasis>>> {
        let n = self.filtration.len();
        (0..self.filtration.dim())
            .map(|dir| {
                Ok(Arc::new(BSplineBasis::new(
                    self.filtration.factor_stage(n, dir)?.clone(),
                    self.orders[dir],
                )?))
            })
            .collect()
    }

    pub fn to_file(&self) -> SystemFile {
        SystemFile {
            format_version: 1,
            orders: self.orders.clone(),
            cumulative: self.cumulative.clone(),
            functions: self
                .functions
                .iter()
                .enumerate()
                .map(|(index, f)| FunctionRecord {
                    index,
                    step: f.step,
                    within: f.within,
                    sigma_step: f.step,
                    j_rect: f.j_rect.0.clone(),
                    factors: f.factors.iter().map(|s| s.coeffs().to_vec()).collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    /// Rebuild a dumped system against its filtration.
    pub fn from_file(
        filtration: Arc<TensorFiltration>,
        file: &SystemFile,
    ) -> Result<Self> {
        if file.format_version != 1 {
            return Err(Error::InvalidParameter(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        let d = filtration.dim();
        let mut functions = Vec::with_capacity(file.functions.len());
        for rec in &file.functions {
            if rec.j_rect.len() != d || rec.factors.len() != d {
                return Err(Error::DimensionMismatch {
                    got: rec.factors.len(),
                    expected: d,
                });
            }
            let mut factors = Vec::with_capacity(d);
            for (dir, coeffs) in rec.factors.iter().enumerate() {
                let basis = Arc::new(BSplineBasis::new(
                    filtration.factor_stage(rec.step, dir)?.clone(),
                    file.orders[dir],
                )?);
                factors.push(Spline::new(basis, coeffs.clone())?);
            }
            functions.push(TensorOrthoFunction {
                step: rec.step,
                within: rec.within,
                factors,
                j_rect: AtomRef(rec.j_rect.clone()),
            });
        }
        Ok(Self {
            filtration,
            orders: file.orders.clone(),
            functions,
            cumulative: file.cumulative.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    pub format_version: u32,
    pub orders: Vec<usize>,
    pub cumulative: Vec<usize>,
    pub functions: Vec<FunctionRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub index: usize,
    pub step: usize,
    pub within: usize,
    pub sigma_step: usize,
    pub j_rect: Vec<usize>,
    pub factors: Vec<Vec<f64>>,
}

/// Per-direction matrices of factor inner products between two systems on
/// the same filtration: entry (i, j) of matrix δ is the L² product of the
/// δ-factors of left function i and right function j.
pub fn cross_factor_matrices(
    left: &TensorSystem,
    right: &TensorSystem,
) -> Result<Vec<Array2<f64>>> {
    let bases = left.final_bases()?;
    let mut out = Vec::with_capacity(bases.len());
    for (dir, basis) in bases.iter().enumerate() {
        let g = gram_matrix(basis);
        let lift = |sys: &TensorSystem| -> Result<Vec<Vec<f64>>> {
            sys.functions
                .iter()
                .map(|f| Ok(f.factors[dir].refined_to(basis)?.coeffs().to_vec()))
                .collect()
        };
        let lrows = lift(left)?;
        let rrows = lift(right)?;
        let rg: Vec<Vec<f64>> = rrows.iter().map(|r| g.matvec(r)).collect();
        let mut m = Array2::zeros((lrows.len(), rrows.len()));
        for (i, li) in lrows.iter().enumerate() {
            for (j, gj) in rg.iter().enumerate() {
                m[[i, j]] = li.iter().zip(gj).map(|(a, b)| a * b).sum();
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// All pairwise inner products of the system, as the entrywise product of
/// the per-direction factor matrices.
pub fn pairwise_inner_products(system: &TensorSystem) -> Result<Array2<f64>> {
    let mats = cross_factor_matrices(system, system)?;
    let n = system.len();
    let mut out = Array2::ones((n, n));
    for m in &mats {
        out *= m;
    }
    Ok(out)
}

/// Inner products between the members of two systems on one filtration.
pub fn cross_inner_products(left: &TensorSystem, right: &TensorSystem) -> Result<Array2<f64>> {
    let mats = cross_factor_matrices(left, right)?;
    let mut out = Array2::ones((left.len(), right.len()));
    for m in &mats {
        out *= m;
    }
    Ok(out)
}

fn contract_first_axis(a: &ArrayD<f64>, w: &[f64]) -> ArrayD<f64> {
    let shape = a.shape().to_vec();
    let rest: usize = shape[1..].iter().product();
    let flat = a.view().into_shape_with_order((shape[0], rest)).unwrap();
    let mut out = vec![0.0; rest];
    for (i, &wi) in w.iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(flat.row(i)) {
            *o += wi * v;
        }
    }
    ArrayD::from_shape_vec(IxDyn(&shape[1..]), out).unwrap()
}

/// Coefficients ⟨g, f_l⟩ for the first `upto` functions, for a spline g
/// whose bases refine every factor basis involved.
pub fn expand_spline(system: &TensorSystem, g: &TensorSpline, upto: usize) -> Result<Vec<f64>> {
    let upto = upto.min(system.len());
    expand_functions(&system.functions[..upto], g)
}

/// Inner products ⟨g, f⟩ for an arbitrary slice of functions.
pub fn expand_functions(functions: &[TensorOrthoFunction], g: &TensorSpline) -> Result<Vec<f64>> {
    let d = g.bases().len();
    let grams: Vec<SymBanded> = g.bases().iter().map(|b| gram_matrix(b)).collect();
    let mut out = Vec::with_capacity(functions.len());
    for f in functions {
        if f.factors.len() != d {
            return Err(Error::DimensionMismatch {
                got: f.factors.len(),
                expected: d,
            });
        }
        let mut acc = g.coeffs().clone();
        for dir in 0..d {
            let refined = f.factors[dir].refined_to(&g.bases()[dir])?;
            let w = grams[dir].matvec(refined.coeffs());
            acc = contract_first_axis(&acc, &w);
        }
        debug_assert_eq!(acc.ndim(), 0);
        out.push(acc[IxDyn(&[])]);
    }
    Ok(out)
}

/// Coefficients ⟨f, f_l⟩ for a plain function via per-atom product Gauss
/// rules on the final partitions, together with an estimate of the
/// quadrature error obtained by comparing two rule sizes.
pub fn expand_fn<F>(system: &TensorSystem, f: F, nodes: usize) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let coarse = expand_fn_fixed(system, &f, nodes)?;
    let fine = expand_fn_fixed(system, &f, nodes + 1)?;
    let err = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((fine, err))
}

fn expand_fn_fixed<F>(system: &TensorSystem, f: &F, nodes: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let d = system.filtration.dim();
    let last = system.filtration.len();
    let rule = GaussRule::new(nodes);
    // Per-direction grids: all Gauss nodes and weights over the final atoms.
    let mut grid: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(d);
    for dir in 0..d {
        let part = system.filtration.factor_stage(last, dir)?;
        let mut xs = Vec::new();
        let mut ws = Vec::new();
        for a in 0..part.atom_count() {
            let (lo, hi) = part.atom(a)?;
            xs.extend(rule.mapped_nodes(lo, hi));
            ws.extend(rule.mapped_weights(lo, hi));
        }
        grid.push((xs, ws));
    }
    // Factor values per function, direction, grid point.
    let mut fac_vals: Vec<Vec<Vec<f64>>> = Vec::with_capacity(system.len());
    for func in &system.functions {
        let mut per_dir = Vec::with_capacity(d);
        for dir in 0..d {
            let vals: Vec<f64> = grid[dir]
                .0
                .iter()
                .map(|&x| func.factors[dir].eval(x))
                .collect::<Result<_>>()?;
            per_dir.push(vals);
        }
        fac_vals.push(per_dir);
    }
    let mut out = vec![0.0; system.len()];
    let counts: Vec<usize> = grid.iter().map(|(xs, _)| xs.len()).collect();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    loop {
        let mut w = 1.0;
        for dir in 0..d {
            x[dir] = grid[dir].0[idx[dir]];
            w *= grid[dir].1[idx[dir]];
        }
        let fv = f(&x) * w;
        if fv != 0.0 {
            for (slot, vals) in out.iter_mut().zip(&fac_vals) {
                let mut prod = fv;
                for dir in 0..d {
                    prod *= vals[dir][idx[dir]];
                }
                *slot += prod;
            }
        }
        let mut t = d;
        loop {
            if t == 0 {
                return Ok(out);
            }
            t -= 1;
            idx[t] += 1;
            if idx[t] < counts[t] {
                break;
            }
            idx[t] = 0;
        }
    }
}

/// Linear combination Σ c_l f_l expressed on the given bases, which must
/// refine every factor basis of the participating functions.
pub fn synthesize(
    system: &TensorSystem,
    coeffs: &[f64],
    bases: &[Arc<BSplineBasis>],
) -> Result<TensorSpline> {
    let mut acc = TensorSpline::zero(bases.to_vec());
    for (c, f) in coeffs.iter().zip(&system.functions) {
        if *c == 0.0 {
            continue;
        }
        let factors: Vec<Vec<f64>> = f
            .factors
            .iter()
            .zip(bases)
            .map(|(s, b)| Ok(s.refined_to(b)?.coeffs().to_vec()))
            .collect::<Result<_>>()?;
        let term = TensorSpline::rank_one(bases.to_vec(), &factors)?;
        acc.axpy(*c, &term)?;
    }
    Ok(acc)
}

/// Envelope fit of |f_{n,m}| |conv(J, A)| / |J|^{1/2} against the L¹ atom
/// distance to the characteristic rectangle, over all step blocks and all
/// atom midpoints. The flat-support convention matches the one-dimensional
/// fit: no active distance beyond one means a zero rate.
pub fn fit_tensor_decay(system: &TensorSystem) -> Result<DecayFit> {
    let d = system.filtration.dim();
    let mut points: Vec<(usize, f64)> = Vec::new();
    let mut max_active_d = 0usize;
    for f in &system.functions {
        if f.step == 0 {
            continue;
        }
        let n = f.step;
        let counts = system.filtration.atom_counts(n)?;
        let parts: Vec<_> = (0..d)
            .map(|dir| system.filtration.factor_stage(n, dir))
            .collect::<Result<Vec<_>>>()?;
        // Per-direction midpoint values of each factor, and the hull length
        // against the characteristic interval in that direction.
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut hulls: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut dists: Vec<Vec<usize>> = Vec::with_capacity(d);
        let mut j_len = 1.0;
        for dir in 0..d {
            let part = parts[dir];
            let j = f.j_rect.0[dir];
            let (jl, jr) = part.atom(j)?;
            j_len *= jr - jl;
            let mut v = Vec::with_capacity(counts[dir]);
            let mut h = Vec::with_capacity(counts[dir]);
            let mut dd = Vec::with_capacity(counts[dir]);
            for a in 0..counts[dir] {
                let x = part.atom_midpoint(a);
                v.push(f.factors[dir].eval_on_atom(a, x));
                let (al, ar) = part.atom(a)?;
                h.push(ar.max(jr) - al.min(jl));
                dd.push(j.abs_diff(a));
            }
            vals.push(v);
            hulls.push(h);
            dists.push(dd);
        }
        let scale = j_len.sqrt();
        let mut idx = vec![0usize; d];
        loop {
            let mut v = 1.0;
            let mut hull = 1.0;
            let mut dist = 0usize;
            for dir in 0..d {
                v *= vals[dir][idx[dir]];
                hull *= hulls[dir][idx[dir]];
                dist += dists[dir][idx[dir]];
            }
            let value = v.abs() * hull / scale;
            if value > 1e-300 {
                max_active_d = max_active_d.max(dist);
            }
            points.push((dist, value));
            let mut t = d;
            let mut done = false;
            loop {
                if t == 0 {
                    done = true;
                    break;
                }
                t -= 1;
                idx[t] += 1;
                if idx[t] < counts[t] {
                    break;
                }
                idx[t] = 0;
            }
            if done {
                break;
            }
        }
    }
    if max_active_d <= 1 {
        let c = points.iter().map(|&(_, v)| v).fold(0.0, f64::max);
        return Ok(DecayFit {
            c,
            q: 0.0,
            envelope: points.into_iter().filter(|&(_, v)| v > 1e-300).collect(),
        });
    }
    let fit = fit_envelope_decay(points);
    if decay_resolved(&fit) && fit.q >= 1.0 {
        return Err(Error::Degenerate(format!(
            "no geometric decay across blocks: fitted ratio {}",
            fit.q
        )));
    }
    Ok(fit)
}
