//! Gauss sample grids on the finest cells of a filtration.
//!
//! Every experiment measures functions on the same kind of grid: the
//! finest-stage cells of the filtration, each carrying a tensor Gauss
//! rule. Splines are polynomial on these cells, so weighted node sums
//! integrate them exactly and superlevel measures of piecewise-constant
//! functions are exact as well.

use ndarray::Array2;

use orthospline::partition::TensorFiltration;
use orthospline::quadrature::GaussRule;
use orthospline::tensor_system::TensorOrthoFunction;
use orthospline::Result;

#[derive(Debug, Clone)]
pub struct EvalGrid {
    dim: usize,
    /// Atoms per direction on the finest stage.
    atom_counts: Vec<usize>,
    /// Gauss weights per direction and atom.
    weights: Vec<Vec<Vec<f64>>>,
    nodes_per_dir: usize,
    /// Flattened sample points, cell major then node major, row major in
    /// the direction index both times.
    points: Vec<f64>,
    point_weights: Vec<f64>,
}

impl EvalGrid {
    pub fn new(filt: &TensorFiltration, nodes_per_dir: usize) -> Result<Self> {
        let d = filt.dim();
        let last = filt.len();
        let rule = GaussRule::new(nodes_per_dir);
        let mut atom_counts = Vec::with_capacity(d);
        let mut nodes = Vec::with_capacity(d);
        let mut weights = Vec::with_capacity(d);
        for dir in 0..d {
            let part = filt.factor_stage(last, dir)?;
            let mut dir_nodes = Vec::with_capacity(part.atom_count());
            let mut dir_weights = Vec::with_capacity(part.atom_count());
            for a in 0..part.atom_count() {
                let (lo, hi) = part.atom(a)?;
                dir_nodes.push(rule.mapped_nodes(lo, hi));
                dir_weights.push(rule.mapped_weights(lo, hi));
            }
            atom_counts.push(part.atom_count());
            nodes.push(dir_nodes);
            weights.push(dir_weights);
        }

        let cell_count: usize = atom_counts.iter().product();
        let ppc = nodes_per_dir.pow(d as u32);
        let mut points = Vec::with_capacity(cell_count * ppc * d);
        let mut point_weights = Vec::with_capacity(cell_count * ppc);
        let mut cell = vec![0usize; d];
        for _ in 0..cell_count {
            let mut node = vec![0usize; d];
            for _ in 0..ppc {
                let mut w = 1.0;
                for dir in 0..d {
                    points.push(nodes[dir][cell[dir]][node[dir]]);
                    w *= weights[dir][cell[dir]][node[dir]];
                }
                point_weights.push(w);
                advance(&mut node, &vec![nodes_per_dir; d]);
            }
            advance(&mut cell, &atom_counts);
        }

        Ok(Self {
            dim: d,
            atom_counts,
            weights,
            nodes_per_dir,
            points,
            point_weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atom_counts(&self) -> &[usize] {
        &self.atom_counts
    }

    pub fn cell_count(&self) -> usize {
        self.atom_counts.iter().product()
    }

    pub fn points_per_cell(&self) -> usize {
        self.nodes_per_dir.pow(self.dim as u32)
    }

    pub fn len(&self) -> usize {
        self.point_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.point_weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.point_weights
    }

    /// Cell index of a sample point.
    pub fn cell_of(&self, i: usize) -> usize {
        i / self.points_per_cell()
    }

    /// Point range of one cell.
    pub fn cell_points(&self, cell: usize) -> std::ops::Range<usize> {
        let ppc = self.points_per_cell();
        cell * ppc..(cell + 1) * ppc
    }

    /// Row-major multi-index of a cell.
    pub fn cell_multi(&self, cell: usize) -> Vec<usize> {
        let mut rem = cell;
        let mut out = vec![0usize; self.dim];
        for dir in (0..self.dim).rev() {
            out[dir] = rem % self.atom_counts[dir];
            rem /= self.atom_counts[dir];
        }
        out
    }

    /// Linear cell index from a row-major multi-index.
    pub fn cell_linear(&self, multi: &[usize]) -> usize {
        let mut out = 0usize;
        for dir in 0..self.dim {
            out = out * self.atom_counts[dir] + multi[dir];
        }
        out
    }

    pub fn cell_volume(&self, cell: usize) -> f64 {
        let multi = self.cell_multi(cell);
        (0..self.dim)
            .map(|dir| self.weights[dir][multi[dir]].iter().sum::<f64>())
            .product()
    }

    /// Values of a plain function at every sample point.
    pub fn eval_fn(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(self.point(i))).collect()
    }

    /// Weighted integral of grid values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.point_weights)
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Measure of {values > lambda}, as the weight of the exceeding nodes.
    ///
    /// Folds from positive zero so an empty superlevel set reports `0.0`
    /// rather than the `-0.0` an empty `Sum` would produce.
    pub fn measure_above(&self, values: &[f64], lambda: f64) -> f64 {
        values
            .iter()
            .zip(&self.point_weights)
            .filter(|(v, _)| **v > lambda)
            .fold(0.0, |acc, (_, w)| acc + w)
    }
}

fn advance(idx: &mut [usize], bounds: &[usize]) {
    for dir in (0..idx.len()).rev() {
        idx[dir] += 1;
        if idx[dir] < bounds[dir] {
            return;
        }
        idx[dir] = 0;
    }
}

/// Values of every system function at every grid point, functions along
/// the rows.
pub fn eval_functions(functions: &[TensorOrthoFunction], grid: &EvalGrid) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros((functions.len(), grid.len()));
    for (r, f) in functions.iter().enumerate() {
        for i in 0..grid.len() {
            out[[r, i]] = f.eval(grid.point(i))?;
        }
    }
    Ok(out)
}
