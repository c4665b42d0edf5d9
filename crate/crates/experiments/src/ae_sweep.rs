//! Pointwise convergence sweep for expansions in the orthonormal system.
//!
//! Expands a target function, accumulates partial sums at every grid
//! point, and snapshots the sup and median pointwise error at each block
//! boundary of the system.

use serde::Serialize;

use orthospline::tensor_system::expand_fn;

use crate::config::{CoefficientModel, ExperimentConfig, TargetSpec};
use crate::error::{Error, Result};
use crate::weak_type::Workbench;

#[derive(Debug, Clone, Serialize)]
pub struct AeRow {
    /// Block boundary: functions through filtration step `step`.
    pub step: usize,
    pub functions: usize,
    pub sup_error: f64,
    pub median_error: f64,
}

#[derive(Debug, Serialize)]
pub struct AeSweepResult {
    pub format_version: u32,
    pub target: String,
    pub rows: Vec<AeRow>,
    /// Quadrature error estimate for the expansion coefficients.
    pub expand_error: f64,
}

fn median(sorted: &mut [f64]) -> f64 {
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// The sweep on a prepared workbench. Returns the table together with the
/// final per-point absolute errors, which callers can use to classify
/// convergence regions.
pub fn run_ae_sweep(
    bench: &Workbench,
    target: &TargetSpec,
    grid_nodes: usize,
) -> Result<(AeSweepResult, Vec<f64>)> {
    let intervals = bench.filtration.intervals();
    let f = target.function(&intervals);
    let (coeffs, expand_error) = expand_fn(&bench.system, &f, grid_nodes.max(3))?;

    let points = bench.grid.len();
    let target_values: Vec<f64> = (0..points).map(|p| f(bench.grid.point(p))).collect();

    let mut partial = vec![0.0f64; points];
    let mut rows = Vec::new();
    let mut l = 0usize;
    for (step, &upto) in bench.system.cumulative.iter().enumerate() {
        while l < upto {
            let row = bench.values.row(l);
            let a = coeffs[l];
            for p in 0..points {
                partial[p] += a * row[p];
            }
            l += 1;
        }
        let mut errors: Vec<f64> = (0..points)
            .map(|p| (partial[p] - target_values[p]).abs())
            .collect();
        let sup = errors.iter().cloned().fold(0.0, f64::max);
        rows.push(AeRow {
            step,
            functions: upto,
            sup_error: sup,
            median_error: median(&mut errors),
        });
    }
    let final_errors: Vec<f64> = (0..points)
        .map(|p| (partial[p] - target_values[p]).abs())
        .collect();
    Ok((
        AeSweepResult {
            format_version: 1,
            target: target.name().to_string(),
            rows,
            expand_error,
        },
        final_errors,
    ))
}

pub fn ae_convergence_sweep(cfg: &ExperimentConfig) -> Result<AeSweepResult> {
    let CoefficientModel::Target { target } = &cfg.coefficients else {
        return Err(Error::Config(
            "the convergence sweep needs a target coefficient model".into(),
        ));
    };
    let bench = Workbench::from_config(cfg)?;
    let (result, _) = run_ae_sweep(&bench, target, cfg.grid_nodes)?;
    Ok(result)
}

impl AeSweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("format_version,1\nstep,functions,sup_error,median_error\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.step, row.functions, row.sup_error, row.median_error
            ));
        }
        out
    }
}
