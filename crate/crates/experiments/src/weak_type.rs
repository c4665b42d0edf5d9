//! Sign-flip weak-type experiment.
//!
//! For coefficients (a_l) and signs (e_l) the experiment forms the flipped
//! sum over the orthonormal system, takes the running maximum of the
//! partial sums at every grid point, and measures its superlevel sets.
//! The reported quantity per lambda is
//!
//!   lambda * |{ max_M |sum_{l<=M} e_l a_l f_l| > lambda }| / ||f||_1,
//!
//! with the denominator the largest L1 norm among the unflipped partial
//! sums. Partial sums are truncations of the expansion, so the projector
//! onto the first M functions acts on the flipped sum exactly by
//! truncating it.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use orthospline::partition::TensorFiltration;
use orthospline::regularity::regularity_report;
use orthospline::tensor_system::{expand_fn, fit_tensor_decay, LeftToRight, TensorSystem};

use crate::config::{CoefficientModel, ExperimentConfig, FiltrationSource, SignModel};
use crate::corpus;
use crate::error::{Error, Result};
use crate::grid::{eval_functions, EvalGrid};

const BETA_CAP: usize = 12;

/// Everything a run needs: the filtration, the system on it, the sample
/// grid and the precomputed function values.
pub struct Workbench {
    pub filtration: Arc<TensorFiltration>,
    pub system: TensorSystem,
    pub grid: EvalGrid,
    pub values: Array2<f64>,
}

impl Workbench {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let filt = match &cfg.filtration {
            FiltrationSource::File { path } => {
                let text = std::fs::read_to_string(path)?;
                TensorFiltration::from_json(&text)?
            }
            FiltrationSource::Generator(spec) => corpus::from_spec(spec, &cfg.orders, cfg.seed)?,
        };
        if cfg.orders.len() != filt.dim() {
            return Err(Error::Config(format!(
                "{} orders for a {}-dimensional filtration",
                cfg.orders.len(),
                filt.dim()
            )));
        }
        Self::new(Arc::new(filt), &cfg.orders, cfg.grid_nodes)
    }

    pub fn new(
        filtration: Arc<TensorFiltration>,
        orders: &[usize],
        grid_nodes: usize,
    ) -> Result<Self> {
        let system = TensorSystem::build(filtration.clone(), orders, &mut LeftToRight)?;
        let grid = EvalGrid::new(&filtration, grid_nodes)?;
        let values = eval_functions(&system.functions, &grid)?;
        Ok(Self {
            filtration,
            system,
            grid,
            values,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakTypeRow {
    pub lambda: f64,
    pub measure: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SignSummary {
    pub sign: usize,
    pub max_ratio: f64,
}

#[derive(Debug, Serialize)]
pub struct WeakTypeResult {
    pub format_version: u32,
    /// Per lambda, the largest ratio over all runs together with the
    /// measure of the run attaining it.
    pub rows: Vec<WeakTypeRow>,
    pub max_ratio: f64,
    pub per_sign: Vec<SignSummary>,
    pub gamma: f64,
    /// Direction regularity parameter; absent when the search cap was hit.
    pub beta: Option<usize>,
    pub beta_cap: usize,
    pub q_fit: f64,
    pub functions: usize,
    pub runs: usize,
}

/// Envelope rows for one coefficient vector and one sign vector. Returns
/// the rows and the denominator.
pub fn weak_type_single(
    values: &Array2<f64>,
    grid: &EvalGrid,
    coeffs: &[f64],
    signs: &[i8],
    lambda_grid: &[f64],
) -> Result<(Vec<WeakTypeRow>, f64)> {
    let n = values.nrows();
    assert_eq!(coeffs.len(), n);
    assert_eq!(signs.len(), n);
    let points = grid.len();
    let mut signed = vec![0.0f64; points];
    let mut plain = vec![0.0f64; points];
    let mut envelope = vec![0.0f64; points];
    let mut denom = 0.0f64;
    for l in 0..n {
        let row = values.row(l);
        let a = coeffs[l];
        let ea = f64::from(signs[l]) * a;
        let mut l1 = 0.0;
        for p in 0..points {
            signed[p] += ea * row[p];
            plain[p] += a * row[p];
            envelope[p] = envelope[p].max(signed[p].abs());
            l1 += plain[p].abs() * grid.weight(p);
        }
        denom = denom.max(l1);
    }
    if denom <= 1e-13 {
        return Err(Error::Core(orthospline::Error::Degenerate(
            "the expansion has vanishing L1 norm".into(),
        )));
    }
    let rows = lambda_grid
        .iter()
        .map(|&lambda| {
            let measure = grid.measure_above(&envelope, lambda);
            WeakTypeRow {
                lambda,
                measure,
                ratio: lambda * measure / denom,
            }
        })
        .collect();
    Ok((rows, denom))
}

/// Sign vectors for a model, given the system size.
pub fn sign_vectors(model: &SignModel, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<i8>>> {
    match model {
        SignModel::Identity => Ok(vec![vec![1; n]]),
        SignModel::AllFlip => Ok(vec![vec![-1; n]]),
        SignModel::Random { count } => Ok((0..*count)
            .map(|_| (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect())
            .collect()),
        SignModel::Exhaustive { max_len } => {
            let cap = (*max_len).min(16);
            if n > cap {
                return Err(Error::Config(format!(
                    "exhaustive signs need at most {cap} functions, system has {n}"
                )));
            }
            Ok((0..1u32 << n)
                .map(|mask| {
                    (0..n)
                        .map(|b| if mask >> b & 1 == 1 { -1 } else { 1 })
                        .collect()
                })
                .collect())
        }
    }
}

/// Coefficient vectors for a model.
pub fn coefficient_vectors(
    model: &CoefficientModel,
    bench: &Workbench,
    grid_nodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let n = bench.system.len();
    match model {
        CoefficientModel::Gaussian { draws } => Ok((0..*draws)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect()),
        CoefficientModel::Target { target } => {
            let intervals = bench.filtration.intervals();
            let f = target.function(&intervals);
            let (coeffs, _err) = expand_fn(&bench.system, f, grid_nodes.max(3))?;
            Ok(vec![coeffs])
        }
    }
}

pub fn sign_flip_experiment(cfg: &ExperimentConfig) -> Result<WeakTypeResult> {
    let bench = Workbench::from_config(cfg)?;
    run_sign_flip(cfg, &bench)
}

/// The experiment on an already-built workbench.
pub fn run_sign_flip(cfg: &ExperimentConfig, bench: &Workbench) -> Result<WeakTypeResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coeff_sets = coefficient_vectors(&cfg.coefficients, bench, cfg.grid_nodes, &mut rng)?;
    let mut sign_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sign_rng.set_stream(1);
    let signs = sign_vectors(&cfg.signs, bench.system.len(), &mut sign_rng)?;

    let mut rows: Vec<WeakTypeRow> = cfg
        .lambda_grid
        .iter()
        .map(|&lambda| WeakTypeRow {
            lambda,
            measure: 0.0,
            ratio: -1.0,
        })
        .collect();
    let mut per_sign: Vec<SignSummary> = (0..signs.len())
        .map(|sign| SignSummary {
            sign,
            max_ratio: 0.0,
        })
        .collect();
    let mut runs = 0usize;
    for coeffs in &coeff_sets {
        for (s, sign) in signs.iter().enumerate() {
            let (run_rows, _denom) =
                weak_type_single(&bench.values, &bench.grid, coeffs, sign, &cfg.lambda_grid)?;
            for (agg, row) in rows.iter_mut().zip(&run_rows) {
                if row.ratio > agg.ratio {
                    agg.ratio = row.ratio;
                    agg.measure = row.measure;
                }
            }
            let run_max = run_rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
            per_sign[s].max_ratio = per_sign[s].max_ratio.max(run_max);
            runs += 1;
        }
    }

    let report = regularity_report(&bench.filtration, &bench.system.orders, BETA_CAP)?;
    let q_fit = fit_tensor_decay(&bench.system)?.q;
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(WeakTypeResult {
        format_version: 1,
        rows,
        max_ratio,
        per_sign,
        gamma: report.gamma_overall,
        beta: report.beta.value(),
        beta_cap: BETA_CAP,
        q_fit,
        functions: bench.system.len(),
        runs,
    })
}

impl WeakTypeResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("format_version,1\nlambda,measure,ratio\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.lambda, row.measure, row.ratio));
        }
        out
    }
}
