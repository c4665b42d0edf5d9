//! Run configuration shared by the experiment subcommands.
//!
//! A config fully determines a run: the filtration (from a file or a
//! generator), the spline orders, how coefficients and signs are drawn,
//! the lambda grid and the evaluation grid density. All randomness is
//! derived from the single seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub filtration: FiltrationSource,
    pub orders: Vec<usize>,
    #[serde(default)]
    pub coefficients: CoefficientModel,
    #[serde(default)]
    pub signs: SignModel,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    /// Gauss nodes per direction within each finest cell.
    #[serde(default = "default_grid_nodes")]
    pub grid_nodes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_version() -> u32 {
    1
}

fn default_lambda_grid() -> Vec<f64> {
    (1..=20).map(|i| 0.25 * i as f64).collect()
}

fn default_grid_nodes() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FiltrationSource {
    File { path: String },
    Generator(GeneratorSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    /// Standard-form refinement with round-robin directions, uniformly
    /// random atoms and split fractions in [0.35, 0.65].
    Random { dim: usize, steps: usize },
    /// Midpoint splits of every atom, level by level.
    Dyadic { dim: usize, levels: usize },
    /// Like dyadic with a fixed off-center split fraction.
    QuasiDyadic {
        dim: usize,
        levels: usize,
        fraction: f64,
    },
    /// The one-dimensional stress family with epsilon = 1/ell; the order
    /// is taken from the config.
    ExampleFamily { ell: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum CoefficientModel {
    /// Independent standard normal coefficients, one vector per draw.
    Gaussian { draws: usize },
    /// Coefficients of a named target function.
    Target { target: TargetSpec },
}

impl Default for CoefficientModel {
    fn default() -> Self {
        CoefficientModel::Gaussian { draws: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum SignModel {
    Identity,
    AllFlip,
    Random { count: usize },
    /// Every sign vector; only feasible for systems with at most
    /// `max_len` functions.
    Exhaustive { max_len: usize },
}

impl Default for SignModel {
    fn default() -> Self {
        SignModel::Identity
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum TargetSpec {
    /// Smooth product bump, positive in the interior, zero on the boundary.
    Bump,
    /// Sum of |x_d - c_d| over the directions.
    Abs { center: Vec<f64> },
    /// Indicator of the sub-box left of `at` in every direction.
    Jump { at: Vec<f64> },
}

impl TargetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TargetSpec::Bump => "bump",
            TargetSpec::Abs { .. } => "abs",
            TargetSpec::Jump { .. } => "jump",
        }
    }

    /// The target as a function, scaled to the given domain box.
    pub fn function(&self, intervals: &[(f64, f64)]) -> impl Fn(&[f64]) -> f64 + '_ {
        let spec = self.clone();
        let spans: Vec<(f64, f64)> = intervals.to_vec();
        move |x: &[f64]| match &spec {
            TargetSpec::Bump => x
                .iter()
                .zip(&spans)
                .map(|(&xi, &(a, b))| {
                    let t = (xi - a) / (b - a);
                    0.5 * (1.0 - (2.0 * std::f64::consts::PI * t).cos())
                })
                .product(),
            TargetSpec::Abs { center } => x
                .iter()
                .zip(center)
                .map(|(&xi, &c)| (xi - c).abs())
                .sum(),
            TargetSpec::Jump { at } => {
                if x.iter().zip(at).all(|(&xi, &a)| xi < a) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != 1 {
            return Err(Error::Config(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        if self.orders.is_empty() || self.orders.iter().any(|&k| k == 0) {
            return Err(Error::Config("orders must be positive".into()));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::Config("lambda grid must be nonempty".into()));
        }
        let mut prev = 0.0;
        for &l in &self.lambda_grid {
            if !(l > prev) {
                return Err(Error::Config(
                    "lambda grid must be positive and strictly increasing".into(),
                ));
            }
            prev = l;
        }
        if self.grid_nodes == 0 {
            return Err(Error::Config("grid_nodes must be positive".into()));
        }
        match &self.coefficients {
            CoefficientModel::Gaussian { draws } if *draws == 0 => {
                return Err(Error::Config("need at least one coefficient draw".into()));
            }
            _ => {}
        }
        if let FiltrationSource::Generator(GeneratorSpec::QuasiDyadic { fraction, .. }) =
            &self.filtration
        {
            if !(*fraction > 0.0 && *fraction < 1.0) {
                return Err(Error::Config(format!(
                    "split fraction {fraction} must lie strictly between 0 and 1"
                )));
            }
        }
        Ok(())
    }
}

/// Self-contained dump of a built system: the filtration plus the
/// serialized functions, as written by `build-system` and read back by
/// `project`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SystemBundle {
    pub format_version: u32,
    pub filtration: orthospline::partition::FiltrationFile,
    pub system: orthospline::tensor_system::SystemFile,
}
