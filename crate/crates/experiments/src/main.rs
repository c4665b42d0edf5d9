use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orthospline::partition::TensorFiltration;
use orthospline::regularity::regularity_report;
use orthospline::tensor_system::{LeftToRight, TensorSystem};

use orthospline_experiments::ae_sweep::run_ae_sweep;
use orthospline_experiments::collection::build_collection;
use orthospline_experiments::config::{
    CoefficientModel, ExperimentConfig, FiltrationSource, GeneratorSpec, SystemBundle, TargetSpec,
};
use orthospline_experiments::corpus;
use orthospline_experiments::cz::cz_decompose;
use orthospline_experiments::grid::{eval_functions, EvalGrid};
use orthospline_experiments::remez::remez_check;
use orthospline_experiments::weak_type::{run_sign_flip, Workbench};
use orthospline_experiments::{Error, Result};

#[derive(Parser)]
#[command(
    name = "orthospline",
    version,
    about = "Experiments on orthonormal spline systems over interval filtrations"
)]
struct Cli {
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Random,
    Dyadic,
    QuasiDyadic,
    ExampleFamily,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetKind {
    Bump,
    Abs,
    Jump,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a filtration and write it as JSON.
    GenFiltration {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Steps for the random kind.
        #[arg(long, default_value_t = 12)]
        steps: usize,
        /// Levels for the dyadic kinds.
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Split fraction for the quasi-dyadic kind.
        #[arg(long, default_value_t = 0.4)]
        fraction: f64,
        /// Reciprocal gap width for the example family.
        #[arg(long, default_value_t = 8)]
        ell: usize,
        /// Spline order for the example family.
        #[arg(long, default_value_t = 2)]
        order: usize,
    },
    /// Build the orthonormal system on a filtration file.
    BuildSystem {
        filtration: PathBuf,
        #[arg(long, value_delimiter = ',')]
        orders: Vec<usize>,
    },
    /// Per-step projection error of a target against a saved system.
    Project {
        #[arg(long)]
        system: PathBuf,
        #[arg(long, value_enum, default_value_t = TargetKind::Bump)]
        target: TargetKind,
        /// Center (abs) or jump location, replicated across directions.
        #[arg(long)]
        param: Option<f64>,
        #[arg(long, default_value_t = 4)]
        grid_nodes: usize,
    },
    /// Shape report of a filtration for given orders.
    RegularityReport {
        filtration: PathBuf,
        #[arg(long, value_delimiter = ',')]
        orders: Vec<usize>,
        #[arg(long, default_value_t = 12)]
        beta_cap: usize,
    },
    /// Sign-flip weak-type sweep from a config.
    WeakType {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pointwise convergence table from a config.
    AeSweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Height decomposition over the covering family, one row per lambda.
    Cz {
        #[arg(long)]
        config: PathBuf,
    },
    /// Polynomial sublevel check.
    Remez {
        #[arg(long, default_value_t = 3)]
        degree: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 4096)]
        samples: usize,
    },
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn target_spec(kind: TargetKind, param: Option<f64>, dim: usize) -> TargetSpec {
    match kind {
        TargetKind::Bump => TargetSpec::Bump,
        TargetKind::Abs => TargetSpec::Abs {
            center: vec![param.unwrap_or(0.5); dim],
        },
        TargetKind::Jump => TargetSpec::Jump {
            at: vec![param.unwrap_or(0.5); dim],
        },
    }
}

fn run(cli: &Cli) -> Result<()> {
    let out = cli.out.as_deref();
    match &cli.cmd {
        Cmd::GenFiltration {
            kind,
            dim,
            steps,
            levels,
            fraction,
            ell,
            order,
        } => {
            let spec = match kind {
                GenKind::Random => GeneratorSpec::Random {
                    dim: *dim,
                    steps: *steps,
                },
                GenKind::Dyadic => GeneratorSpec::Dyadic {
                    dim: *dim,
                    levels: *levels,
                },
                GenKind::QuasiDyadic => GeneratorSpec::QuasiDyadic {
                    dim: *dim,
                    levels: *levels,
                    fraction: *fraction,
                },
                GenKind::ExampleFamily => GeneratorSpec::ExampleFamily { ell: *ell },
            };
            let filt = corpus::from_spec(&spec, &[*order], cli.seed.unwrap_or(0))?;
            emit(&filt.to_json()?, out)
        }
        Cmd::BuildSystem { filtration, orders } => {
            if orders.is_empty() {
                return Err(Error::Config("--orders must be given".into()));
            }
            let text = std::fs::read_to_string(filtration)?;
            let filt = Arc::new(TensorFiltration::from_json(&text)?);
            let system = TensorSystem::build(filt.clone(), orders, &mut LeftToRight)?;
            let bundle = SystemBundle {
                format_version: 1,
                filtration: filt.to_file(),
                system: system.to_file(),
            };
            emit(&serde_json::to_string_pretty(&bundle)?, out)
        }
        Cmd::Project {
            system,
            target,
            param,
            grid_nodes,
        } => {
            let text = std::fs::read_to_string(system)?;
            let bundle: SystemBundle = serde_json::from_str(&text)?;
            if bundle.format_version != 1 {
                return Err(Error::Config(format!(
                    "unsupported format_version {}",
                    bundle.format_version
                )));
            }
            let filt = Arc::new(TensorFiltration::from_file(&bundle.filtration)?);
            let sys = TensorSystem::from_file(filt.clone(), &bundle.system)?;
            let grid = EvalGrid::new(&filt, *grid_nodes)?;
            let values = eval_functions(&sys.functions, &grid)?;
            let bench = Workbench {
                filtration: filt.clone(),
                system: sys,
                grid,
                values,
            };
            let spec = target_spec(*target, *param, filt.dim());
            let (result, _) = run_ae_sweep(&bench, &spec, *grid_nodes)?;
            match cli.format {
                OutFormat::Csv => emit(&result.to_csv(), out),
                OutFormat::Json => emit(&serde_json::to_string_pretty(&result)?, out),
            }
        }
        Cmd::RegularityReport {
            filtration,
            orders,
            beta_cap,
        } => {
            if orders.is_empty() {
                return Err(Error::Config("--orders must be given".into()));
            }
            let text = std::fs::read_to_string(filtration)?;
            let filt = TensorFiltration::from_json(&text)?;
            let report = regularity_report(&filt, orders, *beta_cap)?;
            emit(&report.to_json()?, out)
        }
        Cmd::WeakType { config } => {
            let cfg = load_config(config, cli.seed)?;
            let bench = Workbench::from_config(&cfg)?;
            let result = run_sign_flip(&cfg, &bench)?;
            match cli.format {
                OutFormat::Csv => emit(&result.to_csv(), out),
                OutFormat::Json => emit(&serde_json::to_string_pretty(&result)?, out),
            }
        }
        Cmd::AeSweep { config } => {
            let cfg = load_config(config, cli.seed)?;
            let CoefficientModel::Target { target } = &cfg.coefficients else {
                return Err(Error::Config(
                    "the convergence sweep needs a target coefficient model".into(),
                ));
            };
            let bench = Workbench::from_config(&cfg)?;
            let (result, _) = run_ae_sweep(&bench, target, cfg.grid_nodes)?;
            match cli.format {
                OutFormat::Csv => emit(&result.to_csv(), out),
                OutFormat::Json => emit(&serde_json::to_string_pretty(&result)?, out),
            }
        }
        Cmd::Cz { config } => {
            let cfg = load_config(config, cli.seed)?;
            let filt = match &cfg.filtration {
                FiltrationSource::File { path } => {
                    let text = std::fs::read_to_string(path)?;
                    Arc::new(TensorFiltration::from_json(&text)?)
                }
                FiltrationSource::Generator(spec) => {
                    Arc::new(corpus::from_spec(spec, &cfg.orders, cfg.seed)?)
                }
            };
            let col = build_collection(&filt, &cfg.orders, 3)?;
            let max_k = cfg.orders.iter().copied().max().unwrap_or(1);
            let grid = EvalGrid::new(&col.filtration, cfg.grid_nodes.max(max_k))?;
            let values: Vec<f64> = match &cfg.coefficients {
                CoefficientModel::Target { target } => {
                    let intervals = col.filtration.intervals();
                    let f = target.function(&intervals);
                    (0..grid.len()).map(|p| f(grid.point(p))).collect()
                }
                CoefficientModel::Gaussian { .. } => {
                    let system = TensorSystem::build(filt.clone(), &cfg.orders, &mut LeftToRight)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    let a: Vec<f64> = (0..system.len())
                        .map(|_| rng.sample(rand_distr::StandardNormal))
                        .collect();
                    let mut vals = vec![0.0f64; grid.len()];
                    for (l, func) in system.functions.iter().enumerate() {
                        for p in 0..grid.len() {
                            vals[p] += a[l] * func.eval(grid.point(p))?;
                        }
                    }
                    vals
                }
            };
            let mut csv = String::from(
                "format_version,1\nlambda,trivial,e_count,overlap_max,overlap_ceiling,recon_residual,g_measure,h_l2_sq,h_inf,c_fit,localproj_max\n",
            );
            let mut outcomes = Vec::new();
            let mut failures = Vec::new();
            for &lambda in &cfg.lambda_grid {
                let (outcome, _) = cz_decompose(&col, &grid, &values, lambda)?;
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    outcome.lambda,
                    outcome.trivial,
                    outcome.e_count,
                    outcome.overlap_max,
                    outcome.overlap_ceiling,
                    outcome.recon_residual,
                    outcome.g_measure,
                    outcome.h_l2_sq,
                    outcome.h_inf,
                    outcome.c_fit,
                    outcome.localproj_max
                ));
                if outcome.recon_residual > 1e-10 {
                    failures.push(format!(
                        "lambda {}: reconstruction residual {}",
                        lambda, outcome.recon_residual
                    ));
                }
                if outcome.overlap_max > outcome.overlap_ceiling {
                    failures.push(format!(
                        "lambda {}: overlap {} above ceiling {}",
                        lambda, outcome.overlap_max, outcome.overlap_ceiling
                    ));
                }
                if !outcome.cover_ok {
                    failures.push(format!("lambda {}: superlevel set not covered", lambda));
                }
                outcomes.push(outcome);
            }
            match cli.format {
                OutFormat::Csv => emit(&csv, out)?,
                OutFormat::Json => emit(&serde_json::to_string_pretty(&outcomes)?, out)?,
            }
            if failures.is_empty() {
                Ok(())
            } else {
                Err(Error::Assertion(failures.join("; ")))
            }
        }
        Cmd::Remez {
            degree,
            dim,
            trials,
            samples,
        } => {
            let report = remez_check(*degree, *dim, *trials, *samples, cli.seed.unwrap_or(0))?;
            match cli.format {
                OutFormat::Csv => emit(&report.to_csv(), out)?,
                OutFormat::Json => emit(&serde_json::to_string_pretty(&report)?, out)?,
            }
            if report.violations == 0 {
                Ok(())
            } else {
                Err(Error::Assertion(format!(
                    "{} of {} trials fell below the sampling cutoff",
                    report.violations, report.trials
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Assertion(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
