//! Seeded filtration generators for the experiment corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orthospline::partition::{TensorFiltration, TensorStep};
use orthospline::regularity::{dyadic_extension, make_example_filtration, SplitRule};

use crate::config::GeneratorSpec;
use crate::error::{Error, Result};

/// Random standard-form filtration on the unit box. Directions rotate
/// round robin, the atom is uniform and the split fraction stays within
/// [0.35, 0.65], which keeps the regularity parameters moderate.
pub fn random_filtration(seed: u64, dim: usize, steps: usize) -> Result<TensorFiltration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intervals = vec![(0.0, 1.0); dim];
    let mut filt = TensorFiltration::new(&intervals)?;
    for s in 0..steps {
        let dir = s % dim;
        let part = filt.factor_stage(filt.len(), dir)?;
        let atom = rng.gen_range(0..part.atom_count());
        let (a, b) = part.atom(atom)?;
        let f = rng.gen_range(0.35..0.65);
        filt.push_step(TensorStep {
            dir,
            atom,
            x: a + f * (b - a),
        })?;
    }
    Ok(filt)
}

pub fn dyadic(dim: usize, levels: usize) -> Result<TensorFiltration> {
    let base = TensorFiltration::new(&vec![(0.0, 1.0); dim])?;
    Ok(dyadic_extension(&base, levels, SplitRule::Midpoint)?)
}

pub fn quasi_dyadic(dim: usize, levels: usize, fraction: f64) -> Result<TensorFiltration> {
    let base = TensorFiltration::new(&vec![(0.0, 1.0); dim])?;
    Ok(dyadic_extension(&base, levels, SplitRule::Fraction(fraction))?)
}

/// One-dimensional stress-family filtration, rooted at the trivial
/// partition so the base breaks are replayed as ordinary steps. Returns
/// the filtration and the number of those base steps.
pub fn example_family(ell: usize, order: usize) -> Result<(TensorFiltration, usize)> {
    let fam = make_example_filtration(ell, order)?;
    let splits = fam.trivial_rooted_splits()?;
    let steps: Vec<TensorStep> = splits
        .iter()
        .map(|s| TensorStep {
            dir: 0,
            atom: s.atom,
            x: s.x,
        })
        .collect();
    let filt = TensorFiltration::from_steps(&[(-1.0, 1.0)], &steps)?;
    Ok((filt, fam.base_split_count()))
}

/// Builds the filtration described by a generator spec. The order used by
/// the example family is the first entry of `orders`.
pub fn from_spec(spec: &GeneratorSpec, orders: &[usize], seed: u64) -> Result<TensorFiltration> {
    match spec {
        GeneratorSpec::Random { dim, steps } => random_filtration(seed, *dim, *steps),
        GeneratorSpec::Dyadic { dim, levels } => dyadic(*dim, *levels),
        GeneratorSpec::QuasiDyadic {
            dim,
            levels,
            fraction,
        } => quasi_dyadic(*dim, *levels, *fraction),
        GeneratorSpec::ExampleFamily { ell } => {
            let order = *orders.first().ok_or_else(|| {
                Error::Config("example family needs an order".into())
            })?;
            Ok(example_family(*ell, order)?.0)
        }
    }
}

/// Extends a filtration by one full dyadic level, for the refinement
/// stability checks.
pub fn refine_once(filt: &TensorFiltration) -> Result<TensorFiltration> {
    Ok(dyadic_extension(filt, 1, SplitRule::Midpoint)?)
}
