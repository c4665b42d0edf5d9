//! Monte-Carlo check of a sublevel bound for polynomials on boxes.
//!
//! For a polynomial of total degree at most r on a box V in d variables,
//! the set where |p| reaches at least (8d)^{-r} of its sup on V must fill
//! at least half of V. Each trial draws a random polynomial and box,
//! estimates the sup on a tensor Chebyshev grid with a coordinatewise
//! golden-section polish, and samples the box uniformly; a violation is a
//! sampled fraction below 1/2 by more than three standard errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

struct Poly {
    dim: usize,
    terms: Vec<(Vec<usize>, f64)>,
    degree: usize,
}

impl Poly {
    fn random(dim: usize, degree: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut terms = Vec::new();
        let mut expo = vec![0usize; dim];
        gather_terms(&mut expo, 0, degree, &mut terms, rng);
        Poly { dim, terms, degree }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut powers = vec![[0.0f64; 8]; self.dim];
        for d in 0..self.dim {
            let mut v = 1.0;
            for e in 0..=self.degree {
                powers[d][e] = v;
                v *= x[d];
            }
        }
        self.terms
            .iter()
            .map(|(expo, c)| {
                let mut t = *c;
                for d in 0..self.dim {
                    t *= powers[d][expo[d]];
                }
                t
            })
            .sum()
    }
}

fn gather_terms(
    expo: &mut Vec<usize>,
    d: usize,
    budget: usize,
    terms: &mut Vec<(Vec<usize>, f64)>,
    rng: &mut ChaCha8Rng,
) {
    if d == expo.len() {
        terms.push((expo.clone(), rng.sample(StandardNormal)));
        return;
    }
    for e in 0..=budget {
        expo[d] = e;
        gather_terms(expo, d + 1, budget - e, terms, rng);
    }
    expo[d] = 0;
}

/// Sup of |p| on the box: Chebyshev-extrema tensor grid, then a few
/// rounds of coordinatewise golden-section improvement from the best
/// grid point. Never overestimates.
fn sup_abs(p: &Poly, bx: &[(f64, f64)]) -> (f64, Vec<f64>) {
    let m = 2 * p.degree + 3;
    let axes: Vec<Vec<f64>> = bx
        .iter()
        .map(|&(a, b)| {
            (0..m)
                .map(|i| {
                    let t = (std::f64::consts::PI * i as f64 / (m - 1) as f64).cos();
                    0.5 * (a + b) + 0.5 * (b - a) * t
                })
                .collect()
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut argmax = vec![0.0; p.dim];
    let mut idx = vec![0usize; p.dim];
    let mut x = vec![0.0f64; p.dim];
    'grid: loop {
        for d in 0..p.dim {
            x[d] = axes[d][idx[d]];
        }
        let v = p.eval(&x).abs();
        if v > best {
            best = v;
            argmax.copy_from_slice(&x);
        }
        let mut d = p.dim;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            if idx[d] < m {
                continue 'grid;
            }
            idx[d] = 0;
        }
        break;
    }

    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut x = argmax.clone();
    for _ in 0..2 {
        for d in 0..p.dim {
            let (mut lo, mut hi) = bx[d];
            let eval_at = |x: &mut Vec<f64>, t: f64| {
                x[d] = t;
                p.eval(x).abs()
            };
            let mut c = hi - phi * (hi - lo);
            let mut e = lo + phi * (hi - lo);
            let mut fc = eval_at(&mut x, c);
            let mut fe = eval_at(&mut x, e);
            for _ in 0..40 {
                if fc > fe {
                    hi = e;
                    e = c;
                    fe = fc;
                    c = hi - phi * (hi - lo);
                    fc = eval_at(&mut x, c);
                } else {
                    lo = c;
                    c = e;
                    fc = fe;
                    e = lo + phi * (hi - lo);
                    fe = eval_at(&mut x, e);
                }
            }
            let t = if fc > fe { c } else { e };
            let ft = fc.max(fe);
            if ft > best {
                best = ft;
                x[d] = t;
            } else {
                x[d] = argmax[d];
            }
            argmax.copy_from_slice(&x);
        }
    }
    (best, argmax)
}

#[derive(Debug, Clone, Serialize)]
pub struct RemezTrial {
    pub trial: usize,
    pub degree: usize,
    pub dim: usize,
    pub sup: f64,
    pub threshold: f64,
    pub fraction: f64,
    pub cutoff: f64,
    pub violation: bool,
}

#[derive(Debug, Serialize)]
pub struct RemezReport {
    pub format_version: u32,
    pub degree: usize,
    pub dim: usize,
    pub trials: usize,
    pub samples: usize,
    pub violations: usize,
    /// Smallest observed fraction minus the cutoff, over all trials.
    pub min_margin: f64,
    pub rows: Vec<RemezTrial>,
}

pub fn remez_check(
    degree: usize,
    dim: usize,
    trials: usize,
    samples: usize,
    seed: u64,
) -> Result<RemezReport> {
    if degree == 0 || degree > 6 {
        return Err(Error::Config(format!(
            "degree {degree} outside the supported range 1..=6"
        )));
    }
    if dim == 0 || dim > 3 {
        return Err(Error::Config(format!(
            "dimension {dim} outside the supported range 1..=3"
        )));
    }
    if samples < 16 {
        return Err(Error::Config("need at least 16 samples per trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cutoff = 0.5 - 3.0 * 0.5 / (samples as f64).sqrt();
    let scale = (8.0 * dim as f64).powi(-(degree as i32));
    let mut rows = Vec::with_capacity(trials);
    let mut violations = 0usize;
    let mut min_margin = f64::INFINITY;
    for trial in 0..trials {
        let p = Poly::random(dim, degree, &mut rng);
        let bx: Vec<(f64, f64)> = (0..dim)
            .map(|_| {
                let a = rng.gen_range(-1.0..1.0);
                let len = rng.gen_range(0.5..2.0);
                (a, a + len)
            })
            .collect();
        let (sup, _) = sup_abs(&p, &bx);
        let threshold = scale * sup;
        let mut hits = 0usize;
        let mut x = vec![0.0f64; dim];
        for _ in 0..samples {
            for d in 0..dim {
                x[d] = rng.gen_range(bx[d].0..bx[d].1);
            }
            if p.eval(&x).abs() >= threshold {
                hits += 1;
            }
        }
        let fraction = hits as f64 / samples as f64;
        let violation = fraction < cutoff;
        if violation {
            violations += 1;
        }
        min_margin = min_margin.min(fraction - cutoff);
        rows.push(RemezTrial {
            trial,
            degree,
            dim,
            sup,
            threshold,
            fraction,
            cutoff,
            violation,
        });
    }
    Ok(RemezReport {
        format_version: 1,
        degree,
        dim,
        trials,
        samples,
        violations,
        min_margin,
        rows,
    })
}

impl RemezReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("format_version,1\ntrial,degree,dim,sup,threshold,fraction,cutoff,violation\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.trial, r.degree, r.dim, r.sup, r.threshold, r.fraction, r.cutoff, r.violation
            ));
        }
        out
    }
}
