//! Gauss-Legendre quadrature.
//!
//! Spline products are polynomials on every atom, so fixed-order Gauss rules
//! integrate them exactly; the adaptive routine exists for integrands with
//! kinks such as |f|^p with non-even p.

/// Gauss-Legendre rule on the reference interval [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Builds the n-point rule; exact for polynomials of degree 2n - 1.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be at least 1");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Newton iteration on P_n starting from the Chebyshev-like guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    let (_, d2) = legendre_with_derivative(n, x);
                    dp = d2;
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussRule { nodes, weights }
    }

    /// Integrates `f` over [a, b].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Nodes of the rule mapped to [a, b].
    pub fn mapped_nodes(&self, a: f64, b: f64) -> Vec<f64> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().map(|x| mid + half * x).collect()
    }

    /// Weights of the rule scaled to [a, b].
    pub fn mapped_weights(&self, a: f64, b: f64) -> Vec<f64> {
        let half = 0.5 * (b - a);
        self.weights.iter().map(|w| w * half).collect()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive integration by comparing nested Gauss rules on each panel.
///
/// Used where the integrand is only piecewise smooth; `tol` is relative to
/// the accumulated absolute mass.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let coarse = GaussRule::new(8);
    let fine = GaussRule::new(16);
    let scale = fine.integrate(a, b, |x| f(x).abs()).abs().max(1e-300);
    let mut total = 0.0;
    let mut stack = vec![(a, b, 0usize)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let c = coarse.integrate(lo, hi, f);
        let fi = fine.integrate(lo, hi, f);
        if (c - fi).abs() <= tol * scale || depth >= 28 {
            total += fi;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    total
}
