//! Envelope fits for geometric decay and a small least-squares helper.

/// Result of fitting values v(s) <= C q^s over integer distances s.
#[derive(Debug, Clone)]
pub struct DecayFit {
    /// Envelope constant; v(s) <= c * q^s holds for every envelope point.
    pub c: f64,
    /// Fitted decay ratio.
    pub q: f64,
    /// Per-distance maxima the fit was computed from.
    pub envelope: Vec<(usize, f64)>,
}

/// Ordinary least-squares line through (x, y): returns (intercept, slope).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return (sy / n, 0.0);
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (intercept, slope)
}

/// Fits the upper envelope of `points` (distance, value) by a geometric
/// profile: the per-distance maxima determine the slope via least squares
/// on the log scale, and the constant is raised until the envelope
/// dominates every point.
pub fn fit_envelope_decay<I: IntoIterator<Item = (usize, f64)>>(points: I) -> DecayFit {
    let mut maxima: Vec<(usize, f64)> = Vec::new();
    for (s, v) in points {
        let v = v.abs();
        match maxima.iter_mut().find(|(t, _)| *t == s) {
            Some((_, m)) => *m = m.max(v),
            None => maxima.push((s, v)),
        }
    }
    maxima.sort_by_key(|&(s, _)| s);
    let active: Vec<(usize, f64)> = maxima
        .iter()
        .copied()
        .filter(|&(_, v)| v > 1e-280)
        .collect();
    if active.len() < 2 {
        let c = active.first().map(|&(_, v)| v).unwrap_or(0.0);
        return DecayFit {
            c,
            q: 0.0,
            envelope: maxima,
        };
    }
    let xs: Vec<f64> = active.iter().map(|&(s, _)| s as f64).collect();
    let ys: Vec<f64> = active.iter().map(|&(_, v)| v.ln()).collect();
    let (_, slope) = linear_fit(&xs, &ys);
    let q = slope.exp();
    let mut c = 0.0f64;
    for &(s, v) in &active {
        let denom = q.powi(s as i32);
        if denom > 0.0 {
            c = c.max(v / denom);
        }
    }
    DecayFit {
        c,
        q,
        envelope: maxima,
    }
}
