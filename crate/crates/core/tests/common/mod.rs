//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use blockrate::{q_function, q_inverse, q_inverse_deriv, Table};

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `P(N(0,1) > x)` for `x ≥ 0` by integrating the density, scaled so the
/// tolerance is relative.
pub fn gaussian_tail(x: f64) -> f64 {
    assert!(x >= 0.0);
    // substitute t = x + s and factor out exp(−x²/2)
    let scale = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let g = |s: f64| (-x * s - 0.5 * s * s).exp();
    scale * integrate(g, 0.0, 40.0, 1e-15)
}

pub fn normal_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 - gaussian_tail(x)
    } else {
        gaussian_tail(-x)
    }
}

/// Kolmogorov–Smirnov distance between `samples` and `N(mean, sd²)`.
/// Uses the library's `Q`, which is checked against [`gaussian_tail`].
pub fn ks_normal(samples: &mut [f64], mean: f64, sd: f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = q_function((mean - x) / sd).unwrap().get();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Slope of the sample-average `Ψ` at `ε`, differentiated term by term:
/// `(a·Q⁻¹'(ε)·(1−ε) − 1)·e^{a·Q⁻¹(ε)+b} + 1` with `a = θnm·δ`, `b = −θnm·μ`.
pub fn psi_slope(table: &Table, epsilon: f64) -> f64 {
    let tnm = table.params().theta_nm();
    let (x, dx) = (q_inverse(epsilon).unwrap(), q_inverse_deriv(epsilon).unwrap());
    let stats = table.stats();
    let sum: f64 = stats
        .iter()
        .map(|s| {
            let (a, b) = (tnm * s.delta, -tnm * s.mu);
            (a * dx * (1.0 - epsilon) - 1.0) * (a * x + b).exp() + 1.0
        })
        .sum();
    sum / stats.len() as f64
}

/// `ln(Ψ(ε) − ε) = ln((1−ε)·mean exp(−θnm·R(ε; z)))`, summed in log space.
/// `Ψ − ε` carries all the curvature of `Ψ` without the cancellation
/// against `ε` that hides it when the exponential term is tiny.
pub fn ln_psi_excess(table: &Table, epsilon: f64) -> f64 {
    let tnm = table.params().theta_nm();
    let x = q_inverse(epsilon).unwrap();
    let exps: Vec<f64> = table.stats().iter().map(|s| -tnm * (s.mu - s.delta * x)).collect();
    let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exps.iter().map(|e| (e - top).exp()).sum();
    (-epsilon).ln_1p() + top + (sum / exps.len() as f64).ln()
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (points - 1) as f64).exp())
        .collect()
}

pub fn lin_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect()
}

/// Number of sign changes in consecutive differences, ignoring steps
/// smaller than `floor` in magnitude.
pub fn slope_sign_changes(values: &[f64], floor: f64) -> usize {
    let signs: Vec<f64> = values
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| d.abs() > floor)
        .map(f64::signum)
        .collect();
    signs.windows(2).filter(|s| s[0] != s[1]).count()
}
