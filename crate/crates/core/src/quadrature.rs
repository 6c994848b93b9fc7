//! Gauss–Laguerre quadrature for expectations over exponential gains.
//!
//! With a single block per codeword and Rayleigh fading, `E{g(z)}` is
//! `∫₀^∞ e^{−t} g(μ̄·t) dt`, which the Laguerre rule integrates directly.
//! This gives a deterministic reference for the Monte Carlo estimates.

use crate::channel::SystemParams;
use crate::error::{invalid, Result};
use crate::fbl::{rate_stats_unchecked, ClampMode};
use crate::special_fn::q_inverse;

/// Default node count of the cross-check.
pub const DEFAULT_NODES: usize = 200;

/// Nodes and weights of the `n`-point rule for the weight `e^{−x}` on `[0, ∞)`.
#[derive(Debug, Clone)]
pub struct GaussLaguerre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLaguerre {
    /// Newton iteration on `L_n` from asymptotic initial guesses. Weights
    /// `1/(x·L_n'(x)²)` below the `f64` range underflow to zero.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("nodes", "must be at least 1"));
        }
        let nf = n as f64;
        let mut nodes = vec![0.0_f64; n];
        let mut weights = vec![0.0_f64; n];
        let mut z = 0.0_f64;
        for i in 0..n {
            z = match i {
                0 => 3.0 / (1.0 + 2.4 * nf),
                1 => z + 15.0 / (1.0 + 2.5 * nf),
                _ => {
                    let ai = (i - 1) as f64;
                    z + (1.0 + 2.55 * ai) / (1.9 * ai) * (z - nodes[i - 2])
                }
            };
            let mut deriv = 0.0;
            let mut prev = 0.0;
            for _ in 0..100 {
                // three-term recurrence (j+1)L_{j+1} = (2j+1−x)L_j − j·L_{j−1}
                let mut p1 = 1.0_f64;
                let mut p2 = 0.0_f64;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf - 1.0 - z) * p2 - (jf - 1.0) * p3) / jf;
                }
                deriv = nf * (p1 - p2) / z;
                prev = p2;
                let z1 = z;
                z = z1 - p1 / deriv;
                if (z - z1).abs() <= 3e-14 * z {
                    break;
                }
            }
            nodes[i] = z;
            // w = 1/(x·L_n'(x)²) = −1/(n·L_n'(x)·L_{n−1}(x)) at a root
            weights[i] = (-1.0 / (deriv * nf) / prev).max(0.0);
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫₀^∞ e^{−x} f(x) dx`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

fn check_single_block(params: &SystemParams<f64>, mean_power: f64) -> Result<()> {
    if params.m != 1 {
        return Err(invalid("m", "quadrature reference needs m = 1"));
    }
    if !(params.theta > 0.0) {
        return Err(invalid("theta", "must be > 0"));
    }
    if !(mean_power > 0.0) {
        return Err(invalid("mean_power", "must be > 0"));
    }
    Ok(())
}

/// Variable-rate effective rate for `m = 1` Rayleigh fading by quadrature.
pub fn effective_rate_variable(
    rule: &GaussLaguerre,
    epsilon: f64,
    params: &SystemParams<f64>,
    mean_power: f64,
    clamp: ClampMode,
) -> Result<f64> {
    check_single_block(params, mean_power)?;
    let q_inv = q_inverse(epsilon)?;
    let theta_nm = params.theta_nm();
    let psi = rule.integrate(|t| {
        let stats = rate_stats_unchecked(&[mean_power * t], params);
        let rate = clamp.apply(stats.lower_bound_at(q_inv));
        epsilon + (1.0 - epsilon) * (-theta_nm * rate).exp()
    });
    Ok(-psi.ln() / theta_nm)
}

/// Fixed-rate effective rate for `m = 1` Rayleigh fading by quadrature.
pub fn effective_rate_fixed(
    rule: &GaussLaguerre,
    rate: f64,
    params: &SystemParams<f64>,
    mean_power: f64,
) -> Result<f64> {
    check_single_block(params, mean_power)?;
    if !(rate >= 0.0) {
        return Err(invalid("rate", "must be >= 0"));
    }
    let theta_nm = params.theta_nm();
    let decay = (-theta_nm * rate).exp();
    let phi = rule.integrate(|t| {
        let p = rate_stats_unchecked(&[mean_power * t], params).error_probability(rate);
        p + (1.0 - p) * decay
    });
    Ok(-phi.ln() / theta_nm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments_of_exponential() {
        for n in [5, 40, 200] {
            let rule = GaussLaguerre::new(n).unwrap();
            assert!(rule.nodes().windows(2).all(|w| w[0] < w[1]));
            assert!(rule.weights().iter().all(|&w| w >= 0.0));
            assert_relative_eq!(rule.integrate(|_| 1.0), 1.0, max_relative = 1e-10);
            assert_relative_eq!(rule.integrate(|x| x), 1.0, max_relative = 1e-10);
            assert_relative_eq!(rule.integrate(|x| x * x), 2.0, max_relative = 1e-10);
        }
        let rule = GaussLaguerre::new(200).unwrap();
        assert_relative_eq!(rule.integrate(|x| (-x).exp()), 0.5, max_relative = 1e-10);
        assert_relative_eq!(rule.integrate(|x| x.powi(5)), 120.0, max_relative = 1e-10);
    }

    #[test]
    fn two_point_rule() {
        let rule = GaussLaguerre::new(2).unwrap();
        let s2 = 2.0_f64.sqrt();
        assert_relative_eq!(rule.nodes()[0], 2.0 - s2, max_relative = 1e-13);
        assert_relative_eq!(rule.nodes()[1], 2.0 + s2, max_relative = 1e-13);
        assert_relative_eq!(rule.weights()[0], (2.0 + s2) / 4.0, max_relative = 1e-13);
    }

    #[test]
    fn rejects_multi_block() {
        let rule = GaussLaguerre::new(10).unwrap();
        let p = SystemParams::new(1.0, 50, 2, 0.01).unwrap();
        assert!(effective_rate_variable(&rule, 0.1, &p, 1.0, ClampMode::Faithful).is_err());
    }
}
