//! Finite-blocklength rate statistics for Gaussian inputs over block fading.
//!
//! For a codeword of `n·m` symbols spanning gains `z_1..z_m`, the normalized
//! mutual-information density is modelled as a real Gaussian with mean `μ`
//! (the average per-block capacity) and standard deviation `δ` (the
//! dispersion shrinking as `1/√(nm)`). Inverting its CDF at `ε` gives the
//! rate supported with decoding error probability `ε`:
//!
//! ```text
//! R(ε) = μ − δ·Q⁻¹(ε)
//! ```
//!
//! The Feinstein slack terms (power-constraint violation probability and the
//! `e^{−nmγ}` term with its `γ` offset) are dropped; they vanish as `nm`
//! grows. The exact distribution of the density, a weighted sum of Laplace
//! variables, is available through [`mi_density_sample_exact`] for checking
//! the Gaussian model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, SystemParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::special_fn::{q_inverse, q_tail, Probability};

/// How a negative rate bound enters the service process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampMode {
    /// Use `μ − δ·Q⁻¹(ε)` as is, including negative values.
    #[default]
    Faithful,
    /// Treat a negative rate as zero service.
    Clamp,
}

impl ClampMode {
    #[inline]
    pub fn apply<S: Scalar>(self, rate: S) -> S {
        match self {
            ClampMode::Faithful => rate,
            ClampMode::Clamp => rate.max(S::zero()),
        }
    }
}

/// Mean and dispersion of the normalized mutual-information density, in
/// bits per channel use.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateStats<S> {
    pub mu: S,
    pub delta: S,
}

impl<S: Scalar> RateStats<S> {
    /// `μ − δ·q` where `q = Q⁻¹(ε)` has already been evaluated.
    #[inline]
    pub fn lower_bound_at(&self, q_inv: S) -> S {
        self.mu - self.delta * q_inv
    }

    pub fn lower_bound(&self, epsilon: S) -> Result<S> {
        Ok(self.lower_bound_at(q_inverse(epsilon)?))
    }

    /// `Q((μ − R)/δ)`, with the `δ = 0` limit taken as a step at `μ`.
    #[inline]
    pub fn error_probability(&self, rate: S) -> S {
        if self.delta > S::zero() {
            q_tail((self.mu - rate) / self.delta)
        } else if rate < self.mu {
            S::zero()
        } else if rate > self.mu {
            S::one()
        } else {
            S::lit(0.5)
        }
    }
}

pub fn rate_stats<S: Scalar>(z: &ChannelRealization<S>, params: &SystemParams<S>) -> Result<RateStats<S>> {
    z.check_blocks(params.m)?;
    Ok(rate_stats_unchecked(z.gains(), params))
}

/// `μ = (1/m)·Σ log₂(1 + SNR·z_l)` and
/// `δ² = (log₂²e/m)·Σ 2·SNR·z_l / (nm·(1 + SNR·z_l))`.
pub(crate) fn rate_stats_unchecked<S: Scalar>(gains: &[S], params: &SystemParams<S>) -> RateStats<S> {
    let m = S::from_count(gains.len());
    let nm = S::from_count(params.n) * m;
    let two = S::lit(2.0);
    let (log_sum, disp_sum) = gains.iter().fold((S::zero(), S::zero()), |(l, d), &z| {
        let sz = params.snr_linear * z;
        (l + sz.ln_1p(), d + two * sz / (nm * (S::one() + sz)))
    });
    let log2e = S::LOG2_E();
    RateStats {
        mu: log_sum * log2e / m,
        delta: log2e * (disp_sum / m).sqrt(),
    }
}

/// Rate achievable with decoding error probability `epsilon`:
/// `μ − δ·Q⁻¹(ε)`. Can be negative for small `ε` on a weak channel.
pub fn rate_lower_bound<S: Scalar>(
    z: &ChannelRealization<S>,
    params: &SystemParams<S>,
    epsilon: S,
) -> Result<S> {
    let stats = rate_stats(z, params)?;
    stats.lower_bound(epsilon)
}

/// Codeword error probability when transmitting at a fixed `rate`.
pub fn error_probability<S: Scalar>(
    z: &ChannelRealization<S>,
    params: &SystemParams<S>,
    rate: S,
) -> Result<Probability<S>> {
    if !(rate >= S::zero()) {
        return Err(Error::Domain {
            function: "error_probability",
            value: rate.as_f64(),
            domain: "rate >= 0",
        });
    }
    let stats = rate_stats(z, params)?;
    Probability::new(stats.error_probability(rate))
}

/// Laplace(0, 1) variate (variance 2) by inverting its CDF at `u ∈ (0, 1)`.
#[inline]
fn laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u = ((rng.gen::<u64>() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    if u < 0.5 {
        (2.0 * u).ln()
    } else {
        -(2.0 * (1.0 - u)).ln()
    }
}

/// One exact draw of the normalized mutual-information density
/// `μ + (log₂e/(nm))·Σ_l √(SNR·z_l/(1+SNR·z_l))·Σ_{i≤n} w_{li}`
/// with `w_{li}` i.i.d. Laplace of variance 2.
pub fn mi_density_sample_exact<S: Scalar, R: Rng + ?Sized>(
    z: &ChannelRealization<S>,
    params: &SystemParams<S>,
    rng: &mut R,
) -> Result<S> {
    let stats = rate_stats(z, params)?;
    let snr = params.snr_linear.as_f64();
    let mut fluctuation = 0.0_f64;
    for &g in z.gains() {
        let sz = snr * g.as_f64();
        let weight = (sz / (1.0 + sz)).sqrt();
        let block: f64 = (0..params.n).map(|_| laplace(rng)).sum();
        fluctuation += weight * block;
    }
    let scale = std::f64::consts::LOG2_E / params.blocklength() as f64;
    Ok(stats.mu + S::lit(scale * fluctuation))
}
