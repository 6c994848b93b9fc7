//! Block-fading channel: `m` coherence blocks per codeword, each with an
//! independent power gain `z_l = |h_l|²`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::open_closed_unit;
use crate::scalar::Scalar;

/// Link parameters shared by every computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams<S> {
    /// Average SNR `E_s/N_0` as a linear power ratio.
    pub snr_linear: S,
    /// Symbols per coherence block.
    pub n: usize,
    /// Coherence blocks spanned by one codeword.
    pub m: usize,
    /// QoS exponent in 1/bits.
    pub theta: S,
}

impl<S: Scalar> SystemParams<S> {
    pub fn new(snr_linear: S, n: usize, m: usize, theta: S) -> Result<Self> {
        if !(snr_linear > S::zero() && snr_linear.is_finite()) {
            return Err(invalid("snr_linear", format!("must be finite and > 0, got {snr_linear}")));
        }
        if n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        if m == 0 {
            return Err(invalid("m", "must be at least 1"));
        }
        if !(theta >= S::zero() && theta.is_finite()) {
            return Err(invalid("theta", format!("must be finite and >= 0, got {theta}")));
        }
        Ok(Self {
            snr_linear,
            n,
            m,
            theta,
        })
    }

    pub fn from_snr_db(snr_db: S, n: usize, m: usize, theta: S) -> Result<Self> {
        Self::new(S::lit(10.0).powf(snr_db / S::lit(10.0)), n, m, theta)
    }

    /// Codeword length `n·m` in channel uses.
    #[inline]
    pub fn blocklength(&self) -> usize {
        self.n * self.m
    }

    /// `θ·n·m`, the exponent scale applied to a per-use rate.
    #[inline]
    pub fn theta_nm(&self) -> S {
        self.theta * S::from_count(self.blocklength())
    }

    pub fn with_m(self, m: usize) -> Result<Self> {
        Self::new(self.snr_linear, self.n, m, self.theta)
    }

    pub fn with_theta(self, theta: S) -> Result<Self> {
        Self::new(self.snr_linear, self.n, self.m, theta)
    }
}

/// Distribution of the per-block power gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FadingModel<S> {
    /// `z_l` i.i.d. exponential with the given mean.
    Rayleigh { mean_power: S },
    /// Fixed gains, one per block.
    Deterministic { gains: Vec<S> },
}

impl<S: Scalar> Default for FadingModel<S> {
    fn default() -> Self {
        FadingModel::Rayleigh {
            mean_power: S::one(),
        }
    }
}

impl<S: Scalar> FadingModel<S> {
    pub fn rayleigh(mean_power: S) -> Result<Self> {
        let model = FadingModel::Rayleigh { mean_power };
        model.validate()?;
        Ok(model)
    }

    pub fn deterministic(gains: Vec<S>) -> Result<Self> {
        let model = FadingModel::Deterministic { gains };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FadingModel::Rayleigh { mean_power } => {
                if !(*mean_power > S::zero() && mean_power.is_finite()) {
                    return Err(invalid("mean_power", "must be finite and > 0"));
                }
            }
            FadingModel::Deterministic { gains } => {
                if gains.is_empty() {
                    return Err(invalid("gains", "must not be empty"));
                }
                if gains.iter().any(|g| !(g.is_finite() && *g >= S::zero())) {
                    return Err(invalid("gains", "must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// Power gains seen by one codeword, one entry per coherence block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization<S> {
    z: Vec<S>,
}

impl<S: Scalar> ChannelRealization<S> {
    pub fn new(z: Vec<S>) -> Result<Self> {
        if z.is_empty() {
            return Err(invalid("z", "a realization needs at least one block"));
        }
        if z.iter().any(|g| !(g.is_finite() && *g >= S::zero())) {
            return Err(invalid("z", "gains must be finite and >= 0"));
        }
        Ok(Self { z })
    }

    #[inline]
    pub fn gains(&self) -> &[S] {
        &self.z
    }

    #[inline]
    pub fn blocks(&self) -> usize {
        self.z.len()
    }

    /// The realization seen by a codeword spanning only the first `m` blocks.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.z.len() {
            return Err(invalid(
                "m",
                format!("prefix length {m} outside 1..={}", self.z.len()),
            ));
        }
        Ok(Self {
            z: self.z[..m].to_vec(),
        })
    }

    pub(crate) fn check_blocks(&self, m: usize) -> Result<()> {
        if self.z.len() == m {
            Ok(())
        } else {
            Err(invalid(
                "z",
                format!("realization has {} blocks, parameters expect m = {m}", self.z.len()),
            ))
        }
    }
}

/// Draws the gains of one codeword.
///
/// Rayleigh gains use the inverse CDF `z = −μ̄·ln(u)` with `u` uniform on
/// `(0, 1]`, one uniform per block in block order.
pub fn sample_realization<S: Scalar, R: Rng + ?Sized>(
    model: &FadingModel<S>,
    m: usize,
    rng: &mut R,
) -> Result<ChannelRealization<S>> {
    if m == 0 {
        return Err(invalid("m", "must be at least 1"));
    }
    match model {
        FadingModel::Rayleigh { mean_power } => {
            let z = (0..m)
                .map(|_| *mean_power * S::lit(-open_closed_unit(rng).ln()))
                .collect();
            Ok(ChannelRealization { z })
        }
        FadingModel::Deterministic { gains } => {
            if gains.len() != m {
                return Err(invalid(
                    "gains",
                    format!("deterministic model has {} gains, m = {m}", gains.len()),
                ));
            }
            ChannelRealization::new(gains.clone())
        }
    }
}
