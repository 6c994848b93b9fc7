//! Monte Carlo effective rate under a QoS exponent `θ`.
//!
//! Variable rate (transmitter adapts to `z`, error probability fixed at `ε`):
//!
//! ```text
//! Ψ(ε)   = E{ ε + (1−ε)·exp(−θ·n·m·R(ε; z)) }
//! R_E(θ) = −ln Ψ(ε) / (θ·n·m)
//! ```
//!
//! Fixed rate `R` (error probability `ε(z, R)` varies with the channel):
//!
//! ```text
//! Φ(R)      = E{ ε(z,R) + (1−ε(z,R))·exp(−θ·n·m·R) }
//! R_E(θ, R) = −ln Φ(R) / (θ·n·m)
//! ```
//!
//! Expectations are sample means over a [`SampleSet`] shared between all
//! evaluation points. Sums are formed over fixed-size chunks and merged
//! left to right, so the result does not depend on the worker count.
//! Chunks whose summands would overflow are accumulated relative to their
//! largest log-summand.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_realization, ChannelRealization, FadingModel, SystemParams};
use crate::error::{invalid, Error, Result};
use crate::fbl::{rate_stats_unchecked, ClampMode, RateStats};
use crate::rng::{substream, Domain};
use crate::scalar::Scalar;
use crate::special_fn::{ln_q, q_inverse};

/// Default number of channel realizations per expectation.
pub const DEFAULT_SAMPLES: usize = 100_000;

const CHUNK: usize = 1024;

/// Channel realizations reused across every evaluation point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<S> {
    realizations: Vec<ChannelRealization<S>>,
    seed: u64,
}

impl<S: Scalar> SampleSet<S> {
    /// Draws `count` realizations of `m` blocks. Realization `i` comes from
    /// substream `i` of `seed`.
    pub fn draw(model: &FadingModel<S>, m: usize, count: usize, seed: u64) -> Result<Self> {
        model.validate()?;
        if count == 0 {
            return Err(invalid("samples", "must be at least 1"));
        }
        let realizations = (0..count)
            .into_par_iter()
            .map(|i| sample_realization(model, m, &mut substream(seed, Domain::Fading, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { realizations, seed })
    }

    pub fn from_realizations(realizations: Vec<ChannelRealization<S>>, seed: u64) -> Result<Self> {
        let Some(first) = realizations.first() else {
            return Err(invalid("realizations", "must not be empty"));
        };
        let m = first.blocks();
        if realizations.iter().any(|r| r.blocks() != m) {
            return Err(invalid("realizations", "all realizations must have the same length"));
        }
        Ok(Self { realizations, seed })
    }

    /// The same samples truncated to their first `m` blocks.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        let realizations = self
            .realizations
            .iter()
            .map(|r| r.prefix(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            realizations,
            seed: self.seed,
        })
    }

    pub fn realizations(&self) -> &[ChannelRealization<S>] {
        &self.realizations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.realizations.len()
    }

    pub fn blocks(&self) -> usize {
        self.realizations[0].blocks()
    }
}

/// Sample-mean estimate of an effective rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRateEstimate<S> {
    /// Bits per channel use.
    pub value: S,
    pub std_error: S,
    pub count: usize,
}

/// Transmission discipline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatePolicy<S> {
    /// Rate adapted to the channel so that the error probability is `epsilon`.
    Variable { epsilon: S },
    /// Constant rate in bits per channel use; error probability varies.
    Fixed { rate: S },
}

/// Summand of an expectation, either as a plain value or as its logarithm
/// when the plain value is not representable.
#[derive(Clone, Copy)]
enum Term<S> {
    Direct(S),
    Log(S),
}

/// Mean and centred second moment of a group of summands, stored relative
/// to `exp(log_scale)`.
#[derive(Clone, Copy, Debug)]
struct Moments<S> {
    count: usize,
    log_scale: S,
    mean: S,
    m2: S,
}

impl<S: Scalar> Moments<S> {
    fn rescaled(self, log_scale: S) -> Self {
        if self.log_scale == log_scale {
            return self;
        }
        let f = (self.log_scale - log_scale).exp();
        Self {
            count: self.count,
            log_scale,
            mean: self.mean * f,
            m2: self.m2 * f * f,
        }
    }

    fn merge(self, other: Self) -> Self {
        if self.count == 0 {
            return other;
        }
        let scale = self.log_scale.max(other.log_scale);
        let a = self.rescaled(scale);
        let b = other.rescaled(scale);
        let na = S::from_count(a.count);
        let nb = S::from_count(b.count);
        let n = na + nb;
        let d = b.mean - a.mean;
        Self {
            count: a.count + b.count,
            log_scale: scale,
            mean: a.mean + d * nb / n,
            m2: a.m2 + b.m2 + d * d * na * nb / n,
        }
    }

    fn from_chunk(terms: &[Term<S>]) -> Self {
        let all_direct = terms.iter().all(|t| matches!(t, Term::Direct(_)));
        let log_scale = if all_direct {
            S::zero()
        } else {
            terms
                .iter()
                .map(|t| match *t {
                    Term::Direct(v) => v.ln(),
                    Term::Log(l) => l,
                })
                .fold(S::neg_infinity(), S::max)
        };
        let value = |t: &Term<S>| match *t {
            Term::Direct(v) if all_direct => v,
            Term::Direct(v) => v * (-log_scale).exp(),
            Term::Log(l) => (l - log_scale).exp(),
        };
        let n = S::from_count(terms.len());
        let mean = terms.iter().map(value).sum::<S>() / n;
        let m2 = terms
            .iter()
            .map(|t| {
                let d = value(t) - mean;
                d * d
            })
            .sum::<S>();
        Self {
            count: terms.len(),
            log_scale,
            mean,
            m2,
        }
    }

    /// `ln` of the mean and the standard error of the mean divided by the
    /// mean (the delta-method error of the log).
    fn log_mean_and_rel_error(self) -> (S, S) {
        let n = S::from_count(self.count);
        let ln_mean = self.log_scale + self.mean.ln();
        let var = if self.count > 1 {
            self.m2 / (n - S::one())
        } else {
            S::zero()
        };
        (ln_mean, (var / n).sqrt() / self.mean)
    }
}

fn is_ok_term<S: Scalar>(t: &Term<S>) -> bool {
    match *t {
        Term::Direct(v) => v.is_finite() && v > S::zero(),
        Term::Log(l) => l.is_finite(),
    }
}

/// `ln(e^a + e^b)`.
#[inline]
fn log_add_exp<S: Scalar>(a: S, b: S) -> S {
    let hi = a.max(b);
    if hi == S::neg_infinity() {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Per-realization rate statistics for one parameter set, computed once and
/// reused across `ε`, `R` and `θ`.
#[derive(Debug, Clone)]
pub struct RateTable<S> {
    stats: Vec<RateStats<S>>,
    params: SystemParams<S>,
    clamp: ClampMode,
}

impl<S: Scalar> RateTable<S> {
    pub fn new(samples: &SampleSet<S>, params: &SystemParams<S>, clamp: ClampMode) -> Result<Self> {
        if samples.blocks() != params.m {
            return Err(invalid(
                "m",
                format!("sample set has {} blocks per realization, parameters expect {}", samples.blocks(), params.m),
            ));
        }
        let stats = samples
            .realizations()
            .par_iter()
            .map(|r| rate_stats_unchecked(r.gains(), params))
            .collect();
        Ok(Self {
            stats,
            params: *params,
            clamp,
        })
    }

    pub fn params(&self) -> &SystemParams<S> {
        &self.params
    }

    pub fn clamp(&self) -> ClampMode {
        self.clamp
    }

    pub fn stats(&self) -> &[RateStats<S>] {
        &self.stats
    }

    /// Same realizations under a different `θ`.
    pub fn with_theta(&self, theta: S) -> Result<Self> {
        Ok(Self {
            stats: self.stats.clone(),
            params: self.params.with_theta(theta)?,
            clamp: self.clamp,
        })
    }

    fn moments<F>(&self, summand: F) -> Result<Moments<S>>
    where
        F: Fn(&RateStats<S>) -> Term<S> + Sync,
    {
        let chunks = self
            .stats
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let terms: Vec<Term<S>> = chunk.iter().map(&summand).collect();
                if let Some(k) = terms.iter().position(|t| !is_ok_term(t)) {
                    return Err(Error::NonFinite { index: c * CHUNK + k });
                }
                Ok(Moments::from_chunk(&terms))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.into_iter().fold(
            Moments {
                count: 0,
                log_scale: S::zero(),
                mean: S::zero(),
                m2: S::zero(),
            },
            Moments::merge,
        ))
    }

    fn require_positive_theta(&self) -> Result<S> {
        let theta_nm = self.params.theta_nm();
        if theta_nm > S::zero() {
            Ok(theta_nm)
        } else {
            Err(invalid("theta", "must be > 0 here; use the small-theta limit for theta = 0"))
        }
    }

    fn check_epsilon(epsilon: S) -> Result<S> {
        q_inverse(epsilon).map_err(|_| invalid("epsilon", format!("must lie in (0, 1), got {epsilon}")))
    }

    fn check_rate(rate: S) -> Result<()> {
        if rate >= S::zero() && rate.is_finite() {
            Ok(())
        } else {
            Err(invalid("rate", format!("must be finite and >= 0, got {rate}")))
        }
    }

    fn psi_moments(&self, epsilon: S) -> Result<Moments<S>> {
        let theta_nm = self.require_positive_theta()?;
        let q_inv = Self::check_epsilon(epsilon)?;
        let one_minus = S::one() - epsilon;
        let ln_eps = epsilon.ln();
        let ln_one_minus = one_minus.ln();
        let overflow = S::max_value().ln() - S::lit(10.0);
        let clamp = self.clamp;
        self.moments(move |s| {
            let x = -theta_nm * clamp.apply(s.lower_bound_at(q_inv));
            if x < overflow {
                Term::Direct(epsilon + one_minus * x.exp())
            } else {
                Term::Log(log_add_exp(ln_eps, ln_one_minus + x))
            }
        })
    }

    fn phi_moments(&self, rate: S) -> Result<Moments<S>> {
        let theta_nm = self.require_positive_theta()?;
        Self::check_rate(rate)?;
        let x = -theta_nm * rate;
        let decay = x.exp();
        let tiny = S::min_positive_value().sqrt();
        self.moments(move |s| {
            let p = s.error_probability(rate);
            let v = p + (S::one() - p) * decay;
            if v > tiny {
                Term::Direct(v)
            } else {
                let ln_p = if s.delta > S::zero() {
                    ln_q((s.mu - rate) / s.delta)
                } else {
                    p.ln()
                };
                Term::Log(log_add_exp(ln_p, (-p).ln_1p() + x))
            }
        })
    }

    /// `Ψ(ε)`; requires `θ > 0` and `0 < ε < 1`.
    pub fn psi(&self, epsilon: S) -> Result<S> {
        let (ln_mean, _) = self.psi_moments(epsilon)?.log_mean_and_rel_error();
        Ok(ln_mean.exp())
    }

    /// `ln Ψ(ε)`, finite even where `Ψ` itself overflows.
    pub fn ln_psi(&self, epsilon: S) -> Result<S> {
        Ok(self.psi_moments(epsilon)?.log_mean_and_rel_error().0)
    }

    /// `Φ(R)`; requires `θ > 0` and `R ≥ 0`.
    pub fn phi(&self, rate: S) -> Result<S> {
        Ok(self.ln_phi(rate)?.exp())
    }

    pub fn ln_phi(&self, rate: S) -> Result<S> {
        Ok(self.phi_moments(rate)?.log_mean_and_rel_error().0)
    }

    fn estimate(&self, moments: Moments<S>) -> EffectiveRateEstimate<S> {
        let theta_nm = self.params.theta_nm();
        let (ln_mean, rel_err) = moments.log_mean_and_rel_error();
        EffectiveRateEstimate {
            value: -ln_mean / theta_nm,
            std_error: rel_err / theta_nm,
            count: moments.count,
        }
    }

    /// Variable-rate effective rate at error probability `ε`. At `θ = 0`
    /// this is the ergodic limit `E{(1−ε)·R(ε; z)}`.
    pub fn effective_rate_variable(&self, epsilon: S) -> Result<EffectiveRateEstimate<S>> {
        if self.params.theta == S::zero() {
            return self.effective_rate_variable_limit(epsilon);
        }
        Ok(self.estimate(self.psi_moments(epsilon)?))
    }

    /// Fixed-rate effective rate at rate `R`. At `θ = 0` this is
    /// `E{(1−ε(z,R))·R}`.
    pub fn effective_rate_fixed(&self, rate: S) -> Result<EffectiveRateEstimate<S>> {
        if self.params.theta == S::zero() {
            return self.effective_rate_fixed_limit(rate);
        }
        Ok(self.estimate(self.phi_moments(rate)?))
    }

    fn plain_mean<F>(&self, f: F) -> Result<EffectiveRateEstimate<S>>
    where
        F: Fn(&RateStats<S>) -> S + Sync,
    {
        let chunks = self
            .stats
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let values: Vec<S> = chunk.iter().map(&f).collect();
                if let Some(k) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { index: c * CHUNK + k });
                }
                let n = S::from_count(values.len());
                let mean = values.iter().copied().sum::<S>() / n;
                let m2 = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>();
                Ok((values.len(), mean, m2))
            })
            .collect::<Result<Vec<_>>>()?;
        let (count, mean, m2) = chunks.into_iter().fold((0usize, S::zero(), S::zero()), |(na, ma, qa), (nb, mb, qb)| {
            if na == 0 {
                return (nb, mb, qb);
            }
            let (fa, fb) = (S::from_count(na), S::from_count(nb));
            let n = fa + fb;
            let d = mb - ma;
            (na + nb, ma + d * fb / n, qa + qb + d * d * fa * fb / n)
        });
        let n = S::from_count(count);
        let var = if count > 1 { m2 / (n - S::one()) } else { S::zero() };
        Ok(EffectiveRateEstimate {
            value: mean,
            std_error: (var / n).sqrt(),
            count,
        })
    }

    /// `E{(1−ε)·R(ε; z)}`, the `θ → 0` limit of the variable-rate effective rate.
    pub fn effective_rate_variable_limit(&self, epsilon: S) -> Result<EffectiveRateEstimate<S>> {
        let q_inv = Self::check_epsilon(epsilon)?;
        let one_minus = S::one() - epsilon;
        let clamp = self.clamp;
        self.plain_mean(move |s| one_minus * clamp.apply(s.lower_bound_at(q_inv)))
    }

    /// `E{(1−ε(z,R))·R}`, the `θ → 0` limit of the fixed-rate effective rate.
    pub fn effective_rate_fixed_limit(&self, rate: S) -> Result<EffectiveRateEstimate<S>> {
        Self::check_rate(rate)?;
        self.plain_mean(move |s| (S::one() - s.error_probability(rate)) * rate)
    }

    pub fn effective_rate(&self, policy: RatePolicy<S>) -> Result<EffectiveRateEstimate<S>> {
        match policy {
            RatePolicy::Variable { epsilon } => self.effective_rate_variable(epsilon),
            RatePolicy::Fixed { rate } => self.effective_rate_fixed(rate),
        }
    }

    /// Largest `μ + k·δ` over the samples.
    pub fn max_rate_scale(&self, k: S) -> S {
        self.stats
            .iter()
            .map(|s| s.mu + k * s.delta)
            .fold(S::zero(), S::max)
    }
}

/// `Ψ(ε)` over `samples` with the rate bound used as is.
pub fn psi<S: Scalar>(epsilon: S, samples: &SampleSet<S>, params: &SystemParams<S>) -> Result<S> {
    RateTable::new(samples, params, ClampMode::Faithful)?.psi(epsilon)
}

/// `Φ(R)` over `samples`.
pub fn phi<S: Scalar>(rate: S, samples: &SampleSet<S>, params: &SystemParams<S>) -> Result<S> {
    RateTable::new(samples, params, ClampMode::Faithful)?.phi(rate)
}

pub fn effective_rate_variable<S: Scalar>(
    epsilon: S,
    samples: &SampleSet<S>,
    params: &SystemParams<S>,
) -> Result<EffectiveRateEstimate<S>> {
    RateTable::new(samples, params, ClampMode::Faithful)?.effective_rate_variable(epsilon)
}

pub fn effective_rate_fixed<S: Scalar>(
    rate: S,
    samples: &SampleSet<S>,
    params: &SystemParams<S>,
) -> Result<EffectiveRateEstimate<S>> {
    RateTable::new(samples, params, ClampMode::Faithful)?.effective_rate_fixed(rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(z: Vec<f64>, n: usize, theta: f64) -> (SampleSet<f64>, SystemParams<f64>) {
        let m = z.len();
        let set = SampleSet::from_realizations(vec![ChannelRealization::new(z).unwrap()], 0).unwrap();
        (set, SystemParams::new(1.0, n, m, theta).unwrap())
    }

    #[test]
    fn psi_single_atom_matches_closed_form() {
        // Ψ = ε + (1−ε)·exp(a·Q⁻¹(ε) + b)
        let (set, p) = single(vec![0.7, 1.9], 50, 0.02);
        let log2e = std::f64::consts::LOG2_E;
        let n = 50.0;
        let a = p.theta * log2e * [0.7_f64, 1.9].iter().map(|z| 2.0 * n * z / (1.0 + z)).sum::<f64>().sqrt();
        let b = -p.theta * n * [0.7_f64, 1.9].iter().map(|z| (1.0 + z).log2()).sum::<f64>();
        for &eps in &[1e-6, 0.01, 0.2, 0.5, 0.9] {
            let q = crate::special_fn::q_inverse(eps).unwrap();
            let expect = eps + (1.0 - eps) * (a * q + b).exp();
            assert_relative_eq!(psi(eps, &set, &p).unwrap(), expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn psi_tends_to_one_near_unit_epsilon() {
        let (set, p) = single(vec![1.0], 200, 0.01);
        let v = psi(1.0 - 1e-12, &set, &p).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        let r = effective_rate_variable(1.0 - 1e-12, &set, &p).unwrap();
        assert!(r.value.abs() < 1e-9);
    }

    #[test]
    fn psi_requires_positive_theta_and_valid_epsilon() {
        let (set, p) = single(vec![1.0], 200, 0.0);
        assert!(psi(0.1, &set, &p).is_err());
        let (set, p) = single(vec![1.0], 200, 0.01);
        assert!(psi(0.0, &set, &p).is_err());
        assert!(psi(1.0, &set, &p).is_err());
        assert!(phi(-1.0, &set, &p).is_err());
    }

    #[test]
    fn fixed_rate_edges() {
        let model = FadingModel::<f64>::default();
        let set = SampleSet::draw(&model, 2, 5000, 3).unwrap();
        let p = SystemParams::new(1.0, 100, 2, 0.01).unwrap();
        assert_eq!(phi(0.0, &set, &p).unwrap(), 1.0);
        let r0 = effective_rate_fixed(0.0, &set, &p).unwrap();
        assert_eq!(r0.value, 0.0);
        assert_eq!(r0.std_error, 0.0);
        let table = RateTable::new(&set, &p, ClampMode::Faithful).unwrap();
        let far = table.max_rate_scale(20.0);
        assert!((table.phi(far).unwrap() - 1.0).abs() < 1e-6);
        assert!(table.effective_rate_fixed(1e3).unwrap().value.abs() < 1e-9);
    }

    #[test]
    fn overflow_regime_is_log_accumulated() {
        // deep fade with tiny ε gives a hugely negative rate bound
        let (set, p) = single(vec![1e-4], 2000, 200.0);
        let table = RateTable::new(&set, &p, ClampMode::Faithful).unwrap();
        let ln = table.ln_psi(1e-10).unwrap();
        assert!(ln.is_finite() && ln > 700.0, "{ln}");
        let est = table.effective_rate_variable(1e-10).unwrap();
        assert!(est.value.is_finite() && est.value < 0.0);
        let clamped = RateTable::new(&set, &p, ClampMode::Clamp).unwrap();
        let v = clamped.effective_rate_variable(1e-10).unwrap().value;
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn log_path_for_underflowing_fixed_rate_summand() {
        let (set, p) = single(vec![1e6], 200, 10.0);
        let table = RateTable::new(&set, &p, ClampMode::Faithful).unwrap();
        let ln = table.ln_phi(1.0).unwrap();
        assert!(ln.is_finite());
        assert_relative_eq!(ln, -2000.0, max_relative = 1e-9);
    }

    #[test]
    fn small_theta_matches_ergodic_limit() {
        let model = FadingModel::<f64>::default();
        let set = SampleSet::draw(&model, 1, 20_000, 9).unwrap();
        let p = SystemParams::new(1.0, 200, 1, 1e-8).unwrap();
        let est = effective_rate_variable(0.01, &set, &p).unwrap();
        let limit = RateTable::new(&set, &p, ClampMode::Faithful)
            .unwrap()
            .effective_rate_variable_limit(0.01)
            .unwrap();
        assert!((est.value - limit.value).abs() < 1e-3, "{} vs {}", est.value, limit.value);
        let zero = RateTable::new(&set, &p.with_theta(0.0).unwrap(), ClampMode::Faithful).unwrap();
        assert_eq!(zero.effective_rate_variable(0.01).unwrap(), limit);
    }

    #[test]
    fn chunk_merge_matches_direct_moments() {
        let terms: Vec<Term<f64>> = (0..3000).map(|i| Term::Direct(1.0 + (i as f64).sin())).collect();
        let whole = terms
            .chunks(CHUNK)
            .map(Moments::from_chunk)
            .fold(Moments { count: 0, log_scale: 0.0, mean: 0.0, m2: 0.0 }, Moments::merge);
        let values: Vec<f64> = (0..3000).map(|i| 1.0 + (i as f64).sin()).collect();
        let mean = values.iter().sum::<f64>() / 3000.0;
        let m2: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        assert_relative_eq!(whole.mean, mean, max_relative = 1e-13);
        assert_relative_eq!(whole.m2, m2, max_relative = 1e-10);
    }

    #[test]
    fn mixed_scale_chunks_merge() {
        let terms = [Term::Direct(2.0_f64), Term::Log(800.0), Term::Log(799.0)];
        let m = Moments::from_chunk(&terms);
        let (ln_mean, _) = m.log_mean_and_rel_error();
        let expect = 800.0 + ((1.0 + (-1.0_f64).exp()) / 3.0).ln();
        assert_relative_eq!(ln_mean, expect, max_relative = 1e-12);
    }

    #[test]
    fn sample_set_validation() {
        let a = ChannelRealization::new(vec![1.0_f64]).unwrap();
        let b = ChannelRealization::new(vec![1.0_f64, 2.0]).unwrap();
        assert!(SampleSet::from_realizations(vec![a, b], 0).is_err());
        assert!(SampleSet::<f64>::from_realizations(vec![], 0).is_err());
        let model = FadingModel::<f64>::default();
        assert!(SampleSet::draw(&model, 1, 0, 0).is_err());
        let set = SampleSet::draw(&model, 4, 10, 0).unwrap();
        let p = SystemParams::new(1.0, 10, 3, 0.1).unwrap();
        assert!(RateTable::new(&set, &p, ClampMode::Faithful).is_err());
        assert_eq!(set.prefix(3).unwrap().blocks(), 3);
    }
}
