//! Discrete-time queue fed at a constant rate and drained by the codeword
//! service process, used to check that an arrival rate equal to the
//! effective rate yields a buffer tail decaying at `θ`.
//!
//! One frame is one codeword of `n·m` channel uses. Each frame draws fresh
//! gains, transmits at the policy's rate and delivers `n·m·R` bits on
//! success or nothing on a decoding error (the bits stay queued for
//! retransmission):
//!
//! ```text
//! Q[t+1] = max(Q[t] + a − r_s[t], 0)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_realization, ChannelRealization, FadingModel, SystemParams};
use crate::effective_rate::RatePolicy;
use crate::error::{invalid, Error, Result};
use crate::fbl::{rate_stats, ClampMode};
use crate::rng::{substream, Domain};
use crate::scalar::Scalar;
use crate::special_fn::q_inverse;

/// Tail-probability window of the decay-rate fit.
pub const DEFAULT_FIT_WINDOW: (f64, f64) = (1e-4, 1e-1);
const FIT_GRID: usize = 64;
const MIN_FIT_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueConfig<S> {
    /// Constant arrivals per frame, bits.
    pub arrival_bits_per_frame: S,
    pub frames: usize,
    pub burn_in_frames: usize,
    pub seed: u64,
    pub policy: RatePolicy<S>,
    pub params: SystemParams<S>,
    pub fading: FadingModel<S>,
    pub clamp: ClampMode,
}

impl<S: Scalar> QueueConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_bits_per_frame >= S::zero() && self.arrival_bits_per_frame.is_finite()) {
            return Err(invalid("arrival", "must be finite and >= 0"));
        }
        if self.frames == 0 {
            return Err(invalid("frames", "must be at least 1"));
        }
        if self.burn_in_frames >= self.frames {
            return Err(invalid("burn_in_frames", "must be smaller than frames"));
        }
        self.fading.validate()?;
        match self.policy {
            RatePolicy::Variable { epsilon } if !(epsilon > S::zero() && epsilon <= S::one()) => {
                Err(invalid("epsilon", "must lie in (0, 1]"))
            }
            RatePolicy::Fixed { rate } if !(rate >= S::zero() && rate.is_finite()) => {
                Err(invalid("rate", "must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Per-frame service with `Q⁻¹(ε)` hoisted out of the frame loop.
struct Server<S> {
    policy: RatePolicy<S>,
    params: SystemParams<S>,
    clamp: ClampMode,
    q_inv: Option<S>,
}

impl<S: Scalar> Server<S> {
    fn new(policy: RatePolicy<S>, params: SystemParams<S>, clamp: ClampMode) -> Result<Self> {
        let q_inv = match policy {
            RatePolicy::Variable { epsilon } if epsilon < S::one() => Some(q_inverse(epsilon)?),
            RatePolicy::Variable { epsilon } if epsilon == S::one() => None,
            RatePolicy::Variable { epsilon } => {
                return Err(Error::Domain {
                    function: "service_sample",
                    value: epsilon.as_f64(),
                    domain: "(0, 1]",
                })
            }
            RatePolicy::Fixed { rate } if !(rate >= S::zero()) => {
                return Err(invalid("rate", "must be >= 0"));
            }
            RatePolicy::Fixed { .. } => None,
        };
        Ok(Self {
            policy,
            params,
            clamp,
            q_inv,
        })
    }

    /// `(success probability, bits delivered on success)`.
    fn outcome(&self, z: &ChannelRealization<S>) -> Result<(S, S)> {
        let nm = S::from_count(self.params.blocklength());
        let stats = rate_stats(z, &self.params)?;
        Ok(match (self.policy, self.q_inv) {
            (RatePolicy::Variable { epsilon }, Some(q)) => {
                (S::one() - epsilon, nm * self.clamp.apply(stats.lower_bound_at(q)))
            }
            (RatePolicy::Variable { .. }, None) => (S::zero(), S::zero()),
            (RatePolicy::Fixed { rate }, _) => (S::one() - stats.error_probability(rate), nm * rate),
        })
    }

    fn serve<R: Rng + ?Sized>(&self, z: &ChannelRealization<S>, rng: &mut R) -> Result<S> {
        let (p_success, bits) = self.outcome(z)?;
        let u: f64 = rng.gen();
        Ok(if u < p_success.as_f64() { bits } else { S::zero() })
    }
}

/// Bits served in one frame: `n·m·R` with probability `1 − ε`, else 0.
pub fn service_sample<S: Scalar, R: Rng + ?Sized>(
    z: &ChannelRealization<S>,
    policy: RatePolicy<S>,
    params: &SystemParams<S>,
    clamp: ClampMode,
    rng: &mut R,
) -> Result<S> {
    Server::new(policy, *params, clamp)?.serve(z, rng)
}

/// One frame of a queue trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord<S> {
    pub frame: usize,
    pub z_mean: S,
    pub z_min: S,
    pub service_bits: S,
    /// Queue length after the frame.
    pub queue_bits: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueRun<S> {
    /// Queue length after each post-burn-in frame.
    pub samples: Vec<S>,
    pub mean_service: S,
    /// Least-squares slope of the queue length against frame index.
    pub drift_per_frame: S,
    /// The slope accounts for more than twice the residual spread over
    /// the run, i.e. the queue grows without bound.
    pub unstable: bool,
}

pub fn simulate_queue<S: Scalar>(config: &QueueConfig<S>) -> Result<QueueRun<S>> {
    simulate_queue_with_trace(config, |_| {})
}

/// Runs the queue, calling `trace` for every post-burn-in frame.
///
/// Gains and decoding outcomes come from two dedicated substreams of
/// `seed`, each consumed sequentially.
pub fn simulate_queue_with_trace<S, F>(config: &QueueConfig<S>, mut trace: F) -> Result<QueueRun<S>>
where
    S: Scalar,
    F: FnMut(TraceRecord<S>),
{
    config.validate()?;
    let server = Server::new(config.policy, config.params, config.clamp)?;
    let mut fading_rng = substream(config.seed, Domain::Frames, 0);
    let mut decoding_rng = substream(config.seed, Domain::Decoding, 0);
    let arrival = config.arrival_bits_per_frame;
    let mut queue = S::zero();
    let mut samples = Vec::with_capacity(config.frames - config.burn_in_frames);
    let mut service_total = 0.0_f64;
    for frame in 0..config.frames {
        let z = sample_realization(&config.fading, config.params.m, &mut fading_rng)?;
        let served = server.serve(&z, &mut decoding_rng)?;
        service_total += served.as_f64();
        queue = (queue + arrival - served).max(S::zero());
        if frame >= config.burn_in_frames {
            samples.push(queue);
            let gains = z.gains();
            trace(TraceRecord {
                frame,
                z_mean: gains.iter().copied().sum::<S>() / S::from_count(gains.len()),
                z_min: gains.iter().copied().fold(S::infinity(), S::min),
                service_bits: served,
                queue_bits: queue,
            });
        }
    }
    let (drift, residual_sd) = linear_trend(&samples);
    let span = samples.len().saturating_sub(1) as f64;
    Ok(QueueRun {
        mean_service: S::lit(service_total / config.frames as f64),
        drift_per_frame: S::lit(drift),
        unstable: drift > 0.0 && drift * span > 2.0 * residual_sd,
        samples,
    })
}

/// Least-squares slope of `y` against its index and the residual standard
/// deviation.
fn linear_trend<S: Scalar>(y: &[S]) -> (f64, f64) {
    let n = y.len();
    if n < 3 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let t_mean = (nf - 1.0) / 2.0;
    let y_mean = y.iter().map(|v| v.as_f64()).sum::<f64>() / nf;
    let (mut sty, mut stt) = (0.0, 0.0);
    for (t, v) in y.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sty += dt * (v.as_f64() - y_mean);
        stt += dt * dt;
    }
    let slope = sty / stt;
    let ss_res: f64 = y
        .iter()
        .enumerate()
        .map(|(t, v)| {
            let r = v.as_f64() - y_mean - slope * (t as f64 - t_mean);
            r * r
        })
        .sum();
    (slope, (ss_res / (nf - 2.0)).sqrt())
}

/// Fitted exponential decay of the queue-length tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    /// `−d ln P(Q ≥ q)/dq` over the fit window, 1/bits.
    pub theta_hat: f64,
    pub fit_r2: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub overflow_fraction_at_q_hi: f64,
    pub points: usize,
}

/// Fits `ln P(Q ≥ q)` linearly in `q` over the `q` range whose empirical
/// tail probability lies in `window = (p_min, p_max)`.
pub fn estimate_decay_rate<S: Scalar>(samples: &[S], window: (f64, f64)) -> Result<TailEstimate> {
    let (p_min, p_max) = window;
    if !(0.0 < p_min && p_min < p_max && p_max <= 1.0) {
        return Err(invalid("window", format!("need 0 < p_min < p_max <= 1, got {window:?}")));
    }
    if samples.is_empty() {
        return Err(Error::Estimation("no samples".into()));
    }
    let mut sorted: Vec<f64> = samples.iter().map(|v| v.as_f64()).collect();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation("non-finite queue sample".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let ccdf = |q: f64| (n - sorted.partition_point(|&v| v < q)) as f64 / nf;
    let index = |p: f64| (((1.0 - p) * nf).ceil() as usize).min(n - 1);
    let grid_lo = sorted[index(p_max)];
    let grid_hi = sorted[index(p_min)];
    let mut points = Vec::with_capacity(FIT_GRID);
    if grid_hi > grid_lo {
        for k in 0..FIT_GRID {
            let q = grid_lo + (grid_hi - grid_lo) * k as f64 / (FIT_GRID - 1) as f64;
            let p = ccdf(q);
            if p >= p_min && p <= p_max {
                points.push((q, p.ln()));
            }
        }
    }
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::Estimation(format!(
            "only {} grid points with tail probability in [{p_min}, {p_max}]; run longer",
            points.len()
        )));
    }
    let k = points.len() as f64;
    let qm = points.iter().map(|p| p.0).sum::<f64>() / k;
    let lm = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = points.iter().map(|p| (p.0 - qm) * (p.1 - lm)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - qm).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - lm).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    let q_lo = points[0].0;
    let q_hi = points[points.len() - 1].0;
    Ok(TailEstimate {
        theta_hat: (-slope).max(0.0),
        fit_r2: r2,
        q_lo,
        q_hi,
        overflow_fraction_at_q_hi: ccdf(q_hi),
        points: points.len(),
    })
}
