//! Throughput of block-fading links that code over `m` coherence blocks
//! with finite-blocklength codes, under a statistical queueing constraint.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the CLI uses.

pub mod channel;
pub mod cli;
pub mod effective_rate;
pub mod error;
pub mod fbl;
pub mod optimize;
pub mod quadrature;
pub mod queue_sim;
pub mod rng;
pub mod scalar;
pub mod special_fn;

pub use channel::{sample_realization, ChannelRealization, FadingModel, SystemParams};
pub use effective_rate::{EffectiveRateEstimate, RatePolicy, RateTable, SampleSet};
pub use error::{Error, Result};
pub use fbl::{error_probability, mi_density_sample_exact, rate_lower_bound, rate_stats, ClampMode, RateStats};
pub use optimize::{optimal_epsilon, optimal_rate, sweep_m, sweep_theta, Optimum, SweepPolicy, SweepRow, SweepSetup};
pub use queue_sim::{estimate_decay_rate, simulate_queue, QueueConfig, QueueRun, TailEstimate};
pub use scalar::Scalar;
pub use special_fn::{q_function, q_inverse, q_inverse_deriv, Probability};

pub type Params = SystemParams<f64>;
pub type Realization = ChannelRealization<f64>;
pub type Fading = FadingModel<f64>;
pub type Samples = SampleSet<f64>;
pub type Table = RateTable<f64>;
pub type Stats = RateStats<f64>;
pub type Estimate = EffectiveRateEstimate<f64>;
pub type Policy = RatePolicy<f64>;
pub type Opt = Optimum<f64>;
pub type Row = SweepRow<f64>;
pub type Queue = QueueConfig<f64>;

pub type Params32 = SystemParams<f32>;
pub type Samples32 = SampleSet<f32>;
pub type Table32 = RateTable<f32>;
