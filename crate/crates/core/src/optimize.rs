//! Error-probability and rate optimizers, plus sweeps over `m` and `θ`.
//!
//! `Ψ(ε)` is strictly convex and `Φ(R)` has a single minimum, so a
//! derivative-free golden-section search on `ln Ψ` / `ln Φ` finds the
//! optimum. The log is monotone and keeps the objective finite in the
//! regime where a negative rate bound makes `Ψ` overflow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{FadingModel, SystemParams};
use crate::effective_rate::{RatePolicy, RateTable, SampleSet};
use crate::error::{invalid, Result};
use crate::fbl::ClampMode;
use crate::scalar::Scalar;

/// Search interval for `ε`.
pub const EPSILON_RANGE: (f64, f64) = (1e-10, 1.0 - 1e-10);
/// Final bracket width of the golden-section search, in `ln ε` for the
/// error-probability search and in bits/use for the rate search.
pub const TOLERANCE: f64 = 1e-8;
/// Initial upper end of the rate search is `max(μ + RATE_SPAN·δ)`.
pub const RATE_SPAN: f64 = 10.0;

const INV_PHI: f64 = 0.618_033_988_749_894_9;
const MAX_EXPANSIONS: usize = 20;

/// Result of a one-dimensional optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum<S> {
    /// Optimal `ε*` or `R*`.
    pub argument: S,
    /// Effective rate at the optimum, bits per channel use.
    pub value: S,
    pub std_error: S,
    pub iterations: usize,
    /// Final bracket, `lo < argument < hi`.
    pub bracket: (S, S),
    /// The optimum sits against an end of the search interval, so the
    /// interior-optimum assumption did not hold numerically.
    pub at_boundary: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct GoldenResult<S> {
    pub argument: S,
    pub objective: S,
    pub iterations: usize,
    pub bracket: (S, S),
}

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`, stopping
/// once the bracket is narrower than `tol` (or stops shrinking).
pub fn golden_section<S, F>(mut f: F, lo: S, hi: S, tol: S) -> Result<GoldenResult<S>>
where
    S: Scalar,
    F: FnMut(S) -> Result<S>,
{
    if !(lo < hi) {
        return Err(invalid("bracket", format!("lo = {lo} must be below hi = {hi}")));
    }
    let g = S::lit(INV_PHI);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut iterations = 0;
    while b - a > tol && iterations < 500 {
        let width = b - a;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
        iterations += 1;
        if !(b - a < width) {
            break;
        }
    }
    let (argument, objective) = if fc <= fd { (c, fc) } else { (d, fd) };
    Ok(GoldenResult {
        argument,
        objective,
        iterations,
        bracket: (a, b),
    })
}

fn near<S: Scalar>(x: S, edge: S, tol: S) -> bool {
    (x - edge).abs() <= tol * S::lit(2.0)
}

/// `ε` maximizing the variable-rate effective rate on a prepared table.
pub fn optimize_epsilon<S: Scalar>(table: &RateTable<S>) -> Result<Optimum<S>> {
    if !(table.params().theta > S::zero()) {
        return Err(invalid("theta", "optimal epsilon needs theta > 0"));
    }
    // search in ln ε so the tolerance is relative and optima near the
    // lower end of the interval are resolved
    let lo = S::lit(EPSILON_RANGE.0).ln();
    let hi = (-S::lit(1.0 - EPSILON_RANGE.1)).ln_1p();
    let tol = S::lit(TOLERANCE);
    let found = golden_section(|u: S| table.ln_psi(u.exp()), lo, hi, tol)?;
    let argument = found.argument.exp();
    let est = table.effective_rate_variable(argument)?;
    Ok(Optimum {
        argument,
        value: est.value,
        std_error: est.std_error,
        iterations: found.iterations,
        bracket: (found.bracket.0.exp(), found.bracket.1.exp()),
        at_boundary: near(found.argument, lo, tol) || near(found.argument, hi, tol),
    })
}

/// `R` maximizing the fixed-rate effective rate on a prepared table.
pub fn optimize_rate<S: Scalar>(table: &RateTable<S>) -> Result<Optimum<S>> {
    if !(table.params().theta > S::zero()) {
        return Err(invalid("theta", "optimal rate needs theta > 0"));
    }
    let tol = S::lit(TOLERANCE);
    let mut hi = table.max_rate_scale(S::lit(RATE_SPAN));
    if !(hi > S::zero()) {
        return Err(invalid("samples", "every realization has zero rate"));
    }
    let mut iterations = 0;
    let mut expansions = 0;
    loop {
        let found = golden_section(|r| table.ln_phi(r), S::zero(), hi, tol)?;
        iterations += found.iterations;
        let at_hi = near(found.argument, hi, tol);
        if at_hi && expansions < MAX_EXPANSIONS {
            hi = hi + hi;
            expansions += 1;
            continue;
        }
        let est = table.effective_rate_fixed(found.argument)?;
        return Ok(Optimum {
            argument: found.argument,
            value: est.value,
            std_error: est.std_error,
            iterations,
            bracket: found.bracket,
            at_boundary: at_hi || near(found.argument, S::zero(), tol),
        });
    }
}

pub fn optimal_epsilon<S: Scalar>(samples: &SampleSet<S>, params: &SystemParams<S>) -> Result<Optimum<S>> {
    optimize_epsilon(&RateTable::new(samples, params, ClampMode::Faithful)?)
}

pub fn optimal_rate<S: Scalar>(samples: &SampleSet<S>, params: &SystemParams<S>) -> Result<Optimum<S>> {
    optimize_rate(&RateTable::new(samples, params, ClampMode::Faithful)?)
}

/// What a sweep row reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPolicy<S> {
    /// Effective rate under a given policy.
    Evaluate(RatePolicy<S>),
    /// Effective rate at the optimal `ε`.
    OptimizeEpsilon,
    /// Effective rate at the optimal fixed `R`.
    OptimizeRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow<S> {
    pub m: usize,
    pub theta: S,
    pub policy: SweepPolicy<S>,
    /// `ε` or `R` the effective rate was evaluated at (given or optimal).
    pub argument: S,
    pub effective_rate: S,
    pub std_error: S,
    pub at_boundary: bool,
}

/// Shared inputs of the sweep drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSetup<S> {
    /// `snr_linear`, `n` and the default `θ`; `m` is overridden per row.
    pub template: SystemParams<S>,
    pub fading: FadingModel<S>,
    pub samples: usize,
    pub seed: u64,
    pub clamp: ClampMode,
}

impl<S: Scalar> SweepSetup<S> {
    /// Realizations of `max(m_values)` blocks; an `m`-block row uses the
    /// leading `m` gains of each, so rows differ only through `m`.
    pub fn super_blocks(&self, m_values: &[usize]) -> Result<SampleSet<S>> {
        let m_max = m_values
            .iter()
            .copied()
            .max()
            .ok_or_else(|| invalid("m", "list must not be empty"))?;
        if m_values.contains(&0) {
            return Err(invalid("m", "must be at least 1"));
        }
        let fading = match &self.fading {
            FadingModel::Deterministic { gains } if gains.len() < m_max => {
                return Err(invalid("gains", format!("need at least {m_max} deterministic gains")));
            }
            FadingModel::Deterministic { gains } => FadingModel::Deterministic {
                gains: gains[..m_max].to_vec(),
            },
            other => other.clone(),
        };
        SampleSet::draw(&fading, m_max, self.samples, self.seed)
    }

    fn table_for(&self, blocks: &SampleSet<S>, m: usize, theta: S) -> Result<RateTable<S>> {
        let params = SystemParams::new(self.template.snr_linear, self.template.n, m, theta)?;
        RateTable::new(&blocks.prefix(m)?, &params, self.clamp)
    }
}

fn evaluate_row<S: Scalar>(table: &RateTable<S>, policy: SweepPolicy<S>) -> Result<SweepRow<S>> {
    let params = table.params();
    let (argument, effective_rate, std_error, at_boundary) = match policy {
        SweepPolicy::Evaluate(p) => {
            let est = table.effective_rate(p)?;
            let arg = match p {
                RatePolicy::Variable { epsilon } => epsilon,
                RatePolicy::Fixed { rate } => rate,
            };
            (arg, est.value, est.std_error, false)
        }
        SweepPolicy::OptimizeEpsilon => {
            let o = optimize_epsilon(table)?;
            (o.argument, o.value, o.std_error, o.at_boundary)
        }
        SweepPolicy::OptimizeRate => {
            let o = optimize_rate(table)?;
            (o.argument, o.value, o.std_error, o.at_boundary)
        }
    };
    Ok(SweepRow {
        m: params.m,
        theta: params.theta,
        policy,
        argument,
        effective_rate,
        std_error,
        at_boundary,
    })
}

/// Effective rate against the number of blocks per codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct MSweep<S> {
    pub rows: Vec<SweepRow<S>>,
    /// `m` with the largest effective rate (smallest `m` on ties).
    pub best_m: usize,
}

/// Evaluates (or optimizes, per `policy`) the effective rate for each `m`
/// at the template's `θ`.
pub fn sweep_m<S: Scalar>(setup: &SweepSetup<S>, m_values: &[usize], policy: SweepPolicy<S>) -> Result<MSweep<S>> {
    let blocks = setup.super_blocks(m_values)?;
    let rows = m_values
        .par_iter()
        .map(|&m| evaluate_row(&setup.table_for(&blocks, m, setup.template.theta)?, policy))
        .collect::<Result<Vec<_>>>()?;
    let best_m = rows
        .iter()
        .fold(None::<&SweepRow<S>>, |best, row| match best {
            Some(b) if b.effective_rate >= row.effective_rate => Some(b),
            _ => Some(row),
        })
        .map(|r| r.m)
        .expect("non-empty m list");
    Ok(MSweep { rows, best_m })
}

/// Effective rate over a `θ` grid for each `m`, rows ordered by `θ` then
/// by position in `m_values`.
pub fn sweep_theta<S: Scalar>(
    setup: &SweepSetup<S>,
    thetas: &[S],
    m_values: &[usize],
    policy: SweepPolicy<S>,
) -> Result<Vec<SweepRow<S>>> {
    if thetas.is_empty() {
        return Err(invalid("theta", "list must not be empty"));
    }
    let blocks = setup.super_blocks(m_values)?;
    let tables = m_values
        .par_iter()
        .map(|&m| setup.table_for(&blocks, m, setup.template.theta))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(S, usize)> = thetas
        .iter()
        .flat_map(|&t| (0..m_values.len()).map(move |k| (t, k)))
        .collect();
    jobs.par_iter()
        .map(|&(theta, k)| evaluate_row(&tables[k].with_theta(theta)?, policy))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelRealization;

    #[test]
    fn golden_finds_parabola_minimum() {
        let r = golden_section(|x: f64| Ok((x - 0.3).powi(2)), 0.0, 1.0, 1e-10).unwrap();
        assert!((r.argument - 0.3).abs() < 1e-9);
        assert!(r.bracket.0 < r.argument && r.argument < r.bracket.1);
        assert!(golden_section(|x: f64| Ok(x), 1.0, 1.0, 1e-6).is_err());
    }

    #[test]
    fn golden_terminates_in_f32() {
        let r = golden_section(|x: f32| Ok((x - 0.7).powi(2)), 0.0, 1.0, 1e-8).unwrap();
        assert!((r.argument - 0.7).abs() < 1e-3);
    }

    #[test]
    fn strong_queueing_pressure_pushes_epsilon_to_boundary() {
        // exp(−θnm·R) is negligible at every ε, so Ψ ≈ ε
        let z = ChannelRealization::new(vec![1.0]).unwrap();
        let set = SampleSet::from_realizations(vec![z], 0).unwrap();
        let p = SystemParams::new(1.0, 200, 1, 1.0).unwrap();
        let o = optimal_epsilon(&set, &p).unwrap();
        assert!(o.at_boundary);
        assert!(o.argument < 1e-8);
    }

    #[test]
    fn large_theta_drives_rate_to_zero() {
        let model = FadingModel::<f64>::default();
        let set = SampleSet::draw(&model, 1, 20_000, 5).unwrap();
        let hard = optimal_rate(&set, &SystemParams::new(1.0, 200, 1, 10.0).unwrap()).unwrap();
        let easy = optimal_rate(&set, &SystemParams::new(1.0, 200, 1, 0.01).unwrap()).unwrap();
        assert!(hard.argument < 0.1 * easy.argument, "{} vs {}", hard.argument, easy.argument);
        assert!(hard.value < 0.1 * easy.value);
        assert!(hard.value > 0.0);
    }

    #[test]
    fn optimizers_need_positive_theta() {
        let model = FadingModel::<f64>::default();
        let set = SampleSet::draw(&model, 1, 100, 5).unwrap();
        let p = SystemParams::new(1.0, 200, 1, 0.0).unwrap();
        assert!(optimal_epsilon(&set, &p).is_err());
        assert!(optimal_rate(&set, &p).is_err());
    }

    fn setup(samples: usize) -> SweepSetup<f64> {
        SweepSetup {
            template: SystemParams::new(1.0, 50, 1, 0.01).unwrap(),
            fading: FadingModel::default(),
            samples,
            seed: 21,
            clamp: ClampMode::Faithful,
        }
    }

    #[test]
    fn single_m_sweep_equals_direct_evaluation() {
        let s = setup(2000);
        let policy = SweepPolicy::Evaluate(RatePolicy::Variable { epsilon: 0.01 });
        let sweep = sweep_m(&s, &[1], policy).unwrap();
        assert_eq!(sweep.rows.len(), 1);
        assert_eq!(sweep.best_m, 1);
        let set = SampleSet::draw(&s.fading, 1, 2000, 21).unwrap();
        let direct = crate::effective_rate::effective_rate_variable(0.01, &set, &s.template).unwrap();
        assert_eq!(sweep.rows[0].effective_rate, direct.value);
        assert_eq!(sweep.rows[0].std_error, direct.std_error);
    }

    #[test]
    fn repeated_m_gives_identical_rows() {
        let s = setup(1000);
        let rows = sweep_theta(&s, &[0.01, 0.1], &[3, 3], SweepPolicy::OptimizeEpsilon).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[2], rows[3]);
        assert!(rows[0].theta == 0.01 && rows[2].theta == 0.1);
    }

    #[test]
    fn sweep_rejects_bad_m_lists() {
        let s = setup(10);
        let policy = SweepPolicy::OptimizeEpsilon;
        assert!(sweep_m(&s, &[], policy).is_err());
        assert!(sweep_m(&s, &[0, 1], policy).is_err());
        let mut d = setup(10);
        d.fading = FadingModel::deterministic(vec![1.0, 2.0]).unwrap();
        assert!(sweep_m(&d, &[3], policy).is_err());
        assert_eq!(sweep_m(&d, &[1, 2], policy).unwrap().rows.len(), 2);
    }
}
