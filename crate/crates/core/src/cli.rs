//! Command-line front end: figure sweeps, optimizations and queue runs,
//! written as CSV or JSON tables with a self-describing metadata header.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::effective_rate::{RatePolicy, RateTable, SampleSet, DEFAULT_SAMPLES};
use crate::fbl::ClampMode;
use crate::optimize::{optimize_epsilon, optimize_rate, sweep_theta, SweepPolicy, SweepRow, SweepSetup};
use crate::queue_sim::{estimate_decay_rate, simulate_queue_with_trace, QueueConfig, TraceRecord, DEFAULT_FIT_WINDOW};
use crate::{Error, Fading, Params};

const THREADS_VAR: &str = "BLOCKRATE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "blockrate",
    version,
    about = "Effective rate of block-fading links with finite-blocklength codes",
    after_help = "Block lists accept comma lists and inclusive ranges, e.g. `1..50` or `1,2,5,10`.\n\
                  BLOCKRATE_THREADS caps the number of worker threads; output does not depend on it."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Variable-rate effective rate against the decoding error probability.
    Fig1(Fig1Args),
    /// Effective rate at a fixed error probability against m, per θ.
    Fig2(Fig2Args),
    /// Effective rate at the optimal error probability against θ, per m.
    Fig3(Fig3Args),
    /// Fixed-rate effective rate against the coding rate, per m.
    Fig4(Fig4Args),
    /// Optimal error probability for each (θ, m).
    OptimizeEpsilon(OptimizeArgs),
    /// Optimal fixed coding rate for each (θ, m).
    OptimizeRate(OptimizeArgs),
    /// Effective rate against m under a chosen policy, with the best m per θ.
    SweepM(SweepMArgs),
    /// Queue simulation and fit of the queue-length tail decay rate.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Average SNR in dB.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    snr_db: f64,
    /// Fading realizations per expectation.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Clamp negative rate bounds to zero instead of using them as is.
    #[arg(long)]
    clamp_rate: bool,
    /// Output file (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Target {
    Epsilon,
    Rate,
}

/// Block counts, e.g. `1..50` or `1,2,5,10`.
#[derive(Debug, Clone, PartialEq)]
struct Blocks(Vec<usize>);

/// Comma-separated reals.
#[derive(Debug, Clone, PartialEq)]
struct Reals(Vec<f64>);

fn parse_blocks(s: &str) -> Result<Blocks, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| format!("bad range start in `{part}`"))?;
            let b: usize = b.trim().parse().map_err(|_| format!("bad range end in `{part}`"))?;
            if a > b {
                return Err(format!("empty range `{part}`"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad block count `{part}`"))?);
        }
    }
    if out.contains(&0) {
        return Err("block counts must be at least 1".into());
    }
    Ok(Blocks(out))
}

fn parse_reals(s: &str) -> Result<Reals, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number `{}`", p.trim())))
        .collect::<Result<Vec<_>, _>>()
        .map(Reals)
}

#[derive(Debug, Args)]
struct Fig1Args {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.01)]
    theta: f64,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, value_parser = parse_blocks, default_value = "1,2,5,10")]
    m: Blocks,
    /// Smallest ε of the log-spaced grid.
    #[arg(long, default_value_t = 1e-6)]
    eps_min: f64,
    /// Largest ε of the log-spaced grid.
    #[arg(long, default_value_t = 0.5)]
    eps_max: f64,
    #[arg(long, default_value_t = 200)]
    eps_points: usize,
}

#[derive(Debug, Args)]
struct Fig2Args {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, value_parser = parse_reals, default_value = "0,0.001,0.01,0.1")]
    theta: Reals,
    #[arg(long, value_parser = parse_blocks, default_value = "1..50")]
    m: Blocks,
}

#[derive(Debug, Args)]
struct Fig3Args {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, value_parser = parse_blocks, default_value = "1,2,5,10")]
    m: Blocks,
    /// Explicit θ list; replaces the log-spaced grid.
    #[arg(long, value_parser = parse_reals, conflicts_with_all = ["theta_min", "theta_max", "theta_points"])]
    theta: Option<Reals>,
    #[arg(long, default_value_t = 1e-3)]
    theta_min: f64,
    #[arg(long, default_value_t = 1.0)]
    theta_max: f64,
    #[arg(long, default_value_t = 20)]
    theta_points: usize,
}

#[derive(Debug, Args)]
struct Fig4Args {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.01)]
    theta: f64,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, value_parser = parse_blocks, default_value = "1..10")]
    m: Blocks,
    /// Upper end of the linear rate grid, bits/use (default: 2·log2(1+SNR)).
    #[arg(long)]
    rate_max: Option<f64>,
    #[arg(long, default_value_t = 200)]
    rate_points: usize,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, value_parser = parse_blocks, default_value = "1")]
    m: Blocks,
    #[arg(long, value_parser = parse_reals, default_value = "0.01")]
    theta: Reals,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("policy").required(true).args(["epsilon", "rate", "optimize"])))]
struct SweepMArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, value_parser = parse_blocks, default_value = "1..50")]
    m: Blocks,
    #[arg(long, value_parser = parse_reals, default_value = "0.01")]
    theta: Reals,
    /// Evaluate at this error probability.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Evaluate at this fixed rate, bits/use.
    #[arg(long)]
    rate: Option<f64>,
    /// Optimize ε or R for every m.
    #[arg(long, value_enum)]
    optimize: Option<Target>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.01)]
    theta: f64,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Decoding error probability (default: the optimum at θ).
    #[arg(long, conflicts_with = "rate")]
    epsilon: Option<f64>,
    /// Serve at this fixed rate instead of the variable-rate policy.
    #[arg(long)]
    rate: Option<f64>,
    /// Bits per frame, or `auto` for effective rate × n·m.
    #[arg(long, default_value = "auto")]
    arrival: String,
    #[arg(long, default_value_t = 10_000_000)]
    frames: usize,
    /// Frames discarded before sampling (default: frames/100).
    #[arg(long)]
    burn_in: Option<usize>,
    /// Tail-probability window of the fit, `p_min,p_max`.
    #[arg(long, value_parser = parse_reals)]
    fit_window: Option<Reals>,
    /// Per-frame trace, CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Keep every k-th frame in the trace.
    #[arg(long, default_value_t = 1)]
    trace_every: usize,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } | Error::Domain { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_error(what: &str, e: io::Error) -> CliError {
    CliError::Runtime(format!("{what}: {e}"))
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Int(u64),
    Real(f64),
    Flag(bool),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => real(*v),
            Cell::Flag(v) => v.to_string(),
            Cell::Text(v) => v.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Real(v) => Value::from(*v),
            Cell::Flag(v) => Value::from(*v),
            Cell::Text(v) => Value::from(v.clone()),
        }
    }
}

/// Shortest text that parses back to the same `f64`.
fn real(x: f64) -> String {
    format!("{x:?}")
}

fn reals(xs: &[f64]) -> String {
    xs.iter().map(|&x| real(x)).collect::<Vec<_>>().join(",")
}

/// Canonical block list: runs of three or more become `a..b`.
fn blocks(ms: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < ms.len() {
        let mut j = i;
        while j + 1 < ms.len() && ms[j + 1] == ms[j] + 1 {
            j += 1;
        }
        if j - i >= 2 {
            parts.push(format!("{}..{}", ms[i], ms[j]));
            i = j + 1;
        } else {
            parts.push(ms[i].to_string());
            i += 1;
        }
    }
    parts.join(",")
}

struct Report {
    meta: Vec<(String, String)>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Report {
    fn new(command: &str) -> Self {
        Report {
            meta: vec![
                ("tool".into(), env!("CARGO_PKG_NAME").into()),
                ("version".into(), env!("CARGO_PKG_VERSION").into()),
                ("command".into(), command.into()),
            ],
            columns: Vec::new(),
            rows: Vec::new(),
        }
    }

    fn meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.push((key.into(), value.into()));
    }

    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut out = String::new();
                for (k, v) in &self.meta {
                    let _ = writeln!(out, "# {k}: {v}");
                }
                let _ = writeln!(out, "{}", self.columns.join(","));
                for row in &self.rows {
                    let line: Vec<String> = row.iter().map(Cell::csv).collect();
                    let _ = writeln!(out, "{}", line.join(","));
                }
                out
            }
            Format::Json => {
                let meta: Map<String, Value> =
                    self.meta.iter().map(|(k, v)| (k.clone(), Value::from(v.clone()))).collect();
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        Value::Object(self.columns.iter().zip(row).map(|(c, v)| (c.to_string(), v.json())).collect())
                    })
                    .collect();
                let doc = serde_json::json!({
                    "metadata": meta,
                    "columns": self.columns,
                    "rows": rows,
                });
                let mut s = serde_json::to_string_pretty(&doc).expect("JSON values serialize");
                s.push('\n');
                s
            }
        }
    }
}

/// Canonical command line, built from resolved values only.
struct Replay(Vec<String>);

impl Replay {
    fn new(command: &str, common: &Common, format: Format) -> Self {
        let mut r = Replay(vec![env!("CARGO_PKG_NAME").into(), command.into()]);
        r.arg("--snr-db", real(common.snr_db));
        r.arg("--samples", common.samples.to_string());
        r.arg("--seed", common.seed.to_string());
        if common.clamp_rate {
            r.0.push("--clamp-rate".into());
        }
        r.arg("--format", format.name());
        r
    }

    fn arg(&mut self, flag: &str, value: impl Into<String>) {
        self.0.push(flag.into());
        self.0.push(value.into());
    }

    fn line(&self) -> String {
        self.0.join(" ")
    }
}

fn clamp_mode(common: &Common) -> ClampMode {
    if common.clamp_rate {
        ClampMode::Clamp
    } else {
        ClampMode::Faithful
    }
}

fn common_meta(report: &mut Report, common: &Common, params: &Params) {
    report.meta("snr_db", real(common.snr_db));
    report.meta("snr_linear", real(params.snr_linear));
    report.meta("n", params.n.to_string());
    report.meta("samples", common.samples.to_string());
    report.meta("seed", common.seed.to_string());
    report.meta(
        "clamp",
        match clamp_mode(common) {
            ClampMode::Faithful => "faithful",
            ClampMode::Clamp => "clamp",
        },
    );
    report.meta("fading", "rayleigh(mean_power=1)");
}

/// Checks every (m, θ) combination before any sampling happens.
fn validated(common: &Common, n: usize, ms: &[usize], thetas: &[f64]) -> Result<Params, CliError> {
    if ms.is_empty() {
        return Err(usage("invalid parameter `m`: list must not be empty"));
    }
    if thetas.is_empty() {
        return Err(usage("invalid parameter `theta`: list must not be empty"));
    }
    if common.samples == 0 {
        return Err(usage("invalid parameter `samples`: must be at least 1"));
    }
    let template = Params::from_snr_db(common.snr_db, n, 1, thetas[0])?;
    for &m in ms {
        for &t in thetas {
            template.with_m(m)?.with_theta(t)?;
        }
    }
    Ok(template)
}

fn setup(common: &Common, template: Params) -> SweepSetup<f64> {
    SweepSetup {
        template,
        fading: Fading::default(),
        samples: common.samples,
        seed: common.seed,
        clamp: clamp_mode(common),
    }
}

fn tables(setup: &SweepSetup<f64>, ms: &[usize], theta: f64) -> Result<Vec<RateTable<f64>>, CliError> {
    let blocks = setup.super_blocks(ms)?;
    let t = ms
        .par_iter()
        .map(|&m| {
            let params = setup.template.with_m(m)?.with_theta(theta)?;
            RateTable::new(&blocks.prefix(m)?, &params, setup.clamp)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(t)
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|k| match k {
            0 => lo,
            k if k == points - 1 => hi,
            k => (a + (b - a) * k as f64 / (points - 1) as f64).exp(),
        })
        .collect()
}

fn fig1(a: &Fig1Args, format: Format) -> Result<Report, CliError> {
    if !(a.eps_min > 0.0 && a.eps_min < a.eps_max && a.eps_max < 1.0) {
        return Err(usage("invalid parameter `eps-min`/`eps-max`: need 0 < eps-min < eps-max < 1"));
    }
    if a.eps_points < 2 {
        return Err(usage("invalid parameter `eps-points`: must be at least 2"));
    }
    let ms = &a.m.0;
    let template = validated(&a.common, a.n, ms, &[a.theta])?;
    let setup = setup(&a.common, template);
    let grid = log_grid(a.eps_min, a.eps_max, a.eps_points);
    let tables = tables(&setup, ms, a.theta)?;

    let jobs: Vec<(usize, f64)> = (0..ms.len()).flat_map(|k| grid.iter().map(move |&e| (k, e))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(k, e)| {
            let est = tables[k].effective_rate_variable(e)?;
            Ok(vec![Cell::Int(ms[k] as u64), Cell::Real(e), Cell::Real(est.value), Cell::Real(est.std_error)])
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut report = Report::new("fig1");
    common_meta(&mut report, &a.common, &template);
    report.meta("theta", real(a.theta));
    report.meta("m", blocks(ms));
    report.meta(
        "epsilon_grid",
        format!("log-spaced, {} points in [{}, {}]", a.eps_points, real(a.eps_min), real(a.eps_max)),
    );
    if a.theta > 0.0 {
        let optima = tables.par_iter().map(optimize_epsilon).collect::<crate::Result<Vec<_>>>()?;
        for (m, o) in ms.iter().zip(&optima) {
            report.meta(
                format!("optimum_m{m}"),
                format!("epsilon={} effective_rate={} at_boundary={}", real(o.argument), real(o.value), o.at_boundary),
            );
        }
    }
    let mut replay = Replay::new("fig1", &a.common, format);
    replay.arg("--theta", real(a.theta));
    replay.arg("--n", a.n.to_string());
    replay.arg("--m", blocks(ms));
    replay.arg("--eps-min", real(a.eps_min));
    replay.arg("--eps-max", real(a.eps_max));
    replay.arg("--eps-points", a.eps_points.to_string());
    report.meta("replay", replay.line());
    report.columns = vec!["m", "epsilon", "effective_rate", "std_error"];
    report.rows = rows;
    Ok(report)
}

fn sweep_rows(
    common: &Common,
    n: usize,
    ms: &[usize],
    thetas: &[f64],
    policy: SweepPolicy<f64>,
) -> Result<(Params, Vec<SweepRow<f64>>), CliError> {
    let template = validated(common, n, ms, thetas)?;
    let needs_theta = !matches!(policy, SweepPolicy::Evaluate(_));
    if needs_theta && thetas.iter().any(|&t| t <= 0.0) {
        return Err(usage("invalid parameter `theta`: optimization needs theta > 0"));
    }
    let rows = sweep_theta(&setup(common, template), thetas, ms, policy)?;
    Ok((template, rows))
}

/// Largest effective rate per θ; the first `m` listed wins ties.
fn best_m(rows: &[SweepRow<f64>], thetas: &[f64], ms: &[usize]) -> String {
    thetas
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let chunk = &rows[i * ms.len()..(i + 1) * ms.len()];
            let best = chunk.iter().fold(&chunk[0], |b, r| if r.effective_rate > b.effective_rate { r } else { b });
            format!("{}={}", real(t), best.m)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn fig2(a: &Fig2Args, format: Format) -> Result<Report, CliError> {
    let (ms, thetas) = (&a.m.0, &a.theta.0);
    let policy = SweepPolicy::Evaluate(RatePolicy::Variable { epsilon: a.epsilon });
    let (template, rows) = sweep_rows(&a.common, a.n, ms, thetas, policy)?;

    let mut report = Report::new("fig2");
    common_meta(&mut report, &a.common, &template);
    report.meta("epsilon", real(a.epsilon));
    report.meta("theta", reals(thetas));
    report.meta("m", blocks(ms));
    report.meta("best_m", best_m(&rows, thetas, ms));
    report.meta("note", "theta=0 rows are the limit E{(1-eps)R}");
    let mut replay = Replay::new("fig2", &a.common, format);
    replay.arg("--n", a.n.to_string());
    replay.arg("--epsilon", real(a.epsilon));
    replay.arg("--theta", reals(thetas));
    replay.arg("--m", blocks(ms));
    report.meta("replay", replay.line());
    report.columns = vec!["theta", "m", "effective_rate", "std_error"];
    report.rows = rows
        .iter()
        .map(|r| vec![Cell::Real(r.theta), Cell::Int(r.m as u64), Cell::Real(r.effective_rate), Cell::Real(r.std_error)])
        .collect();
    Ok(report)
}

fn fig3(a: &Fig3Args, format: Format) -> Result<Report, CliError> {
    let thetas = match &a.theta {
        Some(t) => t.0.clone(),
        None => {
            if !(a.theta_min > 0.0 && a.theta_min <= a.theta_max && a.theta_max.is_finite()) {
                return Err(usage("invalid parameter `theta-min`/`theta-max`: need 0 < theta-min <= theta-max"));
            }
            if a.theta_points == 0 {
                return Err(usage("invalid parameter `theta-points`: must be at least 1"));
            }
            log_grid(a.theta_min, a.theta_max, a.theta_points)
        }
    };
    let ms = &a.m.0;
    let (template, rows) = sweep_rows(&a.common, a.n, ms, &thetas, SweepPolicy::OptimizeEpsilon)?;

    let mut report = Report::new("fig3");
    common_meta(&mut report, &a.common, &template);
    report.meta("m", blocks(ms));
    let mut replay = Replay::new("fig3", &a.common, format);
    replay.arg("--n", a.n.to_string());
    replay.arg("--m", blocks(ms));
    match &a.theta {
        Some(t) => {
            report.meta("theta", reals(&t.0));
            replay.arg("--theta", reals(&t.0));
        }
        None => {
            report.meta(
                "theta_grid",
                format!("log-spaced, {} points in [{}, {}]", a.theta_points, real(a.theta_min), real(a.theta_max)),
            );
            replay.arg("--theta-min", real(a.theta_min));
            replay.arg("--theta-max", real(a.theta_max));
            replay.arg("--theta-points", a.theta_points.to_string());
        }
    }
    report.meta("best_m", best_m(&rows, &thetas, ms));
    report.meta("note", "at_boundary marks optima pinned to an end of the epsilon search interval");
    report.meta("replay", replay.line());
    report.columns = vec!["theta", "m", "epsilon", "effective_rate", "std_error", "at_boundary"];
    report.rows = rows
        .iter()
        .map(|r| {
            vec![
                Cell::Real(r.theta),
                Cell::Int(r.m as u64),
                Cell::Real(r.argument),
                Cell::Real(r.effective_rate),
                Cell::Real(r.std_error),
                Cell::Flag(r.at_boundary),
            ]
        })
        .collect();
    Ok(report)
}

fn fig4(a: &Fig4Args, format: Format) -> Result<Report, CliError> {
    let ms = &a.m.0;
    let template = validated(&a.common, a.n, ms, &[a.theta])?;
    let rate_max = a.rate_max.unwrap_or_else(|| 2.0 * template.snr_linear.ln_1p() / std::f64::consts::LN_2);
    if !(rate_max > 0.0 && rate_max.is_finite()) {
        return Err(usage("invalid parameter `rate-max`: must be finite and > 0"));
    }
    if a.rate_points < 2 {
        return Err(usage("invalid parameter `rate-points`: must be at least 2"));
    }
    let grid: Vec<f64> =
        (0..a.rate_points).map(|k| rate_max * k as f64 / (a.rate_points - 1) as f64).collect();
    let setup = setup(&a.common, template);
    let tables = tables(&setup, ms, a.theta)?;

    let jobs: Vec<(usize, f64)> = (0..ms.len()).flat_map(|k| grid.iter().map(move |&r| (k, r))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(k, r)| {
            let est = tables[k].effective_rate_fixed(r)?;
            Ok(vec![Cell::Int(ms[k] as u64), Cell::Real(r), Cell::Real(est.value), Cell::Real(est.std_error)])
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut report = Report::new("fig4");
    common_meta(&mut report, &a.common, &template);
    report.meta("theta", real(a.theta));
    report.meta("m", blocks(ms));
    report.meta("rate_grid", format!("linear, {} points in [0, {}]", a.rate_points, real(rate_max)));
    if a.theta > 0.0 {
        let optima = tables.par_iter().map(optimize_rate).collect::<crate::Result<Vec<_>>>()?;
        for (m, o) in ms.iter().zip(&optima) {
            report.meta(
                format!("optimum_m{m}"),
                format!("rate={} effective_rate={} at_boundary={}", real(o.argument), real(o.value), o.at_boundary),
            );
        }
    }
    let mut replay = Replay::new("fig4", &a.common, format);
    replay.arg("--theta", real(a.theta));
    replay.arg("--n", a.n.to_string());
    replay.arg("--m", blocks(ms));
    replay.arg("--rate-max", real(rate_max));
    replay.arg("--rate-points", a.rate_points.to_string());
    report.meta("replay", replay.line());
    report.columns = vec!["m", "rate", "effective_rate", "std_error"];
    report.rows = rows;
    Ok(report)
}

fn optimize(a: &OptimizeArgs, target: Target, format: Format) -> Result<Report, CliError> {
    let (ms, thetas) = (&a.m.0, &a.theta.0);
    let (command, policy, column) = match target {
        Target::Epsilon => ("optimize-epsilon", SweepPolicy::OptimizeEpsilon, "epsilon"),
        Target::Rate => ("optimize-rate", SweepPolicy::OptimizeRate, "rate"),
    };
    let (template, rows) = sweep_rows(&a.common, a.n, ms, thetas, policy)?;

    let mut report = Report::new(command);
    common_meta(&mut report, &a.common, &template);
    report.meta("theta", reals(thetas));
    report.meta("m", blocks(ms));
    let mut replay = Replay::new(command, &a.common, format);
    replay.arg("--n", a.n.to_string());
    replay.arg("--m", blocks(ms));
    replay.arg("--theta", reals(thetas));
    report.meta("replay", replay.line());
    report.columns = vec!["theta", "m", column, "effective_rate", "std_error", "at_boundary"];
    report.rows = rows
        .iter()
        .map(|r| {
            vec![
                Cell::Real(r.theta),
                Cell::Int(r.m as u64),
                Cell::Real(r.argument),
                Cell::Real(r.effective_rate),
                Cell::Real(r.std_error),
                Cell::Flag(r.at_boundary),
            ]
        })
        .collect();
    Ok(report)
}

fn sweep_m(a: &SweepMArgs, format: Format) -> Result<Report, CliError> {
    let (ms, thetas) = (&a.m.0, &a.theta.0);
    let mut replay = Replay::new("sweep-m", &a.common, format);
    replay.arg("--n", a.n.to_string());
    replay.arg("--m", blocks(ms));
    replay.arg("--theta", reals(thetas));
    let (policy, name) = match (a.epsilon, a.rate, a.optimize) {
        (Some(e), _, _) => {
            replay.arg("--epsilon", real(e));
            (SweepPolicy::Evaluate(RatePolicy::Variable { epsilon: e }), "variable")
        }
        (_, Some(r), _) => {
            replay.arg("--rate", real(r));
            (SweepPolicy::Evaluate(RatePolicy::Fixed { rate: r }), "fixed")
        }
        (_, _, Some(Target::Epsilon)) => {
            replay.arg("--optimize", "epsilon");
            (SweepPolicy::OptimizeEpsilon, "optimize_epsilon")
        }
        (_, _, Some(Target::Rate)) => {
            replay.arg("--optimize", "rate");
            (SweepPolicy::OptimizeRate, "optimize_rate")
        }
        _ => return Err(usage("one of --epsilon, --rate or --optimize is required")),
    };
    let (template, rows) = sweep_rows(&a.common, a.n, ms, thetas, policy)?;

    let mut report = Report::new("sweep-m");
    common_meta(&mut report, &a.common, &template);
    report.meta("theta", reals(thetas));
    report.meta("m", blocks(ms));
    report.meta("policy", name);
    report.meta("best_m", best_m(&rows, thetas, ms));
    report.meta("replay", replay.line());
    report.columns = vec!["theta", "m", "policy", "argument", "effective_rate", "std_error", "at_boundary"];
    report.rows = rows
        .iter()
        .map(|r| {
            vec![
                Cell::Real(r.theta),
                Cell::Int(r.m as u64),
                Cell::Text(name.into()),
                Cell::Real(r.argument),
                Cell::Real(r.effective_rate),
                Cell::Real(r.std_error),
                Cell::Flag(r.at_boundary),
            ]
        })
        .collect();
    Ok(report)
}

fn simulate(a: &SimulateArgs, format: Format) -> Result<Report, CliError> {
    let params = validated(&a.common, a.n, &[a.m], &[a.theta])?.with_m(a.m)?;
    let window = match &a.fit_window {
        Some(Reals(w)) if w.len() == 2 && 0.0 < w[0] && w[0] < w[1] && w[1] < 1.0 => (w[0], w[1]),
        Some(_) => return Err(usage("invalid parameter `fit-window`: need `p_min,p_max` with 0 < p_min < p_max < 1")),
        None => DEFAULT_FIT_WINDOW,
    };
    let arrival = match a.arrival.as_str() {
        "auto" => None,
        s => match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Some(v),
            _ => return Err(usage(format!("invalid parameter `arrival`: expected `auto` or bits >= 0, got `{s}`"))),
        },
    };
    let burn_in = a.burn_in.unwrap_or(a.frames / 100);
    if a.frames == 0 || burn_in >= a.frames {
        return Err(usage("invalid parameter `frames`/`burn-in`: need 0 <= burn-in < frames"));
    }
    if a.trace_every == 0 {
        return Err(usage("invalid parameter `trace-every`: must be at least 1"));
    }
    let clamp = clamp_mode(&a.common);
    let fading = Fading::default();

    // Resolve the policy and the effective rate it achieves at θ.
    let table = RateTable::new(&SampleSet::draw(&fading, a.m, a.common.samples, a.common.seed)?, &params, clamp)?;
    let (policy, name) = match (a.epsilon, a.rate) {
        (Some(e), _) => (RatePolicy::Variable { epsilon: e }, "variable"),
        (None, Some(r)) => (RatePolicy::Fixed { rate: r }, "fixed"),
        (None, None) => {
            if !(a.theta > 0.0) {
                return Err(usage("invalid parameter `theta`: the default optimal epsilon needs theta > 0"));
            }
            (RatePolicy::Variable { epsilon: optimize_epsilon(&table)?.argument }, "variable")
        }
    };
    let argument = match policy {
        RatePolicy::Variable { epsilon } => epsilon,
        RatePolicy::Fixed { rate } => rate,
    };
    let estimate = table.effective_rate(policy)?;
    let nm = params.blocklength() as f64;
    let arrival_bits = arrival.unwrap_or(estimate.value * nm);

    let config = QueueConfig {
        arrival_bits_per_frame: arrival_bits,
        frames: a.frames,
        burn_in_frames: burn_in,
        seed: a.common.seed,
        policy,
        params,
        fading,
        clamp,
    };
    let mut replay = Replay::new("simulate", &a.common, format);
    replay.arg("--theta", real(a.theta));
    replay.arg("--n", a.n.to_string());
    replay.arg("--m", a.m.to_string());
    if let Some(e) = a.epsilon {
        replay.arg("--epsilon", real(e));
    }
    if let Some(r) = a.rate {
        replay.arg("--rate", real(r));
    }
    replay.arg("--arrival", arrival.map_or_else(|| "auto".to_string(), real));
    replay.arg("--frames", a.frames.to_string());
    replay.arg("--burn-in", burn_in.to_string());
    replay.arg("--fit-window", reals(&[window.0, window.1]));

    let mut report = Report::new("simulate");
    common_meta(&mut report, &a.common, &params);
    report.meta("theta", real(a.theta));
    report.meta("m", a.m.to_string());
    report.meta("policy", name);
    report.meta("fit_window", reals(&[window.0, window.1]));
    report.meta("arrival", if arrival.is_some() { "given" } else { "auto (effective_rate * n * m)" });
    report.meta("replay", replay.line());

    let run = match &a.trace {
        None => simulate_queue_with_trace(&config, |_| {})?,
        Some(path) => {
            let file = File::create(path).map_err(|e| io_error(&format!("cannot create {}", path.display()), e))?;
            let mut w = BufWriter::new(file);
            let mut header = Report::new("simulate");
            header.meta = report.meta.clone();
            header.meta("content", "trace");
            header.meta("trace_every", a.trace_every.to_string());
            header.columns = vec!["frame", "z_mean", "z_min", "service_bits", "queue_bits"];
            let mut failed: Option<io::Error> = w.write_all(header.render(Format::Csv).as_bytes()).err();
            let every = a.trace_every;
            let mut seen = 0usize;
            let run = simulate_queue_with_trace(&config, |t: TraceRecord<f64>| {
                seen += 1;
                if failed.is_some() || (seen - 1) % every != 0 {
                    return;
                }
                let line = format!(
                    "{},{},{},{},{}\n",
                    t.frame,
                    real(t.z_mean),
                    real(t.z_min),
                    real(t.service_bits),
                    real(t.queue_bits)
                );
                failed = w.write_all(line.as_bytes()).err();
            })?;
            if let Some(e) = failed.or_else(|| w.flush().err()) {
                return Err(io_error(&format!("cannot write {}", path.display()), e));
            }
            run
        }
    };
    let tail = estimate_decay_rate(&run.samples, window)?;
    let relative_error = if a.theta > 0.0 { tail.theta_hat / a.theta - 1.0 } else { f64::NAN };

    let fields: Vec<(&'static str, Cell)> = vec![
        ("theta", Cell::Real(a.theta)),
        ("n", Cell::Int(a.n as u64)),
        ("m", Cell::Int(a.m as u64)),
        ("policy", Cell::Text(name.into())),
        ("argument", Cell::Real(argument)),
        ("effective_rate", Cell::Real(estimate.value)),
        ("effective_rate_std_error", Cell::Real(estimate.std_error)),
        ("arrival_bits_per_frame", Cell::Real(arrival_bits)),
        ("frames", Cell::Int(a.frames as u64)),
        ("burn_in_frames", Cell::Int(burn_in as u64)),
        ("mean_service_bits", Cell::Real(run.mean_service)),
        ("drift_per_frame", Cell::Real(run.drift_per_frame)),
        ("unstable", Cell::Flag(run.unstable)),
        ("theta_hat", Cell::Real(tail.theta_hat)),
        ("relative_error", Cell::Real(relative_error)),
        ("fit_r2", Cell::Real(tail.fit_r2)),
        ("fit_points", Cell::Int(tail.points as u64)),
        ("q_lo", Cell::Real(tail.q_lo)),
        ("q_hi", Cell::Real(tail.q_hi)),
        ("overflow_fraction_at_q_hi", Cell::Real(tail.overflow_fraction_at_q_hi)),
    ];
    let (columns, row): (Vec<_>, Vec<_>) = fields.into_iter().unzip();
    report.columns = columns;
    report.rows = vec![row];
    Ok(report)
}

fn run(command: &Command) -> Result<(String, Option<PathBuf>), CliError> {
    let (common, default_format) = match command {
        Command::Fig1(a) => (&a.common, Format::Csv),
        Command::Fig2(a) => (&a.common, Format::Csv),
        Command::Fig3(a) => (&a.common, Format::Csv),
        Command::Fig4(a) => (&a.common, Format::Csv),
        Command::OptimizeEpsilon(a) | Command::OptimizeRate(a) => (&a.common, Format::Csv),
        Command::SweepM(a) => (&a.common, Format::Csv),
        Command::Simulate(a) => (&a.common, Format::Json),
    };
    let format = common.format.unwrap_or(default_format);
    if !common.snr_db.is_finite() {
        return Err(usage("invalid parameter `snr-db`: must be finite"));
    }
    let report = match command {
        Command::Fig1(a) => fig1(a, format)?,
        Command::Fig2(a) => fig2(a, format)?,
        Command::Fig3(a) => fig3(a, format)?,
        Command::Fig4(a) => fig4(a, format)?,
        Command::OptimizeEpsilon(a) => optimize(a, Target::Epsilon, format)?,
        Command::OptimizeRate(a) => optimize(a, Target::Rate, format)?,
        Command::SweepM(a) => sweep_m(a, format)?,
        Command::Simulate(a) => simulate(a, format)?,
    };
    Ok((report.render(format), common.output.clone()))
}

fn write_output(text: &str, path: Option<&PathBuf>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_error(&format!("cannot write {}", p.display()), e)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| io_error("cannot write stdout", e))
        }
    }
}

fn thread_pool() -> Result<Option<rayon::ThreadPool>, CliError> {
    let Some(raw) = std::env::var_os(THREADS_VAR) else {
        return Ok(None);
    };
    let threads = raw
        .to_str()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .ok_or_else(|| usage(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| CliError::Runtime(format!("cannot start worker threads: {e}")))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on usage errors, 2 on runtime errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = thread_pool().and_then(|pool| {
        let (text, path) = match pool {
            Some(p) => p.install(|| run(&cli.command))?,
            None => run(&cli.command)?,
        };
        write_output(&text, path.as_ref())
    });
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_lists_round_trip() {
        let b = parse_blocks("1..5,7, 9..10").unwrap();
        assert_eq!(b.0, vec![1, 2, 3, 4, 5, 7, 9, 10]);
        assert_eq!(blocks(&b.0), "1..5,7,9,10");
        assert_eq!(parse_blocks(&blocks(&b.0)).unwrap(), b);
        assert!(parse_blocks("0,1").is_err());
        assert!(parse_blocks("5..2").is_err());
        assert!(parse_blocks("a").is_err());
    }

    #[test]
    fn reals_print_round_trip() {
        for x in [0.0, 1e-10, 0.001, 0.1, 1.0 / 3.0, 1e300, 12345.678] {
            assert_eq!(real(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(parse_reals("0, 0.5,1e-3").unwrap().0, vec![0.0, 0.5, 1e-3]);
        assert!(parse_reals("0,,1").is_err());
    }

    #[test]
    fn log_grid_hits_endpoints() {
        let g = log_grid(1e-3, 1.0, 20);
        assert_eq!(g.len(), 20);
        assert_eq!((g[0], g[19]), (1e-3, 1.0));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
