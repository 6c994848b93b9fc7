mod common;

use blockrate::optimize::{optimize_epsilon, optimize_rate, EPSILON_RANGE};
use blockrate::{sweep_m, sweep_theta, ClampMode, Fading, Params, Policy, Samples, SweepPolicy, SweepSetup, Table};

fn table(n: usize, m: usize, theta: f64, count: usize) -> Table {
    let samples = Samples::draw(&Fading::default(), m, count, 31).unwrap();
    Table::new(&samples, &Params::new(1.0, n, m, theta).unwrap(), ClampMode::Faithful).unwrap()
}

fn setup(n: usize, samples: usize) -> SweepSetup<f64> {
    SweepSetup {
        template: Params::new(1.0, n, 1, 0.01).unwrap(),
        fading: Fading::default(),
        samples,
        seed: 5,
        clamp: ClampMode::Faithful,
    }
}

#[test]
fn optimal_epsilon_matches_grid_search() {
    for (n, m, theta) in [(200, 1, 0.01), (50, 2, 0.1), (50, 10, 0.01)] {
        let t = table(n, m, theta, 5000);
        let opt = optimize_epsilon(&t).unwrap();
        let grid = common::log_grid(EPSILON_RANGE.0, EPSILON_RANGE.1, 2000);
        let values: Vec<f64> = grid.iter().map(|&e| t.ln_psi(e).unwrap()).collect();
        let k = (0..grid.len()).min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap()).unwrap();
        let step = (grid[1] / grid[0]).ln();
        assert!((opt.argument.ln() - grid[k].ln()).abs() <= step, "n={n} m={m}");
        assert!(t.ln_psi(opt.argument).unwrap() <= values[k] + 1e-12);
    }
}

#[test]
fn slope_of_psi_changes_sign_at_the_optimum() {
    for (n, m, theta) in [(200, 1, 0.01), (200, 2, 0.1), (50, 4, 0.05)] {
        let t = table(n, m, theta, 5000);
        let opt = optimize_epsilon(&t).unwrap();
        assert!(!opt.at_boundary);
        let e = opt.argument;
        assert!(common::psi_slope(&t, e * (1.0 - 1e-4)) < 0.0, "n={n} m={m}");
        assert!(common::psi_slope(&t, e * (1.0 + 1e-4)) > 0.0, "n={n} m={m}");
    }
}

#[test]
fn optimal_rate_is_a_local_minimum_of_phi() {
    for (n, m, theta) in [(200, 1, 0.01), (50, 10, 0.1)] {
        let t = table(n, m, theta, 5000);
        let opt = optimize_rate(&t).unwrap();
        assert!(!opt.at_boundary && opt.argument > 0.0);
        let r = opt.argument;
        let at = t.ln_phi(r).unwrap();
        assert!(at <= t.ln_phi(r * 0.999).unwrap() && at <= t.ln_phi(r * 1.001).unwrap());
        let direct = t.effective_rate_fixed(r).unwrap();
        assert_eq!((direct.value, direct.std_error), (opt.value, opt.std_error));
    }
}

#[test]
fn optimizers_need_positive_theta() {
    let t = table(50, 1, 0.0, 100);
    assert!(optimize_epsilon(&t).is_err());
    assert!(optimize_rate(&t).is_err());
}

#[test]
fn m_sweep_reports_its_best_row() {
    let ms: Vec<usize> = (1..=12).collect();
    let sweep = sweep_m(&setup(50, 4000), &ms, SweepPolicy::Evaluate(Policy::Variable { epsilon: 0.01 })).unwrap();
    assert_eq!(sweep.rows.iter().map(|r| r.m).collect::<Vec<_>>(), ms);
    let top = sweep.rows.iter().map(|r| r.effective_rate).fold(f64::MIN, f64::max);
    let best = sweep.rows.iter().find(|r| r.m == sweep.best_m).unwrap();
    assert_eq!(best.effective_rate, top);
}

#[test]
fn theta_sweep_rows_match_direct_evaluation() {
    let s = setup(50, 3000);
    let ms = [1, 3, 7];
    let thetas = [0.005, 0.05];
    let rows = sweep_theta(&s, &thetas, &ms, SweepPolicy::OptimizeEpsilon).unwrap();
    assert_eq!(rows.len(), 6);
    let blocks = s.super_blocks(&ms).unwrap();
    for (i, row) in rows.iter().enumerate() {
        let (theta, m) = (thetas[i / 3], ms[i % 3]);
        assert_eq!((row.theta, row.m), (theta, m));
        let t = Table::new(&blocks.prefix(m).unwrap(), &Params::new(1.0, 50, m, theta).unwrap(), ClampMode::Faithful)
            .unwrap();
        let opt = optimize_epsilon(&t).unwrap();
        assert_eq!((row.argument, row.effective_rate), (opt.argument, opt.value));
    }
}

#[test]
fn sweeps_are_thread_count_invariant() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| sweep_theta(&setup(50, 3000), &[0.01, 0.1], &[1, 2, 5], SweepPolicy::OptimizeRate).unwrap())
    };
    assert_eq!(run(1), run(4));
}
