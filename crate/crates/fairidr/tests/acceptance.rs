//! Acceptance suite: one test per criterion. Each test prints a single
//! `criterion NN PASS` line with the measured values once its assertions
//! hold (run with `--nocapture` to see them).

mod common;

use std::time::Instant;

use common::{generate_independent_s, generate_survey, random_small_dataset, ridge_cate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairidr::cate::{fit_cate, RegressorSpec, ReluNet};
use fairidr::dataset::{load_csv, save_csv, split, CsvSchema, Dataset, Sample, SplitSpec};
use fairidr::fairness::{
    estimate_group_stats, fit_fair_rule, fit_fair_rule_with_cate, g_hat_samples, g_indicator, solve_omega,
    FairnessMode, OmegaCase, SolverConfig,
};
use fairidr::policy::{apply_rule, unfairness, value_identity_check, Decisions};
use fairidr::simgen::{epsilon_sweep, run_scenario, ScenarioSpec};

fn scenario(case_id: u8, n: usize, epsilon: f64, mode: FairnessMode, seed: u64) -> ScenarioSpec {
    let mut spec = ScenarioSpec::new(case_id, n, epsilon, mode, seed);
    spec.replications = 50;
    spec
}

#[test]
fn criterion_01_dp_case1_trend() {
    let start = Instant::now();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut pv_at_2000 = 0.0;
    for &n in &[500usize, 1000, 2000] {
        let outcome = run_scenario(&scenario(1, n, 0.0, FairnessMode::Dp, 101)).unwrap();
        assert_eq!(outcome.summary.n_failed, 0);
        assert!(
            outcome.summary.uf.mean <= 0.07,
            "UF mean at n = {n} is {}",
            outcome.summary.uf.mean
        );
        means.push(outcome.summary.uf.mean);
        sds.push(outcome.summary.uf.sd);
        if n == 2000 {
            pv_at_2000 = outcome.summary.pv.mean;
        }
    }
    for i in 0..means.len() - 1 {
        assert!(
            means[i + 1] <= means[i] + sds[i],
            "UF mean increased beyond one SD: {} -> {}",
            means[i],
            means[i + 1]
        );
    }
    assert!(
        (1.75..=2.00).contains(&pv_at_2000),
        "PV mean at n = 2000 is {pv_at_2000}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 900, "runtime {elapsed:.0?} exceeds the 15-minute target");
    println!(
        "criterion 01 PASS: UF means {:.4}/{:.4}/{:.4} (all <= 0.07, non-increasing), PV(2000) = {:.4}, elapsed {:.1?}",
        means[0], means[1], means[2], pv_at_2000, elapsed
    );
}

#[test]
fn criterion_02_case1_epsilon_control() {
    let epsilons = [0.02, 0.04, 0.08, 0.10, 0.15];
    let outcomes = epsilon_sweep(&scenario(1, 2000, 0.0, FairnessMode::Dp, 102), &epsilons).unwrap();
    let mut pv_prev = f64::NEG_INFINITY;
    for (outcome, &eps) in outcomes.iter().zip(&epsilons) {
        assert!(
            outcome.summary.uf.mean <= eps + 0.04,
            "UF mean {} exceeds eps {eps} + 0.04",
            outcome.summary.uf.mean
        );
        assert!(
            outcome.summary.pv.mean >= pv_prev - 1e-9,
            "PV mean decreased: {pv_prev} -> {}",
            outcome.summary.pv.mean
        );
        pv_prev = outcome.summary.pv.mean;
    }
    let ufs: Vec<String> = outcomes.iter().map(|o| format!("{:.3}", o.summary.uf.mean)).collect();
    let pvs: Vec<String> = outcomes.iter().map(|o| format!("{:.3}", o.summary.pv.mean)).collect();
    println!(
        "criterion 02 PASS: UF means [{}] within eps + 0.04, PV means [{}] weakly increasing",
        ufs.join(", "),
        pvs.join(", ")
    );
}

#[test]
fn criterion_03_cdp_case4_trend() {
    let outcome = run_scenario(&scenario(4, 2000, 0.0, FairnessMode::Cdp, 103)).unwrap();
    assert_eq!(outcome.summary.n_failed, 0);
    assert!(outcome.summary.cuf.mean <= 0.08, "CUF mean {}", outcome.summary.cuf.mean);
    assert!(outcome.summary.pv.mean >= 1.7, "PV mean {}", outcome.summary.pv.mean);
    println!(
        "criterion 03 PASS: CUF mean {:.4} <= 0.08, PV mean {:.3} >= 1.7",
        outcome.summary.cuf.mean, outcome.summary.pv.mean
    );
}

#[test]
fn criterion_04_case4_epsilon_control() {
    let epsilons = [0.05, 0.10, 0.15, 0.20, 0.25];
    let outcomes = epsilon_sweep(&scenario(4, 2000, 0.0, FairnessMode::Cdp, 104), &epsilons).unwrap();
    for (outcome, &eps) in outcomes.iter().zip(&epsilons) {
        assert!(
            outcome.summary.cuf.mean <= eps + 0.04,
            "CUF mean {} exceeds eps {eps} + 0.04",
            outcome.summary.cuf.mean
        );
    }
    let cufs: Vec<String> = outcomes.iter().map(|o| format!("{:.3}", o.summary.cuf.mean)).collect();
    println!("criterion 04 PASS: CUF means [{}] within eps + 0.04", cufs.join(", "));
}

#[test]
fn criterion_05_solver_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let h = 0.3;
    let span = 8.0;
    let step = 1e-4;
    let mut checked = 0;
    let mut max_gap = 0.0f64;
    while checked < 50 {
        let ds = random_small_dataset(&mut rng, 3);
        let cate = ridge_cate(&ds, checked as u64);
        let stats = estimate_group_stats(&ds).unwrap();
        let labels: Vec<i64> = stats.labels().collect();
        let l = labels[rng.random_range(0..labels.len())];
        let eps = [0.0, 0.02, 0.05][rng.random_range(0..3)];

        let g0 = g_indicator(&ds, &cate, &stats, l).unwrap();
        if g0.abs() <= eps {
            continue; // interior: nothing for the grid to locate
        }
        let mut cfg = SolverConfig::with_epsilon(eps);
        cfg.bandwidth = Some(h);
        cfg.bracket = Some(span);
        cfg.tol_g = 1e-9;
        cfg.tol_omega = Some(1e-12);
        let (omega, _) = solve_omega(&ds, &cate, &stats, l, &cfg).unwrap();
        if omega.abs() > span - 0.5 {
            continue; // root escaped the grid span; not a comparable draw
        }

        let target = if g0 > eps { eps } else { -eps };
        let m = (2.0 * span / step) as usize + 1;
        let omegas: Vec<f64> = (0..m).map(|i| -span + i as f64 * step).collect();
        let gs = g_hat_samples(&ds, &cate, &stats, l, &omegas, h).unwrap();
        let best = omegas
            .iter()
            .zip(&gs)
            .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
            .map(|(w, _)| *w)
            .unwrap();
        let gap = (omega - best).abs();
        max_gap = max_gap.max(gap);
        assert!(gap <= 2e-4, "bisection {omega} vs grid {best} (gap {gap})");
        checked += 1;
    }
    println!("criterion 05 PASS: 50 datasets, max |bisection - grid| = {max_gap:.2e} <= 2e-4");
}

#[test]
fn criterion_06_monotonicity_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let tol_g = 1e-6;
    let mut pairs = 0;
    for i in 0..100 {
        let ds = random_small_dataset(&mut rng, 3);
        let cate = ridge_cate(&ds, i);
        let stats = estimate_group_stats(&ds).unwrap();
        let labels: Vec<i64> = stats.labels().collect();
        let l = labels[rng.random_range(0..labels.len())];
        for _ in 0..20 {
            let a = rng.random_range(-5.0..5.0);
            let b = rng.random_range(-5.0..5.0);
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            let h = rng.random_range(0.05..1.0);
            let gs = g_hat_samples(&ds, &cate, &stats, l, &[a, b], h).unwrap();
            assert!(
                gs[0] >= gs[1] - tol_g,
                "G({a}) = {} < G({b}) = {} at h = {h}",
                gs[0],
                gs[1]
            );
            pairs += 1;
        }
    }
    println!("criterion 06 PASS: {pairs} ordered omega pairs, zero violations beyond tol_g");
}

#[test]
fn criterion_07_three_case_logic() {
    // Interior: equal positive rates across S make the constraint exactly 0.
    let interior_ds = Dataset::new(vec![
        Sample::new(vec![1.0], 1, 0, 1, 1.0),
        Sample::new(vec![-1.0], 1, 0, 1, -1.0),
        Sample::new(vec![1.0], 0, 0, -1, 1.0),
        Sample::new(vec![-1.0], 0, 0, -1, -1.0),
    ])
    .unwrap();
    // Upper: only the S = 1 row gets a positive decision.
    let upper_ds = Dataset::new(vec![
        Sample::new(vec![1.0], 1, 0, 1, 1.0),
        Sample::new(vec![-1.0], 0, 0, -1, -1.0),
    ])
    .unwrap();
    // Lower: flip the sensitive labels.
    let lower_ds = Dataset::new(vec![
        Sample::new(vec![1.0], 0, 0, 1, 1.0),
        Sample::new(vec![-1.0], 1, 0, -1, -1.0),
    ])
    .unwrap();

    // delta(x) = x exactly, from noiseless ridge arms fit on (r = x/2 * a).
    let cate = {
        let mut spec = RegressorSpec::ridge(0);
        spec.ridge_lambda = 1e-10;
        let big: Vec<Sample> = (0..40)
            .map(|i| {
                let x = (i as f64 - 20.0) / 10.0;
                let a: i8 = if i % 2 == 0 { 1 } else { -1 };
                Sample::new(vec![x], (i % 2) as u8, (i % 2) as i64, a, x / 2.0 * f64::from(a))
            })
            .collect();
        fit_cate(&Dataset::new(big).unwrap(), &Dataset::new(vec![]).unwrap(), &spec).unwrap()
    };

    let mut cfg = SolverConfig::with_epsilon(0.2);
    cfg.bandwidth = Some(1.0);

    let stats = estimate_group_stats(&interior_ds).unwrap();
    let (w, diag) = solve_omega(&interior_ds, &cate, &stats, 0, &cfg).unwrap();
    assert_eq!(w, 0.0);
    assert_eq!(diag.case, OmegaCase::Interior);

    let stats = estimate_group_stats(&upper_ds).unwrap();
    let (w_up, diag_up) = solve_omega(&upper_ds, &cate, &stats, 0, &cfg).unwrap();
    assert_eq!(diag_up.case, OmegaCase::Upper);
    assert_eq!(diag_up.target, 0.2);
    assert!(w_up > 0.0);
    assert!(diag_up.residual <= 1e-6, "residual {}", diag_up.residual);

    let stats = estimate_group_stats(&lower_ds).unwrap();
    let (w_lo, diag_lo) = solve_omega(&lower_ds, &cate, &stats, 0, &cfg).unwrap();
    assert_eq!(diag_lo.case, OmegaCase::Lower);
    assert_eq!(diag_lo.target, -0.2);
    assert!(w_lo < 0.0);
    assert!(diag_lo.residual <= 1e-6, "residual {}", diag_lo.residual);

    println!(
        "criterion 07 PASS: interior omega = 0; upper root {w_up:.4} (residual {:.1e}); lower root {w_lo:.4} (residual {:.1e})",
        diag_up.residual, diag_lo.residual
    );
}

#[test]
fn criterion_08_dp_equals_degenerate_cdp() {
    // Constant-L data fitted both ways from the same seed.
    let data = fairidr::simgen::generate(1, 1200, 808).unwrap();
    let (train, val, _) = split(&data, &SplitSpec::new(0.8, 0.2, 8)).unwrap();
    let test = fairidr::simgen::generate(1, 1000, 809).unwrap();
    let cfg = SolverConfig::with_epsilon(0.05);
    let reg = RegressorSpec::ridge(8);
    let dp = fit_fair_rule(&train, &val, &reg, &cfg, FairnessMode::Dp).unwrap();
    let cdp = fit_fair_rule(&train, &val, &reg, &cfg, FairnessMode::Cdp).unwrap();
    let d_dp = apply_rule(&dp, &test).unwrap();
    let d_cdp = apply_rule(&cdp, &test).unwrap();
    assert_eq!(d_dp, d_cdp);
    println!("criterion 08 PASS: dp and cdp decisions identical on all {} test points", test.len());
}

#[test]
fn criterion_09_value_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let ds = random_small_dataset(&mut rng, 3);
        let eps = rng.random_range(0.0..0.2);
        let rule = fit_fair_rule(
            &ds,
            &Dataset::new(vec![]).unwrap(),
            &RegressorSpec::ridge(i),
            &SolverConfig::with_epsilon(eps),
            FairnessMode::Cdp,
        )
        .unwrap();
        let id = value_identity_check(&ds, &rule).unwrap();
        let bound = 1e-10 * ds.len() as f64;
        assert!(id.gap.abs() <= bound, "gap {} exceeds {bound}", id.gap);
        worst = worst.max(id.gap.abs());
    }
    println!("criterion 09 PASS: 20 fitted rules, max |identity gap| = {worst:.2e}");
}

#[test]
fn criterion_10_independent_s_benchmark() {
    let test = generate_independent_s(100_000, 1010);
    let decisions = Decisions::new(test.iter().map(|s| if s.x[0] - s.x[1] > 0.0 { 1 } else { -1 }).collect());
    let uf = unfairness(&decisions, &test).unwrap();
    assert!(uf <= 0.02, "UF = {uf}");
    println!("criterion 10 PASS: oracle sign rule UF = {uf:.4} <= 0.02 at N = 100000");
}

#[test]
fn criterion_11_gradient_check() {
    let mut net = ReluNet::new_seeded(4, 16, 3, 1111);
    let xs: Vec<Vec<f64>> = (0..10)
        .map(|i| {
            let t = i as f64;
            vec![(t * 0.7).sin() + 0.2, (t * 0.3).cos(), 0.4 - t * 0.05, (t * 0.11).sin()]
        })
        .collect();
    let ys: Vec<f64> = xs.iter().map(|x| 0.8 * x[0] - 0.5 * x[1] + 0.3 * x[2] * x[3]).collect();

    let (_, grad) = net.mse_and_grad(&xs, &ys);
    let params = net.params_flat();
    let eps = 1e-6;
    let mut max_rel = 0.0f64;
    for (i, g) in grad.iter().enumerate() {
        let mut plus = params.clone();
        plus[i] += eps;
        net.set_params_flat(&plus);
        let (lp, _) = net.mse_and_grad(&xs, &ys);
        let mut minus = params.clone();
        minus[i] -= eps;
        net.set_params_flat(&minus);
        let (lm, _) = net.mse_and_grad(&xs, &ys);
        net.set_params_flat(&params);
        let numeric = (lp - lm) / (2.0 * eps);
        let denom = g.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((g - numeric).abs() / denom);
    }
    assert!(max_rel <= 1e-4, "max relative gradient error {max_rel}");
    println!("criterion 11 PASS: max relative gradient error {max_rel:.2e} <= 1e-4 over {} parameters", params.len());
}

#[test]
fn criterion_12_survey_csv_sweep() {
    // Full fit -> evaluate pipeline on a survey-style CSV (24 covariates,
    // three income groups, ~7000 rows), swept over tolerances with five
    // resampled splits standing in for cross-validation folds.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("survey.csv");
    let schema = CsvSchema {
        x_cols: (1..=24).map(|i| format!("x{i}")).collect(),
        s_col: "s".into(),
        l_col: "income_group".into(),
        a_col: "a".into(),
        r_col: "r".into(),
        a_zero_one: false,
    };
    save_csv(&generate_survey(7135, 1212), &path, &schema).unwrap();
    let ds = load_csv(&path, &schema).unwrap();
    assert_eq!(ds.len(), 7135);
    assert_eq!(ds.p(), 24);

    let epsilons = [0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30];
    let folds = 5;
    let mut cuf = vec![Vec::with_capacity(folds); epsilons.len()];
    for fold in 0..folds {
        let (train, val, test) = split(&ds, &SplitSpec::new(0.72, 0.08, 1300 + fold as u64)).unwrap();
        let mut reg = RegressorSpec::relu(1300 + fold as u64);
        reg.seed = 1400 + fold as u64;
        let cate = fit_cate(&train, &val, &reg).unwrap();
        for (i, &eps) in epsilons.iter().enumerate() {
            let rule = fit_fair_rule_with_cate(&train, cate.clone(), &SolverConfig::with_epsilon(eps), FairnessMode::Cdp)
                .unwrap();
            let decisions = apply_rule(&rule, &test).unwrap();
            let grouped = fairidr::policy::conditional_unfairness(&decisions, &test).unwrap();
            cuf[i].push(grouped.cuf);
        }
    }

    let mean_sd = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        (mean, sd)
    };
    let stats: Vec<(f64, f64)> = cuf.iter().map(|v| mean_sd(v)).collect();
    for i in 0..stats.len() - 1 {
        assert!(
            stats[i + 1].0 >= stats[i].0 - stats[i].1,
            "CUF mean fell by more than one SD: {:.4} -> {:.4} (sd {:.4}) at eps {}",
            stats[i].0,
            stats[i + 1].0,
            stats[i].1,
            epsilons[i + 1]
        );
    }
    let line: Vec<String> = stats.iter().map(|(m, _)| format!("{m:.3}")).collect();
    println!(
        "criterion 12 PASS: pipeline completed; CUF means [{}] weakly increasing within one SD",
        line.join(", ")
    );
}
