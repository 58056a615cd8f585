//! Generators and fitting helpers shared by the integration suites.
#![allow(dead_code)] // each test binary uses a different subset

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fairidr::cate::{fit_cate, CateModel, RegressorSpec};
use fairidr::dataset::{Dataset, Sample};

/// Benchmark process with an independent sensitive attribute:
/// `R = {(S+1)·sign(X1−X2) + S}·A + noise` with `X1, X2` standard normal
/// and `S ~ Bernoulli(1/2)` independent of them. The true effect depends on
/// `S`, yet the rule `sign(x1 − x2)` is statistically independent of `S`.
pub fn generate_independent_s(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let x1: f64 = rng.sample(StandardNormal);
            let x2: f64 = rng.sample(StandardNormal);
            let s = u8::from(rng.random_bool(0.5));
            let a: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
            let noise: f64 = rng.sample(StandardNormal);
            let g = (f64::from(s) + 1.0) * (x1 - x2).signum() * f64::from(x1 != x2) + f64::from(s);
            let r = g * f64::from(a) + noise;
            Sample::new(vec![x1, x2], s, 0, a, r)
        })
        .collect();
    Dataset::new(samples).unwrap()
}

/// Survey-style synthetic dataset: 24 covariates, a three-level income group
/// label in `{1, 2, 3}`, a sensitive attribute correlated with covariates,
/// and an outcome whose treatment effect loads on the sensitive attribute so
/// that parity constraints bind.
pub fn generate_survey(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..24).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let income = x[0] + 0.5 * x[5];
            let l = if income < -0.4 {
                1
            } else if income < 0.5 {
                2
            } else {
                3
            };
            let p_s = 1.0 / (1.0 + (-(0.8 * x[1] + 0.3 * x[2])).exp());
            let s = u8::from(rng.random_bool(p_s));
            let a: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
            let noise: f64 = rng.sample(StandardNormal);
            let g = 0.5 * x[0] - 0.4 * x[3] * x[3] + 0.3 * x[4] + 1.2 * f64::from(s) - 0.3 * l as f64 + 0.8;
            let r = g * f64::from(a) + noise;
            Sample::new(x, s, l as i64, a, r)
        })
        .collect();
    Dataset::new(samples).unwrap()
}

/// Quick ridge-backed CATE fit for tests that need a fitted model but not a
/// network.
pub fn ridge_cate(train: &Dataset, seed: u64) -> CateModel {
    let spec = RegressorSpec::ridge(seed);
    fit_cate(train, &Dataset::new(vec![]).unwrap(), &spec).unwrap()
}

/// Random multi-group dataset with an affine outcome signal, regenerated
/// until every group carries both sensitive values and both arms.
pub fn random_small_dataset(rng: &mut ChaCha8Rng, max_groups: i64) -> Dataset {
    loop {
        let n = rng.random_range(60..=200);
        let n_groups = rng.random_range(1..=max_groups);
        let p_s: Vec<f64> = (0..n_groups).map(|_| rng.random_range(0.25..0.75)).collect();
        let slope = rng.random_range(0.5..2.0);
        let s_eff = rng.random_range(-1.0..1.0);
        let shift = rng.random_range(-0.5..0.5);
        let samples: Vec<Sample> = (0..n)
            .map(|_| {
                let l = rng.random_range(0..n_groups);
                let s = u8::from(rng.random_bool(p_s[l as usize]));
                let x = rng.random_range(-2.0..2.0);
                let a: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
                let noise: f64 = rng.sample(StandardNormal);
                let g = shift + slope * x + s_eff * f64::from(s);
                let r = g * f64::from(a) + 0.3 * noise;
                Sample::new(vec![x], s, l, a, r)
            })
            .collect();
        let ds = Dataset::new(samples).unwrap();
        let (n1, n0) = ds.arm_counts();
        if n1 > 0 && n0 > 0 && fairidr::fairness::estimate_group_stats(&ds).is_ok() {
            return ds;
        }
    }
}
