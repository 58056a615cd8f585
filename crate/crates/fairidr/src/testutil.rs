//! Helpers shared by the unit tests of several modules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cate::{fit_regressor, CateModel, FeatureLayout, RegressorSpec};
use crate::dataset::{Dataset, Sample};
use crate::fairness::estimate_group_stats;

/// CATE model whose delta is an exact affine function of `(x, s, l)`, built
/// by fitting unpenalized ridge arms on noiseless targets. Coefficients are
/// ordered `[intercept, x_1..x_p, s, l]`.
pub fn affine_cate(p: usize, coef1: &[f64], coef0: &[f64]) -> CateModel {
    assert_eq!(coef1.len(), p + 3);
    assert_eq!(coef0.len(), p + 3);
    let layout = FeatureLayout { p };
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for s in 0..2u8 {
        for l in 0..2i64 {
            for _ in 0..8 {
                let x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
                xs.push(layout.build(&x, s, l).unwrap());
            }
        }
    }
    let affine = |c: &[f64], z: &[f64]| c[0] + z.iter().zip(&c[1..]).map(|(a, b)| a * b).sum::<f64>();
    let y1: Vec<f64> = xs.iter().map(|z| affine(coef1, z)).collect();
    let y0: Vec<f64> = xs.iter().map(|z| affine(coef0, z)).collect();
    let mut spec = RegressorSpec::ridge(0);
    spec.ridge_lambda = 0.0;
    spec.output_clip = Some(1e6);
    let m1 = fit_regressor(&xs, &y1, &[], &[], &spec).unwrap();
    let m0 = fit_regressor(&xs, &y0, &[], &[], &spec).unwrap();
    CateModel { m1, m0, layout }
}

/// delta(x, s, l) = x_1 exactly.
pub fn cate_delta_x1() -> CateModel {
    affine_cate(1, &[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.0])
}

/// Two rows, one group: S = (1, 0), delta = (1, -1), psi = (2, -2).
pub fn two_point_dataset() -> Dataset {
    Dataset::new(vec![
        Sample::new(vec![1.0], 1, 0, 1, 0.0),
        Sample::new(vec![-1.0], 0, 0, -1, 0.0),
    ])
    .unwrap()
}

/// Random dataset with 1-2 groups and a random affine CATE, regenerated
/// until every group carries both sensitive values.
pub fn random_group_dataset(rng: &mut ChaCha8Rng, n: usize) -> (Dataset, CateModel) {
    let cate = affine_cate(
        1,
        &[
            rng.random_range(-0.5..0.5),
            rng.random_range(0.5..1.5),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
        ],
        &[rng.random_range(-0.5..0.5), 0.0, 0.0, 0.0],
    );
    loop {
        let p_s = rng.random_range(0.3..0.7);
        let samples: Vec<Sample> = (0..n)
            .map(|_| {
                let s = u8::from(rng.random_bool(p_s));
                let l = i64::from(rng.random_bool(0.5));
                Sample::new(vec![rng.random_range(-2.0..2.0)], s, l, if rng.random_bool(0.5) { 1 } else { -1 }, 0.0)
            })
            .collect();
        let ds = Dataset::new(samples).unwrap();
        if estimate_group_stats(&ds).is_ok() {
            return (ds, cate.clone());
        }
    }
}
