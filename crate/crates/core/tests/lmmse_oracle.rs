//! LMMSE recovery checked against a brute-force joint-Gaussian conditional
//! mean and against simple linear competitors.

use gridfill_core::{
    acquire, lmmse_posterior_distortion, lmmse_recover, mismatch_covariance, sample_source, synthetic_covariance,
    GaussianSourceSpec, LmmseModel, MismatchMode, ObservationMask, StateMatrix,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random SPD matrix `A A^T + 0.1 I`.
fn random_covariance(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

/// `E[x | y_O]` for `x ~ N(mu, sigma)` and `y_O = x_O + w`, formed by
/// building the joint covariance of `(x, y_O)` and inverting the `y_O` block
/// explicitly.
fn conditional_mean_oracle(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    noise: f64,
    observed: &[usize],
    y: &[f64],
) -> DVector<f64> {
    let n = mu.len();
    let k = observed.len();
    if k == 0 {
        return mu.clone();
    }
    // joint covariance of (x, y_O): [[sigma, sigma P^T], [P sigma, P sigma P^T + noise I]]
    let p = DMatrix::from_fn(k, n, |r, c| if observed[r] == c { 1.0 } else { 0.0 });
    let cov_xy = sigma * p.transpose();
    let cov_yy = &p * sigma * p.transpose() + DMatrix::identity(k, k) * noise;
    let inv = cov_yy.try_inverse().expect("observed block invertible");
    let resid = DVector::from_fn(k, |r, _| y[r] - mu[observed[r]]);
    mu + cov_xy * (inv * resid)
}

#[test]
fn matches_joint_gaussian_oracle_for_small_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = 1 + case % 6;
        let l = 1 + rng.random_range(0..5);
        let sigma = random_covariance(n, &mut rng);
        let mu = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let noise = rng.random_range(0.01..0.5);
        let mask = ObservationMask::from_pairs(
            n,
            l,
            (0..n).flat_map(|i| (0..l).map(move |j| (i, j))).filter(|_| rng.random_bool(0.6)).collect::<Vec<_>>(),
        )
        .unwrap();
        let law = GaussianSourceSpec::new(mu.clone(), sigma.clone()).unwrap();
        let m = sample_source(&law, l, &mut rng).unwrap();
        let obs = acquire(&m, &mask, noise, &mut rng).unwrap();
        let est = lmmse_recover(&obs, &LmmseModel::new(mu.clone(), sigma.clone(), noise).unwrap()).unwrap();
        for j in 0..l {
            let (rows, values) = obs.column(j);
            let oracle = conditional_mean_oracle(&mu, &sigma, noise, rows, values);
            for i in 0..n {
                worst = worst.max((est.values()[(i, j)] - oracle[i]).abs());
            }
        }
    }
    assert!(worst <= 1e-10, "max abs deviation {worst:e}");
}

#[test]
fn beats_prior_mean_and_zero_fill_on_average() {
    let n = 5;
    let sigma = synthetic_covariance(n, 2.0, 0.8).unwrap();
    let mu = DVector::from_element(n, 3.0);
    let law = GaussianSourceSpec::new(mu.clone(), sigma.clone()).unwrap();
    let noise = 0.05;
    let model = LmmseModel::new(mu.clone(), sigma, noise).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut lmmse, mut prior, mut zero) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let mask = gridfill_core::uniform_mask(n, 1, 0.5, &mut rng).unwrap();
        let m = sample_source(&law, 1, &mut rng).unwrap();
        let obs = acquire(&m, &mask, noise, &mut rng).unwrap();
        let est = lmmse_recover(&obs, &model).unwrap();
        let truth = m.values();
        lmmse += (est.values() - truth).norm_squared();
        prior += (DMatrix::from_column_slice(n, 1, mu.as_slice()) - truth).norm_squared();
        zero += (obs.to_dense() - truth).norm_squared();
    }
    println!("empirical squared error: lmmse {lmmse:.3}, prior mean {prior:.3}, zero fill {zero:.3}");
    assert!(lmmse < prior && lmmse < zero);
}

#[test]
fn unobserved_columns_get_the_prior_mean() {
    let mu = DVector::from_vec(vec![1.0, -2.0, 4.0]);
    let model = LmmseModel::new(mu.clone(), synthetic_covariance(3, 1.0, 0.5).unwrap(), 0.1).unwrap();
    let m = StateMatrix::new(DMatrix::from_element(3, 4, 7.0)).unwrap();
    let mask = ObservationMask::from_pairs(3, 4, [(0, 0), (2, 1)]).unwrap();
    let obs = acquire(&m, &mask, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let est = lmmse_recover(&obs, &model).unwrap();
    for j in 2..4 {
        assert_eq!(est.values().column(j), mu.column(0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn posterior_distortion_never_grows_when_a_row_is_added(
        seed in any::<u64>(),
        n in 2usize..8,
        noise in 0.0f64..0.5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = random_covariance(n, &mut rng);
        let model = LmmseModel::new(DVector::zeros(n), sigma, noise).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        // total posterior variance of the missing rows of a single column
        let total = |k: usize| {
            let mask = ObservationMask::from_pairs(n, 1, order[..k].iter().map(|&i| (i, 0))).unwrap();
            lmmse_posterior_distortion(&mask, &model).unwrap() * mask.missing_count() as f64
        };
        let mut previous = total(0);
        for k in 1..=n {
            let current = total(k);
            prop_assert!(current <= previous + 1e-10, "{current} > {previous} after {k} rows");
            previous = current;
        }
    }

    #[test]
    fn mismatched_models_still_give_finite_estimates(seed in any::<u64>(), smr in 0.01f64..1000.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = synthetic_covariance(6, 1.0, 0.9).unwrap();
        let law = GaussianSourceSpec::with_constant_mean(2.0, sigma.clone()).unwrap();
        let post = mismatch_covariance(&sigma, smr, &mut rng, MismatchMode::Normalized).unwrap();
        let model = LmmseModel::new(law.mean().clone(), post, 0.01).unwrap();
        let m = sample_source(&law, 8, &mut rng).unwrap();
        let mask = gridfill_core::uniform_mask(6, 8, 0.5, &mut rng).unwrap();
        let obs = acquire(&m, &mask, 0.01, &mut rng).unwrap();
        let est = lmmse_recover(&obs, &model).unwrap();
        prop_assert!(est.values().iter().all(|v| v.is_finite()));
    }
}
