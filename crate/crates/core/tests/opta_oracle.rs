//! Reverse water-filling checked against scalar closed forms and its own
//! monotone structure.

use gridfill_core::opta::rate_budget;
use gridfill_core::{distortion_at_rate, opta_nmse, rd_point, synthetic_covariance, CapacityLog};
use proptest::prelude::*;

#[test]
fn white_source_follows_the_exponential_law() {
    for v in [0.5f64, 1.0, 4.0, 17.0] {
        let eig = vec![v; 12];
        for rate in [0.0f64, 0.01, 0.3, 1.0, 2.5, 6.0] {
            let expected = v * (-2.0 * rate).exp();
            let d = distortion_at_rate(&eig, rate).unwrap();
            assert!((d - expected).abs() <= 1e-9 * expected, "v={v} R={rate}: {d} vs {expected}");
        }
        // parametric side: theta below v gives R = ln(v/theta)/2 and D = theta
        let p = rd_point(&eig, 0.25 * v).unwrap();
        assert!((p.rate - 0.5 * 4f64.ln()).abs() <= 1e-12);
        assert!((p.distortion - 0.25 * v).abs() <= 1e-12 * v);
    }
}

#[test]
fn two_component_inversion() {
    let d = distortion_at_rate(&[4.0, 1.0], 2f64.ln() / 2.0).unwrap();
    assert!((d - 1.0).abs() <= 1e-9, "{d}");
}

#[test]
fn bound_is_monotone_in_the_missing_ratio() {
    let cov = synthetic_covariance(50, 4.0, 0.9).unwrap();
    let (n, l) = (50, 50);
    let energy = (n * l) as f64 * (240.0f64.powi(2) + 4.0);
    let mut previous = 0.0;
    for step in 0..10 {
        let observed = (n * l) * (10 - step) / 10;
        let bound = opta_nmse(&cov, observed, n, l, 20.0, energy, CapacityLog::Natural).unwrap();
        assert!(bound >= previous, "bound decreased at step {step}");
        previous = bound;
    }
    assert!(rate_budget(0, n, l, 20.0, CapacityLog::Natural) == 0.0);
}

fn spectrum() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, 1..40)
        .prop_filter("needs a positive eigenvalue", |v| v.iter().any(|&x| x > 1e-6))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rate_falls_and_distortion_rises_with_the_water_level(eig in spectrum(), a in 1e-4f64..20.0, b in 1e-4f64..20.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p = rd_point(&eig, lo).unwrap();
        let q = rd_point(&eig, hi).unwrap();
        prop_assert!(p.rate >= q.rate);
        prop_assert!(p.distortion <= q.distortion);
    }

    #[test]
    fn inversion_round_trips(eig in spectrum(), frac in 0.01f64..0.99) {
        let top = eig.iter().cloned().fold(0.0, f64::max);
        let p = rd_point(&eig, frac * top).unwrap();
        let d = distortion_at_rate(&eig, p.rate).unwrap();
        prop_assert!((d - p.distortion).abs() <= 1e-8 * p.distortion, "{} vs {}", d, p.distortion);
    }
}
