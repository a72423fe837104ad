mod common;

use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rq_spice::solver::{covariance_inverse_action_with, mu_from_q, q_from_mu};
use rq_spice::spectrum::{match_support, pick_peaks, threshold_elements, Peak, SpectralEstimate};
use rq_spice::*;

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec(
        (-3.0f64..3.0, -3.0f64..3.0).prop_map(|(a, b)| C64::new(a, b)),
        len,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_scale_inversely_with_signal_energy(seed in 0u64..1000, c in 1e-3f64..1e3) {
        let (signal, dict) = gaussian_instance(6, 9, 2, 10.0, seed);
        let w = compute_weights(&signal, &dict).unwrap();
        let ws = compute_weights(&signal.scaled(c), &dict).unwrap();
        for (a, b) in w.signal.iter().chain(&w.noise).zip(ws.signal.iter().chain(&ws.noise)) {
            prop_assert!((a / (c * c) - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn woodbury_matches_dense(seed in 0u64..1000, active in 1usize..=5) {
        let (signal, dict) = gaussian_instance(50, 60, 3, 10.0, seed);
        let state = random_state(60, 50, active, seed + 1);
        let w = covariance_inverse_action_with(&state, &dict, &signal, InversePath::Woodbury).unwrap();
        let d = covariance_inverse_action_with(&state, &dict, &signal, InversePath::Dense).unwrap();
        prop_assert!(rel_err(&w, &d) <= 1e-8);
    }

    #[test]
    fn q_mu_round_trip(q in 1.0f64..20.0, n in 2usize..5000) {
        let back = q_from_mu(mu_from_q(q, n), n).unwrap();
        prop_assert!((back - q).abs() <= 1e-12 * q);
    }

    #[test]
    fn raising_threshold_never_adds_peaks(values in complex_vec(40), lo in 0.01f64..1.0, step in 0.0f64..0.5) {
        prop_assume!(values.iter().any(|v| v.norm() > 0.0));
        let x = DVector::from_vec(values);
        let grid: Vec<f64> = (1..=40).map(|k| k as f64 / 40.0).collect();
        let hi = (lo + step).min(1.0);
        let a = pick_peaks(&x, &grid, lo).unwrap();
        let b = pick_peaks(&x, &grid, hi).unwrap();
        let kept_lo = threshold_elements(&x, lo).unwrap();
        let kept_hi = threshold_elements(&x, hi).unwrap();
        prop_assert!(kept_hi.iter().all(|k| kept_lo.contains(k)));
        prop_assert!(b.peaks.iter().all(|p| kept_lo.contains(&p.index)));
        prop_assert!(b.model_order <= kept_hi.len());
        let max = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
        prop_assert!(a.peaks.iter().all(|p| p.magnitude >= lo * max));
        prop_assert_eq!(a.model_order, a.peaks.len());
    }

    #[test]
    fn support_match_ignores_truth_order(
        truth in prop::collection::vec(0.0f64..1.0, 1..5),
        offsets in prop::collection::vec(-3i32..=3, 5),
        rotation in 0usize..5,
    ) {
        let spacing = 1e-3;
        let estimated: Vec<f64> = truth
            .iter()
            .zip(&offsets)
            .map(|(t, o)| (t + *o as f64 * spacing).rem_euclid(1.0))
            .collect();
        let estimate = SpectralEstimate {
            x_hat: DVector::zeros(0),
            peaks: estimated
                .iter()
                .enumerate()
                .map(|(i, f)| Peak { index: i, frequency: *f, magnitude: 1.0 })
                .collect(),
            support: (0..estimated.len()).collect(),
            model_order: estimated.len(),
        };
        let mut permuted = truth.clone();
        permuted.rotate_left(rotation % truth.len());
        permuted.reverse();
        prop_assert_eq!(
            match_support(&estimate, &truth, 2, spacing),
            match_support(&estimate, &permuted, 2, spacing)
        );
    }

    #[test]
    fn solution_scales_with_the_data(seed in 0u64..200, c in prop::sample::select(vec![1e-3, 1e3])) {
        let (signal, dict) = gaussian_instance(8, 16, 2, 10.0, seed);
        let config = SpiceConfig::new(2.0, NoiseMode::Uniform).with_tolerance(1e-9).with_max_iterations(100_000);
        let base = solve(&signal, &dict, &config).unwrap();
        let scaled = solve(&signal.scaled(c), &dict, &config).unwrap();
        prop_assert!(rel_err(&scaled.x_hat, &(base.x_hat.clone() * C64::new(c, 0.0))) <= 1e-6);
        let significant = |x: &DVector<C64>| threshold_elements(x, 1e-3).unwrap();
        prop_assert_eq!(significant(&scaled.x_hat), significant(&base.x_hat));
    }
}
