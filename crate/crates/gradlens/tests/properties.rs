//! Property tests for the numeric invariants that hold over the whole
//! input space rather than at hand-picked points.

use gradlens::embeddings::{
    angles_from_batch, batch_from_angles, hardest_fraction_from_angles, normalize, AngleBatch,
};
use gradlens::lemma::{r_min_closed_form, r_min_oracle, LemmaConfig};
use gradlens::losses::{analytic_grad, LossKind, LossParams};
use gradlens::paradigm::{decompose, reconstruct};
use gradlens::rng::derive_seed;
use proptest::prelude::*;

fn finite_coord() -> impl Strategy<Value = f64> {
    prop_oneof![(-1e3..1e3f64), (-1e-3..1e-3f64)]
}

proptest! {
    #[test]
    fn normalization_yields_unit_norm(v in prop::collection::vec(finite_coord(), 2..20)) {
        let sum_sq: f64 = v.iter().map(|x| x * x).sum();
        prop_assume!(sum_sq.sqrt() > 1e-150);
        let u = normalize(&v).unwrap();
        let n: f64 = u.coords().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn angle_round_trip_is_identity(
        theta_pos in 0.0..std::f64::consts::PI,
        theta_neg in prop::collection::vec(0.0..std::f64::consts::PI, 1..6),
        d in 3usize..10,
        seed in 0u64..1000,
    ) {
        let angles = AngleBatch::new(theta_pos, theta_neg.clone()).unwrap();
        let slice = batch_from_angles(&angles, d, seed).unwrap();
        let got_pos = dot(slice.anchor.coords(), slice.positive.coords()).clamp(-1.0, 1.0).acos();
        prop_assert!((got_pos - theta_pos).abs() < 1e-9);
        for (uv, t) in slice.negatives.iter().zip(&theta_neg) {
            let got = dot(slice.anchor.coords(), uv.coords()).clamp(-1.0, 1.0).acos();
            prop_assert!((got - t).abs() < 1e-9);
        }
    }

    #[test]
    fn hardest_fraction_non_increasing_in_tau(
        angles in prop::collection::vec(0.01..3.13f64, 2..40),
    ) {
        let mut prev = f64::INFINITY;
        for tau in [0.001, 0.01, 0.05, 0.3, 1.0] {
            let f = hardest_fraction_from_angles(&angles, tau);
            prop_assert!(f <= prev + 1e-12);
            prop_assert!((0.0..=1.0).contains(&f));
            prev = f;
        }
    }

    #[test]
    fn reconstruction_matches_closed_form_gradients(
        seed in 0u64..500,
        kind_idx in 0usize..13,
        tau in 0.02..1.0f64,
        r in 0.25..2.0f64,
    ) {
        let kind = LossKind::ALL[kind_idx];
        let params = LossParams { tau, r, ..Default::default() };
        let batch = gradlens::embeddings::random_batch(6, 12, derive_seed(7_700, seed)).unwrap();
        let analytic = analytic_grad(kind, &batch, &params).unwrap();
        prop_assume!(!analytic.boundary.iter().any(|&b| b));
        let rec = reconstruct(&decompose(kind, &batch, &params).unwrap(), &batch).unwrap();
        for (x, y) in rec.data.iter().zip(&analytic.grads.data) {
            prop_assert!((x - y).abs() < 1e-9, "{kind}: {x} vs {y}");
        }
    }

    #[test]
    fn bound_oracle_tracks_closed_form(
        theta_pos in 0.16..2.98f64,
        theta_neg in 0.16..2.98f64,
        alpha in 0.0..std::f64::consts::PI,
        lambda in prop::sample::select(vec![0.1, 0.5, 1.0]),
    ) {
        let cfg = LemmaConfig::new(theta_pos, theta_neg, alpha, lambda).unwrap();
        prop_assume!(cfg.radicand() > 1e-9);
        let closed = r_min_closed_form(&cfg).unwrap();
        let oracle = r_min_oracle(&cfg, 1e-9).unwrap();
        prop_assert!((closed - oracle).abs() < 1e-6);
    }

    #[test]
    fn dissipation_stays_in_unit_interval(
        seed in 0u64..300,
        kind_idx in 0usize..13,
    ) {
        let kind = LossKind::ALL[kind_idx];
        let params = LossParams::default();
        let batch = gradlens::embeddings::random_batch(5, 8, derive_seed(8_800, seed)).unwrap();
        let comp = decompose(kind, &batch, &params).unwrap();
        for &g in &comp.gd {
            prop_assert!((0.0..=1.0).contains(&g), "{kind}: gd {g}");
        }
        // signed weights are a property of the equivalent-form tables only
        if !matches!(kind, LossKind::BarlowEq | LossKind::VicregEq) {
            for row in &comp.weights {
                for &w in row {
                    prop_assert!(w >= 0.0, "{kind}: weight {w}");
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
