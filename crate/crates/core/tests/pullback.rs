use std::sync::OnceLock;

use proptest::prelude::*;

use tipping_core::model::ModelParams;
use tipping_core::pullback::{classify, compute_pullback, pullback_at_rate, tracking_error, Classification, PullbackContext, PullbackOptions};

fn ctx() -> &'static PullbackContext {
    static CTX: OnceLock<PullbackContext> = OnceLock::new();
    CTX.get_or_init(|| PullbackContext::new(&ModelParams::default()).unwrap())
}

#[test]
fn thresholds_classify_the_fixed_points() {
    let c = ctx();
    let (d1, d2) = c.thresholds();
    assert!((d1 - 0.1 * c.base_norm).abs() < 1e-15 && d1 == d2);
    assert!((d1 - 0.268).abs() < 2e-3, "{d1}");
    // u2* itself, and the trivial state.
    assert_eq!(classify(0.0, c.base_norm, d1, d2), Classification::Tracking);
    assert_eq!(classify(c.base_norm, 0.0, d1, d2), Classification::Extinct);
}

proptest! {
    #[test]
    fn classification_is_consistent(dist in 0.0f64..3.0, norm in 0.0f64..3.0, delta in 0.01f64..1.0) {
        let c = classify(dist, norm, delta, delta);
        match c {
            Classification::Tracking => prop_assert!(dist < delta && norm >= delta),
            Classification::Extinct => prop_assert!(norm < delta && dist >= delta),
            Classification::Undetermined => prop_assert!((dist < delta) == (norm < delta)),
        }
    }
}

#[test]
fn slow_shift_tracks_the_base_state() {
    let opts = PullbackOptions {
        snapshot_times: vec![0.0, 50.0],
        ..PullbackOptions::default()
    };
    let run = pullback_at_rate(ctx(), 0.5, &opts).unwrap();
    assert_eq!(run.classification, Classification::Tracking);
    assert!(run.initial_deviation <= 2.0 * opts.epsilon, "{}", run.initial_deviation);
    assert!(run.t_start < 0.0 && run.t_end >= 1000.0);
    assert!(run.sup_error_time > run.t_start && run.sup_error_time < run.t_end);
    let err = tracking_error(&run).unwrap();
    assert_eq!(err, run.sup_error);
    // Close to tipping the lag is nearly the whole pulse, but bounded by it.
    assert!(err > 0.0 && err < ctx().stable.max_value(), "{err}");
    let bound = 2.0 * ctx().base_norm;
    assert!(run.samples.iter().all(|s| s.norm <= bound));
    assert!(run.samples.windows(2).all(|w| w[1].t > w[0].t && w[1].gamma >= w[0].gamma - 1e-12));
    assert_eq!(run.snapshots.len(), 2);
    assert_eq!(run.snapshots[1].t, 50.0);
    assert_eq!(run.snapshots[1].v.len(), ctx().system.n());
}

#[test]
fn fast_shift_goes_extinct() {
    let run = pullback_at_rate(ctx(), 2.0, &PullbackOptions::default()).unwrap();
    assert_eq!(run.classification, Classification::Extinct);
    assert!(run.final_norm < run.thresholds.1);
    assert!(tracking_error(&run).is_err());
}

#[test]
fn small_displacement_tracks_at_every_rate() {
    let c = ctx().with_half_displacement(14.0).unwrap();
    let opts = PullbackOptions::default();
    for r in [0.01, 0.1, 1.0, 5.0, 20.0, 50.0] {
        let run = compute_pullback(&c.with_rate(r).unwrap(), &opts).unwrap();
        assert_eq!(run.classification, Classification::Tracking, "r = {r}");
    }
}
