use std::sync::OnceLock;
use std::thread;

use tipping_core::critical::{bisect_rc, classification_monotone, miss_function, variational_endpoint};
use tipping_core::model::ModelParams;
use tipping_core::mol::default_control;
use tipping_core::pullback::{classify_rate, compute_pullback, Classification, PullbackContext, PullbackOptions};
use tipping_core::Error;

fn ctx() -> &'static PullbackContext {
    static CTX: OnceLock<PullbackContext> = OnceLock::new();
    CTX.get_or_init(|| PullbackContext::new(&ModelParams::default()).unwrap())
}

/// Default-tolerance bisection, shared by the tests below.
fn r_c() -> f64 {
    static RC: OnceLock<f64> = OnceLock::new();
    *RC.get_or_init(|| bisect_rc(ctx(), 0.5, 2.0, 1e-4, &PullbackOptions::default()).unwrap().r_c)
}

#[test]
fn bisection_keeps_its_invariant() {
    let tol = 1e-3;
    let res = bisect_rc(ctx(), 0.5, 2.0, tol, &PullbackOptions::default()).unwrap();
    let (lo, hi) = res.bracket;
    assert!(hi - lo <= tol && hi > lo);
    assert!(hi - lo > tol / 2.0);
    assert_eq!(res.r_c, 0.5 * (lo + hi));
    assert_eq!(res.runs.len(), 2 + (1.5f64 / tol).log2().ceil() as usize);
    assert!(res.is_monotone());
    for &(r, c) in &res.runs {
        assert_ne!(c, Classification::Undetermined);
        assert_eq!(c == Classification::Tracking, r <= lo, "r = {r}: {c:?}");
    }
    assert!((res.r_c - 0.9934).abs() < 2e-3, "{}", res.r_c);
}

#[test]
fn single_transition_around_the_critical_rate() {
    let rc = r_c();
    let rates: Vec<f64> = (0..40).map(|i| rc * (0.5 + i as f64 / 39.0)).collect();
    let opts = PullbackOptions::default();
    let workers = thread::available_parallelism().map_or(4, |n| n.get()).min(8);
    let chunk = rates.len().div_ceil(workers);
    let classes: Vec<Classification> = thread::scope(|s| {
        let handles: Vec<_> = rates
            .chunks(chunk)
            .map(|rs| s.spawn(|| rs.iter().map(|&r| classify_rate(ctx(), r, &opts).unwrap()).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    assert!(classes.iter().all(|&c| c != Classification::Undetermined), "{classes:?}");
    let flips = classes.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(flips, 1, "{classes:?}");
    assert_eq!(classes[0], Classification::Tracking);
    let runs: Vec<_> = rates.iter().cloned().zip(classes).collect();
    assert!(classification_monotone(&runs));
}

#[test]
fn bracket_errors() {
    let opts = PullbackOptions::default();
    assert!(matches!(bisect_rc(ctx(), 2.0, 1.0, 1e-3, &opts), Err(Error::Bracket(_))));
    assert!(matches!(bisect_rc(ctx(), 0.5, 2.0, 0.0, &opts), Err(Error::Bracket(_))));
    // No tipping below the minimum displacement.
    let small = ctx().with_half_displacement(14.0).unwrap();
    assert!(matches!(bisect_rc(&small, 0.5, 50.0, 1e-3, &opts), Err(Error::Bracket(_))));
    // Extinct lower endpoint.
    assert!(matches!(bisect_rc(ctx(), 1.5, 2.0, 1e-3, &opts), Err(Error::Bracket(_))));
}

#[test]
fn miss_function_changes_sign_across_the_critical_rate() {
    let rc = r_c();
    let opts = PullbackOptions::default();
    let (below, _) = miss_function(ctx(), rc - 0.01, 200.0, &opts).unwrap();
    let (above, _) = miss_function(ctx(), rc + 0.01, 200.0, &opts).unwrap();
    assert!(below * above < 0.0, "{below} {above}");
    assert!(below.abs() <= 1.0 + 1e-12 && above.abs() <= 1.0 + 1e-12);
}

#[test]
fn variational_system_is_linear() {
    let c = ctx().with_rate(0.8).unwrap();
    let opts = PullbackOptions {
        t_end: 60.0,
        max_t_end: 60.0,
        keep_steps: true,
        ..PullbackOptions::default()
    };
    let run = compute_pullback(&c, &opts).unwrap();
    let path = run.trajectory.as_ref().unwrap();
    let ctrl = default_control(c.params());
    let m = c.system.n() + 2;
    let z = variational_endpoint(&c.system, path, &vec![0.0; m], &ctrl).unwrap();
    assert!(z.iter().all(|&x| x == 0.0));
    let mut z0 = vec![0.0; m];
    z0[m - 1] = 1.0;
    let one = variational_endpoint(&c.system, path, &z0, &ctrl).unwrap();
    z0[m - 1] = 2.0;
    let two = variational_endpoint(&c.system, path, &z0, &ctrl).unwrap();
    let scale = one.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    assert!(scale > 0.0 && one[m - 1] == 1.0);
    // Step sequences differ between the two runs, so linearity holds to the
    // integration tolerance only.
    let dev = one.iter().zip(&two).map(|(a, b)| (2.0 * a - b).abs()).fold(0.0f64, f64::max);
    assert!(dev <= 1e-3 * scale, "{dev} vs {scale}");
    assert!(variational_endpoint(&c.system, path, &[0.0; 3], &ctrl).is_err());
}
