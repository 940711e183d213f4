//! Initial value integrators: explicit Dormand-Prince 5(4) for smooth
//! nonstiff problems and adaptive TR-BDF2 for stiff ones.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::BorderedLu;

/// Tolerances and limits shared by the integrators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub atol: f64,
    pub rtol: f64,
    /// Initial step; estimated from the right-hand side when `None`.
    pub h0: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            atol: 1e-8,
            rtol: 1e-6,
            h0: None,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub factorizations: usize,
    pub newton_iterations: usize,
}

fn wrms(v: &[f64], y0: &[f64], y1: &[f64], c: &StepControl) -> f64 {
    let n = v.len().max(1) as f64;
    let s: f64 = v
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let w = c.atol + c.rtol * a.abs().max(b.abs());
            (e / w) * (e / w)
        })
        .sum();
    (s / n).sqrt()
}

const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` to `t1` with Dormand-Prince 5(4).
///
/// `observe` sees every accepted `(t, y)`, including the initial point.
pub fn dopri5<F, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    ctrl: &StepControl,
    mut observe: O,
) -> Result<(Vec<f64>, Stats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]),
{
    let n = y0.len();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut stats = Stats::default();
    let mut y = y0.to_vec();
    let mut t = t0;
    observe(t, &y);
    if span == 0.0 {
        return Ok((y, stats));
    }
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    f(t, &y, &mut k[0]);
    stats.rhs_evals += 1;
    let mut h = ctrl.h0.unwrap_or_else(|| {
        let d0 = wrms(&y, &y, &y, ctrl);
        let d1 = wrms(&k[0], &y, &y, ctrl);
        if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        }
    });
    h = h.min(span).min(ctrl.h_max);
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    while (t1 - t) * dir > 0.0 {
        if stats.accepted + stats.rejected >= ctrl.max_steps {
            return Err(Error::Integration(alloc::format!("step limit reached at t = {t}")));
        }
        let last = h >= (t1 - t).abs();
        if last {
            h = (t1 - t).abs();
        }
        let hs = h * dir;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += hs * DP_A[s][j] * kj[i];
                }
                stage[i] = acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            f(t + DP_C[s] * hs, &stage, &mut tail[0]);
        }
        stats.rhs_evals += 6;
        // Stage 7 was evaluated at the 5th-order solution (FSAL).
        y_new.copy_from_slice(&stage);
        for i in 0..n {
            err[i] = hs * (0..7).map(|j| DP_E[j] * k[j][i]).sum::<f64>();
        }
        let e = wrms(&err, &y, &y_new, ctrl);
        if !e.is_finite() {
            stats.rejected += 1;
            h *= 0.25;
            continue;
        }
        if e <= 1.0 {
            stats.accepted += 1;
            t = if last { t1 } else { t + hs };
            y.copy_from_slice(&y_new);
            let (first, rest) = k.split_at_mut(6);
            first[0].copy_from_slice(&rest[0]);
            observe(t, &y);
            let fac = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(ctrl.h_max);
        } else {
            stats.rejected += 1;
            h *= (0.9 * e.powf(-0.2)).clamp(0.1, 0.9);
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h, state: y });
        }
    }
    Ok((y, stats))
}

/// A stiff system `y' = f(t, y)` that can factor its Newton iteration matrix.
pub trait StiffSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
    /// Factors `I - c J(t, y)` where `J` is the Jacobian of `rhs`.
    fn factor_iteration(&self, t: f64, y: &[f64], c: f64) -> Result<BorderedLu>;
}

const TRBDF2_GAMMA: f64 = 2.0 - core::f64::consts::SQRT_2;

/// Adaptive TR-BDF2: a trapezoidal stage to `t + gamma h` followed by BDF2,
/// both implicit with the same iteration matrix `I - (gamma/2) h J`.
///
/// The local error estimate is the leading truncation term
/// `C h^3 y'''` built from the three slopes of the step and filtered through
/// the iteration matrix so stiff components do not inflate it.
///
/// `observe` sees `(t, y, f(t, y))` at the initial point and after each
/// accepted step.
pub fn tr_bdf2<S, O>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t1: f64,
    ctrl: &StepControl,
    mut observe: O,
) -> Result<(Vec<f64>, Stats)>
where
    S: StiffSystem + ?Sized,
    O: FnMut(f64, &[f64], &[f64]),
{
    let n = sys.dim();
    assert_eq!(y0.len(), n);
    if !(t1 > t0) {
        return Err(Error::Precondition(alloc::format!("time span [{t0}, {t1}] not increasing")));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("initial state is not finite".into()));
    }
    let g = TRBDF2_GAMMA;
    let d = 0.5 * g;
    let w1 = 1.0 / (g * (2.0 - g));
    let lte = (-3.0 * g * g + 4.0 * g - 2.0) / (12.0 * (2.0 - g));

    let mut stats = Stats::default();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut f0 = vec![0.0; n];
    sys.rhs(t, &y, &mut f0)?;
    stats.rhs_evals += 1;
    observe(t, &y, &f0);

    let span = t1 - t0;
    let mut h = ctrl.h0.unwrap_or_else(|| {
        let d0 = wrms(&y, &y, &y, ctrl);
        let d1 = wrms(&f0, &y, &y, ctrl);
        if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        }
    });
    h = h.min(span).min(ctrl.h_max);

    let mut lu: Option<(BorderedLu, f64)> = None;
    let mut jac_fresh = false;
    let mut z = vec![0.0; n];
    let mut fz = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut res = vec![0.0; n];
    let mut est = vec![0.0; n];

    while t < t1 {
        if stats.accepted + stats.rejected >= ctrl.max_steps {
            return Err(Error::Integration(alloc::format!("step limit reached at t = {t}")));
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h, state: y });
        }
        let last = t + h >= t1;
        let h_step = if last { t1 - t } else { h };
        let c = d * h_step;
        let need = match &lu {
            Some((_, c_old)) => *c_old != c,
            None => true,
        };
        if need {
            lu = Some((sys.factor_iteration(t, &y, c)?, c));
            stats.factorizations += 1;
            jac_fresh = true;
        }
        let m = &lu.as_ref().unwrap().0;

        // Trapezoidal stage: z - c f(t + g h, z) = y + c f0.
        for i in 0..n {
            rhs[i] = y[i] + c * f0[i];
            z[i] = y[i] + g * h_step * f0[i];
        }
        let tz = t + g * h_step;
        let ok1 = newton_stage(sys, m, tz, c, &rhs, &mut z, &mut fz, &y, ctrl, &mut stats)?;
        let mut ok = ok1;
        if ok {
            // BDF2 stage: y1 - c f(t + h, y1) = w1 z - w2 y, written as
            // y + w1 (z - y) (w1 - w2 = 1) so exact equilibria stay exact.
            for i in 0..n {
                rhs[i] = y[i] + w1 * (z[i] - y[i]);
                y1[i] = z[i] + (1.0 - g) * h_step * fz[i];
            }
            ok = newton_stage(sys, m, t + h_step, c, &rhs, &mut y1, &mut f1, &y, ctrl, &mut stats)?;
        }
        if !ok {
            stats.rejected += 1;
            if jac_fresh {
                h *= 0.25;
            }
            lu = None;
            continue;
        }
        for i in 0..n {
            res[i] = 2.0 * lte * h_step * ((f1[i] - fz[i]) / (1.0 - g) - (fz[i] - f0[i]) / g);
        }
        est.copy_from_slice(&res);
        m.solve(&mut est);
        let e = wrms(&est, &y, &y1, ctrl);
        if !e.is_finite() || e > 1.0 {
            stats.rejected += 1;
            let fac = if e.is_finite() { (0.9 * e.powf(-1.0 / 3.0)).clamp(0.1, 0.9) } else { 0.25 };
            h = h_step * fac;
            continue;
        }
        stats.accepted += 1;
        t = if last { t1 } else { t + h_step };
        y.copy_from_slice(&y1);
        f0.copy_from_slice(&f1);
        jac_fresh = false;
        observe(t, &y, &f0);
        let fac = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-1.0 / 3.0)).clamp(0.2, 5.0) };
        // Hold the step (and its factorization) for small growth factors.
        if !(1.0..=1.2).contains(&fac) || last {
            h = (h_step * fac).min(ctrl.h_max);
        } else {
            h = h_step;
        }
    }
    Ok((y, stats))
}

/// Simplified Newton for `x - c f(t, x) = rhs`. Returns `false` when the
/// iteration diverges or stalls, leaving `x` unspecified.
#[allow(clippy::too_many_arguments)]
fn newton_stage<S: StiffSystem + ?Sized>(
    sys: &S,
    m: &BorderedLu,
    t: f64,
    c: f64,
    rhs: &[f64],
    x: &mut [f64],
    fx: &mut [f64],
    y_ref: &[f64],
    ctrl: &StepControl,
    stats: &mut Stats,
) -> Result<bool> {
    let n = x.len();
    let mut delta = vec![0.0; n];
    let mut prev = f64::INFINITY;
    for it in 0..8 {
        sys.rhs(t, x, fx)?;
        stats.rhs_evals += 1;
        stats.newton_iterations += 1;
        for i in 0..n {
            delta[i] = rhs[i] + c * fx[i] - x[i];
        }
        m.solve(&mut delta);
        for i in 0..n {
            x[i] += delta[i];
        }
        let norm = wrms(&delta, y_ref, x, ctrl);
        if !norm.is_finite() {
            return Ok(false);
        }
        if it > 0 {
            let rate = norm / prev;
            if rate >= 0.9 {
                return Ok(false);
            }
            if rate / (1.0 - rate) * norm <= 0.03 {
                sys.rhs(t, x, fx)?;
                stats.rhs_evals += 1;
                return Ok(true);
            }
        } else if norm <= 1e-3 {
            sys.rhs(t, x, fx)?;
            stats.rhs_evals += 1;
            return Ok(true);
        }
        prev = norm;
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::BorderedSystem;

    struct Linear {
        rate: f64,
    }

    impl StiffSystem for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = self.rate * y[0];
            Ok(())
        }
        fn factor_iteration(&self, _t: f64, _y: &[f64], c: f64) -> Result<BorderedLu> {
            let mut s = BorderedSystem::new(1, 0);
            s.push_row(0, vec![1.0 - c * self.rate], Vec::new());
            s.factor()
        }
    }

    /// Van der Pol style pair, mildly stiff, exercising the border column.
    struct Oscillator;

    impl StiffSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }
        fn factor_iteration(&self, _t: f64, _y: &[f64], c: f64) -> Result<BorderedLu> {
            let mut s = BorderedSystem::new(1, 1);
            s.push_row(0, vec![1.0], vec![-c]);
            s.push_row(0, vec![c], vec![1.0]);
            s.factor()
        }
    }

    #[test]
    fn stiff_decay_takes_large_steps() {
        let sys = Linear { rate: -1000.0 };
        let mut max_step: f64 = 0.0;
        let mut last_t = 0.0;
        let ctrl = StepControl {
            atol: 1e-10,
            rtol: 1e-8,
            ..StepControl::default()
        };
        let (y, stats) = tr_bdf2(&sys, 0.0, &[1.0], 10.0, &ctrl, |t, _, _| {
            max_step = max_step.max(t - last_t);
            last_t = t;
        })
        .unwrap();
        assert!(y[0].abs() < 1e-9);
        assert!(max_step > 100.0 * 2.0 / 1000.0, "max step {max_step}");
        assert!(stats.accepted < 2000);
    }

    #[test]
    fn trbdf2_error_shrinks_with_tolerance() {
        let exact = [(2.0f64).cos(), -(2.0f64).sin()];
        let mut errs = Vec::new();
        for tol in [1e-5, 1e-7, 1e-9] {
            let ctrl = StepControl {
                atol: tol,
                rtol: tol,
                ..StepControl::default()
            };
            let (y, _) = tr_bdf2(&Oscillator, 0.0, &[1.0, 0.0], 2.0, &ctrl, |_, _, _| {}).unwrap();
            errs.push(((y[0] - exact[0]).powi(2) + (y[1] - exact[1]).powi(2)).sqrt());
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
        assert!(errs[2] < 1e-6, "{errs:?}");
    }

    #[test]
    fn dopri_matches_exponential() {
        let ctrl = StepControl {
            atol: 1e-12,
            rtol: 1e-12,
            ..StepControl::default()
        };
        let (y, _) = dopri5(|_, y, dy| dy[0] = -0.5 * y[0], 0.0, &[2.0], 3.0, &ctrl, |_, _| {}).unwrap();
        assert!((y[0] - 2.0 * (-1.5f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn rejects_reversed_span() {
        let sys = Linear { rate: -1.0 };
        assert!(tr_bdf2(&sys, 1.0, &[1.0], 0.0, &StepControl::default(), |_, _, _| {}).is_err());
    }
}
