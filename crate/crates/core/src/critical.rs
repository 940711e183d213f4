//! Critical rates: bisection on the pullback classification, refinement of
//! the connecting orbit through a scalar miss function, the rate-versus-
//! displacement diagram and the transversality test.
//!
//! With a one-dimensional unstable manifold at `(u2*, -a)`, a connection to
//! `(u1*, +a)` exists exactly where the forward manifold trajectory has no
//! component along the edge state's unstable direction. The stable-end
//! conditions hold by construction of the initial state and the time origin
//! comes from the ramp clock, so the only remaining condition is the root of
//! that component as a function of `r`.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, BorderedLu, BorderedSystem};
use crate::mol::{SemidiscreteSystem, Trajectory};
use crate::ode::{StepControl, StiffSystem};
use crate::pullback::{compute_pullback, Classification, PullbackContext, PullbackOptions, PullbackRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefinementMethod {
    Bisection,
    MissFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalRateResult {
    pub d: f64,
    pub bracket: (f64, f64),
    pub classifications: (Classification, Classification),
    pub r_c: f64,
    pub method: RefinementMethod,
    pub miss_slope: Option<f64>,
    /// Every classified rate, in evaluation order.
    pub runs: Vec<(f64, Classification)>,
}

impl CriticalRateResult {
    /// No tracking run above an extinct run.
    pub fn is_monotone(&self) -> bool {
        classification_monotone(&self.runs)
    }
}

pub fn classification_monotone(runs: &[(f64, Classification)]) -> bool {
    let lowest_extinct = runs
        .iter()
        .filter(|(_, c)| *c == Classification::Extinct)
        .fold(f64::INFINITY, |m, (r, _)| m.min(*r));
    runs.iter()
        .all(|(r, c)| *c != Classification::Tracking || *r < lowest_extinct)
}

fn classify_at(ctx: &PullbackContext, r: f64, opts: &PullbackOptions) -> Result<Classification> {
    let opts = PullbackOptions {
        snapshot_times: Vec::new(),
        keep_steps: false,
        ..opts.clone()
    };
    Ok(compute_pullback(&ctx.with_rate(r)?, &opts)?.classification)
}

/// Bisection on the classification between a tracking `r_lo` and an extinct
/// `r_hi` until the bracket is at most `tol_r` wide.
pub fn bisect_rc(ctx: &PullbackContext, r_lo: f64, r_hi: f64, tol_r: f64, opts: &PullbackOptions) -> Result<CriticalRateResult> {
    if !(r_lo > 0.0 && r_hi > r_lo && tol_r > 0.0) {
        return Err(Error::Bracket(alloc::format!("invalid bracket [{r_lo}, {r_hi}] with tolerance {tol_r}")));
    }
    let mut runs = Vec::new();
    let c_lo = classify_at(ctx, r_lo, opts)?;
    runs.push((r_lo, c_lo));
    if c_lo != Classification::Tracking {
        return Err(Error::Bracket(alloc::format!("r = {r_lo} is {c_lo:?}, expected tracking")));
    }
    let c_hi = classify_at(ctx, r_hi, opts)?;
    runs.push((r_hi, c_hi));
    if c_hi != Classification::Extinct {
        return Err(Error::Bracket(alloc::format!("no extinction endpoint: r = {r_hi} is {c_hi:?}")));
    }
    bisect_from(ctx, r_lo, r_hi, tol_r, opts, runs)
}

fn bisect_from(
    ctx: &PullbackContext,
    mut lo: f64,
    mut hi: f64,
    tol_r: f64,
    opts: &PullbackOptions,
    mut runs: Vec<(f64, Classification)>,
) -> Result<CriticalRateResult> {
    while hi - lo > tol_r {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let c = classify_at(ctx, mid, opts)?;
        runs.push((mid, c));
        match c {
            Classification::Tracking => lo = mid,
            Classification::Extinct => hi = mid,
            Classification::Undetermined => return Err(Error::Unresolved { lo, hi }),
        }
    }
    Ok(CriticalRateResult {
        d: ctx.params().displacement(),
        bracket: (lo, hi),
        classifications: (Classification::Tracking, Classification::Extinct),
        r_c: 0.5 * (lo + hi),
        method: RefinementMethod::Bisection,
        miss_slope: None,
        runs,
    })
}

/// Unit left and right unstable eigenvectors at `(V_u, +a)` for the context's rate.
fn edge_directions(ctx: &PullbackContext) -> Result<(Vec<f64>, Vec<f64>)> {
    let pair = ctx.edge_eigenpair()?;
    let mut l = pair.left;
    let s = norm2(&l);
    for x in l.iter_mut() {
        *x /= s;
    }
    Ok((l, pair.vector))
}

/// Miss function value at rate `r` and horizon `t`, with the run behind it.
pub fn miss_function(ctx: &PullbackContext, r: f64, horizon: f64, opts: &PullbackOptions) -> Result<(f64, PullbackRun)> {
    let ctx = ctx.with_rate(r)?;
    let (l, _) = edge_directions(&ctx)?;
    let run = compute_pullback(
        &ctx,
        &PullbackOptions {
            t_end: horizon,
            max_t_end: horizon,
            snapshot_times: Vec::new(),
            ..opts.clone()
        },
    )?;
    Ok((miss_value(&ctx, &l, &run.final_state), run))
}

fn miss_value(ctx: &PullbackContext, l: &[f64], y: &[f64]) -> f64 {
    let target = ctx.edge_state();
    let diff: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
    let n = norm2(&diff);
    if n == 0.0 {
        0.0
    } else {
        dot(l, &diff) / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RootStop {
    /// `|m| <= miss_tol`.
    Miss,
    /// Bracket narrower than `width_tol * r`.
    BracketWidth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroclinicOptions {
    /// First horizon; `50 / r` when `None`.
    pub initial_horizon: Option<f64>,
    pub max_horizon: f64,
    pub miss_tol: f64,
    /// Relative bracket width at which root finding stops.
    pub width_tol: f64,
    pub max_evaluations: usize,
    pub start_tol: f64,
    pub end_tol: f64,
    pub gamma_tol: f64,
    pub pullback: PullbackOptions,
}

impl Default for HeteroclinicOptions {
    fn default() -> Self {
        Self {
            initial_horizon: None,
            max_horizon: 6400.0,
            miss_tol: 1e-8,
            width_tol: 1e-13,
            max_evaluations: 200,
            start_tol: 1e-4,
            end_tol: 1e-3,
            gamma_tol: 1e-8,
            pullback: PullbackOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HeteroclinicSolution {
    pub r_c: f64,
    pub d: f64,
    pub horizon: f64,
    /// First time of the relabelled trajectory (the manifold start).
    pub t_start: f64,
    /// Time added to the ramp clock so that `gamma(0) = 0` numerically.
    pub time_shift: f64,
    pub start_residual: f64,
    pub end_residual: f64,
    pub gamma_at_zero: f64,
    pub miss: f64,
    pub bracket: (f64, f64),
    pub miss_at_bracket: (f64, f64),
    /// Secant slope of the miss function across the final bracket.
    pub miss_slope: f64,
    pub stop: RootStop,
    pub evaluations: usize,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

impl HeteroclinicSolution {
    pub fn as_critical_rate(&self) -> CriticalRateResult {
        CriticalRateResult {
            d: self.d,
            bracket: self.bracket,
            classifications: (Classification::Tracking, Classification::Extinct),
            r_c: self.r_c,
            method: RefinementMethod::MissFunction,
            miss_slope: Some(self.miss_slope),
            runs: Vec::new(),
        }
    }
}

/// Root of the miss function in `[r_lo, r_hi]`, doubling the horizon until
/// the connection endpoints meet their residual bounds.
pub fn refine_heteroclinic(ctx: &PullbackContext, r_lo: f64, r_hi: f64, opts: &HeteroclinicOptions) -> Result<HeteroclinicSolution> {
    if !(r_lo > 0.0 && r_hi > r_lo) {
        return Err(Error::Bracket(alloc::format!("invalid bracket [{r_lo}, {r_hi}]")));
    }
    // One-dimensional unstable subspaces at both ends.
    ctx.with_rate(r_lo)?.base_eigenpair()?;
    ctx.with_rate(r_lo)?.edge_eigenpair()?;
    let mut horizon = opts.initial_horizon.unwrap_or(50.0 / r_lo);
    let mut last_err = None;
    while horizon <= opts.max_horizon {
        match refine_at_horizon(ctx, r_lo, r_hi, horizon, opts) {
            Ok(sol) => {
                if sol.start_residual < opts.start_tol && sol.end_residual < opts.end_tol {
                    return Ok(sol);
                }
                last_err = Some(Error::Truncation(alloc::format!(
                    "horizon {horizon}: start residual {:.3e}, end residual {:.3e}",
                    sol.start_residual,
                    sol.end_residual
                )));
            }
            Err(e @ Error::Refinement { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
        horizon *= 2.0;
    }
    Err(last_err.unwrap_or_else(|| Error::Truncation("horizon limit below the first horizon".to_string())))
}

fn refine_at_horizon(ctx: &PullbackContext, r_lo: f64, r_hi: f64, horizon: f64, opts: &HeteroclinicOptions) -> Result<HeteroclinicSolution> {
    let eval = |r: f64| miss_function(ctx, r, horizon, &opts.pullback).map(|(m, _)| m);
    let (mut lo, mut hi) = (r_lo, r_hi);
    let (mut m_lo, mut m_hi) = (eval(lo)?, eval(hi)?);
    let mut evaluations = 2;
    if m_lo * m_hi > 0.0 {
        return Err(Error::Refinement { lo, hi });
    }
    let mut stop = RootStop::BracketWidth;
    let mut use_secant = true;
    let mut root = if m_lo.abs() <= m_hi.abs() { lo } else { hi };
    let mut m_root = m_lo.abs().min(m_hi.abs());
    while evaluations < opts.max_evaluations {
        if m_root <= opts.miss_tol {
            stop = RootStop::Miss;
            break;
        }
        if hi - lo <= opts.width_tol * hi {
            break;
        }
        let width = hi - lo;
        let mut r = lo - m_lo * (hi - lo) / (m_hi - m_lo);
        // Bisection when the secant step leaves the bracket or hugs an end,
        // and on every other step so the bracket at least halves twice.
        if !use_secant || !(r > lo + 0.01 * width && r < hi - 0.01 * width) {
            r = 0.5 * (lo + hi);
        }
        use_secant = !use_secant;
        let m = eval(r)?;
        evaluations += 1;
        if m.abs() < m_root || m == 0.0 {
            root = r;
            m_root = m.abs();
        }
        if m == 0.0 {
            lo = r;
            hi = r;
            stop = RootStop::Miss;
            break;
        }
        if (m > 0.0) == (m_lo > 0.0) {
            lo = r;
            m_lo = m;
        } else {
            hi = r;
            m_hi = m;
        }
        if m.abs() <= opts.miss_tol {
            root = r;
            stop = RootStop::Miss;
            break;
        }
    }
    if stop == RootStop::BracketWidth {
        root = 0.5 * (lo + hi);
    }
    let rctx = ctx.with_rate(root)?;
    let (miss, run) = miss_function(
        ctx,
        root,
        horizon,
        &PullbackOptions {
            keep_steps: true,
            ..opts.pullback.clone()
        },
    )?;
    evaluations += 1;
    let trajectory = run.trajectory.ok_or_else(|| Error::Integration("trajectory not kept".into()))?;
    let (trajectory, time_shift, gamma_at_zero) = relabel_time(&trajectory, opts.gamma_tol)?;
    let n = rctx.system.n();
    let last = trajectory.last();
    let end_residual = rctx.system.l2_distance(&last[..n], &rctx.edge);
    let start_residual = run.initial_deviation;
    let slope = if hi > lo { (m_hi - m_lo) / (hi - lo) } else { 0.0 };
    Ok(HeteroclinicSolution {
        r_c: root,
        d: rctx.params().displacement(),
        horizon,
        t_start: trajectory.times[0],
        time_shift,
        start_residual,
        end_residual,
        gamma_at_zero,
        miss,
        bracket: (lo, hi),
        miss_at_bracket: (m_lo, m_hi),
        miss_slope: slope,
        stop,
        evaluations,
        trajectory,
    })
}

/// Shifts the time labels so the dense-output `gamma` vanishes at `t = 0`
/// when it misses by more than `tol` on the ramp clock.
fn relabel_time(traj: &Trajectory, tol: f64) -> Result<(Trajectory, f64, f64)> {
    let k = traj.dim - 1;
    let gamma = |t: f64| traj.eval(t)[k];
    let g0 = gamma(0.0);
    if g0.abs() <= tol {
        return Ok((traj.clone(), 0.0, g0));
    }
    let (mut lo, mut hi) = (traj.times[0], *traj.times.last().unwrap());
    if !(gamma(lo) < 0.0 && gamma(hi) > 0.0) {
        return Err(Error::Structure("gamma does not cross zero on the trajectory".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gamma(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t0 = if gamma(lo).abs() <= gamma(hi).abs() { lo } else { hi };
    let mut slopes = Vec::with_capacity(traj.states.len());
    for i in 0..traj.len() {
        slopes.extend_from_slice(&traj.curve_slope(i));
    }
    let times: Vec<f64> = traj.times.iter().map(|t| t - t0).collect();
    let shifted = Trajectory::from_steps(times, traj.dim, traj.states.clone(), slopes, traj.stats);
    let g = shifted.eval(0.0)[k];
    Ok((shifted, -t0, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DiagramOutcome {
    Critical(CriticalRateResult),
    NoTipping { r_max: f64 },
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramEntry {
    pub d: f64,
    pub probes: Vec<(f64, Classification)>,
    pub outcome: DiagramOutcome,
}

impl DiagramEntry {
    pub fn r_c(&self) -> Option<f64> {
        match &self.outcome {
            DiagramOutcome::Critical(c) => Some(c.r_c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingDiagram {
    pub params: crate::model::ModelParams,
    pub r_max: f64,
    pub tol_r: f64,
    pub probe_rates: Vec<f64>,
    pub entries: Vec<DiagramEntry>,
}

pub const PROBE_COUNT: usize = 12;
pub const PROBE_MIN: f64 = 1e-2;
pub const DEFAULT_R_MAX: f64 = 50.0;

/// Logarithmic probe grid on `[1e-2, r_max]`.
pub fn probe_grid(r_max: f64, count: usize) -> Vec<f64> {
    let (l0, l1) = (PROBE_MIN.ln(), r_max.ln());
    (0..count)
        .map(|i| {
            if i + 1 == count {
                r_max
            } else {
                (l0 + (l1 - l0) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

/// One diagram entry. `warm` is a previous critical rate used to narrow the
/// probe bracket before bisecting.
pub fn diagram_entry(
    ctx: &PullbackContext,
    d: f64,
    probes: &[f64],
    tol_r: f64,
    warm: Option<f64>,
    opts: &PullbackOptions,
) -> DiagramEntry {
    let mut classified = Vec::new();
    let outcome = (|| -> Result<DiagramOutcome> {
        let ctx = ctx.with_half_displacement(0.5 * d)?;
        let mut bracket = None;
        let mut prev = None;
        for &r in probes {
            let c = classify_at(&ctx, r, opts)?;
            classified.push((r, c));
            if c == Classification::Extinct {
                bracket = Some((prev, r));
                break;
            }
            prev = match c {
                Classification::Tracking => Some(r),
                _ => prev,
            };
        }
        let (lo, hi) = match bracket {
            None => return Ok(DiagramOutcome::NoTipping { r_max: *probes.last().unwrap_or(&0.0) }),
            Some((None, hi)) => return Err(Error::Bracket(alloc::format!("extinct already at the smallest probe {hi}"))),
            Some((Some(lo), hi)) => (lo, hi),
        };
        let mut runs = classified.clone();
        let (mut lo, mut hi) = (lo, hi);
        if let Some(w) = warm {
            if w > lo && w < hi {
                let c = classify_at(&ctx, w, opts)?;
                runs.push((w, c));
                match c {
                    Classification::Tracking => lo = w,
                    Classification::Extinct => hi = w,
                    Classification::Undetermined => {}
                }
            }
        }
        Ok(DiagramOutcome::Critical(bisect_from(&ctx, lo, hi, tol_r, opts, runs)?))
    })()
    .unwrap_or_else(|e| DiagramOutcome::Failed { message: e.to_string() });
    DiagramEntry {
        d,
        probes: classified,
        outcome,
    }
}

/// Sequential sweep over sorted `d_values`, warm-starting from the previous
/// critical rate. Per-entry failures are recorded, not propagated.
pub fn sweep_diagram(ctx: &PullbackContext, d_values: &[f64], r_max: f64, tol_r: f64, opts: &PullbackOptions) -> Result<TippingDiagram> {
    if d_values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("d values must be strictly increasing".into()));
    }
    let probes = probe_grid(r_max, PROBE_COUNT);
    let mut entries: Vec<DiagramEntry> = Vec::with_capacity(d_values.len());
    for &d in d_values {
        let warm = entries.last().and_then(|e| e.r_c());
        entries.push(diagram_entry(ctx, d, &probes, tol_r, warm, opts));
    }
    Ok(TippingDiagram {
        params: *ctx.params(),
        r_max,
        tol_r,
        probe_rates: probes,
        entries,
    })
}

/// Linearization of the rate-augmented system along a dense trajectory,
/// state `(dV, dgamma, dr)` with `dr' = 0`.
pub struct VariationalSystem<'a> {
    pub system: SemidiscreteSystem,
    pub path: &'a Trajectory,
    unit_rate: SemidiscreteSystem,
    zero_rate: SemidiscreteSystem,
}

impl<'a> VariationalSystem<'a> {
    pub fn new(system: &SemidiscreteSystem, path: &'a Trajectory) -> Self {
        Self {
            system: system.clone(),
            path,
            unit_rate: system.with_rate(1.0),
            zero_rate: system.with_rate(0.0),
        }
    }

    /// `dF/dr` at `y`; the right-hand side is affine in `r`.
    fn rate_derivative(&self, y: &[f64]) -> Result<Vec<f64>> {
        let m = y.len();
        let mut one = vec![0.0; m];
        let mut zero = vec![0.0; m];
        StiffSystem::rhs(&self.unit_rate, 0.0, y, &mut one)?;
        StiffSystem::rhs(&self.zero_rate, 0.0, y, &mut zero)?;
        Ok(one.iter().zip(&zero).map(|(a, b)| a - b).collect())
    }
}

impl StiffSystem for VariationalSystem<'_> {
    fn dim(&self) -> usize {
        self.system.n() + 2
    }

    fn rhs(&self, t: f64, z: &[f64], dz: &mut [f64]) -> Result<()> {
        let n = self.system.n();
        let y = self.path.eval(t);
        let j = self.system.jacobian(&y);
        let b = self.rate_derivative(&y)?;
        let jz = j.mul_vec(&z[..=n]);
        for i in 0..=n {
            dz[i] = jz[i] + b[i] * z[n + 1];
        }
        dz[n + 1] = 0.0;
        Ok(())
    }

    fn factor_iteration(&self, t: f64, _z: &[f64], c: f64) -> Result<BorderedLu> {
        let n = self.system.n();
        let y = self.path.eval(t);
        let j = self.system.jacobian(&y);
        let b = self.rate_derivative(&y)?;
        let mut sys = BorderedSystem::new(n, 2);
        for i in 0..n {
            let (lo, vals) = j.a.row(i);
            let mut row: Vec<f64> = vals.iter().map(|v| -c * v).collect();
            row[i - lo] += 1.0;
            sys.push_row(lo, row, vec![-c * j.c[i], -c * b[i]]);
        }
        sys.push_row(n, Vec::new(), vec![1.0 - c * j.d, -c * b[n]]);
        sys.push_row(n, Vec::new(), vec![0.0, 1.0]);
        sys.factor()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalityResult {
    pub r_c: f64,
    pub inner_product: f64,
    pub degenerate: bool,
    /// Norm of the variational solution before normalization.
    pub tangent_norm: f64,
    /// Sign check against the secant slope of the miss function.
    pub miss_slope: f64,
    pub sign_agrees: bool,
}

pub const DEGENERACY_TOL: f64 = 1e-10;

/// Variational solution along `path` from `z0` at its first time to its last.
pub fn variational_endpoint(system: &SemidiscreteSystem, path: &Trajectory, z0: &[f64], ctrl: &StepControl) -> Result<Vec<f64>> {
    let var = VariationalSystem::new(system, path);
    if z0.len() != var.dim() {
        return Err(Error::Precondition("initial perturbation has the wrong size".into()));
    }
    let t0 = path.times[0];
    let t1 = *path.times.last().unwrap();
    let (z, _) = crate::ode::tr_bdf2(&var, t0, z0, t1, ctrl, |_, _, _| {})?;
    Ok(z)
}

/// Inner product of the normalized rate tangent at `+T` with the unit
/// unstable eigenvector at `(V_u, +a)` padded by a zero rate entry.
pub fn transversality(ctx: &PullbackContext, het: &HeteroclinicSolution) -> Result<TransversalityResult> {
    let rctx = ctx.with_rate(het.r_c)?;
    let n = rctx.system.n();
    let mut z0 = vec![0.0; n + 2];
    z0[n + 1] = 1.0;
    let ctrl = StepControl {
        max_steps: 1_000_000,
        ..crate::mol::default_control(rctx.params())
    };
    let z = variational_endpoint(&rctx.system, &het.trajectory, &z0, &ctrl)?;
    let norm = norm2(&z);
    let (_, x_u) = edge_directions(&rctx)?;
    let ip = z[..=n].iter().zip(&x_u).map(|(a, b)| a * b).sum::<f64>() / norm;
    Ok(TransversalityResult {
        r_c: het.r_c,
        inner_product: ip,
        degenerate: ip.abs() <= DEGENERACY_TOL,
        tangent_norm: norm,
        miss_slope: het.miss_slope,
        sign_agrees: ip != 0.0 && (ip > 0.0) == (het.miss_slope > 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_grid_is_logarithmic() {
        let g = probe_grid(50.0, 12);
        assert_eq!(g.len(), 12);
        assert!((g[0] - 1e-2).abs() < 1e-15);
        assert_eq!(g[11], 50.0);
        let q = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - q).abs() < 1e-9);
        }
    }

    #[test]
    fn monotone_runs() {
        use Classification::*;
        assert!(classification_monotone(&[(0.5, Tracking), (2.0, Extinct), (1.0, Extinct), (0.8, Tracking)]));
        assert!(!classification_monotone(&[(0.5, Extinct), (1.0, Tracking)]));
    }
}
