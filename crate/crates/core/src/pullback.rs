//! Pullback attractor of the moving-habitat problem: the branch of the
//! one-dimensional unstable manifold of `(u2*, -a)` that enters `gamma > -a`,
//! followed forward and classified as tracking or extinct.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::interp::hermite_weights;
use crate::linalg::{BlockTriangular, Eigenvalue};
use crate::model::{ramp_time, ModelParams};
use crate::mol::{build_system, default_control, find_fixed_point, integrate_with, SemidiscreteSystem, Trajectory, MAX_STEP};
use crate::ode::Stats;
use crate::pulses::{compute_pulse, PulseKind, PulseProfile};
use crate::spectrum::{block_spectrum, unstable_eigenpair, Eigenpair};

/// Size of the initial displacement along the unstable eigenvector.
pub const MANIFOLD_OFFSET: f64 = 1e-8;
pub const DEFAULT_T_END: f64 = 1000.0;
pub const MAX_T_END: f64 = 16_000.0;
/// Classification thresholds as a fraction of `||u2*||`.
pub const THRESHOLD_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Tracking,
    Extinct,
    Undetermined,
}

/// Tracking when `dist_base < delta1`, extinct when `norm < delta2`.
pub fn classify(dist_base: f64, norm: f64, delta1: f64, delta2: f64) -> Classification {
    let tracking = dist_base < delta1;
    let extinct = norm < delta2;
    match (tracking, extinct) {
        (true, false) => Classification::Tracking,
        (false, true) => Classification::Extinct,
        _ => Classification::Undetermined,
    }
}

/// Everything that does not depend on the rate `r` or on `a`: the mesh and
/// differentiation matrices, both fixed points and the spectra of their
/// `V` blocks (at `gamma = +-a` the drift vanishes, so `r` and `a` drop out).
#[derive(Debug, Clone)]
pub struct PullbackContext {
    pub system: SemidiscreteSystem,
    pub stable: PulseProfile,
    pub unstable: PulseProfile,
    /// `V_s`, the base fixed point.
    pub base: Vec<f64>,
    /// `V_u`, the edge fixed point.
    pub edge: Vec<f64>,
    pub base_norm: f64,
    base_spectrum: Vec<Eigenvalue>,
    edge_spectrum: Vec<Eigenvalue>,
}

impl PullbackContext {
    /// Context on the mesh of the computed stable pulse.
    pub fn new(p: &ModelParams) -> Result<Self> {
        let stable = compute_pulse(PulseKind::Stable, p)?;
        let unstable = compute_pulse(PulseKind::Unstable, p)?;
        let mesh = stable.mesh.clone();
        Self::assemble(p, stable, unstable, &mesh)
    }

    /// Context on a caller-supplied mesh of `[-Z, Z]`.
    pub fn on_mesh(p: &ModelParams, mesh: &[f64]) -> Result<Self> {
        let stable = compute_pulse(PulseKind::Stable, p)?;
        let unstable = compute_pulse(PulseKind::Unstable, p)?;
        Self::assemble(p, stable, unstable, mesh)
    }

    fn assemble(p: &ModelParams, stable: PulseProfile, unstable: PulseProfile, mesh: &[f64]) -> Result<Self> {
        let system = build_system(mesh, p)?;
        let base = find_fixed_point(&system, &system.sample(|z| stable.value(z)), -p.a)?;
        let edge = find_fixed_point(&system, &system.sample(|z| unstable.value(z)), p.a)?;
        let base_norm = system.l2_norm(&base);
        let mut ctx = Self {
            system,
            stable,
            unstable,
            base,
            edge,
            base_norm,
            base_spectrum: Vec::new(),
            edge_spectrum: Vec::new(),
        };
        ctx.base_spectrum = block_spectrum(&ctx.base_jacobian())?;
        ctx.edge_spectrum = block_spectrum(&ctx.edge_jacobian())?;
        Ok(ctx)
    }

    pub fn params(&self) -> &ModelParams {
        &self.system.params
    }

    /// Same context with a different half displacement `a`.
    pub fn with_half_displacement(&self, a: f64) -> Result<Self> {
        let mut p = self.system.params;
        p.a = a;
        p.validate()?;
        let mut ctx = self.clone();
        ctx.system.params = p;
        ctx.stable.params = p;
        ctx.unstable.params = p;
        Ok(ctx)
    }

    pub fn with_rate(&self, r: f64) -> Result<Self> {
        let mut p = self.system.params;
        p.rate = r;
        p.validate()?;
        let mut ctx = self.clone();
        ctx.system.params = p;
        Ok(ctx)
    }

    pub fn base_state(&self) -> Vec<f64> {
        let mut y = self.base.clone();
        y.push(-self.params().a);
        y
    }

    pub fn edge_state(&self) -> Vec<f64> {
        let mut y = self.edge.clone();
        y.push(self.params().a);
        y
    }

    pub fn base_jacobian(&self) -> BlockTriangular {
        self.system.jacobian(&self.base_state())
    }

    pub fn edge_jacobian(&self) -> BlockTriangular {
        self.system.jacobian(&self.edge_state())
    }

    pub fn base_block_spectrum(&self) -> &[Eigenvalue] {
        &self.base_spectrum
    }

    pub fn edge_block_spectrum(&self) -> &[Eigenvalue] {
        &self.edge_spectrum
    }

    /// Unstable eigenpair at `(V_s, -a)` for the current rate.
    pub fn base_eigenpair(&self) -> Result<Eigenpair> {
        unstable_eigenpair(&self.base_jacobian(), Some(&self.base_spectrum))
    }

    /// Unstable eigenpair at `(V_u, +a)` for the current rate.
    pub fn edge_eigenpair(&self) -> Result<Eigenpair> {
        unstable_eigenpair(&self.edge_jacobian(), Some(&self.edge_spectrum))
    }

    pub fn thresholds(&self) -> (f64, f64) {
        (THRESHOLD_FRACTION * self.base_norm, THRESHOLD_FRACTION * self.base_norm)
    }

    /// Initial state on the unstable manifold of `(V_s, -a)` and its ramp
    /// time. The eigenvector branch is the one with `gamma` increasing; with
    /// the positive-largest-component convention this is automatic whenever
    /// the `gamma` entry dominates.
    pub fn manifold_start(&self, epsilon: f64) -> Result<(Vec<f64>, f64)> {
        let pair = self.base_eigenpair()?;
        let n = self.system.n();
        let sign = if pair.vector[n] < 0.0 { -1.0 } else { 1.0 };
        if pair.vector[n] == 0.0 {
            return Err(Error::Structure("unstable eigenvector has no gamma component".into()));
        }
        let mut y = self.base_state();
        for (yi, vi) in y.iter_mut().zip(&pair.vector) {
            *yi += epsilon * sign * vi;
        }
        let p = self.params();
        let t0 = ramp_time(y[n], p.rate, p.a)?;
        Ok((y, t0))
    }
}

/// Per-sample summary kept for every accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub gamma: f64,
    pub norm: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PullbackOptions {
    pub t_end: f64,
    /// Horizon doubling stops here.
    pub max_t_end: f64,
    pub epsilon: f64,
    /// Relative integration tolerance (absolute is `tol_ode`).
    pub rtol: f64,
    /// Times at which the full field is interpolated and kept.
    pub snapshot_times: Vec<f64>,
    /// Keep every accepted step (with slopes) for dense output.
    pub keep_steps: bool,
}

impl Default for PullbackOptions {
    fn default() -> Self {
        Self {
            t_end: DEFAULT_T_END,
            max_t_end: MAX_T_END,
            epsilon: MANIFOLD_OFFSET,
            rtol: 1e-6,
            snapshot_times: Vec::new(),
            keep_steps: false,
        }
    }
}

/// Accepted steps `(t, y, y')`, sample-major.
#[derive(Debug, Clone, Default, PartialEq)]
struct StepRecord {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PullbackRun {
    pub params: ModelParams,
    pub t_start: f64,
    pub t_end: f64,
    pub classification: Classification,
    /// `||U(t_end) - u2*||`.
    pub distance_to_base: f64,
    /// `||U(t_end)||`.
    pub final_norm: f64,
    /// `||U(t_start) - u2*||`.
    pub initial_deviation: f64,
    /// `sup_t max_z |U - u2*|` and where it is attained.
    pub sup_error: f64,
    pub sup_error_time: f64,
    pub thresholds: (f64, f64),
    pub samples: Vec<TrajectorySample>,
    pub snapshots: Vec<Snapshot>,
    pub stats: Stats,
    pub final_state: Vec<f64>,
    /// Dense output, kept only on request.
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

struct Recorder<'a> {
    ctx: &'a PullbackContext,
    n: usize,
    samples: Vec<TrajectorySample>,
    snapshots: Vec<Snapshot>,
    snap_times: Vec<f64>,
    next_snap: usize,
    prev: Option<(f64, Vec<f64>, Vec<f64>)>,
    sup_error: f64,
    sup_time: f64,
    steps: Option<StepRecord>,
}

impl<'a> Recorder<'a> {
    fn observe(&mut self, t: f64, y: &[f64], f: &[f64]) {
        if let Some((t0, _, _)) = &self.prev {
            if *t0 == t {
                return;
            }
        }
        let n = self.n;
        let v = &y[..n];
        let err = v.iter().zip(&self.ctx.base).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if err > self.sup_error {
            self.sup_error = err;
            self.sup_time = t;
        }
        self.samples.push(TrajectorySample {
            t,
            gamma: y[n],
            norm: self.ctx.system.l2_norm(v),
            peak: v.iter().fold(0.0f64, |m, x| m.max(*x)),
        });
        while self.next_snap < self.snap_times.len() && self.snap_times[self.next_snap] <= t {
            let ts = self.snap_times[self.next_snap];
            let v = match &self.prev {
                Some((t0, y0, f0)) if ts > *t0 => {
                    let h = t - t0;
                    let (a, b, c, d) = hermite_weights((ts - t0) / h, h);
                    (0..n).map(|k| a * y0[k] + b * f0[k] + c * y[k] + d * f[k]).collect()
                }
                _ => v.to_vec(),
            };
            self.snapshots.push(Snapshot { t: ts, v });
            self.next_snap += 1;
        }
        if let Some(rec) = self.steps.as_mut() {
            rec.times.push(t);
            rec.states.extend_from_slice(y);
            rec.slopes.extend_from_slice(f);
        }
        self.prev = Some((t, y.to_vec(), f.to_vec()));
    }
}

fn add_stats(a: &mut Stats, b: &Stats) {
    a.accepted += b.accepted;
    a.rejected += b.rejected;
    a.rhs_evals += b.rhs_evals;
    a.factorizations += b.factorizations;
    a.newton_iterations += b.newton_iterations;
}

/// Integrates the manifold trajectory of `ctx` (at its rate) from the ramp
/// time of the initial state to `t_end`. Through the ramp (`t < 0`) the step
/// is capped at a fraction of `1/r`; afterwards only by [`MAX_STEP`].
/// `t_end` doubles while the outcome is undetermined, up to `max_t_end`.
pub fn compute_pullback(ctx: &PullbackContext, opts: &PullbackOptions) -> Result<PullbackRun> {
    let p = *ctx.params();
    if !(opts.t_end > 0.0) {
        return Err(Error::Precondition("t_end must be positive".into()));
    }
    let n = ctx.system.n();
    let (y0, t_start) = ctx.manifold_start(opts.epsilon)?;
    let initial_deviation = (ctx.system.l2_distance(&y0[..n], &ctx.base).powi(2) + (y0[n] + p.a).powi(2)).sqrt();
    let mut snap_times = opts.snapshot_times.clone();
    snap_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rec = Recorder {
        ctx,
        n,
        samples: Vec::new(),
        snapshots: Vec::new(),
        snap_times,
        next_snap: 0,
        prev: None,
        sup_error: 0.0,
        sup_time: t_start,
        steps: if opts.keep_steps {
            Some(StepRecord {
                dim: n + 1,
                ..StepRecord::default()
            })
        } else {
            None
        },
    };
    let ramp_ctrl = crate::ode::StepControl {
        rtol: opts.rtol,
        ..default_control(&p)
    };
    let free_ctrl = crate::ode::StepControl {
        h_max: MAX_STEP,
        ..ramp_ctrl
    };
    let mut stats = Stats::default();
    let mut y = y0;
    let mut t = t_start;
    if t < 0.0 {
        let (y1, s) = integrate_with(&ctx.system, &y, t, 0.0, &ramp_ctrl, |t, y, f| rec.observe(t, y, f))?;
        add_stats(&mut stats, &s);
        y = y1;
        t = 0.0;
    }
    let (delta1, delta2) = ctx.thresholds();
    let mut t_end = opts.t_end;
    loop {
        if t < t_end {
            let (y1, s) = integrate_with(&ctx.system, &y, t, t_end, &free_ctrl, |t, y, f| rec.observe(t, y, f))?;
            add_stats(&mut stats, &s);
            y = y1;
            t = t_end;
        }
        let dist = ctx.system.l2_distance(&y[..n], &ctx.base);
        let norm = ctx.system.l2_norm(&y[..n]);
        let class = classify(dist, norm, delta1, delta2);
        if class != Classification::Undetermined || t_end * 2.0 > opts.max_t_end {
            return Ok(PullbackRun {
                params: p,
                t_start,
                t_end,
                classification: class,
                distance_to_base: dist,
                final_norm: norm,
                initial_deviation,
                sup_error: rec.sup_error,
                sup_error_time: rec.sup_time,
                thresholds: (delta1, delta2),
                samples: rec.samples,
                snapshots: rec.snapshots,
                stats,
                final_state: y,
                trajectory: rec
                    .steps
                    .map(|s| Trajectory::from_steps(s.times, s.dim, s.states, s.slopes, stats)),
            });
        }
        t_end *= 2.0;
    }
}

/// Convenience: the run for rate `r` (context rate replaced).
pub fn pullback_at_rate(ctx: &PullbackContext, r: f64, opts: &PullbackOptions) -> Result<PullbackRun> {
    compute_pullback(&ctx.with_rate(r)?, opts)
}

/// `sup_t max_z |U - u2*|` of a tracking run.
pub fn tracking_error(run: &PullbackRun) -> Result<f64> {
    if run.classification != Classification::Tracking {
        return Err(Error::Precondition(alloc::format!(
            "tracking error of a {:?} run",
            run.classification
        )));
    }
    Ok(run.sup_error)
}

/// Snapshot-free summary used by sweeps.
pub fn classify_rate(ctx: &PullbackContext, r: f64, opts: &PullbackOptions) -> Result<Classification> {
    let opts = PullbackOptions {
        snapshot_times: vec![],
        keep_steps: false,
        ..opts.clone()
    };
    Ok(pullback_at_rate(ctx, r, &opts)?.classification)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_thresholds() {
        assert_eq!(classify(0.0, 2.7, 0.27, 0.27), Classification::Tracking);
        assert_eq!(classify(2.7, 0.0, 0.27, 0.27), Classification::Extinct);
        assert_eq!(classify(1.0, 1.5, 0.27, 0.27), Classification::Undetermined);
    }
}
