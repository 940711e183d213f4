//! Method-of-lines semidiscretization of the compactified moving-frame
//! equation
//!
//! ```text
//! V_t = D2 V + r g(gamma) D1 V + f(V, H(z)),    gamma_t = r g(gamma)
//! ```
//!
//! on a nonuniform mesh, with `D1`, `D2` built from 5-point interpolation
//! stencils (degree 4), integrated in time by TR-BDF2.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::interp::HermiteCurve;
use crate::linalg::{BandMatrix, BlockTriangular, BorderedLu, BorderedSystem};
use crate::model::{habitat_value, reaction, reaction_du, ModelParams, QuadraticShift, ShiftField};
use crate::ode::{tr_bdf2, StepControl, Stats, StiffSystem};

/// Points per differentiation stencil.
pub const STENCIL: usize = 5;
/// Relative slack on `|gamma| <= a` accepted by the right-hand side.
pub const GAMMA_SLACK: f64 = 1e-8;
const MIN_NODES: usize = 50;

/// Finite-difference weights (Fornberg's recursion): `w[k][j]` is the weight
/// of `f(xs[j])` in the `k`-th derivative at `x0`, for `k <= m`.
pub fn fornberg_weights(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// First index of the `STENCIL` nodes nearest to node `j` (contiguous,
/// one-sided at the ends).
fn nearest_window(mesh: &[f64], j: usize) -> usize {
    let m = mesh.len();
    let (mut lo, mut hi) = (j, j);
    while hi - lo + 1 < STENCIL {
        let left = if lo > 0 { mesh[j] - mesh[lo - 1] } else { f64::INFINITY };
        let right = if hi + 1 < m { mesh[hi + 1] - mesh[j] } else { f64::INFINITY };
        if left <= right {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    lo
}

/// Trapezoidal quadrature weights on a mesh.
pub fn trapezoid_weights(mesh: &[f64]) -> Vec<f64> {
    let m = mesh.len();
    let mut w = vec![0.0; m];
    for i in 0..m - 1 {
        let h = 0.5 * (mesh[i + 1] - mesh[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// Semidiscrete system with state `(V_1..V_N, gamma)`.
#[derive(Debug, Clone)]
pub struct SemidiscreteSystem {
    pub mesh: Vec<f64>,
    pub d1: BandMatrix,
    pub d2: BandMatrix,
    pub params: ModelParams,
    habitat: Vec<f64>,
    weights: Vec<f64>,
}

/// Builds `D1`, `D2` from the 5 nearest nodes of every mesh point.
pub fn build_system(mesh: &[f64], p: &ModelParams) -> Result<SemidiscreteSystem> {
    p.validate()?;
    if mesh.len() < MIN_NODES {
        return Err(Error::Mesh(alloc::format!("{} nodes, need at least {MIN_NODES}", mesh.len())));
    }
    if mesh.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Mesh("mesh nodes must be strictly increasing".into()));
    }
    let n = mesh.len();
    let bw = STENCIL - 1;
    let mut d1 = BandMatrix::zeros(n, bw, bw);
    let mut d2 = BandMatrix::zeros(n, bw, bw);
    for j in 0..n {
        let lo = nearest_window(mesh, j);
        let w = fornberg_weights(mesh[j], &mesh[lo..lo + STENCIL], 2);
        for k in 0..STENCIL {
            d1.set(j, lo + k, w[1][k]);
            d2.set(j, lo + k, w[2][k]);
        }
    }
    Ok(SemidiscreteSystem {
        mesh: mesh.to_vec(),
        d1,
        d2,
        params: *p,
        habitat: mesh.iter().map(|&z| habitat_value(z, p.width)).collect(),
        weights: trapezoid_weights(mesh),
    })
}

impl SemidiscreteSystem {
    /// Number of density values `N`; the state has `N + 1` entries.
    pub fn n(&self) -> usize {
        self.mesh.len()
    }

    pub fn with_rate(&self, rate: f64) -> Self {
        let mut s = self.clone();
        s.params.rate = rate;
        s
    }

    pub fn with_half_displacement(&self, a: f64) -> Self {
        let mut s = self.clone();
        s.params.a = a;
        s
    }

    pub fn habitat(&self) -> &[f64] {
        &self.habitat
    }

    fn shift(&self) -> QuadraticShift {
        QuadraticShift { a: self.params.a }
    }

    fn check_gamma(&self, gamma: f64) -> Result<()> {
        let a = self.params.a;
        if !gamma.is_finite() || gamma.abs() > a * (1.0 + GAMMA_SLACK) {
            return Err(Error::Domain(alloc::format!("|gamma| = {} exceeds a = {a}", gamma.abs())));
        }
        Ok(())
    }

    /// Discrete L2 norm with trapezoidal weights.
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.weights).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
    }

    pub fn l2_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.weights)
            .map(|((x, y), w)| w * (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Right-hand side at `y = (V, gamma)`.
    pub fn rhs_into(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.check_gamma(y[self.n()])?;
        self.eval_rhs(y, dy);
        Ok(())
    }

    /// The right-hand side with `g` extended past `+-a` by its formula.
    /// Implicit stages may probe slightly beyond the fixed points; accepted
    /// states stay inside up to the integration tolerance.
    fn eval_rhs(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.n();
        let gamma = y[n];
        let p = &self.params;
        let drift = p.rate * self.shift().velocity(gamma);
        let v = &y[..n];
        for j in 0..n {
            let (lo, r2) = self.d2.row(j);
            let (_, r1) = self.d1.row(j);
            let mut s = 0.0;
            for k in 0..r2.len() {
                s += (r2[k] + drift * r1[k]) * v[lo + k];
            }
            dy[j] = s + reaction(v[j], self.habitat[j], p);
        }
        dy[n] = drift;
    }

    pub fn rhs(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut dy = vec![0.0; y.len()];
        self.rhs_into(y, &mut dy)?;
        Ok(dy)
    }

    /// `[[D2 + r g D1 + diag f_u, -(2 r gamma / a) D1 V], [0, -2 r gamma / a]]`.
    pub fn jacobian(&self, y: &[f64]) -> BlockTriangular {
        let n = self.n();
        let gamma = y[n];
        let p = &self.params;
        let shift = self.shift();
        let drift = p.rate * shift.velocity(gamma);
        let dg = p.rate * shift.velocity_derivative(gamma);
        let mut a = BandMatrix::zeros(n, STENCIL - 1, STENCIL - 1);
        for j in 0..n {
            let (lo, r2) = self.d2.row(j);
            let (_, r1) = self.d1.row(j);
            for k in 0..r2.len() {
                a.set(j, lo + k, r2[k] + drift * r1[k]);
            }
            a.add(j, j, reaction_du(y[j], self.habitat[j], p));
        }
        let c = self.d1.mul_vec(&y[..n]).into_iter().map(|x| dg * x).collect();
        BlockTriangular { a, c, d: dg }
    }

    /// Static residual `D2 V + f(V, H)` (the rhs at `gamma = +-a`).
    pub fn static_residual(&self, v: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let mut out = self.d2.mul_vec(v);
        for j in 0..self.n() {
            out[j] += reaction(v[j], self.habitat[j], p);
        }
        out
    }

    /// `V` sampled from a profile `u(z)` at the mesh nodes.
    pub fn sample(&self, u: impl Fn(f64) -> f64) -> Vec<f64> {
        self.mesh.iter().map(|&z| u(z)).collect()
    }
}

impl StiffSystem for SemidiscreteSystem {
    fn dim(&self) -> usize {
        self.n() + 1
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration("non-finite state".into()));
        }
        self.eval_rhs(y, dy);
        Ok(())
    }

    fn factor_iteration(&self, _t: f64, y: &[f64], c: f64) -> Result<BorderedLu> {
        factor_block(&self.jacobian(y), c)
    }
}

/// Factors `I - c J` for a block-triangular `J`, with `gamma` as the border.
pub fn factor_block(j: &BlockTriangular, c: f64) -> Result<BorderedLu> {
    let n = j.a.n;
    let mut sys = BorderedSystem::new(n, 1);
    for i in 0..n {
        let (lo, vals) = j.a.row(i);
        let mut row: Vec<f64> = vals.iter().map(|v| -c * v).collect();
        row[i - lo] += 1.0;
        sys.push_row(lo, row, vec![-c * j.c[i]]);
    }
    sys.push_row(n, Vec::new(), vec![1.0 - c * j.d]);
    sys.factor()
}

/// Time samples with Hermite dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// State dimension.
    pub dim: usize,
    /// Sample-major states.
    pub states: Vec<f64>,
    pub stats: Stats,
    curve: HermiteCurve,
}

impl Trajectory {
    /// Builds a trajectory from accepted steps `(t, y, y')`, sample-major.
    pub fn from_steps(times: Vec<f64>, dim: usize, states: Vec<f64>, slopes: Vec<f64>, stats: Stats) -> Self {
        let curve = HermiteCurve::new(times.clone(), dim, states.clone(), slopes);
        Self {
            times,
            dim,
            states,
            stats,
            curve,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Stored slope `y'` of sample `i`.
    pub fn curve_slope(&self, i: usize) -> Vec<f64> {
        self.curve.slope_at_knot(i).to_vec()
    }

    /// State at `t` (clamped to the sampled span).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.curve.eval(t)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        self.curve.eval_into(t, out)
    }
}

/// Largest time step. An L-stable step much longer than the growth time of
/// an unstable mode damps that mode instead of resolving it, and the error
/// test cannot see a mode still below the tolerance, so the step is also
/// capped at a fraction of the ramp time `1/r`.
pub const MAX_STEP: f64 = 10.0;
pub const MAX_STEP_RAMP_FRACTION: f64 = 0.25;

/// Default integrator control: `tol_ode` absolute, `1e-6` relative.
pub fn default_control(p: &ModelParams) -> StepControl {
    StepControl {
        atol: p.tol_ode,
        rtol: 1e-6,
        h0: Some(1e-3),
        h_max: MAX_STEP.min(MAX_STEP_RAMP_FRACTION / p.rate),
        ..StepControl::default()
    }
}

/// Integrates over `[t0, t1]`, passing `(t, y, y')` of every accepted step to
/// `observe` without storing the trajectory.
pub fn integrate_with<S, O>(sys: &S, y0: &[f64], t0: f64, t1: f64, ctrl: &StepControl, observe: O) -> Result<(Vec<f64>, Stats)>
where
    S: StiffSystem + ?Sized,
    O: FnMut(f64, &[f64], &[f64]),
{
    tr_bdf2(sys, t0, y0, t1, ctrl, observe)
}

/// Integrates over `[t0, t1]` and keeps every accepted step.
pub fn integrate<S: StiffSystem + ?Sized>(sys: &S, y0: &[f64], t0: f64, t1: f64, ctrl: &StepControl) -> Result<Trajectory> {
    let dim = y0.len();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut slopes = Vec::new();
    let (_, stats) = tr_bdf2(sys, t0, y0, t1, ctrl, |t, y, f| {
        times.push(t);
        states.extend_from_slice(y);
        slopes.extend_from_slice(f);
    })?;
    Ok(Trajectory::from_steps(times, dim, states, slopes, stats))
}

/// Newton's method on `D2 V + f(V, H) = 0`, the `V` part of a fixed point at
/// `gamma = +-a` (where `g` vanishes, so `r` and `a` drop out).
pub fn find_fixed_point(sys: &SemidiscreteSystem, guess: &[f64], gamma_fixed: f64) -> Result<Vec<f64>> {
    let a = sys.params.a;
    if gamma_fixed.abs() != a {
        return Err(Error::Precondition(alloc::format!("gamma = {gamma_fixed} is not +-a")));
    }
    let n = sys.n();
    if guess.len() != n {
        return Err(Error::Precondition("guess length differs from the mesh".into()));
    }
    let tol = sys.params.tol_newton;
    let peak = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(*x));
    let mut v = guess.to_vec();
    let mut res = sys.static_residual(&v);
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut rn = norm(&res);
    let max_iter = 50;
    for _ in 0..max_iter {
        if rn < tol {
            if (peak(&v) - peak(guess)).abs() > 0.1 {
                return Err(Error::WrongBranch(peak(&v)));
            }
            return Ok(v);
        }
        let mut j = sys.d2.clone();
        for i in 0..n {
            j.add(i, i, reaction_du(v[i], sys.habitat[i], &sys.params));
        }
        let lu = j.factor_shifted(0.0)?;
        let mut dv = res.clone();
        lu.solve(&mut dv);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = v.iter().zip(&dv).map(|(x, d)| x - lambda * d).collect();
            let tres = sys.static_residual(&trial);
            let tn = norm(&tres);
            if tn < rn || lambda < 1e-9 {
                v = trial;
                res = tres;
                rn = tn;
                break;
            }
            lambda *= 0.5;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: rn,
        last_iterate: v,
    })
}
