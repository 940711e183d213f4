//! Two-point boundary value problems with unknown parameters and interior
//! conditions, solved by 3-stage Lobatto IIIA collocation (Hermite-Simpson,
//! fourth order at the nodes) with adaptive mesh refinement.
//!
//! On each subinterval `[z_i, z_i + h]` the collocation equations are
//!
//! ```text
//! y_mid = (y_i + y_{i+1}) / 2 + h/8 (f_i - f_{i+1})
//! y_{i+1} - y_i - h/6 (f_i + 4 f_mid + f_{i+1}) = 0
//! ```
//!
//! and the continuous solution is the C1 cubic through `(y_i, f_i)` and
//! `(y_{i+1}, f_{i+1})`. Parameters are appended to the Newton unknowns and
//! the sparse Jacobian is solved with [`BorderedSystem`].
//!
//! Interior conditions are imposed at mesh nodes; the segments on either
//! side share that node, which is the continuity condition joining them.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::interp::{hermite_derivative_weights, hermite_weights, HermiteCurve};
use crate::linalg::{BorderedLu, BorderedSystem};

/// Values of the solution at the points where conditions are imposed.
#[derive(Debug, Clone, Copy)]
pub struct ConditionPoints<'a> {
    pub lo: &'a [f64],
    pub hi: &'a [f64],
    /// Flattened values at the interior points, `dim` entries per point, in
    /// the order they were declared.
    pub interior: &'a [f64],
    pub dim: usize,
}

impl<'a> ConditionPoints<'a> {
    pub fn interior(&self, k: usize) -> &'a [f64] {
        &self.interior[k * self.dim..(k + 1) * self.dim]
    }
}

/// ODE `y' = F(z, y, p)` with `n_conditions() == dim() + n_params()`
/// boundary and interior conditions.
pub trait BvpSystem {
    fn dim(&self) -> usize;

    fn n_params(&self) -> usize {
        0
    }

    fn n_conditions(&self) -> usize;

    fn rhs(&self, z: f64, y: &[f64], p: &[f64], dy: &mut [f64]);

    /// Fills `dfdy` (row-major `dim x dim`) and `dfdp` (row-major
    /// `dim x n_params`). Returning `false` selects finite differences.
    fn rhs_jacobian(
        &self,
        _z: f64,
        _y: &[f64],
        _p: &[f64],
        _dfdy: &mut [f64],
        _dfdp: &mut [f64],
    ) -> bool {
        false
    }

    fn conditions(&self, at: &ConditionPoints<'_>, p: &[f64], res: &mut [f64]);
}

/// A [`BvpSystem`] on a fixed interval with validated condition count.
#[derive(Debug, Clone)]
pub struct BvpProblem<S> {
    pub system: S,
    pub z_lo: f64,
    pub z_hi: f64,
    pub interior: Vec<f64>,
}

impl<S: BvpSystem> BvpProblem<S> {
    pub fn new(system: S, z_lo: f64, z_hi: f64, mut interior: Vec<f64>) -> Result<Self> {
        let expected = system.dim() + system.n_params();
        if system.n_conditions() != expected {
            return Err(Error::ConditionCount {
                conditions: system.n_conditions(),
                expected,
            });
        }
        if !(z_lo < z_hi) || !z_lo.is_finite() || !z_hi.is_finite() {
            return Err(Error::Mesh(alloc::format!("invalid interval [{z_lo}, {z_hi}]")));
        }
        if interior.iter().any(|&z| !(z > z_lo && z < z_hi)) {
            return Err(Error::Mesh("interior points must lie strictly inside the interval".into()));
        }
        interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
        interior.dedup();
        Ok(Self {
            system,
            z_lo,
            z_hi,
            interior,
        })
    }
}

/// Initial mesh, node values (node-major) and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BvpGuess {
    pub mesh: Vec<f64>,
    pub values: Vec<f64>,
    pub params: Vec<f64>,
}

impl BvpGuess {
    pub fn from_fn(mesh: Vec<f64>, dim: usize, params: Vec<f64>, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut values = vec![0.0; mesh.len() * dim];
        for (i, &z) in mesh.iter().enumerate() {
            f(z, &mut values[i * dim..(i + 1) * dim]);
        }
        Self { mesh, values, params }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpOptions {
    /// Bound on the per-interval residual indicator and on the condition residual.
    pub tol: f64,
    pub max_nodes: usize,
    /// Largest subinterval allowed after refinement.
    pub h_max: f64,
    /// Refine until the residual indicator meets `tol`; otherwise solve on the
    /// given mesh only.
    pub adapt: bool,
    pub max_newton: usize,
    pub max_halvings: usize,
    /// Relative size of the final Newton correction.
    pub newton_tol: f64,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_nodes: 20_000,
            h_max: f64::INFINITY,
            adapt: true,
            max_newton: 50,
            max_halvings: 30,
            newton_tol: 1e-11,
        }
    }
}

/// Converged collocation solution.
#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub mesh: Vec<f64>,
    pub dim: usize,
    /// Node values, node-major.
    pub values: Vec<f64>,
    /// `F` at the nodes.
    pub slopes: Vec<f64>,
    /// Midpoint collocation stage values, one per subinterval.
    pub stages: Vec<f64>,
    pub params: Vec<f64>,
    /// Per-interval residual indicators.
    pub interval_residuals: Vec<f64>,
    /// Largest interval residual indicator.
    pub residual: f64,
    /// Max-norm of the boundary and interior condition residuals.
    pub condition_residual: f64,
    pub newton_iterations: usize,
    curve: HermiteCurve,
}

impl BvpSolution {
    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn eval(&self, z: f64) -> Vec<f64> {
        self.curve.eval(z)
    }

    pub fn component(&self, z: f64, k: usize) -> f64 {
        self.curve.component(z, k)
    }

    pub fn curve(&self) -> &HermiteCurve {
        &self.curve
    }
}

struct Workspace {
    n: usize,
    np: usize,
    dfdy: Vec<f64>,
    dfdp: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, np: usize) -> Self {
        Self {
            n,
            np,
            dfdy: vec![0.0; n * n],
            dfdp: vec![0.0; n * np],
        }
    }
}

fn jacobian_at<S: BvpSystem>(sys: &S, z: f64, y: &[f64], p: &[f64], ws: &mut Workspace) {
    let (n, np) = (ws.n, ws.np);
    if sys.rhs_jacobian(z, y, p, &mut ws.dfdy, &mut ws.dfdp) {
        return;
    }
    let mut f0 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    sys.rhs(z, y, p, &mut f0);
    let mut yp = y.to_vec();
    for j in 0..n {
        let h = f64::EPSILON.sqrt() * (1.0 + y[j].abs());
        yp[j] = y[j] + h;
        sys.rhs(z, &yp, p, &mut f1);
        yp[j] = y[j];
        for i in 0..n {
            ws.dfdy[i * n + j] = (f1[i] - f0[i]) / h;
        }
    }
    let mut pp = p.to_vec();
    for j in 0..np {
        let h = f64::EPSILON.sqrt() * (1.0 + p[j].abs());
        pp[j] = p[j] + h;
        sys.rhs(z, y, &pp, &mut f1);
        pp[j] = p[j];
        for i in 0..n {
            ws.dfdp[i * np + j] = (f1[i] - f0[i]) / h;
        }
    }
}

struct Discretization<'a, S> {
    problem: &'a BvpProblem<S>,
    mesh: Vec<f64>,
    /// Node index of each interior condition point.
    interior_nodes: Vec<usize>,
}

impl<'a, S: BvpSystem> Discretization<'a, S> {
    fn new(problem: &'a BvpProblem<S>, mesh: Vec<f64>) -> Result<Self> {
        let interior_nodes = problem
            .interior
            .iter()
            .map(|&zi| {
                mesh.iter()
                    .position(|&z| z == zi)
                    .ok_or_else(|| Error::Mesh(alloc::format!("interior point {zi} is not a node")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            problem,
            mesh,
            interior_nodes,
        })
    }

    fn sys(&self) -> &S {
        &self.problem.system
    }

    fn n(&self) -> usize {
        self.sys().dim()
    }

    fn np(&self) -> usize {
        self.sys().n_params()
    }

    fn n_unknowns(&self) -> usize {
        self.n() * self.mesh.len() + self.np()
    }

    fn condition_points<'b>(&self, x: &'b [f64], interior: &'b mut Vec<f64>) -> ConditionPoints<'b> {
        let n = self.n();
        let m = self.mesh.len();
        interior.clear();
        for &k in &self.interior_nodes {
            interior.extend_from_slice(&x[k * n..(k + 1) * n]);
        }
        ConditionPoints {
            lo: &x[0..n],
            hi: &x[(m - 1) * n..m * n],
            interior: interior.as_slice(),
            dim: n,
        }
    }

    /// Residual vector: collocation equations per interval, then conditions.
    fn residual(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        let m = self.mesh.len();
        let p = &x[n * m..];
        let mut f = vec![0.0; n * m];
        for i in 0..m {
            self.sys().rhs(self.mesh[i], &x[i * n..(i + 1) * n], p, &mut f[i * n..(i + 1) * n]);
        }
        let mut ym = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for i in 0..m - 1 {
            let h = self.mesh[i + 1] - self.mesh[i];
            let (yi, yj) = (&x[i * n..(i + 1) * n], &x[(i + 1) * n..(i + 2) * n]);
            let (fi, fj) = (&f[i * n..(i + 1) * n], &f[(i + 1) * n..(i + 2) * n]);
            for k in 0..n {
                ym[k] = 0.5 * (yi[k] + yj[k]) + h / 8.0 * (fi[k] - fj[k]);
            }
            self.sys().rhs(self.mesh[i] + 0.5 * h, &ym, p, &mut fm);
            for k in 0..n {
                out[i * n + k] = yj[k] - yi[k] - h / 6.0 * (fi[k] + 4.0 * fm[k] + fj[k]);
            }
        }
        let mut buf = Vec::new();
        let at = self.condition_points(x, &mut buf);
        self.sys().conditions(&at, p, &mut out[n * (m - 1)..]);
    }

    fn factor_jacobian(&self, x: &[f64]) -> Result<BorderedLu> {
        let n = self.n();
        let np = self.np();
        let m = self.mesh.len();
        let p = &x[n * m..];
        let sys = self.sys();
        let mut system = BorderedSystem::new(n * m, np);

        let mut ws_i = Workspace::new(n, np);
        let mut ws_j = Workspace::new(n, np);
        let mut ws_m = Workspace::new(n, np);
        let mut fi = vec![0.0; n];
        let mut fj = vec![0.0; n];
        let mut ym = vec![0.0; n];
        let mut a_i = vec![0.0; n * n];
        let mut a_j = vec![0.0; n * n];
        let mut b = vec![0.0; n * np];

        sys.rhs(self.mesh[0], &x[0..n], p, &mut fi);
        jacobian_at(sys, self.mesh[0], &x[0..n], p, &mut ws_i);
        for i in 0..m - 1 {
            let h = self.mesh[i + 1] - self.mesh[i];
            let (yi, yj) = (&x[i * n..(i + 1) * n], &x[(i + 1) * n..(i + 2) * n]);
            sys.rhs(self.mesh[i + 1], yj, p, &mut fj);
            jacobian_at(sys, self.mesh[i + 1], yj, p, &mut ws_j);
            for k in 0..n {
                ym[k] = 0.5 * (yi[k] + yj[k]) + h / 8.0 * (fi[k] - fj[k]);
            }
            let zm = self.mesh[i] + 0.5 * h;
            jacobian_at(sys, zm, &ym, p, &mut ws_m);
            let (ji, jj, jm) = (&ws_i.dfdy, &ws_j.dfdy, &ws_m.dfdy);
            // d(phi)/d(y_i) = -I - h/6 (J_i + 4 J_m (I/2 + h/8 J_i)), similarly for y_{i+1}.
            for r in 0..n {
                for c in 0..n {
                    let mut jm_ji = 0.0;
                    let mut jm_jj = 0.0;
                    for k in 0..n {
                        jm_ji += jm[r * n + k] * ji[k * n + c];
                        jm_jj += jm[r * n + k] * jj[k * n + c];
                    }
                    let eye = if r == c { 1.0 } else { 0.0 };
                    a_i[r * n + c] = -eye - h / 6.0 * (ji[r * n + c] + 2.0 * jm[r * n + c] + h / 2.0 * jm_ji);
                    a_j[r * n + c] = eye - h / 6.0 * (jj[r * n + c] + 2.0 * jm[r * n + c] - h / 2.0 * jm_jj);
                }
                for c in 0..np {
                    let mut jm_dp = 0.0;
                    for k in 0..n {
                        jm_dp += jm[r * n + k] * (ws_i.dfdp[k * np + c] - ws_j.dfdp[k * np + c]);
                    }
                    b[r * np + c] = -h / 6.0
                        * (ws_i.dfdp[r * np + c]
                            + 4.0 * (ws_m.dfdp[r * np + c] + h / 8.0 * jm_dp)
                            + ws_j.dfdp[r * np + c]);
                }
            }
            for r in 0..n {
                let mut vals = Vec::with_capacity(2 * n);
                vals.extend_from_slice(&a_i[r * n..(r + 1) * n]);
                vals.extend_from_slice(&a_j[r * n..(r + 1) * n]);
                system.push_row(i * n, vals, b[r * np..(r + 1) * np].to_vec());
            }
            fi.copy_from_slice(&fj);
            core::mem::swap(&mut ws_i, &mut ws_j);
        }

        // Condition rows by forward differences over the nodes they touch.
        let nc = n + np;
        let mut nodes: Vec<usize> = vec![0, m - 1];
        nodes.extend_from_slice(&self.interior_nodes);
        nodes.sort_unstable();
        nodes.dedup();
        let mut base = vec![0.0; nc];
        let mut pert = vec![0.0; nc];
        let mut xw = x.to_vec();
        let mut buf = Vec::new();
        {
            let at = self.condition_points(&xw, &mut buf);
            sys.conditions(&at, &xw[n * m..], &mut base);
        }
        let mut dense_cols: Vec<(usize, Vec<f64>)> = Vec::new();
        for &node in &nodes {
            for k in 0..n {
                let col = node * n + k;
                let h = f64::EPSILON.sqrt() * (1.0 + x[col].abs());
                xw[col] = x[col] + h;
                {
                    let at = self.condition_points(&xw, &mut buf);
                    sys.conditions(&at, &xw[n * m..], &mut pert);
                }
                xw[col] = x[col];
                dense_cols.push((col, pert.iter().zip(&base).map(|(a, b)| (a - b) / h).collect()));
            }
        }
        let mut border_cols: Vec<Vec<f64>> = Vec::new();
        for j in 0..np {
            let col = n * m + j;
            let h = f64::EPSILON.sqrt() * (1.0 + x[col].abs());
            xw[col] = x[col] + h;
            {
                let at = self.condition_points(&xw, &mut buf);
                sys.conditions(&at, &xw[n * m..], &mut pert);
            }
            xw[col] = x[col];
            border_cols.push(pert.iter().zip(&base).map(|(a, b)| (a - b) / h).collect());
        }
        for r in 0..nc {
            let nz: Vec<(usize, f64)> = dense_cols
                .iter()
                .filter(|(_, d)| d[r] != 0.0)
                .map(|(c, d)| (*c, d[r]))
                .collect();
            let border: Vec<f64> = border_cols.iter().map(|d| d[r]).collect();
            let border = if np == 0 { Vec::new() } else { border };
            if nz.is_empty() {
                system.push_row(n * m, Vec::new(), border);
                continue;
            }
            let lo = nz.iter().map(|e| e.0).min().unwrap();
            let hi = nz.iter().map(|e| e.0).max().unwrap() + 1;
            let mut vals = vec![0.0; hi - lo];
            for (c, v) in nz {
                vals[c - lo] = v;
            }
            system.push_row(lo, vals, border);
        }
        system.factor()
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Newton on a fixed mesh. The step length is accepted when the
/// simplified Newton correction at the trial point contracts (an affine
/// invariant test, insensitive to how the equations are scaled).
fn newton<S: BvpSystem>(disc: &Discretization<'_, S>, x: &mut [f64], opts: &BvpOptions) -> Result<usize> {
    let nu = disc.n_unknowns();
    let mut f = vec![0.0; nu];
    let mut trial = vec![0.0; nu];
    let mut f_trial = vec![0.0; nu];
    for it in 0..opts.max_newton {
        disc.residual(x, &mut f);
        let lu = disc.factor_jacobian(x)?;
        let mut dx = f.clone();
        lu.solve(&mut dx);
        let dnorm = inf_norm(&dx);
        if !dnorm.is_finite() {
            break;
        }
        let scale = 1.0 + inf_norm(x);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            for k in 0..nu {
                trial[k] = x[k] - lambda * dx[k];
            }
            disc.residual(&trial, &mut f_trial);
            let mut dbar = f_trial.clone();
            lu.solve(&mut dbar);
            let bar = inf_norm(&dbar);
            if bar.is_finite() && (bar <= (1.0 - 0.25 * lambda) * dnorm || bar <= opts.newton_tol * scale) {
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
        x.copy_from_slice(&trial);
        if lambda == 1.0 && dnorm <= opts.newton_tol * scale {
            return Ok(it + 1);
        }
    }
    disc.residual(x, &mut f);
    Err(Error::NoConvergence {
        iterations: opts.max_newton,
        residual: inf_norm(&f),
        last_iterate: x.to_vec(),
    })
}

/// Residual indicator per interval: `h * max_k |S'_k - F_k| / (1 + max|S_k|)`
/// sampled at the quarter points where the cubic's defect is largest (it
/// vanishes at both nodes and at the midpoint).
fn interval_residuals<S: BvpSystem>(sys: &S, mesh: &[f64], values: &[f64], slopes: &[f64], p: &[f64]) -> Vec<f64> {
    let n = sys.dim();
    let m = mesh.len();
    let mut out = Vec::with_capacity(m - 1);
    let mut s_val = vec![0.0; n];
    let mut s_der = vec![0.0; n];
    let mut f = vec![0.0; n];
    for i in 0..m - 1 {
        let h = mesh[i + 1] - mesh[i];
        let mut worst: f64 = 0.0;
        let mut size: f64 = 0.0;
        for k in 0..n {
            size = size.max(values[i * n + k].abs()).max(values[(i + 1) * n + k].abs());
        }
        for s in [0.25, 0.75] {
            let (a, b, c, d) = hermite_weights(s, h);
            let (da, db, dc, dd) = hermite_derivative_weights(s, h);
            for k in 0..n {
                let (y0, y1) = (values[i * n + k], values[(i + 1) * n + k]);
                let (f0, f1) = (slopes[i * n + k], slopes[(i + 1) * n + k]);
                s_val[k] = a * y0 + b * f0 + c * y1 + d * f1;
                s_der[k] = da * y0 + db * f0 + dc * y1 + dd * f1;
            }
            sys.rhs(mesh[i] + s * h, &s_val, p, &mut f);
            for k in 0..n {
                worst = worst.max((s_der[k] - f[k]).abs());
            }
        }
        out.push(h * worst / (1.0 + size));
    }
    out
}

fn build_solution<S: BvpSystem>(disc: &Discretization<'_, S>, x: &[f64], iterations: usize) -> BvpSolution {
    let sys = disc.sys();
    let n = disc.n();
    let m = disc.mesh.len();
    let values = x[..n * m].to_vec();
    let params = x[n * m..].to_vec();
    let mut slopes = vec![0.0; n * m];
    for i in 0..m {
        sys.rhs(disc.mesh[i], &values[i * n..(i + 1) * n], &params, &mut slopes[i * n..(i + 1) * n]);
    }
    let mut stages = vec![0.0; n * (m - 1)];
    for i in 0..m - 1 {
        let h = disc.mesh[i + 1] - disc.mesh[i];
        for k in 0..n {
            stages[i * n + k] = 0.5 * (values[i * n + k] + values[(i + 1) * n + k])
                + h / 8.0 * (slopes[i * n + k] - slopes[(i + 1) * n + k]);
        }
    }
    let interval_res = interval_residuals(sys, &disc.mesh, &values, &slopes, &params);
    let residual = interval_res.iter().fold(0.0, |a: f64, b| a.max(*b));
    let mut cres = vec![0.0; n + params.len()];
    let mut buf = Vec::new();
    let at = disc.condition_points(x, &mut buf);
    sys.conditions(&at, &params, &mut cres);
    let curve = HermiteCurve::new(disc.mesh.clone(), n, values.clone(), slopes.clone());
    BvpSolution {
        mesh: disc.mesh.clone(),
        dim: n,
        values,
        slopes,
        stages,
        params,
        interval_residuals: interval_res,
        residual,
        condition_residual: inf_norm(&cres),
        newton_iterations: iterations,
        curve,
    }
}

fn validate_guess<S: BvpSystem>(problem: &BvpProblem<S>, guess: &BvpGuess) -> Result<Vec<f64>> {
    let n = problem.system.dim();
    if guess.mesh.len() < 5 {
        return Err(Error::Mesh("initial mesh needs at least 5 nodes".into()));
    }
    if guess.values.len() != n * guess.mesh.len() || guess.params.len() != problem.system.n_params() {
        return Err(Error::Mesh("guess dimensions do not match the problem".into()));
    }
    if guess.mesh.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Mesh("mesh must be strictly increasing".into()));
    }
    let (lo, hi) = (guess.mesh[0], guess.mesh[guess.mesh.len() - 1]);
    if (lo - problem.z_lo).abs() > 1e-12 * (1.0 + lo.abs()) || (hi - problem.z_hi).abs() > 1e-12 * (1.0 + hi.abs()) {
        return Err(Error::Mesh("mesh does not span the problem interval".into()));
    }
    let mut mesh = guess.mesh.clone();
    for &zi in &problem.interior {
        if !mesh.contains(&zi) {
            mesh.push(zi);
        }
    }
    mesh.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(mesh)
}

fn linear_resample(mesh: &[f64], values: &[f64], n: usize, z: f64, out: &mut [f64]) {
    let i = crate::interp::locate(mesh, z);
    let t = ((z - mesh[i]) / (mesh[i + 1] - mesh[i])).clamp(0.0, 1.0);
    for k in 0..n {
        out[k] = (1.0 - t) * values[i * n + k] + t * values[(i + 1) * n + k];
    }
}

/// Solves on the guess mesh, then refines until every interval residual
/// indicator is at most `opts.tol` (when `opts.adapt`).
pub fn solve_bvp<S: BvpSystem>(problem: &BvpProblem<S>, guess: &BvpGuess, opts: &BvpOptions) -> Result<BvpSolution> {
    let n = problem.system.dim();
    let mesh = split_long_intervals(&validate_guess(problem, guess)?, opts.h_max);
    let mut x = vec![0.0; n * mesh.len() + guess.params.len()];
    for (i, &z) in mesh.iter().enumerate() {
        linear_resample(&guess.mesh, &guess.values, n, z, &mut x[i * n..(i + 1) * n]);
    }
    x[n * mesh.len()..].copy_from_slice(&guess.params);
    if mesh.len() > opts.max_nodes {
        return Err(Error::RefinementLimit(opts.max_nodes));
    }
    let disc = Discretization::new(problem, mesh)?;
    let its = newton(&disc, &mut x, opts)?;
    let mut sol = build_solution(&disc, &x, its);
    if !opts.adapt {
        return Ok(sol);
    }
    for _ in 0..64 {
        if sol.residual <= opts.tol {
            return Ok(sol);
        }
        sol = refine_mesh(problem, &sol, opts)?;
    }
    Ok(sol)
}

fn split_long_intervals(mesh: &[f64], h_max: f64) -> Vec<f64> {
    if !h_max.is_finite() {
        return mesh.to_vec();
    }
    let mut out = Vec::with_capacity(mesh.len());
    out.push(mesh[0]);
    for w in mesh.windows(2) {
        let pieces = ((w[1] - w[0]) / h_max).ceil().max(1.0) as usize;
        for k in 1..pieces {
            out.push(w[0] + (w[1] - w[0]) * k as f64 / pieces as f64);
        }
        out.push(w[1]);
    }
    out
}

/// One refinement pass: every interval whose residual indicator exceeds
/// `opts.tol` is split into up to three pieces (more pieces for larger
/// residuals), the previous solution is interpolated onto the new mesh and
/// Newton is rerun. An already converged solution is returned unchanged.
pub fn refine_mesh<S: BvpSystem>(problem: &BvpProblem<S>, sol: &BvpSolution, opts: &BvpOptions) -> Result<BvpSolution> {
    let n = sol.dim;
    let tol = opts.tol;
    if sol.interval_residuals.iter().all(|&r| r <= tol) {
        return Ok(sol.clone());
    }
    let mut mesh = Vec::with_capacity(sol.mesh.len() * 2);
    mesh.push(sol.mesh[0]);
    for (i, &res) in sol.interval_residuals.iter().enumerate() {
        let (z0, z1) = (sol.mesh[i], sol.mesh[i + 1]);
        if res > tol {
            // Indicator scales like h^4; aim for the tolerance in one pass.
            let pieces = ((res / tol).powf(0.25).ceil() as usize).clamp(2, 3);
            for k in 1..pieces {
                mesh.push(z0 + (z1 - z0) * k as f64 / pieces as f64);
            }
        }
        mesh.push(z1);
    }
    if mesh.len() > opts.max_nodes {
        return Err(Error::RefinementLimit(opts.max_nodes));
    }
    let mut x = vec![0.0; n * mesh.len() + sol.params.len()];
    for (i, &z) in mesh.iter().enumerate() {
        sol.curve.eval_into(z, &mut x[i * n..(i + 1) * n]);
    }
    x[n * mesh.len()..].copy_from_slice(&sol.params);
    let disc = Discretization::new(problem, mesh)?;
    let its = newton(&disc, &mut x, opts)?;
    Ok(build_solution(&disc, &x, its))
}
