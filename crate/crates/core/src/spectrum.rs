//! Point spectrum of the linearization `p'' + f_u(u*(z), H(z)) p = lambda p`
//! about a steady state, and spectral data of the semidiscrete Jacobian.
//!
//! Eigenvalues are located with the Prufer angle `tan(theta) = p'/p`, which
//! obeys `theta' = (lambda - f_u) cos^2 theta - sin^2 theta`. Started on the
//! solution decaying at `-Z` (angle `atan(mu)`, `mu = sqrt(lambda + beta^2)`),
//! the angle turns clockwise once per zero of `p`; an eigenvalue with `k`
//! zeros ends at `-atan(mu) - k pi`. So with
//!
//! ```text
//! g(lambda) = (theta(-Z) - theta(Z) - 2 atan(mu)) / pi
//! ```
//!
//! eigenvalue `k` solves `g = k`, and `g` decreases in `lambda`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{dot, eigenvalues, norm2, BlockTriangular, DenseMatrix, Eigenvalue, SymTridiagonal};
use crate::model::{habitat_value, reaction_du};
use crate::ode::{dopri5, StepControl};
use crate::pulses::{PulseKind, PulseProfile};

/// Offset of the starting angle from the endpoint equilibrium.
pub const ANGLE_OFFSET: f64 = 1e-8;
/// Gap between the essential spectrum edge and the bottom of the scan window.
pub const WINDOW_GAP: f64 = 1e-4;
pub const DEFAULT_SCAN_POINTS: usize = 400;
pub const DEFAULT_WINDOW_TOP: f64 = 0.5;
/// Uniform grid size of the finite-difference oracle.
pub const ORACLE_GRID: usize = 6001;
/// Largest allowed disagreement between the angle scan and the oracle.
pub const ORACLE_AGREEMENT: f64 = 1e-3;
const ROOT_TOL: f64 = 1e-9;
/// Real part above which an eigenvalue of the semidiscrete Jacobian counts
/// as unstable.
pub const UNSTABLE_THRESHOLD: f64 = 1e-10;

fn angle_control() -> StepControl {
    StepControl {
        atol: 1e-10,
        rtol: 1e-10,
        h_max: 1.0,
        ..StepControl::default()
    }
}

fn check_lambda(lambda: f64, pulse: &PulseProfile) -> Result<f64> {
    let edge = pulse.params.essential_spectrum_edge();
    if !(lambda > edge) || !lambda.is_finite() {
        return Err(Error::Domain(alloc::format!(
            "lambda = {lambda} is not right of the essential spectrum edge {edge}"
        )));
    }
    Ok((lambda - edge).sqrt())
}

fn integrate_angle(lambda: f64, pulse: &PulseProfile, mut observe: impl FnMut(f64, f64)) -> Result<(f64, f64)> {
    let mu = check_lambda(lambda, pulse)?;
    let p = pulse.params;
    let theta0 = mu.atan() + ANGLE_OFFSET;
    let rhs = |z: f64, y: &[f64], dy: &mut [f64]| {
        let fu = reaction_du(pulse.value(z), habitat_value(z, p.width), &p);
        let (s, c) = y[0].sin_cos();
        dy[0] = (lambda - fu) * c * c - s * s;
    };
    let (end, _) = dopri5(rhs, -p.truncation, &[theta0], p.truncation, &angle_control(), |z, y| observe(z, y[0]))?;
    Ok((theta0 - end[0], mu))
}

/// Total clockwise rotation `theta(-Z) - theta(Z)` of the Prufer angle.
pub fn angle_rotation(lambda: f64, pulse: &PulseProfile) -> Result<f64> {
    integrate_angle(lambda, pulse, |_, _| {}).map(|r| r.0)
}

/// Eigenvalue counting function `g`; eigenvalue `k` solves `g = k`.
pub fn counting_function(lambda: f64, pulse: &PulseProfile) -> Result<f64> {
    let (rot, mu) = integrate_angle(lambda, pulse, |_, _| {})?;
    Ok((rot - 2.0 * mu.atan()) / core::f64::consts::PI)
}

/// Number of eigenvalues strictly above `lambda` implied by `g(lambda)`.
pub fn count_above(g: f64) -> usize {
    if g < 0.0 {
        0
    } else {
        g.floor() as usize + 1
    }
}

/// Accepted `(z, s, theta)` points of the angle trajectory, `s = tanh z`
/// being the compactified coordinate.
pub fn angle_trajectory(lambda: f64, pulse: &PulseProfile) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    integrate_angle(lambda, pulse, |z, th| out.push([z, z.tanh(), th]))?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEigenvalue {
    pub lambda_spec: f64,
    /// Number of zeros of the eigenfunction; 0 for the largest eigenvalue.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HypothesisVerdicts {
    /// Extinction state: no point spectrum right of the edge.
    pub h2: Option<bool>,
    /// Edge pulse: exactly one positive eigenvalue.
    pub h3: Option<bool>,
    /// Base pulse: spectrum strictly negative.
    pub h4: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub kind: PulseKind,
    pub essential_edge: f64,
    /// Descending.
    pub eigenvalues: Vec<PointEigenvalue>,
    pub verdicts: HypothesisVerdicts,
    pub window: (f64, f64),
    pub n_scan: usize,
    /// `(lambda, rotation)` on the scan grid.
    pub scan: Vec<(f64, f64)>,
    /// Eigenvalue count above the bottom of the window from the rotation.
    pub count_from_rotation: usize,
    /// Finite-difference eigenvalues in the window, descending.
    pub oracle: Vec<f64>,
}

/// Default scan window `(-beta^2 + 1e-4, 0.5]`.
pub fn default_window(pulse: &PulseProfile) -> (f64, f64) {
    (pulse.params.essential_spectrum_edge() + WINDOW_GAP, DEFAULT_WINDOW_TOP)
}

/// Scans `g` over `window`, brackets every crossing of an integer and refines
/// it by bisection; the result is cross-checked against [`dense_oracle`].
pub fn find_eigenvalues(pulse: &PulseProfile, window: (f64, f64), n_scan: usize) -> Result<SpectrumReport> {
    let (lo, hi) = window;
    let edge = pulse.params.essential_spectrum_edge();
    if !(lo > edge) || !(hi > lo) {
        return Err(Error::Domain(alloc::format!("invalid window ({lo}, {hi}]")));
    }
    if n_scan < 2 {
        return Err(Error::Precondition("the scan needs at least 2 points".into()));
    }
    let pi = core::f64::consts::PI;
    let grid: Vec<f64> = (0..n_scan).map(|i| lo + (hi - lo) * i as f64 / (n_scan - 1) as f64).collect();
    let mut scan = Vec::with_capacity(n_scan);
    let mut g = Vec::with_capacity(n_scan);
    for &lambda in &grid {
        let (rot, mu) = integrate_angle(lambda, pulse, |_, _| {})?;
        scan.push((lambda, rot));
        g.push((rot - 2.0 * mu.atan()) / pi);
    }

    let mut found: Vec<PointEigenvalue> = Vec::new();
    for i in 0..n_scan - 1 {
        let (ga, gb) = (g[i], g[i + 1]);
        let (gmin, gmax) = (ga.min(gb), ga.max(gb));
        // Integers k in (gmin, gmax] are crossed on this subinterval.
        let k_lo = (gmin.floor() + 1.0).max(0.0) as i64;
        let k_hi = gmax.floor() as i64;
        for k in k_lo..=k_hi {
            let target = k as f64;
            let (mut a, mut b) = (grid[i], grid[i + 1]);
            let a_above = ga > target;
            while b - a > ROOT_TOL {
                let mid = 0.5 * (a + b);
                if (counting_function(mid, pulse)? > target) == a_above {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            if !found.iter().any(|e| e.index == k as usize) {
                found.push(PointEigenvalue {
                    lambda_spec: 0.5 * (a + b),
                    index: k as usize,
                });
            }
        }
    }
    found.sort_by(|a, b| b.lambda_spec.partial_cmp(&a.lambda_spec).unwrap());

    let oracle = dense_oracle(pulse, ORACLE_GRID)?
        .into_iter()
        .filter(|&l| l > lo && l <= hi)
        .collect::<Vec<_>>();
    for &l in &oracle {
        if !found.iter().any(|e| (e.lambda_spec - l).abs() <= ORACLE_AGREEMENT) {
            return Err(Error::Inconsistent(l));
        }
    }

    let positive = found.iter().filter(|e| e.lambda_spec > 0.0).count();
    let mut verdicts = HypothesisVerdicts::default();
    match pulse.kind {
        PulseKind::Trivial => verdicts.h2 = Some(found.is_empty()),
        PulseKind::Unstable => verdicts.h3 = Some(positive == 1),
        PulseKind::Stable => verdicts.h4 = Some(found.iter().all(|e| e.lambda_spec < 0.0)),
    }
    Ok(SpectrumReport {
        kind: pulse.kind,
        essential_edge: edge,
        eigenvalues: found,
        verdicts,
        window,
        n_scan,
        scan,
        count_from_rotation: count_above(g[0]),
        oracle,
    })
}

/// Finite-difference check: eigenvalues above `-beta^2 + 1e-4` of the
/// central-difference operator `p'' + f_u p` on a uniform grid of `n_grid`
/// points over `[-Z, Z]` with `p = 0` at both ends. Descending.
pub fn dense_oracle(pulse: &PulseProfile, n_grid: usize) -> Result<Vec<f64>> {
    if n_grid < 500 {
        return Err(Error::Precondition(alloc::format!("oracle grid of {n_grid} < 500 points")));
    }
    let p = pulse.params;
    let zmax = p.truncation;
    let h = 2.0 * zmax / (n_grid - 1) as f64;
    let inner = n_grid - 2;
    let inv_h2 = 1.0 / (h * h);
    let diag = (1..=inner)
        .map(|i| {
            let z = -zmax + h * i as f64;
            -2.0 * inv_h2 + reaction_du(pulse.value(z), habitat_value(z, p.width), &p)
        })
        .collect();
    let t = SymTridiagonal {
        diag,
        off: vec![inv_h2; inner - 1],
    };
    Ok(t.eigenvalues_above(p.essential_spectrum_edge() + WINDOW_GAP, 1e-12))
}

/// Unstable eigenvalue with right and left eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub value: f64,
    /// Unit length, largest-magnitude component positive.
    pub vector: Vec<f64>,
    /// Left eigenvector scaled so that `left . vector = 1`.
    pub left: Vec<f64>,
}

fn normalize_sign(v: &mut [f64]) {
    let n = norm2(v);
    let big = v.iter().fold(0.0f64, |m, &x| if x.abs() > m.abs() { x } else { m });
    let s = if big < 0.0 { -1.0 / n } else { 1.0 / n };
    for x in v.iter_mut() {
        *x *= s;
    }
}

fn inverse_iteration(m: &crate::linalg::BandMatrix, mu: f64) -> Result<Vec<f64>> {
    let shift = mu + 1e-9 * mu.abs().max(1.0);
    let lu = m.factor_shifted(shift)?;
    let n = m.n;
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * (i % 7) as f64).collect();
    for _ in 0..4 {
        lu.solve(&mut x);
        let s = norm2(&x);
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Structure("inverse iteration broke down".into()));
        }
        for v in x.iter_mut() {
            *v /= s;
        }
    }
    Ok(x)
}

/// All eigenvalues of the `A` block (dense shifted QR).
pub fn block_spectrum(j: &BlockTriangular) -> Result<Vec<Eigenvalue>> {
    eigenvalues(&j.a.to_dense())
}

/// The single eigenvalue of `J = [[A, c], [0, d]]` with positive real part
/// and its eigenvectors. `a_spectrum` may supply the eigenvalues of `A`
/// (they do not change with the shift rate at the fixed points).
///
/// The spectrum of `J` is that of `A` together with `d`. When `d` is the
/// unstable one the right vector is `((d - A)^-1 c, 1)` and the left vector
/// `(0, 1)`; otherwise the right vector is `(x, 0)` with `A x = mu x` and
/// the left vector `(w, w.c / (mu - d))` with `A^T w = mu w`.
pub fn unstable_eigenpair(j: &BlockTriangular, a_spectrum: Option<&[Eigenvalue]>) -> Result<Eigenpair> {
    let owned;
    let spec = match a_spectrum {
        Some(s) => s,
        None => {
            owned = block_spectrum(j)?;
            &owned[..]
        }
    };
    if spec.len() != j.a.n {
        return Err(Error::Precondition("block spectrum has the wrong size".into()));
    }
    let unstable: Vec<&Eigenvalue> = spec.iter().filter(|e| e.re > UNSTABLE_THRESHOLD).collect();
    let d_unstable = j.d > UNSTABLE_THRESHOLD;
    let count = unstable.len() + usize::from(d_unstable);
    if count != 1 {
        return Err(Error::Structure(alloc::format!("{count} unstable eigenvalues, expected exactly one")));
    }
    let n = j.a.n;
    let (value, mut right, mut left) = if d_unstable {
        let lu = j.a.factor_shifted(j.d)?;
        let mut x: Vec<f64> = j.c.iter().map(|c| -c).collect();
        lu.solve(&mut x);
        x.push(1.0);
        let mut l = vec![0.0; n];
        l.push(1.0);
        (j.d, x, l)
    } else {
        let e = unstable[0];
        if e.im != 0.0 {
            return Err(Error::Structure("unstable eigenvalue is complex".into()));
        }
        let mu = e.re;
        let mut x = inverse_iteration(&j.a, mu)?;
        x.push(0.0);
        let mut w = inverse_iteration(&j.a.transpose(), mu)?;
        let s = dot(&w, &j.c) / (mu - j.d);
        w.push(s);
        (mu, x, w)
    };
    normalize_sign(&mut right);
    let lv = dot(&left, &right);
    if !(lv.abs() > 1e-12 * norm2(&left)) {
        return Err(Error::Structure("left and right eigenvectors are orthogonal".into()));
    }
    for l in left.iter_mut() {
        *l /= lv;
    }
    Ok(Eigenpair { value, vector: right, left })
}

/// Rank-one spectral projection `v w^T` (or its complement `I - v w^T`).
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub v: Vec<f64>,
    /// Left eigenvector scaled so that `w . v = 1`.
    pub w: Vec<f64>,
    pub complement: bool,
}

impl Projection {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let s = dot(&self.w, x);
        if self.complement {
            x.iter().zip(&self.v).map(|(xi, vi)| xi - s * vi).collect()
        } else {
            self.v.iter().map(|vi| s * vi).collect()
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.v.len();
        let mut m = DenseMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let p = self.v[i] * self.w[k];
                let e = if self.complement { f64::from(u8::from(i == k)) - p } else { p };
                m.set(i, k, e);
            }
        }
        m
    }
}

/// `(P_unstable, P_stable)` for the single unstable direction of `j`.
pub fn rank1_projections(j: &BlockTriangular, a_spectrum: Option<&[Eigenvalue]>) -> Result<(Projection, Projection)> {
    let pair = unstable_eigenpair(j, a_spectrum)?;
    let unstable = Projection {
        v: pair.vector.clone(),
        w: pair.left.clone(),
        complement: false,
    };
    let stable = Projection {
        complement: true,
        ..unstable.clone()
    };
    Ok((unstable, stable))
}

/// Short human-readable summary of a report.
pub fn describe(report: &SpectrumReport) -> String {
    let mut s = alloc::format!("{} pulse: {} point eigenvalue(s)", report.kind.name(), report.eigenvalues.len());
    for e in &report.eigenvalues {
        s.push_str(&alloc::format!(" [{}] {:.6e}", e.index, e.lambda_spec));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::BandMatrix;
    use crate::model::ModelParams;

    #[test]
    fn trivial_state_does_not_rotate() {
        let t = PulseProfile::trivial(ModelParams::default());
        for lambda in [-0.0224, -0.01, 0.1] {
            assert!(angle_rotation(lambda, &t).unwrap().abs() < 1e-6);
        }
        assert!(angle_rotation(-0.0225, &t).is_err());
    }

    #[test]
    fn trivial_oracle_is_empty() {
        let t = PulseProfile::trivial(ModelParams::default());
        assert!(dense_oracle(&t, 1001).unwrap().is_empty());
        assert!(dense_oracle(&t, 100).is_err());
    }

    fn small_block(d: f64) -> BlockTriangular {
        // A = tridiag(1, -2, 1) + diag, with one positive eigenvalue since
        // a single diagonal bump is present.
        let n = 12;
        let mut a = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            let bump = if i == 6 { 2.0 } else { 0.0 };
            a.set(i, i, -2.0 + bump);
            if i > 0 {
                a.set(i, i - 1, 1.0);
            }
            if i + 1 < n {
                a.set(i, i + 1, 1.0);
            }
        }
        let c = (0..n).map(|i| 0.1 * i as f64 - 0.3).collect();
        BlockTriangular { a, c, d }
    }

    fn check_pair(j: &BlockTriangular, pair: &Eigenpair) {
        let jv = j.mul_vec(&pair.vector);
        for (a, b) in jv.iter().zip(&pair.vector) {
            assert!((a - pair.value * b).abs() < 1e-9);
        }
        let dense = j.to_dense();
        let n = j.dim();
        for k in 0..n {
            let lj: f64 = (0..n).map(|i| pair.left[i] * dense.get(i, k)).sum();
            assert!((lj - pair.value * pair.left[k]).abs() < 1e-9);
        }
        assert!((norm2(&pair.vector) - 1.0).abs() < 1e-12);
        let big = pair.vector.iter().fold(0.0f64, |m, &x| if x.abs() > m.abs() { x } else { m });
        assert!(big > 0.0);
    }

    #[test]
    fn eigenpair_from_block_or_corner() {
        let j = small_block(-0.5);
        let pair = unstable_eigenpair(&j, None).unwrap();
        assert!(pair.value > 0.0);
        assert_eq!(pair.vector[12], 0.0);
        check_pair(&j, &pair);

        let mut j = small_block(1.5);
        for i in 0..12 {
            let v = j.a.get(i, i);
            j.a.set(i, i, v - 1.0);
        }
        let pair = unstable_eigenpair(&j, None).unwrap();
        assert_eq!(pair.value, 1.5);
        check_pair(&j, &pair);
    }

    #[test]
    fn two_unstable_directions_rejected() {
        assert!(matches!(unstable_eigenpair(&small_block(0.7), None), Err(Error::Structure(_))));
    }

    #[test]
    fn projections_are_idempotent_and_complementary() {
        let j = small_block(-0.5);
        let (pu, ps) = rank1_projections(&j, None).unwrap();
        let (u, s) = (pu.to_dense(), ps.to_dense());
        assert!(u.matmul(&u).max_abs_diff(&u) < 1e-10);
        assert!(s.matmul(&s).max_abs_diff(&s) < 1e-10);
        let v = pu.v.clone();
        let uv = pu.apply(&v);
        let sv = ps.apply(&v);
        for k in 0..v.len() {
            assert!((uv[k] - v[k]).abs() < 1e-10);
            assert!(sv[k].abs() < 1e-10);
        }
    }
}
