//! Reaction term, habitat profile, shift velocity field and problem parameters.

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};

/// Scalar parameters of the shifting-habitat problem.
///
/// `lambda_r` is the quadratic coefficient of the reaction term; the spectral
/// parameter used by [`crate::spectrum`] is unrelated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    /// Linear decay rate; the extinction state decays like `exp(-beta^2 t)`.
    pub beta: f64,
    pub lambda_r: f64,
    /// Habitat width `L`.
    pub width: f64,
    /// Half displacement `a`; the habitat moves from `-a` to `+a`.
    pub a: f64,
    /// Shift rate `r`.
    pub rate: f64,
    /// Spatial truncation `Z`; the pulse problem lives on `[-Z, Z]`.
    pub truncation: f64,
    pub tol_bvp: f64,
    pub tol_ode: f64,
    pub tol_newton: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::with_beta(0.15)
    }
}

impl ModelParams {
    /// Defaults with `lambda_r = 4 beta`, `L = 25`, `a = 15.65`, `r = 1`, `Z = 150`.
    pub fn with_beta(beta: f64) -> Self {
        Self {
            beta,
            lambda_r: 4.0 * beta,
            width: 25.0,
            a: 15.65,
            rate: 1.0,
            truncation: 150.0,
            tol_bvp: 1e-8,
            tol_ode: 1e-8,
            tol_newton: 1e-10,
        }
    }

    /// Displacement `d = 2a`.
    pub fn displacement(&self) -> f64 {
        2.0 * self.a
    }

    pub fn with_displacement(mut self, d: f64) -> Self {
        self.a = 0.5 * d;
        self
    }

    pub fn with_rate(mut self, r: f64) -> Self {
        self.rate = r;
        self
    }

    /// Checks every scalar invariant.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta", self.beta),
            ("width", self.width),
            ("a", self.a),
            ("rate", self.rate),
            ("truncation", self.truncation),
            ("tol_bvp", self.tol_bvp),
            ("tol_ode", self.tol_ode),
            ("tol_newton", self.tol_newton),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(name, "must be finite and > 0"));
            }
        }
        if !(self.lambda_r.is_finite() && self.lambda_r >= 0.0) {
            return Err(invalid("lambda_r", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Right edge of the essential spectrum of any pulse linearization.
    pub fn essential_spectrum_edge(&self) -> f64 {
        -self.beta * self.beta
    }
}

fn ln_cosh(y: f64) -> f64 {
    let y = y.abs();
    y + (-2.0 * y).exp().ln_1p() - core::f64::consts::LN_2
}

/// Habitat `H(x) = (tanh(x + L/2) - tanh(x - L/2)) / (2 tanh(L/2))`.
///
/// Evaluated as `cosh^2(L/2) / (cosh(x + L/2) cosh(x - L/2))` in log space so
/// the tails stay positive instead of cancelling to zero.
pub fn habitat(x: f64, width: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(invalid("x", "must be finite"));
    }
    if !(width.is_finite() && width > 0.0) {
        return Err(invalid("width", "must be finite and > 0"));
    }
    Ok(habitat_value(x, width))
}

/// Unchecked [`habitat`] for inner loops.
#[inline]
pub fn habitat_value(x: f64, width: f64) -> f64 {
    let half = 0.5 * width;
    let x = x.abs();
    (2.0 * ln_cosh(half) - ln_cosh(x + half) - ln_cosh(x - half)).exp()
}

/// `f(u, h) = -beta^2 u + lambda_r h u^2 - u^3`.
#[inline]
pub fn reaction(u: f64, h: f64, p: &ModelParams) -> f64 {
    u * (-p.beta * p.beta + p.lambda_r * h * u - u * u)
}

/// `df/du = -beta^2 + 2 lambda_r h u - 3 u^2`.
#[inline]
pub fn reaction_du(u: f64, h: f64, p: &ModelParams) -> f64 {
    -p.beta * p.beta + 2.0 * p.lambda_r * h * u - 3.0 * u * u
}

/// A shift velocity field `g` with `g(+-a) = 0`, `g'(+-a) != 0` and `g > 0`
/// on `(-a, a)`.
pub trait ShiftField {
    fn half_displacement(&self) -> f64;
    fn velocity(&self, gamma: f64) -> f64;
    fn velocity_derivative(&self, gamma: f64) -> f64;
}

/// `g(gamma) = a - gamma^2 / a`, whose flow is the ramp `a tanh(r t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticShift {
    pub a: f64,
}

impl ShiftField for QuadraticShift {
    fn half_displacement(&self) -> f64 {
        self.a
    }

    /// Factored so that it vanishes exactly at `gamma = +-a` in floating
    /// point; `a - gamma^2 / a` leaves an ulp there, which the unstable
    /// `gamma` direction at `-a` amplifies like `exp(2 r t)`.
    #[inline]
    fn velocity(&self, gamma: f64) -> f64 {
        (self.a - gamma) * (self.a + gamma) / self.a
    }

    #[inline]
    fn velocity_derivative(&self, gamma: f64) -> f64 {
        -2.0 * gamma / self.a
    }
}

/// `g(gamma) = a - gamma^2 / a`, defined for `|gamma| <= a`.
pub fn shift_velocity(gamma: f64, a: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0) {
        return Err(invalid("a", "must be finite and > 0"));
    }
    if !gamma.is_finite() || gamma.abs() > a {
        return Err(Error::Domain(alloc::format!("|gamma| = {} exceeds a = {}", gamma.abs(), a)));
    }
    Ok(QuadraticShift { a }.velocity(gamma))
}

/// Ramp `gamma(t) = a tanh(r t)`, the solution of `gamma' = r g(gamma)` with
/// `gamma(0) = 0`.
pub fn ramp(t: f64, rate: f64, a: f64) -> f64 {
    a * (rate * t).tanh()
}

/// Inverse of [`ramp`]: the time at which the ramp passes through `gamma`.
pub fn ramp_time(gamma: f64, rate: f64, a: f64) -> Result<f64> {
    if !(gamma.abs() < a) {
        return Err(Error::Domain(alloc::format!("ramp never reaches gamma = {gamma}")));
    }
    Ok((gamma / a).atanh() / rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_params() -> ModelParams {
        ModelParams::default()
    }

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn habitat_normalized_and_even() {
        for width in [0.5, 5.0, 25.0, 80.0] {
            assert!((habitat(0.0, width).unwrap() - 1.0).abs() < 1e-14);
            for x in [0.3, 2.0, 11.0, 40.0, 300.0] {
                let l = habitat(x, width).unwrap();
                let r = habitat(-x, width).unwrap();
                assert_eq!(l, r);
                assert!(l > 0.0 && l <= 1.0);
            }
        }
    }

    #[test]
    fn habitat_half_width() {
        assert!((habitat(12.5, 25.0).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn habitat_matches_tanh_form() {
        let width: f64 = 25.0;
        for x in [-20.0f64, -12.5, -3.0, 0.7, 9.0, 17.0] {
            let direct = ((x + width / 2.0).tanh() - (x - width / 2.0).tanh())
                / (2.0 * (width / 2.0).tanh());
            assert!((habitat_value(x, width) - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn habitat_tail_decays_like_exp_minus_two_x() {
        let width = 25.0;
        let (x0, x1) = (60.0, 90.0);
        let slope = (habitat_value(x1, width).ln() - habitat_value(x0, width).ln()) / (x1 - x0);
        assert!((slope + 2.0).abs() < 1e-9);
    }

    #[test]
    fn habitat_rejects_bad_input() {
        assert!(habitat(f64::NAN, 25.0).is_err());
        assert!(habitat(0.0, 0.0).is_err());
        assert!(habitat(0.0, -1.0).is_err());
    }

    #[test]
    fn reaction_values() {
        let p = ModelParams {
            beta: 0.15,
            lambda_r: 0.6,
            ..paper_params()
        };
        assert_eq!(reaction(0.0, 0.7, &p), 0.0);
        assert!((reaction(0.5, 1.0, &p) - 0.01375).abs() < 1e-15);
        assert!((reaction_du(0.0, 0.3, &p) + 0.0225).abs() < 1e-15);
        assert!((reaction_du(0.5, 1.0, &p) + 0.1725).abs() < 1e-15);
    }

    #[test]
    fn reaction_du_matches_finite_differences() {
        let p = paper_params();
        for i in 0..=20 {
            let u = -0.2 + 0.05 * i as f64;
            for h in [0.0, 0.25, 0.5, 1.0] {
                let fd = central(|u| reaction(u, h, &p), u, 1e-5);
                assert!((fd - reaction_du(u, h, &p)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn allee_region_is_negative() {
        let p = paper_params();
        let u_small = p.beta * p.beta / (2.0 * p.lambda_r);
        for i in 1..=50 {
            let u = u_small * i as f64 / 50.0;
            for j in 1..=10 {
                let h = j as f64 / 10.0;
                assert!(reaction(u, h, &p) < 0.0);
            }
        }
    }

    #[test]
    fn lambda_defaults_to_four_beta() {
        let p = ModelParams::with_beta(0.2);
        assert!((p.lambda_r - 0.8).abs() < 1e-15);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn validation_rejects_nonpositive() {
        let mut p = paper_params();
        p.a = 0.0;
        assert!(p.validate().is_err());
        let mut p = paper_params();
        p.beta = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn shift_velocity_satisfies_h5() {
        let a = 15.65;
        assert_eq!(shift_velocity(a, a).unwrap(), 0.0);
        assert_eq!(shift_velocity(-a, a).unwrap(), 0.0);
        assert_eq!(shift_velocity(0.0, a).unwrap(), a);
        let g = |x: f64| a - x * x / a;
        let left = (g(-a + 1e-6) - g(-a)) / 1e-6;
        assert!((left - 2.0).abs() < 1e-6);
        let right = (g(a) - g(a - 1e-6)) / 1e-6;
        assert!((right + 2.0).abs() < 1e-6);
        for i in 1..200 {
            let gamma = -a + 2.0 * a * i as f64 / 200.0;
            assert!(shift_velocity(gamma, a).unwrap() > 0.0);
        }
        assert!(shift_velocity(a * 1.001, a).is_err());
    }

    #[test]
    fn ramp_solves_shift_ode() {
        let (r, a) = (0.7, 15.65);
        assert_eq!(ramp(0.0, r, a), 0.0);
        assert!((ramp(31.0 / r, r, a) - a).abs() < 1e-12);
        assert!((ramp(-31.0 / r, r, a) + a).abs() < 1e-12);
        for i in -10..=10 {
            let t = 0.4 * i as f64;
            let dgdt = central(|t| ramp(t, r, a), t, 1e-5);
            let rhs = r * shift_velocity(ramp(t, r, a), a).unwrap();
            assert!((dgdt - rhs).abs() < 1e-8);
        }
        let t = ramp_time(ramp(2.5, r, a), r, a).unwrap();
        assert!((t - 2.5).abs() < 1e-10);
    }
}
