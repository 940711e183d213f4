//! Piecewise cubic Hermite interpolation of vector-valued samples.

use alloc::vec::Vec;

/// Index `i` with `xs[i] <= x < xs[i + 1]`, clamped to the valid intervals.
pub fn locate(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    if n < 2 || x <= xs[0] {
        return 0;
    }
    if x >= xs[n - 1] {
        return n - 2;
    }
    match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap_or(core::cmp::Ordering::Less)) {
        Ok(i) => i.min(n - 2),
        Err(i) => i - 1,
    }
}

/// Hermite basis weights `(h00, h10, h01, h11)` at `s` in `[0, 1]` with the
/// derivative weights already multiplied by the interval length `h`.
#[inline]
pub fn hermite_weights(s: f64, h: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        (s3 - 2.0 * s2 + s) * h,
        -2.0 * s3 + 3.0 * s2,
        (s3 - s2) * h,
    )
}

/// Derivatives of the Hermite basis with respect to the abscissa.
#[inline]
pub fn hermite_derivative_weights(s: f64, h: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    (
        (6.0 * s2 - 6.0 * s) / h,
        3.0 * s2 - 4.0 * s + 1.0,
        (-6.0 * s2 + 6.0 * s) / h,
        3.0 * s2 - 2.0 * s,
    )
}

/// C1 piecewise cubic through values and slopes at strictly increasing knots.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteCurve {
    knots: Vec<f64>,
    dim: usize,
    /// Node-major values, `knots.len() * dim`.
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl HermiteCurve {
    pub fn new(knots: Vec<f64>, dim: usize, values: Vec<f64>, slopes: Vec<f64>) -> Self {
        assert!(knots.len() >= 2);
        assert_eq!(values.len(), knots.len() * dim);
        assert_eq!(slopes.len(), knots.len() * dim);
        Self {
            knots,
            dim,
            values,
            slopes,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value_at_knot(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn slope_at_knot(&self, i: usize) -> &[f64] {
        &self.slopes[i * self.dim..(i + 1) * self.dim]
    }

    /// Evaluates all components at `x` (clamped to the knot range).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let i = locate(&self.knots, x);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let h = x1 - x0;
        let s = ((x - x0) / h).clamp(0.0, 1.0);
        let (a, b, c, d) = hermite_weights(s, h);
        let n = self.dim;
        for k in 0..n {
            out[k] = a * self.values[i * n + k]
                + b * self.slopes[i * n + k]
                + c * self.values[(i + 1) * n + k]
                + d * self.slopes[(i + 1) * n + k];
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    /// Single component `k` at `x`.
    pub fn component(&self, x: f64, k: usize) -> f64 {
        let i = locate(&self.knots, x);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let h = x1 - x0;
        let s = ((x - x0) / h).clamp(0.0, 1.0);
        let (a, b, c, d) = hermite_weights(s, h);
        let n = self.dim;
        a * self.values[i * n + k]
            + b * self.slopes[i * n + k]
            + c * self.values[(i + 1) * n + k]
            + d * self.slopes[(i + 1) * n + k]
    }

    /// Derivative of component `k` at `x`.
    pub fn component_derivative(&self, x: f64, k: usize) -> f64 {
        let i = locate(&self.knots, x);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let h = x1 - x0;
        let s = ((x - x0) / h).clamp(0.0, 1.0);
        let (a, b, c, d) = hermite_derivative_weights(s, h);
        let n = self.dim;
        a * self.values[i * n + k]
            + b * self.slopes[i * n + k]
            + c * self.values[(i + 1) * n + k]
            + d * self.slopes[(i + 1) * n + k]
    }
}
