//! Finite-difference helpers shared by solvers and test oracles.

use nalgebra::{DMatrix, DVector};

/// Central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Derivative with relative step `1e-5`; when the estimates at `h` and `h/2`
/// disagree noticeably the Richardson extrapolant is returned instead.
pub fn derivative(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5 * x.abs().max(1.0);
    let d1 = central_diff(&f, x, h);
    let d2 = central_diff(&f, x, h / 2.0);
    if (d1 - d2).abs() > 1e-9 * d2.abs().max(1e-12) {
        (4.0 * d2 - d1) / 3.0
    } else {
        d2
    }
}

/// Jacobian of `f` at `x` by central differences with absolute step `h`.
/// Column `j` holds `∂f/∂x_j`.
pub fn jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut up = x.clone();
        let mut down = x.clone();
        up[j] += h;
        down[j] -= h;
        cols.push((f(&up) - f(&down)) / (2.0 * h));
    }
    let m = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(m, n, |i, j| cols[j][i])
}
