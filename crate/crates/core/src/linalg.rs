//! Small dense helpers: matrix exponential by uniformization, stationary
//! vectors, Perron roots.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `exp(tau * a)` for a matrix with nonnegative off-diagonal entries.
///
/// Uniformization writes `a = lambda (B - I)` with `B >= 0`, so the series
/// has only nonnegative terms. The argument is scaled until `lambda tau <= 1/2`
/// and the result squared back.
pub fn expm_uniformized(a: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square matrix expected");
    let mut lambda = 0.0f64;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        lambda = lambda.max(-a[(i, i)]).max(off);
    }
    if lambda == 0.0 || tau == 0.0 {
        let mut out = DMatrix::identity(n, n);
        for i in 0..n {
            out[(i, i)] = (tau * a[(i, i)]).exp();
        }
        return out;
    }
    let mut s = 0u32;
    let mut h = tau;
    while lambda * h > 0.5 {
        h *= 0.5;
        s += 1;
    }
    let x = lambda * h;
    let b = DMatrix::identity(n, n) + a / lambda;
    let bnorm = (0..n)
        .map(|i| (0..n).map(|j| b[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    let mut coef = 1.0;
    let mut j = 1.0;
    loop {
        term = &term * &b;
        coef *= x / j;
        sum += &term * coef;
        if coef * bnorm.powf(j) < 1e-18 || j > 200.0 {
            break;
        }
        j += 1.0;
    }
    let mut out = sum * (-x).exp();
    for _ in 0..s {
        out = &out * &out;
    }
    out
}

/// Solves `pi a = 0`, `sum pi = 1` with one equation replaced by the
/// normalization. `a` is a generator or `P - I`.
pub fn left_null_vector(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    let mut m = a.transpose();
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular system for the stationary vector".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("stationary vector is not finite".into()));
    }
    Ok(sol.iter().copied().collect())
}

/// Stationary row vector of a stochastic matrix.
pub fn stationary_of_stochastic(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    left_null_vector(&(p - DMatrix::identity(n, n)))
}

/// Spectral radius of an entrywise positive matrix.
///
/// Power iteration; stops when the Collatz-Wielandt bounds
/// `min_i (Mv)_i / v_i <= rho <= max_i (Mv)_i / v_i` agree to `1e-15`.
pub fn perron_root(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    if m.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Numerical("Perron root needs a finite nonnegative matrix".into()));
    }
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..100_000 {
        let w = m * &v;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..n {
            let ratio = w[i] / v[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if !(lo > 0.0) {
            return Err(Error::Numerical("matrix is not positive".into()));
        }
        if hi - lo <= 1e-15 * hi {
            return Ok(0.5 * (hi + lo));
        }
        let s = w.sum();
        v = w / s;
    }
    Err(Error::Numerical("power iteration did not converge".into()))
}
