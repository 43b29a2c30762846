//! Scalar root finding on a bracket.

use crate::error::{Error, Result};

const MAX_ITER: usize = 200;

/// Plain bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoConvergence(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 || (hi - lo) <= tol || mid == lo || mid == hi {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence(format!("bisection on [{lo}, {hi}]")))
}

/// Newton iteration kept inside a sign-change bracket, falling back to
/// bisection whenever a step leaves the bracket or stalls.
///
/// `fdf` returns the value and the derivative. Stops once `|f| <= abs_tol`
/// or the bracket collapses to machine width.
pub fn newton_bracketed<F: Fn(f64) -> (f64, f64)>(
    fdf: F,
    mut lo: f64,
    mut hi: f64,
    abs_tol: f64,
) -> Result<f64> {
    let (f_lo, _) = fdf(lo);
    let (f_hi, _) = fdf(hi);
    if f_lo.abs() <= abs_tol {
        return Ok(lo);
    }
    if f_hi.abs() <= abs_tol {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoConvergence(format!("no sign change on [{lo}, {hi}]")));
    }
    let lo_negative = f_lo < 0.0;
    let mut x = 0.5 * (lo + hi);
    let mut last_width = hi - lo;
    for _ in 0..MAX_ITER {
        let (fx, dfx) = fdf(x);
        if !fx.is_finite() {
            return Err(Error::NoConvergence(format!("non-finite value at {x}")));
        }
        if fx.abs() <= abs_tol {
            // One more Newton step is nearly free and takes the root to
            // full precision when the iteration is already quadratic.
            let polished = x - fx / dfx;
            if dfx.is_finite() && dfx != 0.0 && polished >= lo && polished <= hi {
                let (fp, _) = fdf(polished);
                if fp.abs() <= fx.abs() {
                    return Ok(polished);
                }
            }
            return Ok(x);
        }
        if (fx < 0.0) == lo_negative {
            lo = x;
        } else {
            hi = x;
        }
        let width = hi - lo;
        if width <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            return Ok(x);
        }
        let newton = x - fx / dfx;
        let use_newton = dfx.is_finite() && dfx != 0.0 && newton > lo && newton < hi && width < 0.75 * last_width + f64::EPSILON;
        x = if use_newton { newton } else { 0.5 * (lo + hi) };
        last_width = width;
    }
    let (fx, _) = fdf(x);
    if fx.abs() <= 1e3 * abs_tol {
        return Ok(x);
    }
    Err(Error::NoConvergence(format!(
        "residual {fx:e} after {MAX_ITER} iterations near {x}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_roots() {
        // 2q² + 5q + 3 = 0 has roots -1 and -3/2.
        let r = newton_bracketed(|q| (2.0 * q * q + 5.0 * q + 3.0, 4.0 * q + 5.0), -1.25, 10.0, 1e-14)
            .unwrap();
        assert!((r + 1.0).abs() < 1e-13);
        let r = bisect(|q| 2.0 * q * q + 5.0 * q + 3.0, -1.25, 10.0, 1e-14).unwrap();
        assert!((r + 1.0).abs() < 1e-13);
    }

    #[test]
    fn survives_bad_derivatives() {
        let r = newton_bracketed(|x: f64| (x.cbrt(), 0.0), -1.0, 2.0, 1e-12).unwrap();
        assert!(r.abs() < 1e-30);
    }

    #[test]
    fn reports_missing_bracket() {
        assert!(newton_bracketed(|x| (x * x + 1.0, 2.0 * x), -1.0, 1.0, 1e-12).is_err());
    }
}
