//! Closed-form power/log integrals used by the kernel moments.

use num_complex::Complex64;

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * f64::from(i))
}

/// `∫₀¹ t^k e^{z t} dt` for complex `z`.
///
/// Power series near the origin, upward recurrence elsewhere (stable once
/// `|z| > k`).
pub fn exp_moment(z: Complex64, k: u32) -> Complex64 {
    if z.norm() <= 2.0 + f64::from(k) {
        let mut term = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for n in 0..80u32 {
            let contrib = term / f64::from(n + k + 1);
            acc += contrib;
            if contrib.norm() <= 1e-18 * acc.norm() {
                break;
            }
            term = term * z / f64::from(n + 1);
        }
        acc
    } else {
        let ez = z.exp();
        let mut value = (ez - 1.0) / z;
        for j in 1..=k {
            value = (ez - value * f64::from(j)) / z;
        }
        value
    }
}

/// `∫_a^b s^{u-1} (ln s)^k ds` for `0 < a < b` and complex exponent `u`.
///
/// Substituting `s = a e^{L t}`, `L = ln(b/a)`, keeps the integral well
/// conditioned when `u` is close to zero.
pub fn power_integral(a: f64, b: f64, u: Complex64, k: u32) -> Complex64 {
    debug_assert!(0.0 < a && a < b);
    let ln_a = a.ln();
    let l = (b / a).ln();
    let scale = (u * ln_a).exp() * l;
    let z = u * l;
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..=k {
        let coeff = binomial(k, j) * ln_a.powi((k - j) as i32) * l.powi(j as i32);
        acc += exp_moment(z, j) * coeff;
    }
    scale * acc
}

/// `∫_0^b s^{u-1} (ln s)^k ds`, requiring `Re u > 0`.
pub fn power_integral_from_zero(b: f64, u: Complex64, k: u32) -> Complex64 {
    debug_assert!(u.re > 0.0);
    let ln_b = b.ln();
    let scale = (u * ln_b).exp();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut inv_u_pow = u.inv();
    for j in 0..=k {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let coeff = binomial(k, j) * ln_b.powi((k - j) as i32) * sign * factorial(j);
        acc += inv_u_pow * coeff;
        inv_u_pow /= u;
    }
    scale * acc
}
