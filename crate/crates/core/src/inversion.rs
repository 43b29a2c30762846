//! Numerical inverse Laplace transforms.

use num_complex::Complex64;

use crate::numerics::NeumaierSum;

/// Default number of contour nodes for [`talbot`].
pub const TALBOT_NODES: usize = 32;
/// Default number of terms for [`stehfest`].
pub const STEHFEST_TERMS: usize = 14;

/// Fixed-Talbot inversion of `f` at `t > 0` with `m` nodes.
///
/// All singularities of `f` must lie in the left half-plane.
pub fn talbot<F: FnMut(Complex64) -> Complex64>(mut f: F, t: f64, m: usize) -> f64 {
    let mf = m as f64;
    let r = 2.0 * mf / (5.0 * t);
    let mut acc = NeumaierSum::new();
    acc.add(0.5 * (f(Complex64::new(r, 0.0)) * (r * t).exp()).re);
    for k in 1..m {
        let theta = k as f64 * std::f64::consts::PI / mf;
        let cot = theta.cos() / theta.sin();
        let s = Complex64::new(r * theta * cot, r * theta);
        let sigma = theta + (theta * cot - 1.0) * cot;
        let term = (s * t).exp() * f(s) * Complex64::new(1.0, sigma);
        acc.add(term.re);
    }
    r / mf * acc.value()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Gaver–Stehfest weights for an even number of terms.
pub fn stehfest_weights(n: usize) -> Vec<f64> {
    assert!(n.is_multiple_of(2), "Stehfest needs an even number of terms");
    let half = n / 2;
    (1..=n)
        .map(|k| {
            let mut acc = NeumaierSum::new();
            for j in k.div_ceil(2)..=k.min(half) {
                acc.add(
                    (j as f64).powi(half as i32) * factorial(2 * j)
                        / (factorial(half - j) * factorial(j) * factorial(j - 1) * factorial(k - j) * factorial(2 * j - k)),
                );
            }
            let sign = if (k + half).is_multiple_of(2) { 1.0 } else { -1.0 };
            sign * acc.value()
        })
        .collect()
}

/// Gaver–Stehfest inversion of `f` at `t > 0` from real samples.
pub fn stehfest<F: FnMut(f64) -> f64>(mut f: F, t: f64, n: usize) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    let mut acc = NeumaierSum::new();
    for (k, v) in stehfest_weights(n).into_iter().enumerate() {
        acc.add(v * f((k + 1) as f64 * ln2 / t));
    }
    ln2 / t * acc.value()
}
