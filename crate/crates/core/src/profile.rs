//! The asymptotic profile `ν`: exact tail on `[1, ∞)`, body on `(0, 1)`
//! from closed forms or Laplace inversion, scale functions and constants.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inversion::{stehfest, talbot, STEHFEST_TERMS, TALBOT_NODES};
use crate::kernel::{FragmentationKernel, KernelForm};
use crate::numerics::{integrate, integrate_to_infinity, newton_bracketed};
use crate::spectral::{self, Branch, Family, LaplaceExponent, ModelParams, Regime};

/// Relative disagreement between Talbot and Gaver–Stehfest that flags an
/// inversion as unreliable.
pub const INVERSION_CHECK_TOL: f64 = 1e-5;
/// Largest `y` at which the body table is cross-checked; Stehfest loses
/// accuracy on decaying exponentials beyond it.
const BODY_CHECK_END: f64 = 1.0;
/// Agreement required between inversion and the Cramér asymptote before
/// switching over.
pub const CROSSOVER_TOL: f64 = 5e-3;
const CROSSOVER_WINDOW: f64 = 1.0;
const TABLE_STEP: f64 = 0.25;
const TABLE_END: f64 = 40.0;
const ROOT_NEIGHBOURHOOD: f64 = 1e-4;

fn require_strict(params: &ModelParams, kernel: &FragmentationKernel) -> Result<spectral::RegimeReport> {
    let report = spectral::malthus(params, kernel)?;
    if report.regime != Regime::StrictMalthusian {
        return Err(Error::regime(format!("the profile is normalizable only in the strict regime, found {:?}", report.regime)));
    }
    Ok(report)
}

/// `Ψ(q) / (q - root)` for a real root of `Ψ`, with a Taylor expansion
/// close to the root.
fn divide_root(exp: &LaplaceExponent, q: Complex64, root: f64) -> Result<Complex64> {
    let d = q - root;
    if d.norm() > ROOT_NEIGHBOURHOOD {
        return Ok(exp.psi_complex(q) / d);
    }
    let shift = match exp.family() {
        Family::Xi => 1.0,
        Family::Eta => 0.0,
    };
    let k = exp.kernel();
    let p1 = exp.psi_prime(root)?;
    let p2 = exp.psi_second(root)?;
    let p3 = k.log_moment_at(root + shift, 3)?;
    Ok(d * d * (p3 / 6.0) + d * (p2 / 2.0) + p1)
}

fn transform_complex(params: &ModelParams, kernel: &FragmentationKernel, beta_plus: f64, q: Complex64) -> Result<Complex64> {
    let plus = params.exponent(kernel, Family::Eta, Branch::Plus);
    let minus = params.exponent(kernel, Family::Eta, Branch::Minus);
    if q.norm() > ROOT_NEIGHBOURHOOD && (q - beta_plus).norm() > ROOT_NEIGHBOURHOOD {
        // Far left on the contour a tabulated moment grows without bound:
        // divide after scaling, and once it overflows both exponents are
        // dominated by it so their ratio is 1.
        let (pp, pm) = (plus.psi_complex(q), minus.psi_complex(q));
        let ratio = if pp.is_finite() && pm.is_finite() {
            let scale = pm.norm();
            (pp / scale) / (pm / scale)
        } else {
            Complex64::new(1.0, 0.0)
        };
        return Ok(ratio / (params.a_plus() * (q - beta_plus)));
    }
    let numerator = if q.norm() <= ROOT_NEIGHBOURHOOD {
        divide_root(&plus, q, 0.0)? / (q - beta_plus)
    } else {
        divide_root(&plus, q, beta_plus)? / q
    };
    let denominator = divide_root(&minus, q, 0.0)? * params.a_plus();
    Ok(numerator / denominator)
}

/// Laplace transform `Ψ̃₊(q) / (a₊ Ψ̃₋(q) (q - β₊))` of `m̃`, continued
/// through its removable singularities at `0` and `β₊`.
pub fn mtilde_transform(params: &ModelParams, kernel: &FragmentationKernel, q: f64) -> Result<f64> {
    let report = require_strict(params, kernel)?;
    let beta_plus = report.beta_plus.expect("strict regime has beta_plus");
    if let Some(beta_minus) = report.beta_minus {
        if q <= -beta_minus {
            return Err(Error::domain(format!("transform of m~ needs q > -beta_minus = {}", -beta_minus)));
        }
    }
    let minus = params.exponent(kernel, Family::Eta, Branch::Minus);
    if !minus.domain().contains(q) {
        return Err(Error::domain(format!("q = {q} outside the exponent domain")));
    }
    Ok(transform_complex(params, kernel, beta_plus, Complex64::new(q, 0.0))?.re)
}

/// `m̃(y)` by fixed-Talbot inversion of [`mtilde_transform`].
pub fn mtilde_inverted(params: &ModelParams, kernel: &FragmentationKernel, y: f64) -> Result<f64> {
    let report = require_strict(params, kernel)?;
    invert_mtilde(params, kernel, report.beta_plus.expect("strict regime has beta_plus"), y)
}

fn invert_mtilde(params: &ModelParams, kernel: &FragmentationKernel, beta_plus: f64, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::domain(format!("m~ is evaluated at y > 0, got {y}")));
    }
    let mut failure = None;
    let value = talbot(
        |s| {
            transform_complex(params, kernel, beta_plus, s).unwrap_or_else(|e| {
                failure = Some(e);
                Complex64::new(f64::NAN, 0.0)
            })
        },
        y,
        TALBOT_NODES,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    if !value.is_finite() {
        return Err(Error::Inversion(format!("non-finite inversion of m~ at y = {y}")));
    }
    Ok(value)
}

/// Simple real roots of `Ψ`: `Φ(0)` and, when it exists, the second root.
fn simple_real_roots(exp: &LaplaceExponent) -> Result<Vec<f64>> {
    let inf = exp.infimum()?;
    let mut roots = Vec::with_capacity(2);
    if !inf.attained || inf.value >= 0.0 {
        return Ok(roots);
    }
    roots.push(exp.right_inverse_from(0.0, &inf)?);
    if inf.argmin < 0.0 {
        roots.push(0.0);
    } else {
        let domain = exp.domain();
        let mut lo = if domain.closed { domain.min } else { domain.min + 1e-9 * (inf.argmin - domain.min) };
        if !domain.closed {
            let mut gap = 0.5 * (inf.argmin - domain.min);
            while exp.psi(domain.min + gap)? <= 0.0 && gap > 1e-300 {
                gap *= 0.5;
            }
            lo = domain.min + gap;
        }
        if exp.psi(lo)? > 0.0 {
            roots.push(newton_bracketed(
                |q| (exp.psi(q).unwrap_or(f64::NAN), exp.psi_prime(q).unwrap_or(f64::NAN)),
                lo,
                inf.argmin,
                spectral::ROOT_TOL,
            )?);
        }
    }
    Ok(roots)
}

/// Scale function `W̃` of a spectrally negative exponent, `∫ e^{-qx} W = 1/Ψ`.
///
/// Inverts with fixed Talbot after shifting by `Φ(0)`. The cross-check
/// removes the simple real poles of `1/Ψ` exactly and inverts the remainder
/// with Gaver–Stehfest, which on its own is too inaccurate on decaying
/// exponentials to resolve `1e-5`.
pub fn scale_function(exp: &LaplaceExponent, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Ok(0.0);
    }
    if x == 0.0 {
        return Ok(1.0 / exp.drift());
    }
    let shift = exp.right_inverse(0.0)?.max(0.0);
    let primary = talbot(|s| (exp.psi_complex(s + shift)).inv(), x, TALBOT_NODES);

    let poles: Vec<(f64, f64)> = simple_real_roots(exp)?
        .into_iter()
        .map(|r| Ok((r - shift, 1.0 / exp.psi_prime(r)?)))
        .collect::<Result<_>>()?;
    let explicit: f64 = poles.iter().map(|&(p, res)| res * (p * x).exp()).sum();
    let remainder = stehfest(
        |s| {
            let full = 1.0 / exp.psi_complex(Complex64::new(s + shift, 0.0)).re;
            full - poles.iter().map(|&(p, res)| res / (s - p)).sum::<f64>()
        },
        x,
        STEHFEST_TERMS,
    );
    let check = explicit + remainder;

    let rel = (primary - check).abs() / primary.abs().max(f64::MIN_POSITIVE);
    let growth = (shift * x).exp();
    if !(rel <= INVERSION_CHECK_TOL) {
        return Err(Error::Inversion(format!(
            "Talbot {} and Stehfest {} disagree at x = {x} (relative {rel:.2e})",
            growth * primary,
            growth * check
        )));
    }
    Ok(growth * primary)
}

/// `P_x(τ_a⁺ < τ_0⁻) = W(x) / W(a)` for `0 <= x <= a`.
pub fn two_sided_exit(exp: &LaplaceExponent, x: f64, a: f64) -> Result<f64> {
    if !(0.0 <= x && x <= a) {
        return Err(Error::domain(format!("two-sided exit needs 0 <= x <= a, got x = {x}, a = {a}")));
    }
    if x == a {
        return Ok(1.0);
    }
    Ok(scale_function(exp, x)? / scale_function(exp, a)?)
}

/// `C = -(a₋ - a₊) β₋ / (a₊ Ψ̃₋'(-β₋) (β₋ + β₊))`, the constant of the
/// Cramér asymptote `m̃(y) ~ C e^{-β₋ y}`.
pub fn cramer_constant(params: &ModelParams, kernel: &FragmentationKernel) -> Result<f64> {
    let report = require_strict(params, kernel)?;
    let beta_minus = report.beta_minus.ok_or_else(|| Error::regime("Cramér root does not exist"))?;
    let beta_plus = report.beta_plus.expect("strict regime has beta_plus");
    let slope = params.exponent(kernel, Family::Eta, Branch::Minus).psi_prime(-beta_minus)?;
    Ok(-(params.a_minus() - params.a_plus()) * beta_minus / (params.a_plus() * slope * (beta_minus + beta_plus)))
}

/// `⟨m, 1⟩ = -L'(λ)`.
pub fn total_mass(params: &ModelParams, kernel: &FragmentationKernel) -> Result<f64> {
    Ok(-spectral::l_prime_at_lambda(params, kernel)?)
}

/// `m̃(y)` from the scale function `W̃₋`:
/// `m̃(y) = W̃₋(y) - (1/a₊) ∫₀^y W̃₋(w) e^{β₊(y-w)} ∫₀^{e^{w-y}} s^{β₊} ρ(s) ds dw`.
///
/// A slow independent route used to cross-check the transform inversion.
pub fn mtilde_via_scale_function(params: &ModelParams, kernel: &FragmentationKernel, y: f64) -> Result<f64> {
    let report = require_strict(params, kernel)?;
    let beta_plus = report.beta_plus.expect("strict regime has beta_plus");
    let minus = params.exponent(kernel, Family::Eta, Branch::Minus);
    let mut failure = None;
    let correction = integrate(
        |w| {
            let run = || -> Result<f64> {
                let partial = kernel.partial_log_moment(beta_plus, 0, (w - y).exp())?;
                Ok(scale_function(&minus, w)? * (beta_plus * (y - w)).exp() * partial)
            };
            run().unwrap_or_else(|e| {
                failure = Some(e);
                0.0
            })
        },
        0.0,
        y,
        1e-10,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(scale_function(&minus, y)? - correction / params.a_plus())
}

/// How the body `x < 1` of the profile is represented.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BodyRepr {
    /// `m̃(y) = e^{-β₋ y} / a₋`, exact for monomial kernels.
    ClosedFormMonomial { c3: f64 },
    /// Inverted `m̃` on a uniform `y` grid, continued by `C e^{-β₋ y}` from
    /// `switch_point` on.
    NumericTable { y: Vec<f64>, mtilde: Vec<f64>, switch_point: Option<f64> },
}

/// Which formula produced a density value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileBranch {
    Body,
    Tail,
    Asymptote,
}

impl ProfileBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileBranch::Body => "body",
            ProfileBranch::Tail => "tail",
            ProfileBranch::Asymptote => "asymptote",
        }
    }
}

/// Normalizing constants of the profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileConstants {
    pub lambda: f64,
    pub beta_plus: f64,
    pub beta_minus: Option<f64>,
    pub c1: f64,
    pub c2: Option<f64>,
    pub c3: f64,
    #[serde(rename = "C")]
    pub cramer: Option<f64>,
    pub total_mass: f64,
}

/// The normalized asymptotic profile `ν`.
#[derive(Debug, Clone)]
pub struct ProfileDensity {
    params: ModelParams,
    kernel: FragmentationKernel,
    constants: ProfileConstants,
    body: BodyRepr,
}

impl ProfileDensity {
    /// Assembles `ν`; fails outside the strict Malthusian regime.
    pub fn build(params: &ModelParams, kernel: &FragmentationKernel) -> Result<Self> {
        let report = require_strict(params, kernel)?;
        let beta_plus = report.beta_plus.expect("strict regime has beta_plus");
        let mass = -report.l_prime_at_lambda.expect("strict regime has L'");
        let cramer = match report.beta_minus {
            Some(_) => Some(cramer_constant(params, kernel)?),
            None => None,
        };
        let constants = ProfileConstants {
            lambda: report.lambda_star,
            beta_plus,
            beta_minus: report.beta_minus,
            c1: 1.0 / mass,
            c2: cramer.map(|c| c / mass),
            c3: 1.0 / mass,
            cramer,
            total_mass: mass,
        };
        let body = match kernel.form() {
            KernelForm::Monomial { .. } => BodyRepr::ClosedFormMonomial { c3: constants.c3 },
            KernelForm::Tabulated { .. } => Self::tabulate_body(params, kernel, &constants)?,
        };
        Ok(Self { params: *params, kernel: kernel.clone(), constants, body })
    }

    fn tabulate_body(params: &ModelParams, kernel: &FragmentationKernel, constants: &ProfileConstants) -> Result<BodyRepr> {
        let n = (TABLE_END / TABLE_STEP).round() as usize;
        let y: Vec<f64> = (1..=n).map(|i| i as f64 * TABLE_STEP).collect();
        let mtilde = y
            .iter()
            .map(|&yy| invert_mtilde(params, kernel, constants.beta_plus, yy))
            .collect::<Result<Vec<_>>>()?;
        for (&yy, &m) in y.iter().zip(&mtilde).take_while(|(&yy, _)| yy <= BODY_CHECK_END) {
            let check = stehfest(
                |q| transform_complex(params, kernel, constants.beta_plus, Complex64::new(q, 0.0)).map_or(f64::NAN, |v| v.re),
                yy,
                STEHFEST_TERMS,
            );
            let rel = (m - check).abs() / m.abs().max(f64::MIN_POSITIVE);
            if !(rel <= INVERSION_CHECK_TOL) {
                return Err(Error::Inversion(format!(
                    "Talbot {m} and Stehfest {check} disagree for m~ at y = {yy} (relative {rel:.2e}); the kernel is not smooth enough"
                )));
            }
        }
        let switch_point = match (constants.cramer, constants.beta_minus) {
            (Some(c), Some(b)) => {
                let agrees: Vec<bool> = y
                    .iter()
                    .zip(&mtilde)
                    .map(|(&yy, &m)| (m / (c * (-b * yy).exp()) - 1.0).abs() <= CROSSOVER_TOL)
                    .collect();
                let window = (CROSSOVER_WINDOW / TABLE_STEP).round() as usize;
                (0..agrees.len().saturating_sub(window)).find(|&i| agrees[i..=i + window].iter().all(|&a| a)).map(|i| y[i])
            }
            _ => None,
        };
        Ok(BodyRepr::NumericTable { y, mtilde, switch_point })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn constants(&self) -> &ProfileConstants {
        &self.constants
    }

    pub fn body(&self) -> &BodyRepr {
        &self.body
    }

    /// `ν(x) = (c₁/a₊) x^{-(1+β₊)}` for `x >= 1`.
    pub fn density_tail(&self, x: f64) -> Result<f64> {
        if !(x >= 1.0) {
            return Err(Error::domain(format!("tail density is defined for x >= 1, got {x}")));
        }
        Ok(self.constants.c1 / self.params.a_plus() * x.powf(-(1.0 + self.constants.beta_plus)))
    }

    /// Density of the invariant measure of `η` on the negative half-line,
    /// `m̃(y) = m̄(-y)` for `y > 0`.
    pub fn mtilde(&self, y: f64) -> Result<f64> {
        Ok(self.mtilde_with_branch(y)?.0)
    }

    fn mtilde_with_branch(&self, y: f64) -> Result<(f64, ProfileBranch)> {
        if !(y > 0.0) {
            return Err(Error::domain(format!("m~ is evaluated at y > 0, got {y}")));
        }
        match &self.body {
            BodyRepr::ClosedFormMonomial { .. } => {
                let b = self.constants.beta_minus.expect("monomial kernels satisfy Cramér's condition");
                Ok(((-b * y).exp() / self.params.a_minus(), ProfileBranch::Body))
            }
            BodyRepr::NumericTable { switch_point, .. } => match (switch_point, self.constants.cramer, self.constants.beta_minus) {
                (Some(s), Some(c), Some(b)) if y >= *s => Ok((c * (-b * y).exp(), ProfileBranch::Asymptote)),
                _ if y <= TABLE_END => Ok((invert_mtilde(&self.params, &self.kernel, self.constants.beta_plus, y)?, ProfileBranch::Body)),
                _ => Err(Error::regime(format!("no Cramér asymptote available beyond y = {TABLE_END}"))),
            },
        }
    }

    /// Normalized density `ν(x)`; `x = 1` belongs to the tail.
    pub fn nu(&self, x: f64) -> Result<f64> {
        Ok(self.nu_with_branch(x)?.0)
    }

    pub fn nu_with_branch(&self, x: f64) -> Result<(f64, ProfileBranch)> {
        if !(x > 0.0) {
            return Err(Error::domain(format!("nu is defined for x > 0, got {x}")));
        }
        if x >= 1.0 {
            return Ok((self.density_tail(x)?, ProfileBranch::Tail));
        }
        let (m, branch) = self.mtilde_with_branch(-x.ln())?;
        Ok((m / (x * self.constants.total_mass), branch))
    }

    /// `ν((0, x])`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        let c = &self.constants;
        if x >= 1.0 {
            return Ok(1.0 - c.c1 / (self.params.a_plus() * c.beta_plus) * x.powf(-c.beta_plus));
        }
        let y = -x.ln();
        let below = match &self.body {
            BodyRepr::ClosedFormMonomial { .. } => {
                let b = c.beta_minus.expect("monomial kernels satisfy Cramér's condition");
                (-b * y).exp() / (self.params.a_minus() * b)
            }
            BodyRepr::NumericTable { .. } => self.mtilde_integral_from(y)?,
        };
        Ok(below / c.total_mass)
    }

    fn mtilde_integral_from(&self, y: f64) -> Result<f64> {
        let mut failure = None;
        let v = integrate_to_infinity(
            |t| {
                self.mtilde(t).unwrap_or_else(|e| {
                    failure = Some(e);
                    0.0
                })
            },
            y,
            1e-9,
        )?;
        match failure {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    /// `∫ ν` by adaptive quadrature: the body in `y = -ln x`, the tail on
    /// `[1, x_max]`, and the analytic remainder beyond `x_max`.
    pub fn total_integral(&self, x_max: f64) -> Result<f64> {
        let mut failure = None;
        let body = integrate_to_infinity(
            |y| {
                self.mtilde(y).unwrap_or_else(|e| {
                    failure = Some(e);
                    0.0
                })
            },
            0.0,
            1e-12,
        )? / self.constants.total_mass;
        if let Some(e) = failure {
            return Err(e);
        }
        let tail = integrate(|x| self.density_tail(x).unwrap_or(f64::NAN), 1.0, x_max, 1e-12)?;
        let c = &self.constants;
        let remainder = c.c1 / (self.params.a_plus() * c.beta_plus) * x_max.powf(-c.beta_plus);
        Ok(body + tail + remainder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical() -> (ModelParams, FragmentationKernel) {
        (ModelParams::new(2.0, 0.5).unwrap(), FragmentationKernel::monomial(1.0).unwrap())
    }

    #[test]
    fn scale_function_examples() {
        let (p, k) = canonical();
        let minus = p.exponent(&k, Family::Eta, Branch::Minus);
        assert_eq!(scale_function(&minus, 0.0).unwrap(), 0.5);
        assert_eq!(scale_function(&minus, -1.0).unwrap(), 0.0);
        // Partial fractions of (q+1)/(q(2q+1)).
        for x in [0.01f64, 0.3, 1.0, 4.0, 15.0] {
            let want = 1.0 - (-0.5 * x).exp() / 2.0;
            assert!((scale_function(&minus, x).unwrap() - want).abs() < 1e-10, "x={x}");
        }
        let w1 = scale_function(&minus, 1.0).unwrap();
        assert!((w1 - 0.69673).abs() < 1e-5);
        assert!((two_sided_exit(&minus, 0.0, 1.0).unwrap() - 0.5 / w1).abs() < 1e-15);
        assert!((two_sided_exit(&minus, 0.0, 1.0).unwrap() - 0.71765).abs() < 5e-5);
        assert_eq!(two_sided_exit(&minus, 1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn growing_scale_function_matches_its_transform() {
        // Ψ̃₊ has Φ̃₊(0) = β₊ = 1, so W̃₊ grows like e^{x}; check the transform
        // of the inverted function by quadrature at a few abscissas.
        let (p, k) = canonical();
        let plus = p.exponent(&k, Family::Eta, Branch::Plus);
        let xs: Vec<f64> = (0..=1200).map(|i| i as f64 * 0.025).collect();
        let ws: Vec<f64> = xs.iter().map(|&x| scale_function(&plus, x).unwrap()).collect();
        for i in 1..xs.len() {
            assert!(ws[i] >= ws[i - 1]);
        }
        for q in [1.5, 2.0, 3.0, 5.0, 8.0] {
            let num = integrate(|x| (-q * x).exp() * scale_function(&plus, x).unwrap(), 0.0, 30.0, 1e-10).unwrap();
            let want = 1.0 / plus.psi(q).unwrap();
            assert!((num - want).abs() < 1e-4 * want, "q={q}");
        }
    }

    #[test]
    fn transform_examples() {
        let (p, k) = canonical();
        for q in [-0.4, -1e-9, 0.0, 1e-7, 0.3, 1.0, 1.0 + 1e-6, 7.0] {
            let got = mtilde_transform(&p, &k, q).unwrap();
            let want = 1.0 / (2.0 * (q + 0.5));
            assert!((got - want).abs() < 1e-11 * want, "q={q}: {got} vs {want}");
        }
        assert!((mtilde_transform(&p, &k, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        let q = 1e6;
        assert!((q * mtilde_transform(&p, &k, q).unwrap() - 0.5).abs() < 1e-6);
        assert!(matches!(mtilde_transform(&p, &k, -0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn inversion_matches_closed_form() {
        let (p, k) = canonical();
        for y in [0.01f64, 0.5, 2.0, 6.0, 10.0] {
            let want = (-0.5 * y).exp() / 2.0;
            let got = mtilde_inverted(&p, &k, y).unwrap();
            assert!((got - want).abs() < 1e-8, "y={y}");
        }
        assert!((mtilde_inverted(&p, &k, 2.0).unwrap() - 0.18394).abs() < 1e-5);
    }

    #[test]
    fn scale_function_route_matches_closed_form() {
        let (p, k) = canonical();
        for y in [0.5f64, 2.0] {
            let want = (-0.5 * y).exp() / 2.0;
            assert!((mtilde_via_scale_function(&p, &k, y).unwrap() - want).abs() < 1e-8);
        }
        let p2 = ModelParams::new(1.0, 0.2).unwrap();
        let k2 = FragmentationKernel::monomial(2.0).unwrap();
        let a = mtilde_via_scale_function(&p2, &k2, 1.5).unwrap();
        let b = mtilde_inverted(&p2, &k2, 1.5).unwrap();
        assert!((a - b).abs() < 1e-7 * b);
    }

    #[test]
    fn constants_for_canonical_model() {
        let (p, k) = canonical();
        assert!((cramer_constant(&p, &k).unwrap() - 0.5).abs() < 1e-12);
        assert!((total_mass(&p, &k).unwrap() - 3.0).abs() < 1e-10);
        let prof = ProfileDensity::build(&p, &k).unwrap();
        let c = prof.constants();
        assert!((c.c1 - 1.0 / 3.0).abs() < 1e-10 && (c.c3 - c.c1).abs() == 0.0);
        assert!((c.c2.unwrap() - 0.5 / 3.0).abs() < 1e-10);
        assert!((prof.density_tail(1.0).unwrap() - 2.0 / 3.0).abs() < 1e-10);
        assert!((prof.density_tail(2.0).unwrap() - 1.0 / 6.0).abs() < 1e-10);
        assert!((prof.nu(0.25).unwrap() - 1.0 / 3.0).abs() < 1e-10);
        let (v, b) = prof.nu_with_branch(1.0).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-10 && b == ProfileBranch::Tail);
        assert!((prof.mtilde(1e-12).unwrap() * 2.0 - 1.0).abs() < 1e-10);
        assert!((prof.total_integral(1e3).unwrap() - 1.0).abs() < 1e-9);
        assert!((prof.cdf(1.0 - 1e-12).unwrap() - prof.cdf(1.0).unwrap()).abs() < 1e-9);
        assert!((prof.cdf(1.0).unwrap() - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn uniform_kernel_normalization() {
        let k = FragmentationKernel::monomial(1.0).unwrap();
        for (a_minus, a_plus) in [(2.0, 0.5), (1.5, 0.25), (4.0, 0.9)] {
            let p = ModelParams::new(a_minus, a_plus).unwrap();
            let prof = ProfileDensity::build(&p, &k).unwrap();
            let want = 1.0 / (1.0 / (a_minus - 1.0) + 1.0 / (1.0 - a_plus));
            assert!((prof.constants().c3 - want).abs() < 1e-10);
        }
    }

    #[test]
    fn refuses_outside_strict_regime() {
        let k = FragmentationKernel::monomial(1.0).unwrap();
        let p = ModelParams::new(0.9, 0.5).unwrap();
        assert!(matches!(ProfileDensity::build(&p, &k), Err(Error::Regime(_))));
        assert!(matches!(total_mass(&p, &k), Err(Error::Regime(_))));
        assert!(matches!(cramer_constant(&ModelParams::linear(0.7).unwrap(), &k), Err(Error::Regime(_))));
    }

    #[test]
    fn tabulated_uniform_kernel_inverts_like_monomial() {
        let n = 1001;
        let s: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let k = FragmentationKernel::tabulated(s, vec![1.0; n], 0.9).unwrap();
        let p = ModelParams::new(2.0, 0.5).unwrap();
        assert!((mtilde_inverted(&p, &k, 2.0).unwrap() - 0.18394).abs() < 1e-4);
        let prof = ProfileDensity::build(&p, &k).unwrap();
        match prof.body() {
            BodyRepr::NumericTable { switch_point, .. } => assert!(switch_point.is_some()),
            other => panic!("unexpected body {other:?}"),
        }
        assert!((prof.nu(0.25).unwrap() - 1.0 / 3.0).abs() < 1e-6);
        assert!((prof.total_integral(1e3).unwrap() - 1.0).abs() < 1e-6);
    }
    #[test]
    fn kinked_tabulated_kernel_inverts_but_fails_the_cross_check() {
        let n = 101;
        let s: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let rho = s.iter().map(|x| 6.0 * (1.0 - x)).collect();
        let k = FragmentationKernel::tabulated(s, rho, 0.9).unwrap();
        let p = ModelParams::new(8.0, 2.0).unwrap();
        // The moments overflow on the far left of the contour.
        for y in [0.25, 1.0, 5.0] {
            assert!(mtilde_inverted(&p, &k, y).unwrap().is_finite());
        }
        assert!(matches!(ProfileDensity::build(&p, &k), Err(Error::Inversion(_))));
    }
}
