//! Laplace exponents of the driving Lévy processes, the function `L`, and
//! the Malthusian regime classification.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{FragmentationKernel, KernelForm};
use crate::numerics::{gauss_legendre_unit, newton_bracketed};

/// Residual tolerance for all root finds on Laplace exponents.
pub const ROOT_TOL: f64 = 1e-12;
const CLASSIFY_TOL: f64 = 1e-12;

/// Piecewise-linear growth rate `c(x) = a₊x` for `x >= 1`, `a₋x` below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    a_minus: f64,
    a_plus: f64,
}

impl ModelParams {
    /// Refracted model, `0 < a₊ < a₋`.
    pub fn new(a_minus: f64, a_plus: f64) -> Result<Self> {
        if !(a_plus > 0.0 && a_plus.is_finite() && a_minus.is_finite()) {
            return Err(Error::config(format!("growth rates must be positive and finite, got a- = {a_minus}, a+ = {a_plus}")));
        }
        if a_plus >= a_minus {
            return Err(Error::config(format!("need a+ < a-, got a+ = {a_plus}, a- = {a_minus}")));
        }
        Ok(Self { a_minus, a_plus })
    }

    /// Linear growth `c(x) = a x`, the degenerate case without refraction.
    pub fn linear(a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::config(format!("growth rate must be positive, got {a}")));
        }
        Ok(Self { a_minus: a, a_plus: a })
    }

    pub fn a_minus(&self) -> f64 {
        self.a_minus
    }

    pub fn a_plus(&self) -> f64 {
        self.a_plus
    }

    pub fn is_linear(&self) -> bool {
        self.a_minus == self.a_plus
    }

    pub fn drift(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Plus => self.a_plus,
            Branch::Minus => self.a_minus,
        }
    }

    /// `Ψ±` or `Ψ̃±` for the requested branch.
    pub fn exponent<'k>(&self, kernel: &'k FragmentationKernel, family: Family, branch: Branch) -> LaplaceExponent<'k> {
        LaplaceExponent::new(self.drift(branch), family, kernel)
    }
}

/// Which side of the refraction level a drift belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

/// `Xi` drives the size process, `Eta` the tilted process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Family {
    Xi,
    Eta,
}

impl Family {
    fn shift(self) -> f64 {
        match self {
            Family::Xi => 1.0,
            Family::Eta => 0.0,
        }
    }
}

/// Left end of the finiteness domain of an exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub min: f64,
    /// Whether `min` itself belongs to the domain.
    pub closed: bool,
}

impl Domain {
    pub fn contains(&self, q: f64) -> bool {
        if self.closed {
            q >= self.min
        } else {
            q > self.min
        }
    }
}

/// Minimizer of a convex exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Infimum {
    pub argmin: f64,
    pub value: f64,
    /// `false` when the derivative stays positive on the whole domain, so the
    /// infimum sits at the left endpoint without a stationary point.
    pub attained: bool,
}

/// `q ↦ a q + M(q + shift) - M(shift)` for one drift and one family.
#[derive(Debug, Clone, Copy)]
pub struct LaplaceExponent<'k> {
    drift: f64,
    family: Family,
    kernel: &'k FragmentationKernel,
}

impl<'k> LaplaceExponent<'k> {
    pub fn new(drift: f64, family: Family, kernel: &'k FragmentationKernel) -> Self {
        Self { drift, family, kernel }
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn kernel(&self) -> &'k FragmentationKernel {
        self.kernel
    }

    pub fn domain(&self) -> Domain {
        let shift = self.family.shift();
        match self.kernel.form() {
            KernelForm::Monomial { gamma } => Domain { min: -gamma - shift, closed: false },
            KernelForm::Tabulated { .. } => Domain { min: -self.kernel.epsilon() - shift, closed: true },
        }
    }

    fn check(&self, q: f64) -> Result<()> {
        if self.domain().contains(q) {
            Ok(())
        } else {
            Err(Error::domain(format!("q = {q} lies outside the domain of the {:?} exponent", self.family)))
        }
    }

    /// `Ψ(q)`.
    pub fn psi(&self, q: f64) -> Result<f64> {
        self.check(q)?;
        if q == 0.0 {
            return Ok(0.0);
        }
        let shift = self.family.shift();
        let jump = match self.kernel.form() {
            // M(q+s) - M(s) = -q / ((γ+s)(q+γ+s))
            KernelForm::Monomial { gamma } => -q / ((gamma + shift) * (q + gamma + shift)),
            KernelForm::Tabulated { .. } => self.kernel.moment(q + shift)? - self.kernel.moment(shift)?,
        };
        Ok(self.drift * q + jump)
    }

    /// `Ψ'(q) = a + ∫ s^{q+shift} ln(s) ρ(s) ds`.
    pub fn psi_prime(&self, q: f64) -> Result<f64> {
        self.check(q)?;
        Ok(self.drift + self.kernel.log_moment_at(q + self.family.shift(), 1)?)
    }

    /// `Ψ''(q)`.
    pub fn psi_second(&self, q: f64) -> Result<f64> {
        self.check(q)?;
        self.kernel.log_moment_at(q + self.family.shift(), 2)
    }

    /// Meromorphic continuation of `Ψ` to complex `q`.
    pub fn psi_complex(&self, q: Complex64) -> Complex64 {
        let shift = self.family.shift();
        let jump = match self.kernel.form() {
            KernelForm::Monomial { gamma } => -q / ((gamma + shift) * (q + gamma + shift)),
            KernelForm::Tabulated { .. } => {
                self.kernel.moment_complex(q + shift) - self.kernel.moment_complex(Complex64::new(shift, 0.0))
            }
        };
        q * self.drift + jump
    }

    /// Lower end of a bracket on which `Ψ'` is negative, or `None` when
    /// `Ψ'` is nonnegative on the whole domain.
    fn left_bracket(&self) -> Result<Option<f64>> {
        let domain = self.domain();
        if domain.closed {
            return Ok((self.psi_prime(domain.min)? < 0.0).then_some(domain.min));
        }
        let mut gap = 0.5;
        for _ in 0..200 {
            let q = domain.min + gap;
            if self.psi_prime(q)? < 0.0 {
                return Ok(Some(q));
            }
            gap *= 0.5;
            if gap < 1e-300 {
                break;
            }
        }
        Ok(None)
    }

    /// Minimizer and minimum of `Ψ`.
    pub fn infimum(&self) -> Result<Infimum> {
        let Some(lo) = self.left_bracket()? else {
            let domain = self.domain();
            let edge = if domain.closed { domain.min } else { domain.min + f64::EPSILON * domain.min.abs().max(1.0) };
            let value = self.psi(edge)?;
            return Ok(Infimum { argmin: domain.min, value, attained: false });
        };
        let mut hi = lo.max(0.0) + 1.0;
        while self.psi_prime(hi)? <= 0.0 {
            hi = 2.0 * hi + 1.0;
            if hi > 1e12 {
                return Err(Error::NoConvergence("derivative of the exponent never turns positive".into()));
            }
        }
        let argmin = newton_bracketed(
            |q| (self.psi_prime(q).unwrap_or(f64::NAN), self.psi_second(q).unwrap_or(f64::NAN)),
            lo,
            hi,
            ROOT_TOL,
        )?;
        Ok(Infimum { argmin, value: self.psi(argmin)?, attained: true })
    }

    /// Largest root `q` of `Ψ(q) = θ`.
    pub fn right_inverse(&self, theta: f64) -> Result<f64> {
        let inf = self.infimum()?;
        self.right_inverse_from(theta, &inf)
    }

    /// As [`Self::right_inverse`] with a precomputed infimum.
    pub fn right_inverse_from(&self, theta: f64, inf: &Infimum) -> Result<f64> {
        if theta < inf.value - ROOT_TOL {
            return Err(Error::domain(format!("theta = {theta} is below the infimum {}", inf.value)));
        }
        if theta <= inf.value {
            return Ok(inf.argmin);
        }
        if theta == 0.0 && inf.argmin <= 0.0 {
            return Ok(0.0);
        }
        let lo = inf.argmin;
        let mut hi = lo.max(0.0) + 1.0;
        while self.psi(hi)? <= theta {
            hi = 2.0 * hi + 1.0;
            if hi > 1e15 {
                return Err(Error::NoConvergence(format!("no bracket for theta = {theta}")));
            }
        }
        newton_bracketed(
            |q| (self.psi(q).unwrap_or(f64::NAN) - theta, self.psi_prime(q).unwrap_or(f64::NAN)),
            lo,
            hi,
            ROOT_TOL,
        )
    }
}

/// `q* = max(inf Ψ₋ + a₋, inf Ψ₊ + a₊)` together with the infima.
fn threshold(params: &ModelParams, kernel: &FragmentationKernel) -> Result<(f64, Infimum, Infimum)> {
    let minus = params.exponent(kernel, Family::Xi, Branch::Minus).infimum()?;
    let plus = params.exponent(kernel, Family::Xi, Branch::Plus).infimum()?;
    let q = (minus.value + params.a_minus).max(plus.value + params.a_plus);
    Ok((q, minus, plus))
}

/// Abscissa below which `L` is infinite.
pub fn q_star(params: &ModelParams, kernel: &FragmentationKernel) -> Result<f64> {
    Ok(threshold(params, kernel)?.0)
}

/// Whether `L(q*)` is finite: both infima must be attained.
pub fn finite_at_q_star(params: &ModelParams, kernel: &FragmentationKernel) -> Result<bool> {
    let (_, minus, plus) = threshold(params, kernel)?;
    Ok(minus.attained && plus.attained)
}

/// `L(q) = E₁(e^{-qH} ℰ_H, H < ∞)`, returning `+∞` below `q*`.
///
/// At `q*` itself the right limit is returned when both infima are attained.
pub fn l_function(params: &ModelParams, kernel: &FragmentationKernel, q: f64) -> Result<f64> {
    let (qs, minus_inf, plus_inf) = threshold(params, kernel)?;
    if q < qs || (q == qs && !(minus_inf.attained && plus_inf.attained)) {
        return Ok(f64::INFINITY);
    }
    let phi_minus = params.exponent(kernel, Family::Xi, Branch::Minus).right_inverse_from(q - params.a_minus, &minus_inf)?;
    let phi_plus = params.exponent(kernel, Family::Xi, Branch::Plus).right_inverse_from(q - params.a_plus, &plus_inf)?;
    let delta = phi_plus - phi_minus;
    if delta.abs() > 1e-4 * (1.0 + phi_minus.abs()) {
        Ok(1.0 - (params.a_minus - params.a_plus) * (1.0 + phi_minus) / (params.a_plus * delta))
    } else {
        excursion_integral(params, kernel, phi_minus, phi_plus)
    }
}

/// `-(1/a₊) ∫₀¹ M'(1 + Φ₋ + t(Φ₊ - Φ₋)) dt`, algebraically equal to the
/// closed formula but stable when `Φ₊ ≈ Φ₋`.
fn excursion_integral(params: &ModelParams, kernel: &FragmentationKernel, phi_minus: f64, phi_plus: f64) -> Result<f64> {
    let (nodes, weights) = gauss_legendre_unit(20);
    let mut acc = 0.0;
    for (t, w) in nodes.iter().zip(&weights) {
        acc += w * kernel.log_moment_at(1.0 + phi_minus + t * (phi_plus - phi_minus), 1)?;
    }
    Ok(-acc / params.a_plus)
}

/// `L(q)` through the excursion integral regardless of `Φ₊ - Φ₋`.
pub fn l_function_integral(params: &ModelParams, kernel: &FragmentationKernel, q: f64) -> Result<f64> {
    let (qs, minus_inf, plus_inf) = threshold(params, kernel)?;
    if q < qs {
        return Ok(f64::INFINITY);
    }
    let phi_minus = params.exponent(kernel, Family::Xi, Branch::Minus).right_inverse_from(q - params.a_minus, &minus_inf)?;
    let phi_plus = params.exponent(kernel, Family::Xi, Branch::Plus).right_inverse_from(q - params.a_plus, &plus_inf)?;
    excursion_integral(params, kernel, phi_minus, phi_plus)
}

/// Position of `(a₋, a₊)` relative to `c = -∫ ln(s) ρ(s) ds`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// `a₊ < c < a₋`.
    StrictMalthusian,
    /// `a₊ = c`.
    BoundaryLow,
    /// `a₋ = c`.
    BoundaryHigh,
    /// `a₊ > c`.
    FailsLow,
    /// `a₋ < c`.
    FailsHigh,
}

impl Regime {
    pub fn is_boundary(self) -> bool {
        matches!(self, Regime::BoundaryLow | Regime::BoundaryHigh)
    }
}

/// Long-time behaviour of a refracted Lévy process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Recurrence {
    DriftsToPlusInfinity,
    DriftsToMinusInfinity,
    NullRecurrent,
    PositiveRecurrent,
}

/// Classification of a model together with its spectral constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub lambda_star: f64,
    pub condition_low: f64,
    pub regime: Regime,
    pub beta_plus: Option<f64>,
    pub beta_minus: Option<f64>,
    #[serde(rename = "L_prime_at_lambda")]
    pub l_prime_at_lambda: Option<f64>,
    /// Set on the boundary, where `L'(λ)` is infinite.
    pub l_prime_divergent: bool,
    pub recurrence_class: Recurrence,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= CLASSIFY_TOL * a.abs().max(b.abs()).max(1.0)
}

fn classify(params: &ModelParams, c_low: f64) -> Regime {
    let (lo, hi) = (params.a_plus, params.a_minus);
    if close(lo, c_low) {
        Regime::BoundaryLow
    } else if close(hi, c_low) {
        Regime::BoundaryHigh
    } else if lo > c_low {
        Regime::FailsLow
    } else if hi < c_low {
        Regime::FailsHigh
    } else {
        Regime::StrictMalthusian
    }
}

/// Regime, `λ*`, `β±`, `L'(λ)` and the recurrence class of the tilted
/// process.
pub fn malthus(params: &ModelParams, kernel: &FragmentationKernel) -> Result<RegimeReport> {
    let lambda_star = kernel.lambda_star()?;
    let condition_low = -kernel.log_moment()?;
    let regime = classify(params, condition_low);
    let beta_plus = beta_plus(params, kernel)?;
    let beta_minus = cramer_root(params, kernel)?;
    let l_prime_at_lambda = match regime {
        Regime::StrictMalthusian => Some(l_prime_at_lambda(params, kernel)?),
        _ => None,
    };
    Ok(RegimeReport {
        lambda_star,
        condition_low,
        regime,
        beta_plus,
        beta_minus,
        l_prime_at_lambda,
        l_prime_divergent: regime.is_boundary(),
        recurrence_class: classify_recurrence(params, kernel, Family::Eta)?,
    })
}

/// `β₊ = Φ̃₊(0)` when it is positive, that is when `a₊ < c`.
pub fn beta_plus(params: &ModelParams, kernel: &FragmentationKernel) -> Result<Option<f64>> {
    let exp = params.exponent(kernel, Family::Eta, Branch::Plus);
    if exp.psi_prime(0.0)? >= -CLASSIFY_TOL {
        return Ok(None);
    }
    Ok(Some(exp.right_inverse(0.0)?))
}

/// `L'(λ) = -(a₋ - a₊) / (a₊ Ψ₋'(-1) (Φ₊(Ψ₊(-1)) + 1))`, defined in the
/// strict regime only.
pub fn l_prime_at_lambda(params: &ModelParams, kernel: &FragmentationKernel) -> Result<f64> {
    let c_low = -kernel.log_moment()?;
    let regime = classify(params, c_low);
    if regime != Regime::StrictMalthusian {
        return Err(Error::regime(format!("L'(lambda) needs the strict Malthusian regime, found {regime:?}")));
    }
    let minus = params.exponent(kernel, Family::Xi, Branch::Minus);
    let plus = params.exponent(kernel, Family::Xi, Branch::Plus);
    let slope = minus.psi_prime(-1.0)?;
    let shifted = plus.right_inverse(plus.psi(-1.0)?)? + 1.0;
    Ok(-(params.a_minus - params.a_plus) / (params.a_plus * slope * shifted))
}

/// `β₋ > 0` with `Ψ̃₋(-β₋) = 0`, absent when no such root exists in the
/// domain.
pub fn cramer_root(params: &ModelParams, kernel: &FragmentationKernel) -> Result<Option<f64>> {
    let exp = params.exponent(kernel, Family::Eta, Branch::Minus);
    if exp.psi_prime(0.0)? <= CLASSIFY_TOL {
        return Ok(None);
    }
    let inf = exp.infimum()?;
    if !inf.attained {
        return Ok(None);
    }
    let domain = exp.domain();
    let lo = if domain.closed {
        if exp.psi(domain.min)? < 0.0 {
            return Ok(None);
        }
        domain.min
    } else {
        let mut gap = 0.5 * (inf.argmin - domain.min);
        loop {
            let q = domain.min + gap;
            if exp.psi(q)? > 0.0 {
                break q;
            }
            gap *= 0.5;
            if gap < 1e-300 {
                return Ok(None);
            }
        }
    };
    let root = newton_bracketed(
        |q| (exp.psi(q).unwrap_or(f64::NAN), exp.psi_prime(q).unwrap_or(f64::NAN)),
        lo,
        inf.argmin,
        ROOT_TOL,
    )?;
    Ok(Some(-root))
}

/// Recurrence class from the signs of `Ψ₊'(0)` and `Ψ₋'(0)` in the given
/// family.
pub fn classify_recurrence(params: &ModelParams, kernel: &FragmentationKernel, family: Family) -> Result<Recurrence> {
    let plus = params.exponent(kernel, family, Branch::Plus).psi_prime(0.0)?;
    let minus = params.exponent(kernel, family, Branch::Minus).psi_prime(0.0)?;
    let zero = |v: f64| v.abs() <= CLASSIFY_TOL * params.a_minus.max(1.0);
    Ok(if zero(plus) || zero(minus) {
        Recurrence::NullRecurrent
    } else if plus > 0.0 && minus > 0.0 {
        Recurrence::DriftsToPlusInfinity
    } else if plus < 0.0 && minus < 0.0 {
        Recurrence::DriftsToMinusInfinity
    } else if plus < 0.0 {
        Recurrence::PositiveRecurrent
    } else {
        // Ψ₊' > 0 > Ψ₋' cannot happen for a₊ <= a₋; treat it as transient.
        Recurrence::DriftsToPlusInfinity
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mono(gamma: f64) -> FragmentationKernel {
        FragmentationKernel::monomial(gamma).unwrap()
    }

    fn canonical() -> (ModelParams, FragmentationKernel) {
        (ModelParams::new(2.0, 0.5).unwrap(), mono(1.0))
    }

    fn grid_min(exp: &LaplaceExponent, lo: f64, hi: f64) -> (f64, f64) {
        let n = 200_000;
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .filter_map(|q| exp.psi(q).ok().map(|v| (q, v)))
            .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }

    #[test]
    fn psi_examples() {
        let k = mono(1.0);
        let eta = LaplaceExponent::new(2.0, Family::Eta, &k);
        assert!((eta.psi(1.0).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(eta.psi(0.0).unwrap(), 0.0);
        let xi = LaplaceExponent::new(0.5, Family::Xi, &k);
        assert!((xi.psi(1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(xi.psi(-2.0), Err(Error::Domain(_))));
        assert!(matches!(eta.psi(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn psi_prime_examples_and_finite_differences() {
        let k = mono(1.0);
        let cases = [
            (LaplaceExponent::new(2.0, Family::Xi, &k), -1.0, 1.0),
            (LaplaceExponent::new(2.0, Family::Eta, &k), -0.5, -2.0),
            (LaplaceExponent::new(0.5, Family::Eta, &k), 0.0, -0.5),
        ];
        for (exp, q, want) in cases {
            let got = exp.psi_prime(q).unwrap();
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
            let h = 1e-5;
            let fd = (exp.psi(q + h).unwrap() - exp.psi(q - h).unwrap()) / (2.0 * h);
            assert!((fd - got).abs() <= 1e-6 * got.abs());
        }
    }

    #[test]
    fn right_inverse_examples() {
        let k = mono(1.0);
        let xi = LaplaceExponent::new(2.0, Family::Xi, &k);
        assert!((xi.right_inverse(-1.5).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(xi.right_inverse(0.0).unwrap(), 0.0);
        let eta = LaplaceExponent::new(0.5, Family::Eta, &k);
        assert!((eta.right_inverse(0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(xi.right_inverse(-10.0), Err(Error::Domain(_))));
    }

    #[test]
    fn infimum_examples_against_grid() {
        let k = mono(1.0);
        for (a, want_q, want_v) in [(2.0, -2.0 + 0.5f64.sqrt(), -1.67157), (0.5, -2.0 + 2f64.sqrt(), -0.08579)] {
            let exp = LaplaceExponent::new(a, Family::Xi, &k);
            let inf = exp.infimum().unwrap();
            assert!(inf.attained);
            assert!((inf.argmin - want_q).abs() < 1e-10);
            assert!((inf.value - want_v).abs() < 1e-5);
            let (gq, gv) = grid_min(&exp, -1.99, 1.0);
            assert!((gq - inf.argmin).abs() < 1e-4 && gv >= inf.value - 1e-12);
        }
    }

    #[test]
    fn infimum_on_closed_domain_can_sit_at_endpoint() {
        let k = FragmentationKernel::tabulated(vec![0.1, 0.5, 0.9], vec![1.0, 1.0, 1.0], 0.1).unwrap();
        let steep = LaplaceExponent::new(5.0, Family::Eta, &k);
        let inf = steep.infimum().unwrap();
        assert!(!inf.attained);
        assert_eq!(inf.argmin, -0.1);
        let shallow = LaplaceExponent::new(0.5, Family::Eta, &k);
        assert!(shallow.infimum().unwrap().attained);
        assert!(matches!(steep.psi(-0.2), Err(Error::Domain(_))));
    }

    #[test]
    fn q_star_examples() {
        let (p, k) = canonical();
        assert!((q_star(&p, &k).unwrap() - (2f64.sqrt() - 1.0)).abs() < 1e-10);
        let lin = ModelParams::linear(0.7).unwrap();
        let inf = LaplaceExponent::new(0.7, Family::Xi, &k).infimum().unwrap();
        assert!((q_star(&lin, &k).unwrap() - (inf.value + 0.7)).abs() < 1e-14);
        // γ = 2, a- = 1, a+ = 0.1 against grid minimization.
        let k2 = mono(2.0);
        let p2 = ModelParams::new(1.0, 0.1).unwrap();
        let gm = grid_min(&LaplaceExponent::new(1.0, Family::Xi, &k2), -2.99, 2.0).1 + 1.0;
        let gp = grid_min(&LaplaceExponent::new(0.1, Family::Xi, &k2), -2.99, 2.0).1 + 0.1;
        assert!((q_star(&p2, &k2).unwrap() - gm.max(gp)).abs() < 1e-6);
    }

    #[test]
    fn l_function_examples() {
        let (p, k) = canonical();
        assert!((l_function(&p, &k, 0.5).unwrap() - 1.0).abs() < 1e-12);
        let qs = q_star(&p, &k).unwrap();
        assert_eq!(l_function(&p, &k, qs - 0.01).unwrap(), f64::INFINITY);
        assert!(l_function(&p, &k, qs).unwrap().is_finite());
        assert!(finite_at_q_star(&p, &k).unwrap());
        for q in [0.45, 0.6, 1.0, 3.0, 10.0] {
            let a = l_function(&p, &k, q).unwrap();
            let b = l_function_integral(&p, &k, q).unwrap();
            assert!((a - b).abs() < 1e-11, "q={q}");
        }
        assert!(l_function(&p, &k, 0.55).unwrap() < 1.0);
    }

    #[test]
    fn linear_case_reduces_to_single_exponent() {
        let k = mono(2.0);
        let a = 0.8;
        let p = ModelParams::linear(a).unwrap();
        let exp = LaplaceExponent::new(a, Family::Xi, &k);
        for q in [0.6, 1.0, 2.0] {
            let phi = exp.right_inverse(q - a).unwrap();
            let want = 1.0 - exp.psi_prime(phi).unwrap() / a;
            assert!((l_function(&p, &k, q).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn malthus_examples() {
        let (p, k) = canonical();
        let r = malthus(&p, &k).unwrap();
        assert_eq!(r.regime, Regime::StrictMalthusian);
        assert_eq!(r.lambda_star, 0.5);
        assert!((r.beta_plus.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.beta_minus.unwrap() - 0.5).abs() < 1e-12);
        assert!((r.l_prime_at_lambda.unwrap() + 3.0).abs() < 1e-10);
        assert_eq!(r.recurrence_class, Recurrence::PositiveRecurrent);

        let r = malthus(&ModelParams::new(2.0, 1.0).unwrap(), &k).unwrap();
        assert_eq!(r.regime, Regime::BoundaryLow);
        assert!(r.l_prime_divergent && r.l_prime_at_lambda.is_none());
        assert_eq!(r.recurrence_class, Recurrence::NullRecurrent);

        let r = malthus(&ModelParams::new(0.9, 0.5).unwrap(), &k).unwrap();
        assert_eq!(r.regime, Regime::FailsHigh);
        assert!(r.beta_minus.is_none());
    }

    #[test]
    fn l_prime_refuses_outside_strict_regime() {
        let k = mono(1.0);
        assert!(matches!(l_prime_at_lambda(&ModelParams::linear(1.0).unwrap(), &k), Err(Error::Regime(_))));
        assert!(matches!(l_prime_at_lambda(&ModelParams::new(0.9, 0.5).unwrap(), &k), Err(Error::Regime(_))));
    }

    #[test]
    fn l_prime_matches_finite_difference() {
        let (p, k) = canonical();
        let h = 1e-5;
        let fd = (l_function(&p, &k, 0.5 + h).unwrap() - l_function(&p, &k, 0.5 - h).unwrap()) / (2.0 * h);
        let exact = l_prime_at_lambda(&p, &k).unwrap();
        assert!((fd - exact).abs() < 1e-6 * exact.abs());
    }

    #[test]
    fn cramer_root_examples() {
        let k1 = mono(1.0);
        let r = cramer_root(&ModelParams::new(2.0, 0.5).unwrap(), &k1).unwrap().unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        assert!(cramer_root(&ModelParams::new(1.0, 0.5).unwrap(), &k1).unwrap().is_none());
        let r = cramer_root(&ModelParams::new(1.0, 0.2).unwrap(), &mono(2.0)).unwrap().unwrap();
        assert!((r - 1.5).abs() < 1e-12);
    }

    #[test]
    fn recurrence_cases() {
        let k = mono(1.0);
        let c = |a_minus, a_plus, fam| classify_recurrence(&ModelParams::new(a_minus, a_plus).unwrap(), &k, fam).unwrap();
        assert_eq!(c(2.0, 0.5, Family::Eta), Recurrence::PositiveRecurrent);
        assert_eq!(c(2.0, 1.0, Family::Eta), Recurrence::NullRecurrent);
        assert_eq!(c(3.0, 2.0, Family::Eta), Recurrence::DriftsToPlusInfinity);
        assert_eq!(c(0.8, 0.3, Family::Eta), Recurrence::DriftsToMinusInfinity);
        // Xi family: Ψ'(0) = a - 1/4 for γ = 1.
        assert_eq!(c(2.0, 0.5, Family::Xi), Recurrence::DriftsToPlusInfinity);
    }

    #[test]
    fn beta_plus_identity_from_change_of_measure() {
        for (gamma, a_minus, a_plus) in [(1.0, 2.0, 0.5), (2.0, 1.0, 0.2), (3.0, 0.5, 0.05)] {
            let k = mono(gamma);
            let p = ModelParams::new(a_minus, a_plus).unwrap();
            let plus = p.exponent(&k, Family::Xi, Branch::Plus);
            let lhs = plus.right_inverse(plus.psi(-1.0).unwrap()).unwrap() + 1.0;
            assert!((lhs - beta_plus(&p, &k).unwrap().unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn tabulated_exponents_track_monomial() {
        // The flat extrapolation near 0 keeps the uniform density exact.
        let n = 50;
        let s: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let kt = FragmentationKernel::tabulated(s, vec![1.0; n], 0.9).unwrap();
        let km = mono(1.0);
        let p = ModelParams::new(2.0, 0.5).unwrap();
        let rt = malthus(&p, &kt).unwrap();
        let rm = malthus(&p, &km).unwrap();
        assert!((rt.beta_plus.unwrap() - rm.beta_plus.unwrap()).abs() < 1e-10);
        assert!((rt.beta_minus.unwrap() - rm.beta_minus.unwrap()).abs() < 1e-10);
        assert!((rt.l_prime_at_lambda.unwrap() - rm.l_prime_at_lambda.unwrap()).abs() < 1e-9);
        let narrow = FragmentationKernel::tabulated(vec![0.25, 0.75], vec![1.0, 1.0], 0.3).unwrap();
        assert!(cramer_root(&p, &narrow).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn eta_is_shifted_xi(gamma in 1.0f64..3.0, a in 0.1f64..3.0, q in -0.45f64..4.0) {
            let k = mono(gamma);
            let xi = LaplaceExponent::new(a, Family::Xi, &k);
            let eta = LaplaceExponent::new(a, Family::Eta, &k);
            let lhs = eta.psi(q).unwrap();
            let rhs = xi.psi(q - 1.0).unwrap() - xi.psi(-1.0).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn right_inverse_round_trips(gamma in 1.0f64..3.0, a in 0.1f64..3.0, t in 0.0f64..5.0) {
            let k = mono(gamma);
            let exp = LaplaceExponent::new(a, Family::Xi, &k);
            let inf = exp.infimum().unwrap();
            let theta = inf.value + t;
            let q = exp.right_inverse(theta).unwrap();
            prop_assert!(q >= inf.argmin);
            prop_assert!((exp.psi(q).unwrap() - theta).abs() < 1e-10);
            let q0 = inf.argmin + t;
            let back = exp.right_inverse(exp.psi(q0).unwrap()).unwrap();
            prop_assert!((back - q0).abs() < 1e-7 * (1.0 + q0.abs()));
        }

        #[test]
        fn psi_is_convex(gamma in 1.0f64..3.0, a in 0.1f64..3.0, q1 in -1.9f64..3.0, d1 in 0.01f64..2.0, d2 in 0.01f64..2.0) {
            let k = mono(gamma);
            let exp = LaplaceExponent::new(a, Family::Xi, &k);
            let (q2, q3) = (q1 + d1, q1 + d1 + d2);
            let w = d2 / (d1 + d2);
            let interp = w * exp.psi(q1).unwrap() + (1.0 - w) * exp.psi(q3).unwrap();
            prop_assert!(exp.psi(q2).unwrap() <= interp + 1e-12);
        }

        #[test]
        fn l_is_one_at_lambda_star(gamma in 1.0f64..3.0, lo in 0.05f64..0.95, hi in 1.05f64..3.0) {
            let k = mono(gamma);
            let c = 1.0 / (gamma * gamma);
            let p = ModelParams::new(hi * c, lo * c).unwrap();
            let lam = k.lambda_star().unwrap();
            prop_assert!((l_function(&p, &k, lam).unwrap() - 1.0).abs() < 1e-10);
        }
    }
}
