//! Homogeneous fragmentation kernels and their moment functionals.

use std::collections::HashMap;
use std::sync::Mutex;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{newton_bracketed, power_integral, power_integral_from_zero};

/// Default integrability exponent for monomial kernels.
pub const DEFAULT_MONOMIAL_EPSILON: f64 = 0.5;

/// Shape of the kernel density `ρ` on `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelForm {
    /// `ρ(s) = s^{γ-1}`.
    Monomial { gamma: f64 },
    /// Piecewise-linear interpolation through `(s_i, ρ_i)`, held constant
    /// at `ρ_0` on `(0, s_0]` and at `ρ_n` on `[s_n, 1)`.
    Tabulated { s: Vec<f64>, rho: Vec<f64> },
}

/// Which normalized jump law to sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JumpKind {
    /// Ratio density `s ρ(s) / K`, the jumps of the size process.
    X,
    /// Ratio density `ρ(s) / r̃`, the jumps of the tilted process.
    Y,
}

/// A linear density `alpha + beta s` on `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    lo: f64,
    hi: f64,
    alpha: f64,
    beta: f64,
}

impl Piece {
    fn density(&self, s: f64) -> f64 {
        self.alpha + self.beta * s
    }

    fn is_zero(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }

    /// `∫_lo^upper s^q (ln s)^k (alpha + beta s) ds` with `u = q + 1`.
    fn moment(&self, u: Complex64, k: u32, upper: f64) -> Complex64 {
        let upper = upper.min(self.hi);
        if self.is_zero() || upper <= self.lo {
            return Complex64::new(0.0, 0.0);
        }
        let integral = |v: Complex64| {
            if self.lo == 0.0 {
                power_integral_from_zero(upper, v, k)
            } else {
                power_integral(self.lo, upper, v, k)
            }
        };
        let mut acc = Complex64::new(0.0, 0.0);
        if self.alpha != 0.0 {
            acc += integral(u) * self.alpha;
        }
        if self.beta != 0.0 {
            acc += integral(u + 1.0) * self.beta;
        }
        acc
    }
}

#[derive(Debug, Clone)]
struct Table {
    pieces: Vec<Piece>,
    /// Cumulative normalized mass at the right end of each piece, per kind.
    cdf_x: Vec<f64>,
    cdf_y: Vec<f64>,
    /// Unnormalized totals `K` and `r̃`.
    total_x: f64,
    total_y: f64,
}

type CacheKey = (u64, u32, u64);

/// The fragmentation kernel `ρ(s) ds` together with its integrability
/// exponent `ε`.
#[derive(Debug)]
pub struct FragmentationKernel {
    form: KernelForm,
    epsilon: f64,
    table: Option<Table>,
    cache: Mutex<HashMap<CacheKey, f64>>,
}

impl Clone for FragmentationKernel {
    fn clone(&self) -> Self {
        Self {
            form: self.form.clone(),
            epsilon: self.epsilon,
            table: self.table.clone(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl PartialEq for FragmentationKernel {
    fn eq(&self, other: &Self) -> bool {
        self.form == other.form && self.epsilon == other.epsilon
    }
}

impl FragmentationKernel {
    /// `ρ(s) = s^{γ-1}` with the default `ε`.
    pub fn monomial(gamma: f64) -> Result<Self> {
        let epsilon = DEFAULT_MONOMIAL_EPSILON.min(0.5 * gamma);
        Self::monomial_with_epsilon(gamma, epsilon)
    }

    pub fn monomial_with_epsilon(gamma: f64, epsilon: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 1.0) {
            return Err(Error::config(format!("monomial kernel needs gamma >= 1, got {gamma}")));
        }
        if !(epsilon > 0.0 && epsilon < gamma) {
            return Err(Error::config(format!(
                "epsilon must lie in (0, gamma) for a monomial kernel, got {epsilon}"
            )));
        }
        Ok(Self {
            form: KernelForm::Monomial { gamma },
            epsilon,
            table: None,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Piecewise-linear kernel through the nodes `(s_i, ρ_i)`.
    pub fn tabulated(s: Vec<f64>, rho: Vec<f64>, epsilon: f64) -> Result<Self> {
        if s.len() != rho.len() {
            return Err(Error::config("kernel table: s and rho differ in length"));
        }
        if s.len() < 2 {
            return Err(Error::config("kernel table needs at least two nodes"));
        }
        if s.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::config("kernel table nodes must lie strictly inside (0, 1)"));
        }
        if s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("kernel table nodes must be strictly increasing"));
        }
        if rho.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::config("kernel table densities must be finite and nonnegative"));
        }
        if rho.iter().all(|&v| v == 0.0) {
            return Err(Error::config("kernel density vanishes identically"));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be positive, got {epsilon}")));
        }
        if rho[0] > 0.0 && epsilon >= 1.0 {
            return Err(Error::config(format!(
                "s^-epsilon rho(s) is not integrable near 0 for epsilon = {epsilon}"
            )));
        }

        let n = s.len();
        let mut pieces = Vec::with_capacity(n + 1);
        pieces.push(Piece { lo: 0.0, hi: s[0], alpha: rho[0], beta: 0.0 });
        for i in 0..n - 1 {
            let (lo, hi) = (s[i], s[i + 1]);
            let beta = (rho[i + 1] - rho[i]) / (hi - lo);
            pieces.push(Piece { lo, hi, alpha: rho[i] - beta * lo, beta });
        }
        pieces.push(Piece { lo: s[n - 1], hi: 1.0, alpha: rho[n - 1], beta: 0.0 });

        let cumulative = |shift: f64| {
            let mut acc = 0.0;
            let mut out: Vec<f64> = pieces
                .iter()
                .map(|p| {
                    acc += p.moment(Complex64::new(shift + 1.0, 0.0), 0, p.hi).re;
                    acc
                })
                .collect();
            out.iter_mut().for_each(|v| *v /= acc);
            (out, acc)
        };
        let (cdf_x, total_x) = cumulative(1.0);
        let (cdf_y, total_y) = cumulative(0.0);
        let table = Table { pieces, cdf_x, cdf_y, total_x, total_y };

        Ok(Self {
            form: KernelForm::Tabulated { s, rho },
            epsilon,
            table: Some(table),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.form {
            KernelForm::Monomial { gamma } => Some(gamma),
            KernelForm::Tabulated { .. } => None,
        }
    }

    /// `ρ(s)`.
    pub fn density(&self, s: f64) -> f64 {
        if !(s > 0.0 && s < 1.0) {
            return 0.0;
        }
        match (&self.form, &self.table) {
            (KernelForm::Monomial { gamma }, _) => s.powf(gamma - 1.0),
            (_, Some(t)) => {
                let idx = t.pieces.partition_point(|p| p.hi < s).min(t.pieces.len() - 1);
                t.pieces[idx].density(s)
            }
            _ => unreachable!(),
        }
    }

    /// Infimum of exponents `q` for which `∫ s^q ρ(s) ds` converges; the
    /// bound itself is excluded.
    pub fn moment_abscissa(&self) -> f64 {
        match (&self.form, &self.table) {
            (KernelForm::Monomial { gamma }, _) => -gamma,
            (_, Some(t)) if t.pieces[0].is_zero() => f64::NEG_INFINITY,
            _ => -1.0,
        }
    }

    fn check_abscissa(&self, q: f64) -> Result<()> {
        if q.is_nan() || q <= self.moment_abscissa() {
            return Err(Error::domain(format!("kernel moment diverges at q = {q}")));
        }
        Ok(())
    }

    /// `M(q) = ∫₀¹ s^q ρ(s) ds`.
    pub fn moment(&self, q: f64) -> Result<f64> {
        self.log_moment_at(q, 0)
    }

    /// `∫₀¹ s^q (ln s)^k ρ(s) ds`, the `k`-th derivative of `M` at `q`.
    pub fn log_moment_at(&self, q: f64, k: u32) -> Result<f64> {
        self.partial_log_moment(q, k, 1.0)
    }

    /// `∫₀^upper s^q (ln s)^k ρ(s) ds` for `upper ∈ (0, 1]`.
    pub fn partial_log_moment(&self, q: f64, k: u32, upper: f64) -> Result<f64> {
        self.check_abscissa(q)?;
        if !(upper > 0.0) {
            return Ok(0.0);
        }
        let upper = upper.min(1.0);
        match &self.form {
            KernelForm::Monomial { gamma } => {
                let u = q + gamma;
                if upper == 1.0 {
                    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
                    let fact: f64 = (1..=k).map(f64::from).product();
                    Ok(sign * fact / u.powi(k as i32 + 1))
                } else {
                    Ok(power_integral_from_zero(upper, Complex64::new(u, 0.0), k).re)
                }
            }
            KernelForm::Tabulated { .. } => {
                let key = (q.to_bits(), k, upper.to_bits());
                if let Some(v) = self.cache.lock().ok().and_then(|c| c.get(&key).copied()) {
                    return Ok(v);
                }
                let v = self.table_moment(Complex64::new(q + 1.0, 0.0), k, upper).re;
                if let Ok(mut c) = self.cache.lock() {
                    c.insert(key, v);
                }
                Ok(v)
            }
        }
    }

    /// Meromorphic continuation of `M` to complex `q`, needed along Laplace
    /// inversion contours that leave the half-plane of convergence.
    ///
    /// For a table, two integrations by parts give
    /// `M(q) = ρ_n/(q+1) + Σ κ_i s_i^{q+2} / ((q+1)(q+2))` where `κ_i` is the
    /// jump of `ρ'` at node `s_i`.
    pub fn moment_complex(&self, q: Complex64) -> Complex64 {
        match (&self.form, &self.table) {
            (KernelForm::Monomial { gamma }, _) => (q + gamma).inv(),
            (KernelForm::Tabulated { s, rho }, Some(t)) => {
                let q1 = q + 1.0;
                let q2 = q + 2.0;
                let kinks: Complex64 = s
                    .iter()
                    .enumerate()
                    .map(|(i, &node)| {
                        let kappa = t.pieces[i + 1].beta - t.pieces[i].beta;
                        if kappa == 0.0 {
                            Complex64::new(0.0, 0.0)
                        } else {
                            (q2 * node.ln()).exp() * kappa
                        }
                    })
                    .sum();
                rho[rho.len() - 1] / q1 + kinks / (q1 * q2)
            }
            _ => unreachable!(),
        }
    }

    fn table_moment(&self, u: Complex64, k: u32, upper: f64) -> Complex64 {
        let table = self.table.as_ref().expect("tabulated kernel carries a table");
        table
            .pieces
            .iter()
            .take_while(|p| p.lo < upper)
            .map(|p| p.moment(u, k, upper))
            .sum()
    }

    /// `∫₀¹ ln(s) ρ(s) ds`.
    pub fn log_moment(&self) -> Result<f64> {
        self.log_moment_at(0.0, 1)
    }

    /// `(K, r̃) = (M(1), M(0))`: jump rates of the size and tilted processes.
    pub fn total_rates(&self) -> Result<(f64, f64)> {
        Ok((self.moment(1.0)?, self.moment(0.0)?))
    }

    /// `λ* = ∫₀¹ (1 - s) ρ(s) ds`.
    pub fn lambda_star(&self) -> Result<f64> {
        let (k, r) = self.total_rates()?;
        Ok(r - k)
    }

    /// Jump rate for the given kind.
    pub fn jump_rate(&self, kind: JumpKind) -> Result<f64> {
        let (k, r) = self.total_rates()?;
        Ok(match kind {
            JumpKind::X => k,
            JumpKind::Y => r,
        })
    }

    /// Normalized jump CDF `P(S <= s)`.
    pub fn jump_cdf(&self, kind: JumpKind, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        let shift = match kind {
            JumpKind::X => 1.0,
            JumpKind::Y => 0.0,
        };
        match self.form {
            KernelForm::Monomial { gamma } => s.powf(gamma + shift),
            KernelForm::Tabulated { .. } => {
                let total = self.jump_rate(kind).unwrap_or(f64::NAN);
                self.partial_log_moment(shift, 0, s).unwrap_or(f64::NAN) / total
            }
        }
    }

    /// Log-ratio `z = ln S` of a jump drawn by inverse CDF from `u ∈ (0, 1)`.
    pub fn sample_jump(&self, kind: JumpKind, u: f64) -> f64 {
        match (&self.form, &self.table) {
            (KernelForm::Monomial { gamma }, _) => {
                let power = match kind {
                    JumpKind::X => gamma + 1.0,
                    JumpKind::Y => *gamma,
                };
                u.ln() / power
            }
            (_, Some(t)) => self.sample_table(t, kind, u).ln(),
            _ => unreachable!(),
        }
    }

    fn sample_table(&self, table: &Table, kind: JumpKind, u: f64) -> f64 {
        let (cdf, shift, norm) = match kind {
            JumpKind::X => (&table.cdf_x, 1.0, table.total_x),
            JumpKind::Y => (&table.cdf_y, 0.0, table.total_y),
        };
        let idx = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
        let piece = table.pieces[idx];
        let below = if idx == 0 { 0.0 } else { cdf[idx - 1] };
        let target = (u - below) * norm;
        let residual = |s: f64| {
            let mass = piece.moment(Complex64::new(shift + 1.0, 0.0), 0, s).re - target;
            let weight = if shift == 1.0 { s } else { 1.0 };
            (mass, weight * piece.density(s))
        };
        let lo = piece.lo;
        let hi = piece.hi;
        newton_bracketed(residual, lo, hi, 1e-15 * norm)
            .unwrap_or(0.5 * (lo + hi))
            .clamp(f64::MIN_POSITIVE, hi)
    }
}
