//! Monte Carlo estimators built on the path simulator.

use rayon::prelude::*;
use serde::Serialize;

use super::rng::{PathRng, Route};
use super::{run, Dynamics, JumpProposal, Observer, Outcome, Stop, Walker};
use crate::error::{Error, Result};
use crate::kernel::FragmentationKernel;
use crate::numerics::fit::weighted_linear_fit;
use crate::numerics::NeumaierSum;
use crate::spectral::{self, Branch, Family, ModelParams, Recurrence, Regime};

/// Default excursion censoring horizon in units of `1/λ*`.
pub const DEFAULT_CENSOR_FACTOR: f64 = 200.0;
/// Blend weight used by [`LScheme::Auto`] where the direct estimator has
/// infinite variance.
pub const DEFAULT_BLEND: f64 = 0.5;

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub estimator: String,
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub censored_fraction: Option<f64>,
}

impl Estimate {
    fn from_values(estimator: &str, values: &[f64], seed: u64) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().copied().collect::<NeumaierSum>().value() / n;
        let ss = values.iter().map(|v| (v - mean) * (v - mean)).collect::<NeumaierSum>().value();
        let stderr = if values.len() > 1 { (ss / (n - 1.0) / n).sqrt() } else { 0.0 };
        Self { estimator: estimator.into(), value: mean, stderr, n: values.len() as u64, seed, censored_fraction: None }
    }

    fn exact(estimator: &str, value: f64, n: u64, seed: u64) -> Self {
        Self { estimator: estimator.into(), value, stderr: 0.0, n, seed, censored_fraction: None }
    }

    /// Whether `target` lies within `k` standard errors.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }
}

/// How `L(q)` is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LScheme {
    /// `e^{-qH} ℰ_H` over excursions of `ξ`.
    Direct,
    /// `e^{(λ*-q)H}` over excursions of `η`, the same expectation after the
    /// change of measure by `ℳ'`. Degenerate at `q = λ*`.
    Tilted,
    /// `Direct` with jump sizes from [`JumpProposal::Blend`].
    Blend(f64),
    /// `Direct` where its variance is finite, `Blend(DEFAULT_BLEND)` elsewhere.
    Auto,
}

fn check_run(n_paths: u64, t: f64, x: f64) -> Result<()> {
    if n_paths < 1 {
        return Err(Error::config("n_paths must be at least 1"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::config(format!("time must be nonnegative and finite, got {t}")));
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::config(format!("start size must be positive, got {x}")));
    }
    Ok(())
}

fn par_values<F: Fn(u64) -> f64 + Sync>(n: u64, f: F) -> Vec<f64> {
    (0..n).into_par_iter().map(&f).collect()
}

/// `T_t f(x) = x E_x(ℰ_t f(X_t) / X_t)`.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac<F: Fn(f64) -> f64 + Sync>(
    params: &ModelParams,
    kernel: &FragmentationKernel,
    f: F,
    t: f64,
    x: f64,
    n_paths: u64,
    proposal: JumpProposal,
    seed: u64,
) -> Result<Estimate> {
    check_run(n_paths, t, x)?;
    if t == 0.0 {
        return Ok(Estimate::exact("feynman_kac", f(x), n_paths, seed));
    }
    let d = Dynamics::xi(params, kernel, proposal)?;
    let start = x.ln();
    let values = par_values(n_paths, |i| {
        let mut rng = PathRng::new(seed, Route::FeynmanKac, i);
        let mut w = Walker::at(start);
        run(&d, &mut w, Stop::Time(t), &mut rng, &mut ());
        (start + w.log_weight(&d) - w.level + w.log_likelihood_ratio(&d)).exp() * f(w.level.exp())
    });
    Ok(Estimate::from_values("feynman_kac", &values, seed))
}

#[allow(clippy::too_many_arguments)]
fn weighted_values<F: Fn(f64) -> f64 + Sync>(
    params: &ModelParams,
    kernel: &FragmentationKernel,
    f: &F,
    t: f64,
    x: f64,
    n_paths: u64,
    proposal: JumpProposal,
    seed: u64,
) -> Result<Vec<f64>> {
    let d = Dynamics::xi(params, kernel, proposal)?;
    let lambda = kernel.lambda_star()?;
    let start = x.ln();
    Ok(par_values(n_paths, |i| {
        let mut rng = PathRng::new(seed, Route::Weighted, i);
        let mut w = Walker::at(start);
        run(&d, &mut w, Stop::Time(t), &mut rng, &mut ());
        (start - w.level + w.log_weight(&d) - lambda * t + w.log_likelihood_ratio(&d)).exp() * f(w.level.exp())
    }))
}

/// `E_x[ℳ'_t]` with `log ℳ'_t = log x - ξ_t + log ℰ_t - λ* t`; equal to 1.
pub fn martingale_mean(
    params: &ModelParams,
    kernel: &FragmentationKernel,
    t: f64,
    x: f64,
    n_paths: u64,
    proposal: JumpProposal,
    seed: u64,
) -> Result<Estimate> {
    check_run(n_paths, t, x)?;
    if t == 0.0 {
        return Ok(Estimate::exact("martingale_mean", 1.0, n_paths, seed));
    }
    let values = weighted_values(params, kernel, &|_| 1.0, t, x, n_paths, proposal, seed)?;
    Ok(Estimate::from_values("martingale_mean", &values, seed))
}

/// Two estimates of `e^{-λ* t} T_t f(x)`: `Ẽ_x f(Y_t)` by simulating `Y`,
/// and `E_x[ℳ'_t f(X_t)]` by weighting `X`.
pub fn tilted_vs_weighted<F: Fn(f64) -> f64 + Sync>(
    params: &ModelParams,
    kernel: &FragmentationKernel,
    f: F,
    t: f64,
    x: f64,
    n_paths: u64,
    seed: u64,
) -> Result<(Estimate, Estimate)> {
    check_run(n_paths, t, x)?;
    let regime = spectral::malthus(params, kernel)?.regime;
    if matches!(regime, Regime::FailsLow | Regime::FailsHigh) {
        return Err(Error::regime(format!("the tilted process needs a Malthusian or boundary regime, found {regime:?}")));
    }
    if t == 0.0 {
        let v = f(x);
        return Ok((Estimate::exact("tilted_Y", v, n_paths, seed), Estimate::exact("weighted_Mprime", v, n_paths, seed)));
    }
    let d = Dynamics::new(params, kernel, Family::Eta)?;
    let start = x.ln();
    let tilted = par_values(n_paths, |i| {
        let mut rng = PathRng::new(seed, Route::Tilted, i);
        let mut w = Walker::at(start);
        run(&d, &mut w, Stop::Time(t), &mut rng, &mut ());
        f(w.level.exp())
    });
    let weighted = weighted_values(params, kernel, &f, t, x, n_paths, JumpProposal::Exact, seed)?;
    Ok((Estimate::from_values("tilted_Y", &tilted, seed), Estimate::from_values("weighted_Mprime", &weighted, seed)))
}

/// Abscissa above which the direct `L` estimator has finite variance.
fn direct_variance_threshold(params: &ModelParams, kernel: &FragmentationKernel) -> Result<f64> {
    let minus = params.exponent(kernel, Family::Xi, Branch::Minus).infimum()?.value;
    let plus = params.exponent(kernel, Family::Xi, Branch::Plus).infimum()?.value;
    Ok(0.5 * (minus + 2.0 * params.a_minus()).max(plus + 2.0 * params.a_plus()))
}

/// `L(q) = E(e^{-qH} ℰ_H, H < ∞)` over `n_paths` excursions from 0.
///
/// Excursions longer than `t_max` (default `200/λ*`) contribute 0 and are
/// reported in `censored_fraction`.
pub fn estimate_l(
    params: &ModelParams,
    kernel: &FragmentationKernel,
    q: f64,
    n_paths: u64,
    t_max: Option<f64>,
    scheme: LScheme,
    seed: u64,
) -> Result<Estimate> {
    if n_paths < 1 {
        return Err(Error::config("n_paths must be at least 1"));
    }
    let qs = spectral::q_star(params, kernel)?;
    if !(q > qs) {
        return Err(Error::config(format!("q = {q} must exceed q* = {qs}")));
    }
    let lambda = kernel.lambda_star()?;
    let t_max = t_max.unwrap_or(DEFAULT_CENSOR_FACTOR / lambda);
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::config(format!("t_max must be positive and finite, got {t_max}")));
    }
    let scheme = match scheme {
        LScheme::Auto if q > direct_variance_threshold(params, kernel)? => LScheme::Direct,
        LScheme::Auto => LScheme::Blend(DEFAULT_BLEND),
        s => s,
    };
    let (d, name) = match scheme {
        LScheme::Tilted => (Dynamics::new(params, kernel, Family::Eta)?, "L_tilted"),
        LScheme::Blend(alpha) => (Dynamics::xi(params, kernel, JumpProposal::Blend(alpha))?, "L_blend"),
        _ => (Dynamics::new(params, kernel, Family::Xi)?, "L_direct"),
    };
    let samples: Vec<(f64, bool)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = PathRng::new(seed, Route::Excursion, i);
            let mut w = Walker::at(0.0);
            match run(&d, &mut w, Stop::ReturnToZero { t_max }, &mut rng, &mut ()) {
                Outcome::Returned => {
                    let log_value = match scheme {
                        LScheme::Tilted => (lambda - q) * w.time,
                        _ => w.log_weight(&d) - q * w.time + w.log_likelihood_ratio(&d),
                    };
                    (log_value.exp(), false)
                }
                _ => (0.0, true),
            }
        })
        .collect();
    let values: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let censored = samples.iter().filter(|s| s.1).count();
    let mut est = Estimate::from_values(name, &values, seed);
    est.censored_fraction = Some(censored as f64 / n_paths as f64);
    Ok(est)
}

/// `P₀(τ_upper⁺ < τ_0⁻)` for `η` with the single drift `drift`.
pub fn exit_probability(kernel: &FragmentationKernel, drift: f64, upper: f64, n_paths: u64, seed: u64) -> Result<Estimate> {
    if n_paths < 1 {
        return Err(Error::config("n_paths must be at least 1"));
    }
    if !(drift > 0.0 && upper > 0.0 && upper.is_finite()) {
        return Err(Error::config("drift and upper level must be positive"));
    }
    let d = Dynamics::with_drifts(drift, drift, kernel, Family::Eta)?;
    let values = par_values(n_paths, |i| {
        let mut rng = PathRng::new(seed, Route::Exit, i);
        let mut w = Walker::at(0.0);
        match run(&d, &mut w, Stop::Exit { upper, t_max: f64::INFINITY }, &mut rng, &mut ()) {
            Outcome::ExitedAbove => 1.0,
            _ => 0.0,
        }
    });
    Ok(Estimate::from_values("exit_probability", &values, seed))
}

/// Time-weighted occupation of one long path of `Y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Occupation {
    /// Bin edges on the size scale.
    pub edges: Vec<f64>,
    /// Fraction of the total time spent in each bin.
    pub fractions: Vec<f64>,
    pub t_total: f64,
    pub mass_below_one: f64,
    pub mass_above_one: f64,
    pub seed: u64,
}

impl Occupation {
    /// Empirical density per unit size.
    pub fn density(&self) -> Vec<f64> {
        self.fractions.iter().zip(self.edges.windows(2)).map(|(f, e)| f / (e[1] - e[0])).collect()
    }

    /// Exponential decay rate of the occupation density of `ln Y` over bins
    /// whose log-centre lies in `[y_lo, y_hi]`.
    pub fn log_scale_decay_rate(&self, y_lo: f64, y_hi: f64) -> Result<f64> {
        let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
        for (f, e) in self.fractions.iter().zip(self.edges.windows(2)) {
            let (lo, hi) = (e[0].ln(), e[1].ln());
            let centre = 0.5 * (lo + hi);
            if *f > 0.0 && centre >= y_lo && centre <= y_hi {
                xs.push(centre);
                ys.push((f / (hi - lo)).ln());
                ws.push(*f);
            }
        }
        if xs.len() < 2 {
            return Err(Error::domain("fewer than two occupied bins in the fit window"));
        }
        Ok(-weighted_linear_fit(&xs, &ys, Some(&ws)).slope)
    }
}

struct Sojourn<'a> {
    log_edges: &'a [f64],
    time: Vec<f64>,
}

impl Observer for Sojourn<'_> {
    fn segment(&mut self, from: f64, to: f64, slope: f64) {
        let edges = self.log_edges;
        if to <= from || to <= edges[0] || from >= edges[edges.len() - 1] {
            return;
        }
        let mut i = edges.partition_point(|&b| b <= from).saturating_sub(1);
        while i + 1 < edges.len() && edges[i] < to {
            let overlap = to.min(edges[i + 1]) - from.max(edges[i]);
            if overlap > 0.0 {
                self.time[i] += overlap / slope;
            }
            i += 1;
        }
    }
}

/// Occupation histogram of `Y = e^η` started at 1 over `[0, t_total]`, with
/// exact time-in-bin accounting along the linear segments.
pub fn occupation_histogram(
    params: &ModelParams,
    kernel: &FragmentationKernel,
    t_total: f64,
    edges: &[f64],
    seed: u64,
) -> Result<Occupation> {
    if spectral::classify_recurrence(params, kernel, Family::Eta)? != Recurrence::PositiveRecurrent {
        return Err(Error::regime("the tilted process is not positive recurrent"));
    }
    if !(t_total > 0.0 && t_total.is_finite()) {
        return Err(Error::config(format!("t_total must be positive and finite, got {t_total}")));
    }
    if edges.len() < 2 || edges[0] <= 0.0 || edges.windows(2).any(|e| e[1] <= e[0]) {
        return Err(Error::config("bin edges must be positive and strictly increasing"));
    }
    let log_edges: Vec<f64> = edges.iter().map(|e| e.ln()).collect();
    let d = Dynamics::new(params, kernel, Family::Eta)?;
    let mut rng = PathRng::new(seed, Route::Occupation, 0);
    let mut w = Walker::at(0.0);
    let mut obs = Sojourn { log_edges: &log_edges, time: vec![0.0; edges.len() - 1] };
    run(&d, &mut w, Stop::Time(t_total), &mut rng, &mut obs);
    Ok(Occupation {
        edges: edges.to_vec(),
        fractions: obs.time.iter().map(|t| t / t_total).collect(),
        t_total,
        mass_below_one: w.below / t_total,
        mass_above_one: w.above / t_total,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::two_sided_exit;

    fn canonical() -> (ModelParams, FragmentationKernel) {
        (ModelParams::new(2.0, 0.5).unwrap(), FragmentationKernel::monomial(1.0).unwrap())
    }

    #[test]
    fn time_zero_is_the_identity() {
        let (params, kernel) = canonical();
        let f = |x: f64| x * x;
        assert_eq!(feynman_kac(&params, &kernel, f, 0.0, 1.7, 10, JumpProposal::Exact, 1).unwrap().value, 1.7 * 1.7);
        let (y, m) = tilted_vs_weighted(&params, &kernel, f, 0.0, 1.7, 10, 1).unwrap();
        assert_eq!((y.value, m.value), (1.7 * 1.7, 1.7 * 1.7));
    }

    #[test]
    fn constant_function_grows_at_the_malthus_rate() {
        let (params, kernel) = canonical();
        let t = 2.0;
        let est = feynman_kac(&params, &kernel, |_| 1.0, t, 1.0, 100_000, JumpProposal::Exact, 17).unwrap();
        let target = (0.5f64 * t).exp();
        assert!(est.covers(target, 3.0), "{est:?} vs {target}");
    }

    #[test]
    fn tail_mass_through_the_semigroup() {
        let (params, kernel) = canonical();
        let t = 8.0;
        let est = feynman_kac(&params, &kernel, |x| if x >= 1.0 { 1.0 } else { 0.0 }, t, 1.0, 200_000, JumpProposal::Blend(0.5), 23).unwrap();
        let scaled = est.value * (-0.5 * t).exp();
        let se = est.stderr * (-0.5 * t).exp();
        assert!((scaled - 2.0 / 3.0).abs() <= 3.0 * se + 5e-3, "{scaled} +- {se}");
    }

    #[test]
    fn tilted_and_weighted_routes_agree() {
        let (params, kernel) = canonical();
        let f = |x: f64| if (1.0..=2.0).contains(&x) { 1.0 } else { 0.0 };
        let (y, m) = tilted_vs_weighted(&params, &kernel, f, 5.0, 1.0, 100_000, 31).unwrap();
        let se = (y.stderr.powi(2) + m.stderr.powi(2)).sqrt();
        assert!((y.value - m.value).abs() <= 3.0 * se, "{y:?} {m:?}");
    }

    #[test]
    fn weighted_martingale_has_unit_mean() {
        let (params, kernel) = canonical();
        let plain = martingale_mean(&params, &kernel, 1.0, 1.0, 100_000, JumpProposal::Exact, 41).unwrap();
        assert!(plain.covers(1.0, 3.0), "{plain:?}");
        for t in [1.0, 5.0, 10.0] {
            let est = martingale_mean(&params, &kernel, t, 1.0, 100_000, JumpProposal::Blend(0.5), 41).unwrap();
            assert!(est.covers(1.0, 3.0), "t={t}: {est:?}");
        }
    }

    #[test]
    fn l_estimates_match_the_analytic_function() {
        let (params, kernel) = canonical();
        let at_lambda = estimate_l(&params, &kernel, 0.5, 100_000, None, LScheme::Auto, 3).unwrap();
        assert_eq!(at_lambda.estimator, "L_blend");
        assert!(at_lambda.covers(1.0, 3.0) && at_lambda.stderr < 0.01, "{at_lambda:?}");
        let tilted = estimate_l(&params, &kernel, 0.5, 1000, None, LScheme::Tilted, 3).unwrap();
        assert_eq!((tilted.value, tilted.censored_fraction), (1.0, Some(0.0)));
        for (q, scheme) in [
            (1.5, LScheme::Direct),
            (1.5, LScheme::Tilted),
            (1.5, LScheme::Blend(0.3)),
            (0.75, LScheme::Tilted),
            (0.75, LScheme::Auto),
        ] {
            let exact = spectral::l_function(&params, &kernel, q).unwrap();
            let est = estimate_l(&params, &kernel, q, 100_000, None, scheme, 5).unwrap();
            assert!(est.covers(exact, 3.0), "q={q} {scheme:?}: {est:?} vs {exact}");
        }
        // Short excursions keep L(50) near 1e-3 rather than 0.
        let exact = spectral::l_function(&params, &kernel, 50.0).unwrap();
        let far = estimate_l(&params, &kernel, 50.0, 10_000, None, LScheme::Direct, 7).unwrap();
        assert!(exact < 2e-3 && far.covers(exact, 3.0), "{far:?} vs {exact}");
    }

    #[test]
    fn blending_keeps_the_expectation() {
        let (params, kernel) = canonical();
        let f = |x: f64| x.min(3.0);
        let exact = feynman_kac(&params, &kernel, f, 2.0, 0.8, 200_000, JumpProposal::Exact, 8).unwrap();
        let blend = feynman_kac(&params, &kernel, f, 2.0, 0.8, 200_000, JumpProposal::Blend(0.4), 8).unwrap();
        let se = (exact.stderr.powi(2) + blend.stderr.powi(2)).sqrt();
        assert!((exact.value - blend.value).abs() <= 3.0 * se, "{exact:?} {blend:?}");
        assert!(matches!(
            feynman_kac(&params, &kernel, f, 1.0, 1.0, 10, JumpProposal::Blend(0.0), 8),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn l_refuses_abscissas_at_or_below_q_star() {
        let (params, kernel) = canonical();
        let qs = spectral::q_star(&params, &kernel).unwrap();
        assert!(matches!(estimate_l(&params, &kernel, qs, 10, None, LScheme::Direct, 0), Err(Error::Config(_))));
    }

    #[test]
    fn exit_probability_matches_scale_functions() {
        let kernel = FragmentationKernel::monomial(1.0).unwrap();
        let drift = 0.5;
        let exp = spectral::LaplaceExponent::new(drift, Family::Eta, &kernel);
        for upper in [0.5, 2.0] {
            let exact = two_sided_exit(&exp, 0.0, upper).unwrap();
            let est = exit_probability(&kernel, drift, upper, 100_000, 13).unwrap();
            assert!(est.covers(exact, 3.0), "upper={upper}: {est:?} vs {exact}");
        }
    }

    #[test]
    fn occupation_masses_and_tail_rate() {
        let (params, kernel) = canonical();
        let edges: Vec<f64> = (0..=160).map(|i| (-8.0 + 0.1 * i as f64).exp()).collect();
        let occ = occupation_histogram(&params, &kernel, 1e6, &edges, 1).unwrap();
        assert!((occ.mass_above_one - 2.0 / 3.0).abs() < 0.01, "{}", occ.mass_above_one);
        assert!((occ.mass_below_one - 1.0 / 3.0).abs() < 0.01);
        let total: f64 = occ.fractions.iter().sum();
        assert!(total <= 1.0 + 1e-12 && total > 0.99);
        let rate = occ.log_scale_decay_rate(0.0, 5.0).unwrap();
        assert!((rate - 1.0).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn occupation_requires_positive_recurrence() {
        let params = ModelParams::new(0.9, 0.5).unwrap();
        let kernel = FragmentationKernel::monomial(1.0).unwrap();
        let edges = [0.5, 1.0, 2.0];
        assert!(matches!(occupation_histogram(&params, &kernel, 10.0, &edges, 0), Err(Error::Regime(_))));
    }
}
