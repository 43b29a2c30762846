//! Exact event-driven simulation of the refracted processes `ξ` and `η`.

mod estimators;
mod rng;

pub use estimators::{
    estimate_l, exit_probability, feynman_kac, martingale_mean, occupation_histogram, tilted_vs_weighted, Estimate,
    LScheme, Occupation, DEFAULT_BLEND, DEFAULT_CENSOR_FACTOR,
};
pub use rng::{PathRng, Route};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{FragmentationKernel, JumpKind};
use crate::spectral::{Family, ModelParams};

/// A jump or a creeping crossing of 0 (`level_before == level_after == 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathEvent {
    pub time: f64,
    pub level_before: f64,
    pub level_after: f64,
}

impl PathEvent {
    pub fn is_jump(&self) -> bool {
        self.level_after != self.level_before
    }
}

/// One simulated trajectory on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub events: Vec<PathEvent>,
    pub final_level: f64,
    pub elapsed: f64,
    /// `log ℰ = a₊ · (time at or above 0) + a₋ · (time below 0)`.
    pub log_weight: f64,
}

impl PathRecord {
    pub fn jump_count(&self) -> usize {
        self.events.iter().filter(|e| e.is_jump()).count()
    }
}

/// When a simulation stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Fixed time.
    Time(f64),
    /// First creeping return to 0 from below, censored at `t_max`.
    ReturnToZero { t_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub process: Family,
    pub start_level: f64,
    pub seed: u64,
    pub n_paths: u64,
    pub horizon: Horizon,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::config("n_paths must be at least 1"));
        }
        let h = match self.horizon {
            Horizon::Time(t) => t,
            Horizon::ReturnToZero { t_max } => t_max,
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::config(format!("horizon must be positive and finite, got {h}")));
        }
        if !self.start_level.is_finite() {
            return Err(Error::config("start level must be finite"));
        }
        Ok(())
    }
}

/// Law used to draw the jump sizes of `ξ`.
///
/// Estimators multiply by the likelihood ratio of the exact law against the
/// proposal, so every choice has the same expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum JumpProposal {
    /// The jump measure `s ρ(s) ds` of `ξ` itself.
    Exact,
    /// The blended measure `(α s + 1 - α) ρ(s) ds` with `α ∈ (0, 1]`. The
    /// likelihood ratio `s / (α s + 1 - α)` per jump is bounded by `1/α`.
    Blend(f64),
}

impl JumpProposal {
    fn alpha(self) -> Result<f64> {
        match self {
            JumpProposal::Exact => Ok(1.0),
            JumpProposal::Blend(a) if a > 0.0 && a <= 1.0 => Ok(a),
            JumpProposal::Blend(a) => Err(Error::config(format!("blend weight must lie in (0, 1], got {a}"))),
        }
    }
}

/// Drifts, jump rate and jump law of one process.
#[derive(Clone, Copy)]
pub(crate) struct Dynamics<'k> {
    pub a_plus: f64,
    pub a_minus: f64,
    pub rate: f64,
    pub kernel: &'k FragmentationKernel,
    /// Probability that a jump is drawn from the `X` law.
    p_x: f64,
    /// Blend weight when sizes are importance sampled.
    blend: Option<f64>,
    /// `K - Λ`, the clock part of the log likelihood ratio.
    rate_gap: f64,
}

impl<'k> Dynamics<'k> {
    pub fn new(params: &ModelParams, kernel: &'k FragmentationKernel, process: Family) -> Result<Self> {
        Self::with_drifts(params.a_plus(), params.a_minus(), kernel, process)
    }

    pub fn with_drifts(a_plus: f64, a_minus: f64, kernel: &'k FragmentationKernel, process: Family) -> Result<Self> {
        let (k, r) = kernel.total_rates()?;
        let (rate, p_x) = match process {
            Family::Xi => (k, 1.0),
            Family::Eta => (r, 0.0),
        };
        Ok(Self { a_plus, a_minus, rate, kernel, p_x, blend: None, rate_gap: 0.0 })
    }

    /// `ξ` with jump sizes drawn from `proposal`.
    pub fn xi(params: &ModelParams, kernel: &'k FragmentationKernel, proposal: JumpProposal) -> Result<Self> {
        let alpha = proposal.alpha()?;
        let mut d = Self::new(params, kernel, Family::Xi)?;
        if alpha < 1.0 {
            let (k, r) = kernel.total_rates()?;
            d.rate = alpha * k + (1.0 - alpha) * r;
            d.p_x = alpha * k / d.rate;
            d.blend = Some(alpha);
            d.rate_gap = k - d.rate;
        }
        Ok(d)
    }

    fn jump(&self, rng: &mut PathRng, w: &mut Walker) -> f64 {
        let kind = if self.p_x >= 1.0 {
            JumpKind::X
        } else if self.p_x <= 0.0 {
            JumpKind::Y
        } else if rng.uniform() < self.p_x {
            JumpKind::X
        } else {
            JumpKind::Y
        };
        let z = self.kernel.sample_jump(kind, rng.uniform());
        if let Some(alpha) = self.blend {
            w.log_ratio += z - (alpha * z.exp() + 1.0 - alpha).ln();
        }
        z
    }
}

/// Running state of a path.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Walker {
    pub level: f64,
    pub time: f64,
    pub above: f64,
    pub below: f64,
    /// Jump part of the log likelihood ratio against the proposal.
    log_ratio: f64,
}

impl Walker {
    pub fn at(level: f64) -> Self {
        Self { level, time: 0.0, above: 0.0, below: 0.0, log_ratio: 0.0 }
    }

    pub fn log_weight(&self, d: &Dynamics) -> f64 {
        d.a_plus * self.above + d.a_minus * self.below
    }

    /// Log likelihood ratio of the exact law against the sampled one.
    pub fn log_likelihood_ratio(&self, d: &Dynamics) -> f64 {
        self.log_ratio - d.rate_gap * self.time
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Stop {
    Time(f64),
    ReturnToZero { t_max: f64 },
    /// Leave `[0, upper)`: above by creeping, below by a jump.
    Exit { upper: f64, t_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Horizon,
    Returned,
    Censored,
    ExitedAbove,
    ExitedBelow,
}

/// Receives the deterministic segments and the events of a path.
pub(crate) trait Observer {
    fn segment(&mut self, _from: f64, _to: f64, _slope: f64) {}
    fn event(&mut self, _event: PathEvent) {}
}

impl Observer for () {}

impl Observer for Vec<PathEvent> {
    fn event(&mut self, event: PathEvent) {
        self.push(event);
    }
}

/// Runs `w` until `stop`, drawing clocks and jumps from `rng`.
pub(crate) fn run<O: Observer>(d: &Dynamics, w: &mut Walker, stop: Stop, rng: &mut PathRng, obs: &mut O) -> Outcome {
    let t_end = match stop {
        Stop::Time(t) => t,
        Stop::ReturnToZero { t_max } | Stop::Exit { t_max, .. } => t_max,
    };
    loop {
        let mut clock = rng.exponential(d.rate);
        loop {
            let below = w.level < 0.0;
            let slope = if below { d.a_minus } else { d.a_plus };
            let to_cross = if below { -w.level / d.a_minus } else { f64::INFINITY };
            let to_upper = match stop {
                Stop::Exit { upper, .. } => (upper - w.level) / slope,
                _ => f64::INFINITY,
            };
            let to_end = t_end - w.time;
            let step = clock.min(to_cross).min(to_upper).min(to_end);
            let from = w.level;
            w.level += slope * step;
            if below {
                w.below += step;
            } else {
                w.above += step;
            }
            w.time += step;
            clock -= step;
            if step == to_end {
                w.time = t_end;
                obs.segment(from, w.level, slope);
                return match stop {
                    Stop::Time(_) => Outcome::Horizon,
                    _ => Outcome::Censored,
                };
            }
            if step == to_upper {
                if let Stop::Exit { upper, .. } = stop {
                    w.level = upper;
                }
                obs.segment(from, w.level, slope);
                return Outcome::ExitedAbove;
            }
            if step == to_cross {
                w.level = 0.0;
                obs.segment(from, 0.0, slope);
                obs.event(PathEvent { time: w.time, level_before: 0.0, level_after: 0.0 });
                if matches!(stop, Stop::ReturnToZero { .. }) {
                    return Outcome::Returned;
                }
                continue;
            }
            obs.segment(from, w.level, slope);
            break;
        }
        let before = w.level;
        w.level += d.jump(rng, w);
        obs.event(PathEvent { time: w.time, level_before: before, level_after: w.level });
        if matches!(stop, Stop::Exit { .. }) && w.level < 0.0 {
            return Outcome::ExitedBelow;
        }
    }
}

/// Simulates path `index` of `config`.
pub fn simulate_path(
    params: &ModelParams,
    kernel: &FragmentationKernel,
    config: &SimConfig,
    index: u64,
) -> Result<PathRecord> {
    config.validate()?;
    let d = Dynamics::new(params, kernel, config.process)?;
    Ok(simulate_with(&d, config, index))
}

fn simulate_with(d: &Dynamics, config: &SimConfig, index: u64) -> PathRecord {
    let mut rng = PathRng::new(config.seed, Route::Path, index);
    let mut w = Walker::at(config.start_level);
    let mut events = Vec::new();
    let stop = match config.horizon {
        Horizon::Time(t) => Stop::Time(t),
        Horizon::ReturnToZero { t_max } => Stop::ReturnToZero { t_max },
    };
    run(d, &mut w, stop, &mut rng, &mut events);
    PathRecord { events, final_level: w.level, elapsed: w.time, log_weight: w.log_weight(d) }
}

/// Simulates all `config.n_paths` paths in index order.
pub fn simulate_paths(params: &ModelParams, kernel: &FragmentationKernel, config: &SimConfig) -> Result<Vec<PathRecord>> {
    config.validate()?;
    let d = Dynamics::new(params, kernel, config.process)?;
    Ok((0..config.n_paths).into_par_iter().map(|i| simulate_with(&d, config, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical() -> (ModelParams, FragmentationKernel) {
        (ModelParams::new(2.0, 0.5).unwrap(), FragmentationKernel::monomial(1.0).unwrap())
    }

    fn config(process: Family, start: f64, t: f64, seed: u64) -> SimConfig {
        SimConfig { process, start_level: start, seed, n_paths: 1, horizon: Horizon::Time(t) }
    }

    #[test]
    fn negligible_rate_gives_pure_drift() {
        let params = ModelParams::new(2.0, 0.5).unwrap();
        let kernel = FragmentationKernel::tabulated(vec![0.25, 0.75], vec![1e-9, 1e-9], 0.5).unwrap();
        let rec = simulate_path(&params, &kernel, &config(Family::Xi, 0.3, 4.0, 1), 0).unwrap();
        assert_eq!(rec.jump_count(), 0);
        assert!((rec.final_level - (0.3 + 0.5 * 4.0)).abs() < 1e-14);
        assert!((rec.log_weight - 0.5 * 4.0).abs() < 1e-14);
        assert_eq!(rec.elapsed, 4.0);
    }

    #[test]
    fn creeps_to_zero_and_switches_slope() {
        let params = ModelParams::new(2.0, 0.5).unwrap();
        let kernel = FragmentationKernel::tabulated(vec![0.25, 0.75], vec![1e-9, 1e-9], 0.5).unwrap();
        let rec = simulate_path(&params, &kernel, &config(Family::Xi, -1.0, 1.5, 3), 0).unwrap();
        assert_eq!(rec.events.len(), 1);
        let crossing = rec.events[0];
        assert_eq!(crossing.time, 0.5);
        assert_eq!((crossing.level_before, crossing.level_after), (0.0, 0.0));
        assert!((rec.final_level - 0.5).abs() < 1e-14);
        assert!((rec.log_weight - (2.0 * 0.5 + 0.5 * 1.0)).abs() < 1e-14);
    }

    #[test]
    fn path_invariants_hold() {
        let (params, kernel) = canonical();
        for process in [Family::Xi, Family::Eta] {
            let cfg = SimConfig { n_paths: 200, ..config(process, 0.0, 10.0, 11) };
            for rec in simulate_paths(&params, &kernel, &cfg).unwrap() {
                assert!(rec.log_weight >= 0.5 * 10.0 - 1e-9 && rec.log_weight <= 2.0 * 10.0 + 1e-9);
                let mut t = 0.0;
                let mut level = 0.0;
                for e in &rec.events {
                    let slope_end = level + if level < 0.0 { 2.0 } else { 0.5 } * (e.time - t);
                    if level < 0.0 {
                        assert!(slope_end <= 1e-12, "crossed 0 without a crossing event");
                    }
                    assert!((slope_end - e.level_before).abs() < 1e-9);
                    if e.is_jump() {
                        assert!(e.level_after < e.level_before);
                    } else {
                        assert_eq!(e.level_before, 0.0);
                    }
                    t = e.time;
                    level = e.level_after;
                }
            }
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let (params, kernel) = canonical();
        let cfg = SimConfig { n_paths: 50, ..config(Family::Xi, 0.0, 5.0, 99) };
        assert_eq!(simulate_paths(&params, &kernel, &cfg).unwrap(), simulate_paths(&params, &kernel, &cfg).unwrap());
    }

    #[test]
    fn excursion_horizon_stops_on_return() {
        let (params, kernel) = canonical();
        let cfg = SimConfig {
            n_paths: 100,
            horizon: Horizon::ReturnToZero { t_max: 400.0 },
            ..config(Family::Eta, 0.0, 1.0, 5)
        };
        for rec in simulate_paths(&params, &kernel, &cfg).unwrap() {
            if rec.elapsed < 400.0 {
                assert_eq!(rec.final_level, 0.0);
                assert!(!rec.events.last().unwrap().is_jump());
            }
        }
    }

    #[test]
    fn jump_counts_are_poisson() {
        let (params, kernel) = canonical();
        let cfg = SimConfig { n_paths: 10_000, ..config(Family::Xi, 0.0, 10.0, 2024) };
        let counts: Vec<usize> = simulate_paths(&params, &kernel, &cfg).unwrap().iter().map(|r| r.jump_count()).collect();
        let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        // Poisson(5): standard error of the mean is sqrt(5 / n).
        assert!((mean - 5.0).abs() < 3.0 * (5.0f64 / 1e4).sqrt(), "mean {mean}");

        // Chi-square goodness of fit with tail bins pooled to expected counts >= 5.
        let n = counts.len() as f64;
        let pmf = |k: usize| (-5.0f64).exp() * 5.0f64.powi(k as i32) / (1..=k).map(|j| j as f64).product::<f64>();
        let (lo, hi) = (1usize, 11usize);
        let mut observed = vec![0.0; hi - lo + 1];
        for &c in &counts {
            observed[c.clamp(lo, hi) - lo] += 1.0;
        }
        let mut expected: Vec<f64> = (lo..=hi).map(|k| n * pmf(k)).collect();
        expected[0] += n * pmf(0);
        expected[hi - lo] = n - expected[..hi - lo].iter().sum::<f64>();
        let chi2: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
        // Upper 0.001 quantile of chi-square with 10 degrees of freedom.
        assert!(chi2 < 29.588, "chi2 = {chi2}");
    }
}
