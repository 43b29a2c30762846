//! Finite-volume solver for the growth-fragmentation equation on a
//! log-uniform grid.
//!
//! The state holds the particle count of each cell. Within a cell the count
//! is taken to be uniform in `ln x`, which makes the fragmentation gain a
//! convolution in the cell index.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::FragmentationKernel;
use crate::numerics::fit::weighted_linear_fit;
use crate::numerics::NeumaierSum;
use crate::spectral::ModelParams;

/// Relative tolerance for the edge at `x = 1`.
const ALIGNMENT_TOL: f64 = 1e-9;
/// Default fraction of the stability bound used by [`evolve_and_observe`].
pub const DEFAULT_DT_SAFETY: f64 = 0.9;
/// Stabilization threshold of [`profile_extract`]: L1 change of the
/// normalized profile per unit time.
pub const STATIONARITY_TOL: f64 = 1e-4;

/// Geometric grid on `[x_min, x_max]` with an edge exactly at 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    log_step: f64,
    edges: Vec<f64>,
    one: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_min > 0.0 && x_min < 1.0 && x_max > 1.0 && x_max.is_finite()) {
            return Err(Error::config(format!("grid needs 0 < x_min < 1 < x_max, got [{x_min}, {x_max}]")));
        }
        if n_cells < 2 {
            return Err(Error::config("grid needs at least two cells"));
        }
        let log_step = (x_max.ln() - x_min.ln()) / n_cells as f64;
        let below = -x_min.ln() / log_step;
        let one = below.round();
        if (below - one).abs() > ALIGNMENT_TOL * below.max(1.0) || one < 1.0 || one >= n_cells as f64 {
            return Err(Error::config(format!(
                "no cell edge falls on x = 1: ln(1/x_min)/step = {below} is not an integer"
            )));
        }
        let one = one as usize;
        let mut edges: Vec<f64> = (0..=n_cells).map(|i| ((i as f64 - one as f64) * log_step).exp()).collect();
        edges[0] = x_min;
        edges[n_cells] = x_max;
        edges[one] = 1.0;
        Ok(Self { x_min, x_max, log_step, edges, one })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_cells(&self) -> usize {
        self.edges.len() - 1
    }

    /// Cell width in `ln x`.
    pub fn log_step(&self) -> f64 {
        self.log_step
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Index of the first cell at or above `x = 1`.
    pub fn index_of_one(&self) -> usize {
        self.one
    }

    /// Geometric cell centres.
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| (e[0] * e[1]).sqrt()).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| e[1] - e[0]).collect()
    }

    /// Mean of `x` over a cell with log-uniform content.
    pub fn cell_means(&self) -> Vec<f64> {
        let h = self.log_step;
        self.edges.windows(2).map(|e| (e[1] - e[0]) / h).collect()
    }

    pub fn cell_containing(&self, x: f64) -> Option<usize> {
        if !(x >= self.x_min && x < self.x_max) {
            return None;
        }
        Some((self.edges.partition_point(|&e| e <= x) - 1).min(self.n_cells() - 1))
    }

    /// Fraction of each cell's log-length inside `[lo, hi]`.
    pub fn overlap(&self, lo: f64, hi: f64) -> Vec<f64> {
        let (llo, lhi) = (lo.max(f64::MIN_POSITIVE).ln(), hi.ln());
        self.edges
            .windows(2)
            .map(|e| {
                let (a, b) = (e[0].ln(), e[1].ln());
                ((lhi.min(b) - llo.max(a)) / (b - a)).clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Which terms of the equation an operator contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub transport: bool,
    pub gain: bool,
    pub loss: bool,
}

impl Terms {
    pub const ALL: Terms = Terms { transport: true, gain: true, loss: true };
}

/// Instantaneous count leaving the domain per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Leakage {
    /// Transport through `x_max`.
    pub top: f64,
    /// Fragments landing below `x_min`.
    pub bottom: f64,
}

/// Discretized right-hand side of the equation.
pub struct PdeOperator {
    grid: Grid,
    terms: Terms,
    lambda: f64,
    /// Transport rate out of each cell.
    out_rate: Vec<f64>,
    /// Drift `a` of each cell.
    drift: Vec<f64>,
    loss: f64,
    /// `w[m]`: rate at which a particle produces fragments `m` cells lower.
    weights: Vec<f64>,
    /// Fragment rate lost below `x_min` from each source cell.
    tail: Vec<f64>,
    fft_len: usize,
    weights_fft: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PdeOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PdeOperator").field("n_cells", &self.grid.n_cells()).field("terms", &self.terms).finish()
    }
}

/// Full operator: upwind transport, fragmentation gain and loss `K u`.
pub fn build_operator(grid: &Grid, params: &ModelParams, kernel: &FragmentationKernel) -> Result<PdeOperator> {
    build_operator_with(grid, params, kernel, Terms::ALL)
}

/// Tent weights `w[m] = ∫ ρ(s) max(0, 1 - |ln s / h + m|) ds`.
fn gain_weights(kernel: &FragmentationKernel, h: f64, n: usize) -> Result<Vec<f64>> {
    let p0 = |u: f64| kernel.partial_log_moment(0.0, 0, u);
    let p1 = |u: f64| kernel.partial_log_moment(0.0, 1, u);
    // Partial moments at the nodes s = e^{-j h}, j = 0..=n.
    let mut m0 = Vec::with_capacity(n + 1);
    let mut m1 = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let s = (-(j as f64) * h).exp();
        m0.push(p0(s)?);
        m1.push(p1(s)?);
    }
    let mut w = vec![0.0; n];
    for (m, wm) in w.iter_mut().enumerate() {
        let centre = -(m as f64) * h;
        // Upper half: s in (e^{-m h}, e^{-(m-1) h}), weight 1 - (ln s - centre) / h.
        if m > 0 {
            let (d0, d1) = (m0[m - 1] - m0[m], m1[m - 1] - m1[m]);
            *wm += d0 - (d1 - centre * d0) / h;
        }
        // Lower half: s in (e^{-(m+1) h}, e^{-m h}), weight 1 + (ln s - centre) / h.
        let (d0, d1) = (m0[m] - m0[m + 1], m1[m] - m1[m + 1]);
        *wm += d0 + (d1 - centre * d0) / h;
    }
    Ok(w)
}

pub fn build_operator_with(
    grid: &Grid,
    params: &ModelParams,
    kernel: &FragmentationKernel,
    terms: Terms,
) -> Result<PdeOperator> {
    let n = grid.n_cells();
    let h = grid.log_step();
    let (k, r) = kernel.total_rates()?;
    let drift: Vec<f64> =
        (0..n).map(|i| if i >= grid.index_of_one() { params.a_plus() } else { params.a_minus() }).collect();
    // Upwind flux c(left edge) * cell average: a / (e^h - 1) per unit count.
    let out_rate: Vec<f64> =
        drift.iter().map(|a| if terms.transport { a / h.exp_m1() } else { 0.0 }).collect();
    let weights = if terms.gain { gain_weights(kernel, h, n)? } else { vec![0.0; n] };
    let mut tail = Vec::with_capacity(n);
    let mut kept = NeumaierSum::new();
    for w in &weights {
        kept.add(*w);
        tail.push(if terms.gain { (r - kept.value()).max(0.0) } else { 0.0 });
    }
    let fft_len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(fft_len);
    let inverse = planner.plan_fft_inverse(fft_len);
    let mut weights_fft: Vec<Complex64> = (0..fft_len).map(|i| Complex64::new(weights.get(i).copied().unwrap_or(0.0), 0.0)).collect();
    forward.process(&mut weights_fft);
    Ok(PdeOperator {
        grid: grid.clone(),
        terms,
        lambda: r - k,
        out_rate,
        drift,
        loss: if terms.loss { k } else { 0.0 },
        weights,
        tail,
        fft_len,
        weights_fft,
        forward,
        inverse,
    })
}

impl PdeOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn terms(&self) -> Terms {
        self.terms
    }

    /// `λ* = r̃ - K`.
    pub fn lambda_star(&self) -> f64 {
        self.lambda
    }

    pub fn gain_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Drift `a` of each cell, so that `c(x) = a x` inside it.
    pub fn drifts(&self) -> &[f64] {
        &self.drift
    }

    /// Largest stable explicit step: every cell keeps a nonnegative share
    /// of its own content.
    pub fn cfl_bound(&self) -> f64 {
        let max_out = self.out_rate.iter().copied().fold(0.0, f64::max);
        1.0 / (max_out + self.loss)
    }

    /// Fragmentation gain of each cell: `Σ_m w[m] n[i + m]`.
    fn gain(&self, counts: &[f64]) -> Vec<f64> {
        let n = counts.len();
        if !self.terms.gain {
            return vec![0.0; n];
        }
        let mut buf: Vec<Complex64> = (0..self.fft_len)
            .map(|p| if p < n { Complex64::new(counts[n - 1 - p], 0.0) } else { Complex64::new(0.0, 0.0) })
            .collect();
        self.forward.process(&mut buf);
        for (b, w) in buf.iter_mut().zip(&self.weights_fft) {
            *b *= w;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.fft_len as f64;
        (0..n).map(|i| (buf[n - 1 - i].re * scale).max(0.0)).collect()
    }

    pub fn leakage(&self, counts: &[f64]) -> Leakage {
        let n = counts.len();
        let top = self.out_rate[n - 1] * counts[n - 1];
        let bottom = counts.iter().zip(&self.tail).map(|(c, t)| c * t).collect::<NeumaierSum>().value();
        Leakage { top, bottom }
    }

    /// Time derivative of the cell counts.
    pub fn apply(&self, counts: &[f64]) -> Vec<f64> {
        let gain = self.gain(counts);
        (0..counts.len())
            .map(|i| {
                let inflow = if i > 0 { self.out_rate[i - 1] * counts[i - 1] } else { 0.0 };
                inflow + gain[i] - (self.out_rate[i] + self.loss) * counts[i]
            })
            .collect()
    }

    fn euler(&self, counts: &[f64], dt: f64) -> Vec<f64> {
        let gain = self.gain(counts);
        (0..counts.len())
            .map(|i| {
                let inflow = if i > 0 { self.out_rate[i - 1] * counts[i - 1] } else { 0.0 };
                let keep = (1.0 - dt * (self.out_rate[i] + self.loss)).max(0.0);
                keep * counts[i] + dt * (inflow + gain[i])
            })
            .collect()
    }
}

/// Cell counts at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeState {
    pub counts: Vec<f64>,
    pub t: f64,
}

impl PdeState {
    /// Unit count in the cell containing `x`.
    pub fn delta(grid: &Grid, x: f64) -> Result<Self> {
        let i = grid.cell_containing(x).ok_or_else(|| Error::config(format!("x = {x} is outside the grid")))?;
        let mut counts = vec![0.0; grid.n_cells()];
        counts[i] = 1.0;
        Ok(Self { counts, t: 0.0 })
    }

    /// Cell integrals of a density sampled at the geometric centres.
    pub fn from_density<F: Fn(f64) -> f64>(grid: &Grid, u: F) -> Result<Self> {
        let counts: Vec<f64> = grid.centers().iter().zip(grid.widths()).map(|(x, w)| u(*x) * w).collect();
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::config("initial density must be finite and nonnegative"));
        }
        Ok(Self { counts, t: 0.0 })
    }

    /// Cell averages `u_i`.
    pub fn density(&self, grid: &Grid) -> Vec<f64> {
        self.counts.iter().zip(grid.widths()).map(|(c, w)| c / w).collect()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().copied().collect::<NeumaierSum>().value()
    }
}

/// Explicit time integrators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeScheme {
    #[default]
    Euler,
    /// Two Euler stages averaged (strong-stability-preserving RK2).
    Heun,
}

/// Advances `state` by `dt`.
pub fn step(op: &PdeOperator, state: &PdeState, dt: f64, scheme: TimeScheme) -> Result<PdeState> {
    let bound = op.cfl_bound();
    if !(dt > 0.0) || dt > bound {
        return Err(Error::Cfl { dt, bound });
    }
    let counts = match scheme {
        TimeScheme::Euler => op.euler(&state.counts, dt),
        TimeScheme::Heun => {
            let stage = op.euler(&state.counts, dt);
            let second = op.euler(&stage, dt);
            state.counts.iter().zip(&second).map(|(a, b)| 0.5 * (a + b)).collect()
        }
    };
    if counts.iter().any(|c| !c.is_finite()) {
        return Err(Error::NoConvergence(format!("non-finite state at t = {}", state.t + dt)));
    }
    Ok(PdeState { counts, t: state.t + dt })
}

/// Solver settings as read from a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSettings {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub t_final: f64,
    pub dt_safety: f64,
    pub sample_every: f64,
    pub scheme: TimeScheme,
}

impl Default for PdeSettings {
    fn default() -> Self {
        Self {
            x_min: 1e-4,
            x_max: 1e4,
            n_cells: 4096,
            t_final: 30.0,
            dt_safety: DEFAULT_DT_SAFETY,
            sample_every: 0.5,
            scheme: TimeScheme::Euler,
        }
    }
}

impl PdeSettings {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.x_min, self.x_max, self.n_cells)
    }

    pub fn evolve_options(&self) -> EvolveOptions {
        EvolveOptions { sample_every: self.sample_every, dt_safety: self.dt_safety, scheme: self.scheme }
    }
}

/// Test functions for [`evolve_and_observe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Observable {
    One,
    Identity,
    Indicator { lo: f64, hi: f64 },
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::One => "one".into(),
            Observable::Identity => "x".into(),
            Observable::Indicator { lo, hi } => format!("indicator[{lo},{hi}]"),
        }
    }

    /// Cell means of the test function.
    pub fn cell_values(&self, grid: &Grid) -> Vec<f64> {
        match *self {
            Observable::One => vec![1.0; grid.n_cells()],
            Observable::Identity => grid.cell_means(),
            Observable::Indicator { lo, hi } => grid.overlap(lo, hi),
        }
    }

    pub fn pair(&self, grid: &Grid, state: &PdeState) -> f64 {
        self.cell_values(grid).iter().zip(&state.counts).map(|(f, c)| f * c).collect::<NeumaierSum>().value()
    }
}

/// One sample of [`TimeSeries`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub t: f64,
    /// `⟨u_t, f⟩` per observable.
    pub values: Vec<f64>,
    /// `e^{-λ* t} ⟨u_t, f⟩` per observable.
    pub scaled: Vec<f64>,
    pub leakage: Leakage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    pub names: Vec<String>,
    pub rows: Vec<SeriesRow>,
}

/// Options for [`evolve_and_observe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub sample_every: f64,
    pub dt_safety: f64,
    pub scheme: TimeScheme,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { sample_every: 0.5, dt_safety: DEFAULT_DT_SAFETY, scheme: TimeScheme::Euler }
    }
}

/// Evolves `state` to `t_final`, sampling the observables every
/// `sample_every` time units (and at the start and end).
pub fn evolve_and_observe(
    op: &PdeOperator,
    state: PdeState,
    t_final: f64,
    observables: &[Observable],
    options: EvolveOptions,
) -> Result<(PdeState, TimeSeries)> {
    if !(options.dt_safety > 0.0 && options.dt_safety.is_finite()) {
        return Err(Error::config(format!("dt_safety must be positive, got {}", options.dt_safety)));
    }
    if options.dt_safety > 1.0 {
        let bound = op.cfl_bound();
        return Err(Error::Cfl { dt: options.dt_safety * bound, bound });
    }
    if !(options.sample_every > 0.0) || !(t_final >= state.t) {
        return Err(Error::config("sampling interval must be positive and t_final must not precede the state"));
    }
    let grid = op.grid();
    let tables: Vec<Vec<f64>> = observables.iter().map(|o| o.cell_values(grid)).collect();
    let observe = |s: &PdeState| {
        let values: Vec<f64> = tables
            .iter()
            .map(|f| f.iter().zip(&s.counts).map(|(a, b)| a * b).collect::<NeumaierSum>().value())
            .collect();
        let factor = (-op.lambda_star() * s.t).exp();
        SeriesRow { t: s.t, scaled: values.iter().map(|v| v * factor).collect(), values, leakage: op.leakage(&s.counts) }
    };
    let dt_max = options.dt_safety * op.cfl_bound();
    let mut rows = vec![observe(&state)];
    let mut state = state;
    let start = state.t;
    let mut sample = 1u64;
    while state.t < t_final {
        let target = (start + sample as f64 * options.sample_every).min(t_final);
        while state.t < target {
            let remaining = target - state.t;
            // Split the remaining interval into equal steps to land on the sample time.
            let steps = (remaining / dt_max).ceil().max(1.0);
            let dt = remaining / steps;
            state = step(op, &state, dt.min(dt_max), options.scheme)?;
            if (target - state.t).abs() <= 1e-12 * target.abs().max(1.0) {
                state.t = target;
            }
        }
        rows.push(observe(&state));
        sample += 1;
    }
    Ok((state, TimeSeries { names: observables.iter().map(|o| o.name()).collect(), rows }))
}

/// Normalized profile `e^{-λ* t} u_t / ⟨e^{-λ* t} u_t, 1⟩` as a density table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileTable {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Distribution function at the right edge of each cell.
    pub cdf: Vec<f64>,
    /// L1 change of the normalized profile per unit time.
    pub drift_rate: f64,
}

impl ProfileTable {
    /// CDF at `x`, linear in `ln x` inside a cell.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let n = self.density.len();
        if x <= self.edges[0] {
            return 0.0;
        }
        if x >= self.edges[n] {
            return 1.0;
        }
        let i = (self.edges.partition_point(|&e| e <= x) - 1).min(n - 1);
        let below = if i == 0 { 0.0 } else { self.cdf[i - 1] };
        let frac = (x / self.edges[i]).ln() / (self.edges[i + 1] / self.edges[i]).ln();
        below + frac * (self.cdf[i] - below)
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| (e[0] * e[1]).sqrt()).collect()
    }

    /// Slope of `ln u` against `ln x` over cells with centres in `[lo, hi]`.
    pub fn log_slope(&self, lo: f64, hi: f64) -> Result<f64> {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (x, u) in self.centers().iter().zip(&self.density) {
            if *x >= lo && *x <= hi && *u > 0.0 {
                xs.push(x.ln());
                ys.push(u.ln());
            }
        }
        if xs.len() < 2 {
            return Err(Error::domain(format!("fewer than two occupied cells in [{lo}, {hi}]")));
        }
        Ok(weighted_linear_fit(&xs, &ys, None).slope)
    }
}

/// Extracts the normalized profile once it has stabilized.
pub fn profile_extract(op: &PdeOperator, state: &PdeState) -> Result<ProfileTable> {
    let total = state.total();
    if !(total > 0.0) {
        return Err(Error::NotConverged("the state carries no mass".into()));
    }
    let rhs = op.apply(&state.counts);
    let growth = rhs.iter().copied().collect::<NeumaierSum>().value() / total;
    let drift_rate = rhs
        .iter()
        .zip(&state.counts)
        .map(|(d, c)| (d / total - growth * c / total).abs())
        .collect::<NeumaierSum>()
        .value();
    if !(drift_rate < STATIONARITY_TOL) {
        return Err(Error::NotConverged(format!(
            "normalized profile still moves at rate {drift_rate:.3e} per unit time"
        )));
    }
    let grid = op.grid();
    let density = state.counts.iter().zip(grid.widths()).map(|(c, w)| c / (w * total)).collect();
    let mut acc = NeumaierSum::new();
    let cdf = state
        .counts
        .iter()
        .map(|c| {
            acc.add(c / total);
            acc.value()
        })
        .collect();
    Ok(ProfileTable { edges: grid.edges().to_vec(), density, cdf, drift_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn canonical() -> (ModelParams, FragmentationKernel) {
        (ModelParams::new(2.0, 0.5).unwrap(), FragmentationKernel::monomial(1.0).unwrap())
    }

    #[test]
    fn grid_places_an_edge_at_one() {
        let g = Grid::new(1e-4, 1e4, 4096).unwrap();
        assert_eq!(g.edges()[g.index_of_one()], 1.0);
        assert_eq!(g.index_of_one(), 2048);
        assert!(g.edges().windows(2).all(|e| e[1] > e[0]));
        assert!(matches!(Grid::new(1e-4, 1e4, 4095), Err(Error::Config(_))));
        assert!(matches!(Grid::new(1e-3, 1e4, 100), Err(Error::Config(_))));
        assert!(Grid::new(1e-2, 1e4, 300).is_ok());
    }

    fn smooth_state(grid: &Grid) -> PdeState {
        PdeState::from_density(grid, |x: f64| (-(x.ln() - 0.3).powi(2)).exp() / x).unwrap()
    }

    #[test]
    fn gain_weights_match_quadrature() {
        let kernel = FragmentationKernel::monomial(2.0).unwrap();
        let h = 0.1;
        let w = gain_weights(&kernel, h, 50).unwrap();
        for m in [0usize, 1, 7, 30] {
            let tent = |s: f64| (1.0 - (s.ln() / h + m as f64).abs()).max(0.0) * kernel.density(s);
            let lo = (-(m as f64 + 1.0) * h).exp();
            let hi = (-(m as f64 - 1.0) * h).exp().min(1.0);
            let mid = (-(m as f64) * h).exp();
            let exact = crate::numerics::integrate(tent, lo, mid, 1e-13).unwrap()
                + if m > 0 { crate::numerics::integrate(tent, mid, hi, 1e-13).unwrap() } else { 0.0 };
            assert!((w[m] - exact).abs() < 1e-13, "m={m}: {} vs {exact}", w[m]);
        }
    }

    #[test]
    fn count_production_is_the_malthus_rate() {
        let (params, kernel) = canonical();
        let grid = Grid::new(1e-4, 1e4, 4096).unwrap();
        let op = build_operator(&grid, &params, &kernel).unwrap();
        let sum_w: f64 = op.gain_weights().iter().sum();
        assert!((sum_w / 1.0 - 1.0).abs() < 1e-3, "gain weights sum {sum_w}");
        let state = smooth_state(&grid);
        let rhs = op.apply(&state.counts);
        let leak = op.leakage(&state.counts);
        let total = state.total();
        let production: f64 = rhs.iter().sum::<f64>() + leak.top + leak.bottom;
        assert!((production / total - 0.5).abs() < 1e-12, "{}", production / total);
        let growth = rhs.iter().sum::<f64>() / total;
        assert!((growth - 0.5).abs() < 0.5e-3, "{growth}");
    }

    #[test]
    fn first_moment_follows_the_growth_rate() {
        let (params, kernel) = canonical();
        let grid = Grid::new(1e-4, 1e4, 4096).unwrap();
        let op = build_operator(&grid, &params, &kernel).unwrap();
        let state = smooth_state(&grid);
        let rhs = op.apply(&state.counts);
        let xs = grid.cell_means();
        let d_mass: f64 = rhs.iter().zip(&xs).map(|(r, x)| r * x).sum();
        let c_pair: f64 = state.counts.iter().zip(&xs).zip(op.drifts()).map(|((n, x), a)| n * a * x).sum();
        assert!((d_mass / c_pair - 1.0).abs() < 1e-3, "{d_mass} vs {c_pair}");
    }

    #[test]
    fn pure_decay_is_exact() {
        let (params, kernel) = canonical();
        let grid = Grid::new(1e-2, 1e2, 64).unwrap();
        let op = build_operator_with(&grid, &params, &kernel, Terms { transport: false, gain: false, loss: true }).unwrap();
        let state = smooth_state(&grid);
        let dt = 0.3;
        let next = step(&op, &state, dt, TimeScheme::Euler).unwrap();
        for (a, b) in next.counts.iter().zip(&state.counts) {
            assert_eq!(*a, b * (1.0 - 0.5 * dt));
        }
    }

    #[test]
    fn steps_beyond_the_bound_are_refused() {
        let (params, kernel) = canonical();
        let grid = Grid::new(1e-2, 1e2, 64).unwrap();
        let op = build_operator(&grid, &params, &kernel).unwrap();
        let state = smooth_state(&grid);
        let bound = op.cfl_bound();
        assert!(matches!(step(&op, &state, 1.01 * bound, TimeScheme::Euler), Err(Error::Cfl { .. })));
        assert!(step(&op, &state, bound, TimeScheme::Euler).is_ok());
    }

    #[test]
    fn pulse_translates_at_the_drift_speed() {
        let params = ModelParams::new(2.0, 0.5).unwrap();
        let kernel = FragmentationKernel::monomial(1.0).unwrap();
        let grid = Grid::new(1e-4, 1e4, 4096).unwrap();
        let op = build_operator_with(&grid, &params, &kernel, Terms { transport: true, gain: false, loss: false }).unwrap();
        let centre = |s: &PdeState| {
            let w: f64 = s.total();
            grid.centers().iter().zip(&s.counts).map(|(x, c)| x.ln() * c).sum::<f64>() / w
        };
        for (start, speed) in [(1.0f64, 0.5), (-4.0f64, 2.0)] {
            let s0 = PdeState::from_density(&grid, |x: f64| (-(x.ln() - start).powi(2) / 0.02).exp() / x).unwrap();
            let t = 1.0;
            let (s1, _) = evolve_and_observe(&op, s0.clone(), t, &[], EvolveOptions { sample_every: t, ..Default::default() }).unwrap();
            let shift = centre(&s1) - centre(&s0);
            assert!((shift - speed * t).abs() < 0.01 * speed * t, "start {start}: shift {shift}");
            assert!((s1.total() - s0.total()).abs() < 1e-12 * s0.total());
        }
    }

    #[test]
    fn half_steps_agree_to_second_order() {
        let (params, kernel) = canonical();
        let grid = Grid::new(1e-2, 1e2, 200).unwrap();
        let op = build_operator(&grid, &params, &kernel).unwrap();
        let state = smooth_state(&grid);
        let gap = |dt: f64| {
            let full = step(&op, &state, dt, TimeScheme::Euler).unwrap();
            let half = step(&op, &step(&op, &state, dt / 2.0, TimeScheme::Euler).unwrap(), dt / 2.0, TimeScheme::Euler).unwrap();
            full.counts.iter().zip(&half.counts).map(|(a, b)| (a - b).abs()).sum::<f64>()
        };
        let dt = 0.5 * op.cfl_bound();
        let ratio = gap(dt) / gap(dt / 2.0);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn heun_is_second_order_in_time() {
        let (params, kernel) = canonical();
        let grid = Grid::new(1e-2, 1e2, 100).unwrap();
        let op = build_operator(&grid, &params, &kernel).unwrap();
        let state = smooth_state(&grid);
        let t_end = 0.2;
        let base = (t_end / (0.25 * op.cfl_bound())).ceil() as usize;
        let run = |refine: usize, scheme| {
            let steps = base * refine;
            let mut s = state.clone();
            for _ in 0..steps {
                s = step(&op, &s, t_end / steps as f64, scheme).unwrap();
            }
            s
        };
        let reference = run(16, TimeScheme::Heun);
        let err = |s: PdeState| s.counts.iter().zip(&reference.counts).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let heun = err(run(1, TimeScheme::Heun)) / err(run(2, TimeScheme::Heun));
        let euler = err(run(1, TimeScheme::Euler)) / err(run(2, TimeScheme::Euler));
        assert!(heun > 3.3, "heun ratio {heun}");
        assert!(euler > 1.7 && euler < 2.6, "euler ratio {euler}");
    }

    #[test]
    fn delta_start_stays_nonnegative() {
        let (params, kernel) = canonical();
        let grid = Grid::new(1e-3, 1e3, 600).unwrap();
        let op = build_operator(&grid, &params, &kernel).unwrap();
        let mut s = PdeState::delta(&grid, 1.0).unwrap();
        let dt = 0.9 * op.cfl_bound();
        for _ in 0..2000 {
            s = step(&op, &s, dt, TimeScheme::Euler).unwrap();
            assert!(s.counts.iter().all(|c| *c >= 0.0));
        }
    }

    #[test]
    fn profile_extract_refuses_a_young_state() {
        let (params, kernel) = canonical();
        let grid = Grid::new(1e-3, 1e3, 600).unwrap();
        let op = build_operator(&grid, &params, &kernel).unwrap();
        let s = PdeState::delta(&grid, 1.0).unwrap();
        assert!(matches!(profile_extract(&op, &s), Err(Error::NotConverged(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn positivity_under_the_bound(
            data in proptest::collection::vec(0.0f64..10.0, 120),
            safety in 0.05f64..1.0,
            heun in any::<bool>(),
        ) {
            let (params, kernel) = canonical();
            let grid = Grid::new(1e-3, 1e3, 120).unwrap();
            let op = build_operator(&grid, &params, &kernel).unwrap();
            let mut s = PdeState { counts: data, t: 0.0 };
            let scheme = if heun { TimeScheme::Heun } else { TimeScheme::Euler };
            for _ in 0..20 {
                s = step(&op, &s, safety * op.cfl_bound(), scheme).unwrap();
                prop_assert!(s.counts.iter().all(|c| *c >= 0.0 && c.is_finite()));
            }
        }
    }
}
