//! The five subcommands.

use std::path::Path;

use refrag_core::pde::{self, PdeState};
use refrag_core::pdmp::{self, Estimate};
use refrag_core::spectral::{self, Regime};
use refrag_core::verify::{self, Context, Status};
use refrag_core::{Family, Horizon, ProfileDensity, RegimeReport, SimConfig};
use serde::Serialize;

use crate::config::{EstimatorKind, Resolved};
use crate::output::{self, loglog_svg, Cell, Series, Table};
use crate::{exit, CliError, Format};

#[derive(Serialize)]
struct ClassifyOutput {
    #[serde(flatten)]
    report: RegimeReport,
    q_star: f64,
    a_plus: f64,
    a_minus: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.10}"))
}

pub fn classify(r: &Resolved) -> Result<u8, CliError> {
    let report = spectral::malthus(&r.params, &r.kernel)?;
    let q_star = spectral::q_star(&r.params, &r.kernel)?;
    eprintln!("regime            {:?}", report.regime);
    eprintln!("lambda*           {:.10}", report.lambda_star);
    eprintln!("c = -int ln(s)rho {:.10}", report.condition_low);
    eprintln!("beta+             {}", opt(report.beta_plus));
    eprintln!("beta-             {}", opt(report.beta_minus));
    eprintln!(
        "L'(lambda)        {}",
        if report.l_prime_divergent { "-inf".into() } else { opt(report.l_prime_at_lambda) }
    );
    eprintln!("q*                {q_star:.10}");
    eprintln!("recurrence (eta)  {:?}", report.recurrence_class);
    let code = match report.regime {
        Regime::StrictMalthusian => exit::OK,
        Regime::BoundaryLow | Regime::BoundaryHigh => exit::BOUNDARY,
        Regime::FailsLow | Regime::FailsHigh => exit::FAILS,
    };
    let out = ClassifyOutput { report, q_star, a_plus: r.params.a_plus(), a_minus: r.params.a_minus() };
    print!("{}", output::to_json(&out));
    Ok(code)
}

/// Every constant of the profile; `null` where the regime forbids it.
#[derive(Serialize)]
struct Constants {
    regime: Regime,
    lambda: Option<f64>,
    lambda_star: f64,
    beta_plus: Option<f64>,
    beta_minus: Option<f64>,
    c1: Option<f64>,
    c2: Option<f64>,
    c3: Option<f64>,
    #[serde(rename = "C")]
    cramer: Option<f64>,
    total_mass: Option<f64>,
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let (a, b) = (lo.ln(), hi.ln());
    let mut xs: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    xs[0] = lo;
    xs[n - 1] = hi;
    if lo < 1.0 && hi > 1.0 {
        match xs.iter().position(|x| (x - 1.0).abs() < 1e-9) {
            Some(i) => xs[i] = 1.0,
            None => xs.insert(xs.partition_point(|&x| x < 1.0), 1.0),
        }
    }
    xs
}

pub fn profile(r: &Resolved, format: Format) -> Result<u8, CliError> {
    let cfg = &r.config.profile;
    if !(cfg.x_min > 0.0 && cfg.x_min < cfg.x_max && cfg.x_max.is_finite()) {
        return Err(CliError::Config("profile block needs 0 < x_min < x_max".into()));
    }
    let report = spectral::malthus(&r.params, &r.kernel)?;
    output::ensure_dir(&r.out)?;
    if report.regime != Regime::StrictMalthusian {
        if cfg.normalize {
            return Err(refrag_core::Error::Regime(format!(
                "the profile is normalizable only in the strict regime, found {:?}",
                report.regime
            ))
            .into());
        }
        let constants = Constants {
            regime: report.regime,
            lambda: report.regime.is_boundary().then_some(report.lambda_star),
            lambda_star: report.lambda_star,
            beta_plus: report.beta_plus,
            beta_minus: report.beta_minus,
            c1: None,
            c2: None,
            c3: None,
            cramer: None,
            total_mass: None,
        };
        output::write_json(&r.out.join("constants.json"), &constants)?;
        return Ok(exit::OK);
    }
    let prof = ProfileDensity::build(&r.params, &r.kernel)?;
    let c = prof.constants().clone();
    output::write_json(
        &r.out.join("constants.json"),
        &Constants {
            regime: report.regime,
            lambda: Some(c.lambda),
            lambda_star: report.lambda_star,
            beta_plus: Some(c.beta_plus),
            beta_minus: c.beta_minus,
            c1: Some(c.c1),
            c2: c.c2,
            c3: Some(c.c3),
            cramer: c.cramer,
            total_mass: Some(c.total_mass),
        },
    )?;
    let xs = log_grid(cfg.x_min, cfg.x_max, cfg.n_points);
    let mut table = Table::new(["x", "nu", "branch"]);
    let (mut body, mut tail) = (Vec::new(), Vec::new());
    for &x in &xs {
        let (v, branch) = prof.nu_with_branch(x)?;
        table.push(vec![x.into(), v.into(), branch.as_str().into()]);
        if x < 1.0 { &mut body } else { &mut tail }.push((x, v));
    }
    table.write(&r.out, "profile", format)?;
    if cfg.svg {
        let mut series = vec![
            Series { label: "nu, x < 1".into(), color: "#1f77b4", dashed: false, points: body },
            Series { label: "nu, x >= 1".into(), color: "#d62728", dashed: false, points: tail },
        ];
        if let (Some(cr), Some(bm)) = (c.cramer, c.beta_minus) {
            let pts = xs.iter().filter(|&&x| x < 1.0).map(|&x| (x, cr / c.total_mass * x.powf(bm - 1.0))).collect();
            series.push(Series { label: "Cramér asymptote".into(), color: "#555555", dashed: true, points: pts });
        }
        let svg = loglog_svg("asymptotic profile", "x", "density", &series);
        output::write_text(&r.out.join("profile.svg"), &svg)?;
    }
    Ok(exit::OK)
}

#[derive(Serialize)]
struct PathLogRow {
    path: u64,
    time: f64,
    level_before: f64,
    level_after: f64,
    jump: bool,
}

pub fn simulate(r: &Resolved, format: Format) -> Result<u8, CliError> {
    let mc = &r.config.mc;
    let (p, k, seed) = (&r.params, &r.kernel, r.seed);
    let lambda = k.lambda_star()?;
    let obs = mc.observable;
    let f = move |x: f64| obs.eval(x);
    let mut estimates: Vec<Estimate> = Vec::new();
    let mut occupation = None;
    for kind in &mc.estimators {
        match kind {
            EstimatorKind::FeynmanKac => {
                let e = pdmp::feynman_kac(p, k, f, mc.t, mc.x, mc.n_paths, mc.proposal.into(), seed)?;
                let scale = (-lambda * mc.t).exp();
                let scaled = Estimate {
                    estimator: "feynman_kac_scaled".into(),
                    value: e.value * scale,
                    stderr: e.stderr * scale,
                    ..e.clone()
                };
                estimates.push(e);
                estimates.push(scaled);
            }
            EstimatorKind::Martingale => {
                estimates.push(pdmp::martingale_mean(p, k, mc.t, mc.x, mc.n_paths, mc.proposal.into(), seed)?);
            }
            EstimatorKind::Tilted => match pdmp::tilted_vs_weighted(p, k, f, mc.t, mc.x, mc.n_paths, seed) {
                Ok((tilted, weighted)) => {
                    estimates.push(tilted);
                    estimates.push(weighted);
                }
                Err(refrag_core::Error::Regime(msg)) => eprintln!("skipping tilted: {msg}"),
                Err(e) => return Err(e.into()),
            },
            EstimatorKind::L => {
                // L is finite only above q*, which λ* reaches outside the
                // strict regime.
                if mc.q.is_none() && lambda <= spectral::q_star(p, k)? {
                    eprintln!("skipping L: lambda* = {lambda} is not above q*; set mc.q to evaluate it");
                    continue;
                }
                let q = mc.q.unwrap_or(lambda);
                estimates.push(pdmp::estimate_l(p, k, q, mc.n_paths, mc.t_max, mc.l_scheme.into(), seed)?);
            }
            EstimatorKind::Occupation => {
                match pdmp::occupation_histogram(p, k, mc.occupation_time, &mc.occupation_edges, seed) {
                    Ok(o) => occupation = Some(o),
                    Err(refrag_core::Error::Regime(msg)) => eprintln!("skipping occupation: {msg}"),
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    output::ensure_dir(&r.out)?;
    match format {
        Format::Json => output::write_json(&r.out.join("estimates.json"), &estimates)?,
        Format::Csv => {
            let mut t = Table::new(["estimator", "value", "stderr", "n", "seed", "censored_fraction"]);
            for e in &estimates {
                t.push(vec![
                    e.estimator.as_str().into(),
                    e.value.into(),
                    e.stderr.into(),
                    (e.n as f64).into(),
                    Cell::Text(e.seed.to_string()),
                    e.censored_fraction.into(),
                ]);
            }
            t.write(&r.out, "estimates", Format::Csv)?;
        }
    }
    if let Some(o) = occupation {
        output::write_json(&r.out.join("occupation.json"), &o)?;
    }
    if mc.event_log_paths > 0 {
        let config = SimConfig {
            process: Family::Xi,
            start_level: mc.x.ln(),
            seed,
            n_paths: mc.event_log_paths,
            horizon: Horizon::Time(mc.t),
        };
        let paths = pdmp::simulate_paths(p, k, &config)?;
        let path = r.out.join("paths.csv");
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| CliError::Output { path: path.clone(), source: std::io::Error::other(e) })?;
        for (i, rec) in paths.iter().enumerate() {
            for ev in &rec.events {
                let row = PathLogRow {
                    path: i as u64,
                    time: ev.time,
                    level_before: ev.level_before,
                    level_after: ev.level_after,
                    jump: ev.is_jump(),
                };
                w.serialize(row).map_err(|e| CliError::Output { path: path.clone(), source: std::io::Error::other(e) })?;
            }
        }
        w.flush().map_err(|e| CliError::Output { path: path.clone(), source: e })?;
    }
    for e in &estimates {
        eprintln!("{:<20} {:.6} ± {:.6} (n = {})", e.estimator, e.value, e.stderr, e.n);
    }
    Ok(exit::OK)
}

pub fn pde(r: &Resolved, format: Format) -> Result<u8, CliError> {
    let cfg = &r.config.pde;
    let settings = cfg.settings();
    let grid = settings.grid()?;
    let op = pde::build_operator(&grid, &r.params, &r.kernel)?;
    let start = PdeState::delta(&grid, cfg.start_x)?;
    let observables: Vec<_> = cfg.observables.iter().map(|o| o.to_observable()).collect();
    let (state, series) = pde::evolve_and_observe(&op, start, settings.t_final, &observables, settings.evolve_options())?;

    let mut header = vec!["t".to_string()];
    for name in &series.names {
        header.push(name.clone());
        header.push(format!("scaled {name}"));
    }
    header.push("leakage_top".into());
    header.push("leakage_bottom".into());
    let mut table = Table::new(header);
    for row in &series.rows {
        let mut cells = vec![row.t.into()];
        for (v, s) in row.values.iter().zip(&row.scaled) {
            cells.push((*v).into());
            cells.push((*s).into());
        }
        cells.push(row.leakage.top.into());
        cells.push(row.leakage.bottom.into());
        table.push(cells);
    }
    output::ensure_dir(&r.out)?;
    table.write(&r.out, "pde_series", format)?;

    let nu = match spectral::malthus(&r.params, &r.kernel)?.regime {
        Regime::StrictMalthusian => Some(ProfileDensity::build(&r.params, &r.kernel)?),
        _ => None,
    };
    let total = state.total();
    let mut density = Table::new(["x_lo", "x_hi", "x_center", "u", "normalized", "nu"]);
    let edges = grid.edges();
    for (i, (u, x)) in state.density(&grid).iter().zip(grid.centers()).enumerate() {
        let analytic = nu.as_ref().map(|n| n.nu(x)).transpose()?;
        density.push(vec![edges[i].into(), edges[i + 1].into(), x.into(), (*u).into(), (u / total).into(), analytic.into()]);
    }
    density.write(&r.out, "pde_density", format)?;
    if let Some(last) = series.rows.last() {
        eprintln!("t = {}: total = {:.6e}, e^(-lambda* t) total = {:.6}", last.t, total, total * (-op.lambda_star() * last.t).exp());
    }
    Ok(exit::OK)
}

pub fn verify(r: &Resolved, format: Format) -> Result<u8, CliError> {
    let ctx = Context::new(r.params, r.kernel.clone(), r.verify_settings()?);
    let report = verify::run_all(&ctx, |c, secs| {
        let mut line = format!("criterion {:>2} {:<28} {} ({secs:.2} s)", c.id, c.title, c.status.label());
        for f in c.failures() {
            line.push_str(&format!("\n    {f}"));
        }
        if let (Status::Fail | Status::NotApplicable, Some(note)) = (c.status, &c.note) {
            line.push_str(&format!("\n    {note}"));
        }
        eprintln!("{line}");
    })?;
    output::ensure_dir(&r.out)?;
    write_report(&r.out, &report, format)?;
    Ok(if report.all_passed { exit::OK } else { exit::VERIFY_FAILED })
}

fn write_report(dir: &Path, report: &verify::Report, format: Format) -> Result<(), CliError> {
    output::write_json(&dir.join("report.json"), report)?;
    if format == Format::Csv {
        let mut t = Table::new(["criterion", "title", "status", "check", "value", "reference", "tolerance", "lower", "upper", "passed"]);
        for c in &report.criteria {
            let status = serde_json::to_value(c.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            for k in &c.checks {
                t.push(vec![
                    (c.id as f64).into(),
                    c.title.as_str().into(),
                    status.as_str().into(),
                    k.name.as_str().into(),
                    k.value.into(),
                    k.reference.into(),
                    k.tolerance.into(),
                    k.lower.into(),
                    k.upper.into(),
                    (if k.passed { "true" } else { "false" }).into(),
                ]);
            }
        }
        t.write(dir, "report", Format::Csv)?;
    }
    Ok(())
}
