use anyhow::{Context, Result};

use robust_credit::hjm::{audit_drift_condition, ForwardCurveModel};
use robust_credit::measures::{verify_unit_expectation_with, FunctionalIntensity, IntensitySpec};
use robust_credit::pricing::{
    bond_lower_bound, bond_upper_bound, mc_price, recovery_price_interval, robust_price_interval, series_price,
    SeriesGate, ShortRate,
};
use robust_credit::report::sig12;
use robust_credit::rng::{stream, Purpose};
use robust_credit::stochastic::{brownian_with, jacobi_with, recovery_jumps_with, recovery_path};
use robust_credit::TimeGrid;

use crate::config::{Command, Process, RunConfig};
use crate::table::{Cell, Table};

/// Dispatch one validated configuration and collect its rows.
pub fn run(config: &RunConfig) -> Result<Table> {
    match config.command {
        Command::Simulate => simulate(config),
        Command::Price => price(config),
        Command::Bounds => bounds(config),
        Command::Interval => interval(config),
        Command::AuditDrift => audit_drift(config),
        Command::VerifyMeasure => verify_measure(config),
    }
}

/// Every `(start, t, T)` combination, start outermost.
fn valuation_rows(config: &RunConfig) -> Result<Vec<(f64, f64, f64)>> {
    let pairs = config.times()?.pairs();
    let mut rows = Vec::new();
    for lambda in config.starts()? {
        rows.extend(pairs.iter().map(|&(t, m)| (lambda, t, m)));
    }
    Ok(rows)
}

fn simulate(config: &RunConfig) -> Result<Table> {
    let s = config.simulate.as_ref().context("missing [simulate] block")?;
    let grid = TimeGrid::with_density(s.horizon, s.steps_per_year).context("time grid")?;
    let mut table = Table::new(&["path", "component", "t", "value"]);
    for p in 0..s.paths {
        let path = match s.process {
            Process::Brownian => brownian_with(grid, s.dim, &mut stream(config.seed, Purpose::Brownian, p as u64)),
            Process::Jacobi => jacobi_with(config.jacobi()?, grid, &mut stream(config.seed, Purpose::Jacobi, p as u64))
                .context("simulate_jacobi")?,
            Process::Recovery => {
                let params = config.recovery.as_ref().context("missing [recovery] block")?;
                let jumps =
                    recovery_jumps_with(params, grid.horizon(), &mut stream(config.seed, Purpose::Recovery, p as u64));
                recovery_path(grid, &jumps)
            }
        };
        for k in 0..path.dim() {
            for i in 0..grid.len() {
                table.push(vec![
                    Cell::Int(p as u64),
                    Cell::Int(k as u64),
                    Cell::Num(grid.node(i)),
                    Cell::Num(path.at(i)[k]),
                ]);
            }
        }
    }
    Ok(table)
}

fn bounds(config: &RunConfig) -> Result<Table> {
    let params = config.jacobi()?;
    let mut table = Table::new(&["t", "T", "lambda", "lower", "upper"]);
    for (lambda, t, m) in valuation_rows(config)? {
        let lower = bond_lower_bound(params, lambda, t, m).with_context(|| format!("bond_lower_bound at t={t}, T={m}"))?;
        let upper = bond_upper_bound(params, lambda, t, m).with_context(|| format!("bond_upper_bound at t={t}, T={m}"))?;
        table.push(vec![Cell::Num(t), Cell::Num(m), Cell::Num(lambda), Cell::Num(lower), Cell::Num(upper)]);
    }
    Ok(table)
}

fn price(config: &RunConfig) -> Result<Table> {
    let params = config.jacobi()?;
    let sp = config.series_params();
    let mc = config.mc_settings();
    let mut table = Table::new(&["t", "T", "lambda", "order", "series", "mc", "stderr", "pass"]);
    for (lambda, t, m) in valuation_rows(config)? {
        let started = params.with_start(lambda)?;
        let est = mc_price(&started, t, m, &mc).with_context(|| format!("mc_price at t={t}, T={m}"))?;
        let gate = SeriesGate::check(series_price(&started, lambda, t, m, &sp), est.mean, est.stderr);
        table.push(vec![
            Cell::Num(t),
            Cell::Num(m),
            Cell::Num(lambda),
            Cell::Int(sp.order as u64),
            gate.series.map_or(Cell::Missing, Cell::Num),
            Cell::Num(est.mean),
            Cell::Num(est.stderr),
            Cell::Flag(gate.pass),
        ]);
    }
    Ok(table)
}

fn interval(config: &RunConfig) -> Result<Table> {
    let params = config.jacobi()?;
    let sp = config.series_params();
    let mc = config.mc_settings();
    let short_rate = ShortRate::Constant(config.times()?.short_rate);
    let recovery = config.interval.is_some_and(|b| b.recovery);
    let mut table = Table::new(&[
        "t", "T", "lambda", "lower", "upper", "series", "mc", "stderr", "discount", "pass",
    ]);
    for (lambda, t, m) in valuation_rows(config)? {
        let iv = if recovery {
            recovery_price_interval(params, lambda, &short_rate, t, m, &sp, &mc)
                .with_context(|| format!("recovery_price_interval at t={t}, T={m}"))?
        } else {
            robust_price_interval(params, lambda, &short_rate, t, m, &sp, &mc)
                .with_context(|| format!("robust_price_interval at t={t}, T={m}"))?
        };
        table.push(vec![
            Cell::Num(iv.t),
            Cell::Num(iv.maturity),
            Cell::Num(lambda),
            Cell::Num(iv.lower),
            Cell::Num(iv.upper),
            iv.series.map_or(Cell::Missing, Cell::Num),
            Cell::Num(iv.mc),
            Cell::Num(iv.mc_stderr),
            Cell::Num(iv.discount),
            Cell::Flag(iv.mc_consistent(3.0)),
        ]);
    }
    Ok(table)
}

fn audit_drift(config: &RunConfig) -> Result<Table> {
    let c = config.curve.as_ref().context("missing [curve] block")?;
    let (f0, slope, sigma, kappa) = (c.f0, c.slope, c.sigma, c.kappa);
    let mut model = ForwardCurveModel::new(1, move |t| f0 + slope * t, move |s, t, out| {
        out[0] = sigma * (-kappa * (t - s)).exp()
    })
    .context("curve model")?
    .with_theta(vec![c.theta])
    .context("curve.theta")?;
    if let Some(r) = c.short_rate {
        model = model.with_short_rate(move |_| r);
    }
    if c.drift_scale != 1.0 {
        model = model.scaled_drift(c.drift_scale);
    }
    let grid = TimeGrid::new(c.horizon, c.steps).context("time grid")?;
    let report = audit_drift_condition(&model, &IntensitySpec::Constant(c.lambda_star), grid, c.tolerance, None)
        .context("audit_drift_condition")?;
    let mut table = Table::new(&["t", "T", "f", "residual", "pass"]);
    for r in &report.rows {
        table.push(vec![
            Cell::Num(r.t),
            Cell::Num(r.maturity),
            Cell::Num(r.forward),
            Cell::Num(r.residual),
            Cell::Flag(r.residual.abs() <= c.tolerance),
        ]);
    }
    Ok(table)
}

fn verify_measure(config: &RunConfig) -> Result<Table> {
    let m = config.measure.as_ref().context("missing [measure] block")?;
    let grid = TimeGrid::new(m.horizon, m.steps).context("time grid")?;
    let mut candidates: Vec<(String, IntensitySpec)> = m
        .constants
        .iter()
        .map(|&c| (format!("constant {}", sig12(c)), IntensitySpec::Constant(c)))
        .collect();
    if let Some(a) = m.affine {
        let label = format!("affine {} {} {} {}", sig12(a.base), sig12(a.slope), sig12(a.lo), sig12(a.hi));
        let rule = FunctionalIntensity::new(1, label.clone(), move |h| (a.base + a.slope * h.current()[0]).clamp(a.lo, a.hi));
        candidates.push((label, IntensitySpec::Functional(rule)));
    }
    let mut table = Table::new(&["intensity", "mean", "stderr", "n_paths", "pass"]);
    for (label, spec) in candidates {
        let r = verify_unit_expectation_with(&spec, grid, m.n_paths, config.seed, m.execution)
            .with_context(|| format!("verify_unit_expectation for {label}"))?;
        table.push(vec![
            Cell::Text(label),
            Cell::Num(r.mean),
            Cell::Num(r.stderr),
            Cell::Int(r.n_paths as u64),
            Cell::Flag(r.pass),
        ]);
    }
    Ok(table)
}
