//! Intensity changes of measure.
//!
//! Under the reference measure the default time is standard exponential and
//! independent of the Brownian motion. An intensity `λ` induces the density
//! process
//!
//! ```text
//! Z_t = exp(∫_0^t (1 − λ_s) ds)              t < τ
//! Z_t = λ_τ exp(∫_0^τ (1 − λ_s) ds)          t ≥ τ
//! ```
//!
//! This module evaluates `Z`, builds the mixture intensity whose density is
//! the convex combination of two densities, checks membership of an
//! intensity in the band and estimates `E'[Z_{T*}]` by simulation.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{SamplePath, TimeGrid};
use crate::rng::{self, Purpose};
use crate::stats::Estimate;
use crate::stochastic::{brownian_with, IntegratedIntensity, Interpolation};

/// Closed band `[lo, hi]` of admissible intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
            return Err(Error::param(
                "lambda_lo/lambda_hi ordering",
                format!("need 0 < lo < hi, got [{lo}, {hi}]"),
            ));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

/// Brownian history `W_{t_0}, …, W_{t_i}` handed to a functional intensity.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub t: f64,
    pub index: usize,
    dim: usize,
    values: &'a [f64],
}

impl<'a> History<'a> {
    pub fn current(&self) -> &'a [f64] {
        self.at(self.index)
    }

    pub fn at(&self, j: usize) -> &'a [f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }
}

pub type IntensityRule = Arc<dyn Fn(&History<'_>) -> f64 + Send + Sync>;

/// Intensity given as a rule on the Brownian history.
///
/// On `(t_i, t_{i+1}]` the intensity equals the rule evaluated on the history
/// up to and including `t_i`, which keeps it predictable on the grid.
#[derive(Clone)]
pub struct FunctionalIntensity {
    pub dim: usize,
    pub label: String,
    rule: IntensityRule,
}

impl FunctionalIntensity {
    pub fn new(dim: usize, label: impl Into<String>, rule: impl Fn(&History<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            label: label.into(),
            rule: Arc::new(rule),
        }
    }

    fn node_values(&self, brownian: &SamplePath) -> Vec<f64> {
        let grid = brownian.grid();
        (0..grid.len())
            .map(|i| {
                let h = History {
                    t: grid.node(i),
                    index: i,
                    dim: self.dim,
                    values: &brownian.values()[..(i + 1) * self.dim],
                };
                (self.rule)(&h)
            })
            .collect()
    }
}

impl fmt::Debug for FunctionalIntensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionalIntensity")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum IntensitySpec {
    Constant(f64),
    /// Node values, linear in between.
    OnGrid(SamplePath),
    /// `values[i]` holds on `(t_i, t_{i+1}]`.
    StepWise(SamplePath),
    Functional(FunctionalIntensity),
}

impl IntensitySpec {
    pub fn needs_brownian(&self) -> bool {
        matches!(self, IntensitySpec::Functional(_))
    }

    pub fn brownian_dim(&self) -> usize {
        match self {
            IntensitySpec::Functional(f) => f.dim,
            _ => 1,
        }
    }

    /// Raw node values along `grid`; no positivity check.
    pub fn node_values(&self, grid: TimeGrid, brownian: Option<&SamplePath>) -> Result<(Vec<f64>, Interpolation)> {
        match self {
            IntensitySpec::Constant(c) => Ok((vec![*c; grid.len()], Interpolation::StepLeft)),
            IntensitySpec::OnGrid(p) => {
                same_grid(p.grid(), &grid)?;
                Ok((p.values().to_vec(), Interpolation::Linear))
            }
            IntensitySpec::StepWise(p) => {
                same_grid(p.grid(), &grid)?;
                Ok((p.values().to_vec(), Interpolation::StepLeft))
            }
            IntensitySpec::Functional(f) => {
                let w = brownian.ok_or_else(|| Error::param("brownian", "functional intensity needs a Brownian history"))?;
                same_grid(w.grid(), &grid)?;
                if w.dim() != f.dim {
                    return Err(Error::GridMismatch(format!(
                        "functional intensity expects dimension {}, Brownian path has {}",
                        f.dim,
                        w.dim()
                    )));
                }
                Ok((f.node_values(w), Interpolation::StepLeft))
            }
        }
    }

    /// Evaluate along `grid` and integrate; rejects non-positive values.
    pub fn integrate(&self, grid: TimeGrid, brownian: Option<&SamplePath>) -> Result<IntegratedIntensity> {
        if let IntensitySpec::Constant(c) = self {
            return IntegratedIntensity::constant(grid, *c);
        }
        let (values, interp) = self.node_values(grid, brownian)?;
        IntegratedIntensity::new(grid, values, interp)
    }
}

fn same_grid(a: &TimeGrid, b: &TimeGrid) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(format!(
            "path grid ({}, {} steps) differs from ({}, {} steps)",
            a.horizon(),
            a.n_steps(),
            b.horizon(),
            b.n_steps()
        )));
    }
    Ok(())
}

/// `Z^λ` sampled on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub default_time: Option<f64>,
}

impl DensityPath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

pub fn density_process(
    lambda: &IntensitySpec,
    default_time: Option<f64>,
    grid: TimeGrid,
    brownian: Option<&SamplePath>,
) -> Result<DensityPath> {
    if let Some(tau) = default_time {
        if !(0.0..=grid.horizon()).contains(&tau) {
            return Err(Error::param("default_time", format!("{tau} outside [0, {}]", grid.horizon())));
        }
    }
    let integrated = lambda.integrate(grid, brownian)?;
    Ok(density_from(&integrated, default_time))
}

pub(crate) fn density_from(integrated: &IntegratedIntensity, default_time: Option<f64>) -> DensityPath {
    let grid = *integrated.grid();
    let frozen = default_time.map(|tau| integrated.left_value(tau) * (tau - integrated.integral_to(tau)).exp());
    let values = grid
        .nodes()
        .zip(integrated.cumulative())
        .map(|(t, &cum)| match (default_time, frozen) {
            (Some(tau), Some(z)) if t >= tau => z,
            _ => (t - cum).exp(),
        })
        .collect();
    DensityPath {
        grid,
        values,
        default_time,
    }
}

/// `Z^λ_{T*}` only, without materialising the path.
pub(crate) fn terminal_density(integrated: &IntegratedIntensity, default_time: Option<f64>) -> f64 {
    match default_time {
        Some(tau) if tau <= integrated.grid().horizon() => {
            integrated.left_value(tau) * (tau - integrated.integral_to(tau)).exp()
        }
        _ => (integrated.grid().horizon() - integrated.total()).exp(),
    }
}

/// Intensity whose density is `mix · Z^a + (1 − mix) · Z^b` before default.
///
/// The running integral is
/// `Λ(t) = −ln(mix · e^{−Λ_a(t)} + (1 − mix) · e^{−Λ_b(t)})`
/// at each node; the returned intensity is its first difference per step.
pub fn mixture_intensity(
    lambda_a: &IntensitySpec,
    lambda_b: &IntensitySpec,
    mix: f64,
    band: Band,
    grid: TimeGrid,
    brownian: Option<&SamplePath>,
) -> Result<IntensitySpec> {
    Ok(IntensitySpec::StepWise(mixture_integrated(lambda_a, lambda_b, mix, band, grid, brownian)?.to_path()))
}

/// Like [`mixture_intensity`], but returns the integrated form whose
/// cumulative values are the log-mix formula verbatim.
pub fn mixture_integrated(
    lambda_a: &IntensitySpec,
    lambda_b: &IntensitySpec,
    mix: f64,
    band: Band,
    grid: TimeGrid,
    brownian: Option<&SamplePath>,
) -> Result<IntegratedIntensity> {
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::param("mix", format!("must lie in [0, 1], got {mix}")));
    }
    let a = banded(lambda_a, band, grid, brownian)?;
    let b = banded(lambda_b, band, grid, brownian)?;
    let cumulative = a
        .cumulative()
        .iter()
        .zip(b.cumulative())
        .map(|(&ca, &cb)| log_mix(mix, ca, cb))
        .collect();
    Ok(IntegratedIntensity::from_cumulative(grid, cumulative))
}

/// `−ln(w e^{−x} + (1 − w) e^{−y})`, evaluated without underflow.
fn log_mix(w: f64, x: f64, y: f64) -> f64 {
    if w == 1.0 {
        return x;
    }
    if w == 0.0 {
        return y;
    }
    let m = x.min(y);
    m - (w * (m - x).exp() + (1.0 - w) * (m - y).exp()).ln()
}

fn banded(spec: &IntensitySpec, band: Band, grid: TimeGrid, brownian: Option<&SamplePath>) -> Result<IntegratedIntensity> {
    let (values, interp) = spec.node_values(grid, brownian)?;
    if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !band.contains(**v)) {
        return Err(Error::OutOfBand {
            t: grid.node(i),
            value: v,
            lo: band.lo,
            hi: band.hi,
        });
    }
    match spec {
        IntensitySpec::Constant(c) => IntegratedIntensity::constant(grid, *c),
        _ => IntegratedIntensity::new(grid, values, interp),
    }
}

impl IntegratedIntensity {
    pub(crate) fn to_path(&self) -> SamplePath {
        SamplePath::from_raw(*self.grid(), 1, self.values().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path: usize,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub paths_checked: usize,
    pub min: f64,
    pub max: f64,
    pub violation: Option<Violation>,
}

/// Membership of `lambda` in the band along the grid.
///
/// Constant and grid intensities are checked exactly. Functional intensities
/// are checked on `sample_paths` simulated Brownian histories: a `false` is
/// conclusive, a `true` only says no sampled history left the band.
pub fn in_admissible_set(
    lambda: &IntensitySpec,
    band: Band,
    grid: TimeGrid,
    sample_paths: usize,
    seed: u64,
) -> Result<AdmissibilityReport> {
    let mut report = AdmissibilityReport {
        admissible: true,
        paths_checked: 0,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        violation: None,
    };
    let scan = |path: usize, values: &[f64], report: &mut AdmissibilityReport| {
        for (i, &v) in values.iter().enumerate() {
            report.min = report.min.min(v);
            report.max = report.max.max(v);
            if !band.contains(v) && report.violation.is_none() {
                report.admissible = false;
                report.violation = Some(Violation { path, t: grid.node(i), value: v });
            }
        }
        report.paths_checked += 1;
    };
    if lambda.needs_brownian() {
        for p in 0..sample_paths {
            let mut rng = rng::stream(seed, Purpose::Admissibility, p as u64);
            let w = brownian_with(grid, lambda.brownian_dim(), &mut rng);
            let (values, _) = lambda.node_values(grid, Some(&w))?;
            scan(p, &values, &mut report);
            if !report.admissible {
                break;
            }
        }
    } else {
        let (values, _) = lambda.node_values(grid, None)?;
        scan(0, &values, &mut report);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitExpectationReport {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub pass: bool,
}

/// Monte Carlo estimate of `E'[Z^λ_{T*}]` under the reference measure;
/// passes when the mean is within three standard errors of one.
pub fn verify_unit_expectation(
    lambda: &IntensitySpec,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<UnitExpectationReport> {
    verify_unit_expectation_with(lambda, grid, n_paths, seed, Execution::default())
}

pub fn verify_unit_expectation_with(
    lambda: &IntensitySpec,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    exec: Execution,
) -> Result<UnitExpectationReport> {
    if n_paths < 100 {
        return Err(Error::param("n_paths", format!("need at least 100, got {n_paths}")));
    }
    // Deterministic intensities are integrated once and shared by all paths.
    let shared = if lambda.needs_brownian() {
        None
    } else {
        Some(lambda.integrate(grid, None)?)
    };
    let samples: Vec<Result<f64>> = exec.map(n_paths, |p| {
        let mut rng = rng::stream(seed, Purpose::Density, p as u64);
        let owned;
        let integrated = match &shared {
            Some(ii) => ii,
            None => {
                let w = brownian_with(grid, lambda.brownian_dim(), &mut rng);
                owned = lambda.integrate(grid, Some(&w))?;
                &owned
            }
        };
        let tau = reference_default_time(&mut rng, grid.horizon());
        Ok(terminal_density(integrated, tau))
    });
    let samples = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    let est = Estimate::from_samples(&samples);
    Ok(UnitExpectationReport {
        mean: est.mean,
        stderr: est.stderr,
        n_paths,
        pass: est.within(1.0, 3.0),
    })
}

/// Default time under the reference measure (unit intensity).
fn reference_default_time<R: Rng + ?Sized>(rng: &mut R, horizon: f64) -> Option<f64> {
    let e: f64 = Exp1.sample(rng);
    (e <= horizon).then_some(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(2.0, 200).unwrap()
    }

    #[test]
    fn unit_intensity_gives_unit_density() {
        let g = grid();
        for tau in [None, Some(0.0), Some(0.37), Some(2.0)] {
            let z = density_process(&IntensitySpec::Constant(1.0), tau, g, None).unwrap();
            assert!(z.values.iter().all(|&v| v == 1.0));
        }
        let on_grid = IntensitySpec::OnGrid(SamplePath::from_fn(g, |_| 1.0).unwrap());
        let z = density_process(&on_grid, Some(1.3), g, None).unwrap();
        assert!(z.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn constant_two_before_and_after_default() {
        let g = grid();
        let z = density_process(&IntensitySpec::Constant(2.0), None, g, None).unwrap();
        let i = g.index_of(1.0).unwrap();
        assert!((z.values[i] - 0.367879441171).abs() < 1e-12);

        let z = density_process(&IntensitySpec::Constant(2.0), Some(0.5), g, None).unwrap();
        let frozen = 2.0 * (-0.5f64).exp();
        for (t, v) in g.nodes().zip(&z.values) {
            if t >= 0.5 {
                assert!((v - frozen).abs() < 1e-14);
            } else {
                assert!((v - (-t).exp()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn multiplicative_consistency_for_constants() {
        let g = grid();
        for c in [0.02, 0.5, 1.7] {
            let z = density_process(&IntensitySpec::Constant(c), None, g, None).unwrap();
            for (t, v) in g.nodes().zip(&z.values) {
                let expected = ((1.0 - c) * t).exp();
                assert!((v - expected).abs() <= 1e-14 * expected);
            }
        }
    }

    #[test]
    fn density_rejects_bad_inputs() {
        let g = grid();
        assert!(density_process(&IntensitySpec::Constant(-0.1), None, g, None).is_err());
        assert!(density_process(&IntensitySpec::Constant(0.1), Some(3.0), g, None).is_err());
        let f = IntensitySpec::Functional(FunctionalIntensity::new(1, "w", |h| 0.1 + h.current()[0].abs()));
        assert!(density_process(&f, None, g, None).is_err());
    }

    #[test]
    fn functional_intensity_sees_only_the_past() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let f = FunctionalIntensity::new(1, "last", |h| {
            assert_eq!(h.values.len(), h.index + 1);
            1.0 + h.current()[0]
        });
        let w = SamplePath::from_fn(g, |t| t).unwrap();
        let (v, interp) = IntensitySpec::Functional(f).node_values(g, Some(&w)).unwrap();
        assert_eq!(interp, Interpolation::StepLeft);
        for (i, x) in v.iter().enumerate() {
            assert!((x - 1.0 - g.node(i)).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_mixtures() {
        let g = grid();
        let band = Band::new(0.01, 0.1).unwrap();
        let a = IntensitySpec::StepWise(SamplePath::from_fn(g, |t| 0.02 + 0.03 * (3.0 * t).sin().abs()).unwrap());
        let b = IntensitySpec::Constant(0.07);
        let m = mixture_intensity(&a, &b, 1.0, band, g, None).unwrap();
        let (mv, _) = m.node_values(g, None).unwrap();
        let (av, _) = a.node_values(g, None).unwrap();
        for i in 0..g.n_steps() {
            assert!((mv[i] - av[i]).abs() < 1e-12);
        }
        let c = IntensitySpec::Constant(0.03);
        let m = mixture_intensity(&c, &c, 0.4, band, g, None).unwrap();
        let (mv, _) = m.node_values(g, None).unwrap();
        assert!(mv.iter().all(|v| (v - 0.03).abs() < 1e-12));
    }

    #[test]
    fn half_mixture_of_two_constants() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let band = Band::new(0.02, 0.04).unwrap();
        let ii = mixture_integrated(&IntensitySpec::Constant(0.02), &IntensitySpec::Constant(0.04), 0.5, band, g, None).unwrap();
        let expected = 1.0 - ((0.98f64.exp() + 0.96f64.exp()) / 2.0).ln();
        assert!((ii.total() - expected).abs() < 1e-12);
        assert!((ii.total() - 0.0300).abs() < 1e-4);
        assert!(ii.values().iter().all(|&v| (0.02..=0.04).contains(&v)));
    }

    #[test]
    fn mixture_rejects_out_of_band_inputs() {
        let g = grid();
        let band = Band::new(0.02, 0.05).unwrap();
        let err = mixture_intensity(&IntensitySpec::Constant(0.01), &IntensitySpec::Constant(0.03), 0.5, band, g, None);
        assert!(matches!(err, Err(Error::OutOfBand { .. })));
        assert!(mixture_intensity(&IntensitySpec::Constant(0.03), &IntensitySpec::Constant(0.03), 1.5, band, g, None).is_err());
    }

    #[test]
    fn admissibility_examples() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let band = Band::new(0.02, 0.05).unwrap();
        assert!(in_admissible_set(&IntensitySpec::Constant(0.03), band, g, 0, 1).unwrap().admissible);
        let r = in_admissible_set(&IntensitySpec::Constant(0.01), band, g, 0, 1).unwrap();
        assert!(!r.admissible);
        assert_eq!(r.violation.unwrap().value, 0.01);

        let clamped = IntensitySpec::Functional(FunctionalIntensity::new(1, "clamped", move |h| {
            band.clamp(0.03 + 0.5 * h.current()[0])
        }));
        let r = in_admissible_set(&clamped, band, g, 500, 4).unwrap();
        assert!(r.admissible);
        assert_eq!(r.paths_checked, 500);

        let raw = IntensitySpec::Functional(FunctionalIntensity::new(1, "raw", |h| 0.03 + 0.5 * h.current()[0]));
        assert!(!in_admissible_set(&raw, band, g, 500, 4).unwrap().admissible);
    }

    #[test]
    fn unit_expectation_for_unit_intensity_is_exact() {
        let r = verify_unit_expectation(&IntensitySpec::Constant(1.0), TimeGrid::new(1.0, 10).unwrap(), 1000, 3).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.stderr, 0.0);
        assert!(r.pass);
        assert!(verify_unit_expectation(&IntensitySpec::Constant(1.0), TimeGrid::new(1.0, 10).unwrap(), 99, 3).is_err());
    }

    #[test]
    fn execution_modes_agree() {
        let g = TimeGrid::new(1.0, 50).unwrap();
        let f = IntensitySpec::Functional(FunctionalIntensity::new(1, "ind", |h| if h.current()[0] > 0.0 { 0.05 } else { 0.02 }));
        let a = verify_unit_expectation_with(&f, g, 2000, 17, Execution::Parallel).unwrap();
        let b = verify_unit_expectation_with(&f, g, 2000, 17, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn mixture_stays_in_band(seed in any::<u64>(), mix in 0.0f64..=1.0) {
            use rand::Rng;
            let g = TimeGrid::new(3.0, 60).unwrap();
            let band = Band::new(0.01, 0.1).unwrap();
            let mut rng = rng::stream(seed, Purpose::Pricing, 0);
            let a: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(band.lo..=band.hi)).collect();
            let b: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(band.lo..=band.hi)).collect();
            let a = IntensitySpec::OnGrid(SamplePath::scalar(g, a).unwrap());
            let b = IntensitySpec::StepWise(SamplePath::scalar(g, b).unwrap());
            let m = mixture_intensity(&a, &b, mix, band, g, None).unwrap();
            let (v, _) = m.node_values(g, None).unwrap();
            prop_assert!(v.iter().all(|&x| x >= band.lo - 1e-9 && x <= band.hi + 1e-9));
        }
    }
}
