//! Run configuration: one TOML document per run.
//!
//! Every block rejects unknown keys, so a typo is reported together with the
//! list of keys the block accepts.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Deserializer, Serialize};

use robust_credit::pricing::{McSettings, SeriesParams};
use robust_credit::{Execution, JacobiParams, RecoveryParams, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Price,
    Bounds,
    Interval,
    AuditDrift,
    VerifyMeasure,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Price => "price",
            Command::Bounds => "bounds",
            Command::Interval => "interval",
            Command::AuditDrift => "audit-drift",
            Command::VerifyMeasure => "verify-measure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobi: Option<JacobiParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<RecoveryParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<TimesBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<IntervalBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureBlock>,
}

/// Monte Carlo settings without a seed of their own; the master seed is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_steps")]
    pub steps_per_year: usize,
    #[serde(default)]
    pub execution: Execution,
}

fn default_paths() -> usize {
    McSettings::default().n_paths
}

fn default_steps() -> usize {
    McSettings::default().steps_per_year
}

impl Default for McBlock {
    fn default() -> Self {
        Self {
            n_paths: default_paths(),
            steps_per_year: default_steps(),
            execution: Execution::default(),
        }
    }
}

impl McBlock {
    pub fn settings(&self, seed: u64) -> McSettings {
        McSettings {
            n_paths: self.n_paths,
            steps_per_year: self.steps_per_year,
            seed,
            execution: self.execution,
        }
    }
}

/// Valuation grid. Rows are produced for every `(start, t, T)` with `t <= T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimesBlock {
    #[serde(default = "zero_list", deserialize_with = "one_or_many")]
    pub t: Vec<f64>,
    #[serde(deserialize_with = "one_or_many")]
    pub maturity: Vec<f64>,
    /// Intensities at `t`; defaults to `jacobi.lambda_0`.
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "some_one_or_many")]
    pub start: Option<Vec<f64>>,
    /// Constant short rate used for the riskless discount factor.
    #[serde(default)]
    pub short_rate: f64,
}

fn zero_list() -> Vec<f64> {
    vec![0.0]
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

fn some_one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<f64>>, D::Error> {
    one_or_many(d).map(Some)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalBlock {
    /// Read `[jacobi]` as the market exponential compensator of a bond with
    /// fractional recovery of market value.
    #[serde(default)]
    pub recovery: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Process {
    Brownian,
    Jacobi,
    Recovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub process: Process,
    pub horizon: f64,
    pub steps_per_year: usize,
    #[serde(default = "one")]
    pub paths: usize,
    /// Brownian dimension.
    #[serde(default = "one")]
    pub dim: usize,
}

fn one() -> usize {
    1
}

/// Flat-slope initial curve `f(0,T) = f0 + slope·T` with the scalar
/// volatility `sigma·exp(−kappa (T − t))`; `kappa = 0` is constant volatility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveBlock {
    pub f0: f64,
    #[serde(default)]
    pub slope: f64,
    pub sigma: f64,
    #[serde(default)]
    pub kappa: f64,
    /// Market price of diffusion risk.
    #[serde(default)]
    pub theta: f64,
    /// Multiplier on the no-arbitrage drift; anything other than 1 breaks it.
    #[serde(default = "unit")]
    pub drift_scale: f64,
    /// Constant short rate; when absent it is derived as `f(t,t) − λ*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_rate: Option<f64>,
    pub lambda_star: f64,
    pub horizon: f64,
    pub steps: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn unit() -> f64 {
    1.0
}

fn default_tolerance() -> f64 {
    1e-6
}

/// Candidate intensities whose densities are checked for unit expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureBlock {
    #[serde(default, deserialize_with = "one_or_many")]
    pub constants: Vec<f64>,
    /// `λ_t = clamp(base + slope·W_t, lo, hi)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<AffineBlock>,
    pub horizon: f64,
    pub steps: usize,
    #[serde(default = "default_measure_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub execution: Execution,
}

fn default_measure_paths() -> usize {
    20_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineBlock {
    pub base: f64,
    pub slope: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| anyhow!("malformed config: {}", e.message()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config {}", path.display()))
}

pub fn to_toml(config: &RunConfig) -> Result<String> {
    toml::to_string(config).context("serializing config")
}

fn require<'a, T>(block: &'a Option<T>, name: &str, command: Command) -> Result<&'a T> {
    block
        .as_ref()
        .ok_or_else(|| anyhow!("command `{}` needs a [{name}] block", command.name()))
}

fn positive(field: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        bail!("invalid parameter `{field}`: must be positive and finite, got {x}");
    }
    Ok(())
}

fn finite(field: &str, x: f64) -> Result<()> {
    if !x.is_finite() {
        bail!("invalid parameter `{field}`: must be finite, got {x}");
    }
    Ok(())
}

impl RunConfig {
    pub fn jacobi(&self) -> Result<&JacobiParams> {
        require(&self.jacobi, "jacobi", self.command)
    }

    pub fn times(&self) -> Result<&TimesBlock> {
        require(&self.times, "times", self.command)
    }

    pub fn mc_settings(&self) -> McSettings {
        self.mc.unwrap_or_default().settings(self.seed)
    }

    pub fn series_params(&self) -> SeriesParams {
        self.series.unwrap_or_default()
    }

    /// Intensities at `t` to value from.
    pub fn starts(&self) -> Result<Vec<f64>> {
        let jacobi = self.jacobi()?;
        Ok(self.times()?.start.clone().unwrap_or_else(|| vec![jacobi.lambda_0]))
    }

    pub fn validate(&self) -> Result<()> {
        let command = self.command;
        if let Some(p) = &self.jacobi {
            p.validate()?;
        }
        if let Some(p) = &self.recovery {
            p.validate()?;
        }
        if let Some(p) = &self.series {
            p.validate()?;
        }
        if let Some(m) = &self.mc {
            m.settings(self.seed).validate()?;
        }
        if let Some(times) = &self.times {
            times.validate()?;
        }
        match command {
            Command::Simulate => {
                let s = require(&self.simulate, "simulate", command)?;
                positive("simulate.horizon", s.horizon)?;
                TimeGrid::with_density(s.horizon, s.steps_per_year).context("simulate.steps_per_year")?;
                if s.paths == 0 {
                    bail!("invalid parameter `simulate.paths`: must be positive");
                }
                if s.dim == 0 {
                    bail!("invalid parameter `simulate.dim`: must be positive");
                }
                match s.process {
                    Process::Jacobi => {
                        self.jacobi()?;
                    }
                    Process::Recovery => {
                        require(&self.recovery, "recovery", command)?;
                    }
                    Process::Brownian => {}
                }
            }
            Command::Price | Command::Bounds | Command::Interval => {
                let jacobi = self.jacobi()?;
                self.times()?;
                for (k, &l) in self.starts()?.iter().enumerate() {
                    if !jacobi.in_band(l) {
                        bail!(
                            "invalid parameter `times.start[{k}]`: {l} lies outside [lambda_lo, lambda_hi] = [{}, {}]",
                            jacobi.lambda_lo,
                            jacobi.lambda_hi
                        );
                    }
                }
            }
            Command::AuditDrift => require(&self.curve, "curve", command)?.validate()?,
            Command::VerifyMeasure => require(&self.measure, "measure", command)?.validate()?,
        }
        Ok(())
    }
}

impl TimesBlock {
    fn validate(&self) -> Result<()> {
        if self.t.is_empty() {
            bail!("invalid parameter `times.t`: needs at least one value");
        }
        if self.maturity.is_empty() {
            bail!("invalid parameter `times.maturity`: needs at least one value");
        }
        for &t in &self.t {
            if !(t.is_finite() && t >= 0.0) {
                bail!("invalid parameter `times.t`: must be non-negative and finite, got {t}");
            }
        }
        for &m in &self.maturity {
            if !(m.is_finite() && m >= 0.0) {
                bail!("invalid parameter `times.maturity`: must be non-negative and finite, got {m}");
            }
        }
        if !self.t.iter().any(|&t| self.maturity.iter().any(|&m| t <= m)) {
            bail!("invalid parameter `times.t/times.maturity ordering`: no pair with t <= T");
        }
        finite("times.short_rate", self.short_rate)
    }

    /// `(t, T)` pairs with `t <= T`, in input order.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &t in &self.t {
            for &m in &self.maturity {
                if t <= m {
                    out.push((t, m));
                }
            }
        }
        out
    }
}

impl CurveBlock {
    fn validate(&self) -> Result<()> {
        finite("curve.f0", self.f0)?;
        finite("curve.slope", self.slope)?;
        finite("curve.theta", self.theta)?;
        finite("curve.drift_scale", self.drift_scale)?;
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            bail!("invalid parameter `curve.sigma`: must be non-negative and finite, got {}", self.sigma);
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            bail!("invalid parameter `curve.kappa`: must be non-negative and finite, got {}", self.kappa);
        }
        if let Some(r) = self.short_rate {
            finite("curve.short_rate", r)?;
        }
        positive("curve.lambda_star", self.lambda_star)?;
        positive("curve.horizon", self.horizon)?;
        positive("curve.tolerance", self.tolerance)?;
        TimeGrid::new(self.horizon, self.steps).context("curve.steps")?;
        Ok(())
    }
}

impl MeasureBlock {
    fn validate(&self) -> Result<()> {
        if self.constants.is_empty() && self.affine.is_none() {
            bail!("invalid parameter `measure.constants`: give at least one intensity or an [measure.affine] block");
        }
        for &c in &self.constants {
            positive("measure.constants", c)?;
        }
        if let Some(a) = &self.affine {
            finite("measure.affine.base", a.base)?;
            finite("measure.affine.slope", a.slope)?;
            positive("measure.affine.lo", a.lo)?;
            if !(a.hi.is_finite() && a.lo < a.hi) {
                bail!("invalid parameter `measure.affine.lo/hi ordering`: need lo < hi, got [{}, {}]", a.lo, a.hi);
            }
        }
        positive("measure.horizon", self.horizon)?;
        TimeGrid::new(self.horizon, self.steps).context("measure.steps")?;
        if self.n_paths < 100 {
            bail!("invalid parameter `measure.n_paths`: need at least 100, got {}", self.n_paths);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BOUNDS: &str = r#"
command = "bounds"

[jacobi]
lambda_lo = 0.01
lambda_hi = 0.10
alpha = 0.5
beta = 0.3
lambda_mean = 0.04
lambda_0 = 0.06

[times]
t = 0.0
maturity = [1.0, 5.0]
"#;

    #[test]
    fn minimal_bounds_config() {
        let c = parse_config(BOUNDS).unwrap();
        assert_eq!(c.command, Command::Bounds);
        assert_eq!(c.times().unwrap().pairs(), vec![(0.0, 1.0), (0.0, 5.0)]);
        assert_eq!(c.starts().unwrap(), vec![0.06]);
    }

    #[test]
    fn band_ordering_is_named() {
        let text = BOUNDS.replace("lambda_hi = 0.10", "lambda_hi = 0.005");
        let e = format!("{:#}", parse_config(&text).unwrap_err());
        assert!(e.contains("lambda_lo/lambda_hi ordering"), "{e}");
    }

    #[test]
    fn unknown_key_lists_accepted_keys() {
        let text = BOUNDS.replace("beta = 0.3", "beta = 0.3\ngamma = 1.0");
        let e = format!("{:#}", parse_config(&text).unwrap_err());
        assert!(e.contains("gamma") && e.contains("lambda_mean") && e.contains("alpha"), "{e}");
    }

    #[test]
    fn missing_block_is_reported() {
        let e = parse_config("command = \"verify-measure\"").unwrap_err().to_string();
        assert!(e.contains("[measure]"), "{e}");
    }

    #[test]
    fn round_trip() {
        let c = parse_config(BOUNDS).unwrap();
        let again = parse_config(&to_toml(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
