//! Random primitives: Brownian paths, the bounded Jacobi intensity, default
//! times driven by an intensity, and the multiplicative recovery process.
//!
//! Every public simulator is a pure function of its inputs and a seed; the
//! `*_with` variants take an explicit generator so Monte Carlo drivers can
//! hand each path its own stream (see [`crate::rng`]).

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SamplePath, TimeGrid};
use crate::quad;
use crate::rng::{self, Purpose};

/// Parameters of the Jacobi intensity
/// `dλ = α(λ_μ − λ)dt + β √((λ − λ_lo)(λ_hi − λ)) dW`.
///
/// `beta = 0` is accepted and gives the deterministic mean-reverting path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobiParams {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_mean: f64,
    pub lambda_0: f64,
}

impl JacobiParams {
    pub fn new(
        lambda_lo: f64,
        lambda_hi: f64,
        alpha: f64,
        beta: f64,
        lambda_mean: f64,
        lambda_0: f64,
    ) -> Result<Self> {
        let p = Self {
            lambda_lo,
            lambda_hi,
            alpha,
            beta,
            lambda_mean,
            lambda_0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_lo", self.lambda_lo),
            ("lambda_hi", self.lambda_hi),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_mean", self.lambda_mean),
            ("lambda_0", self.lambda_0),
        ];
        for (field, v) in all {
            if !v.is_finite() {
                return Err(Error::param(field, format!("must be finite, got {v}")));
            }
        }
        if self.lambda_lo <= 0.0 {
            return Err(Error::param("lambda_lo", "must be positive"));
        }
        if self.lambda_lo >= self.lambda_hi {
            return Err(Error::param(
                "lambda_lo/lambda_hi ordering",
                format!("need lambda_lo < lambda_hi, got {} >= {}", self.lambda_lo, self.lambda_hi),
            ));
        }
        if !(self.lambda_lo < self.lambda_mean && self.lambda_mean < self.lambda_hi) {
            return Err(Error::param(
                "lambda_mean",
                format!(
                    "must lie strictly inside ({}, {}), got {}",
                    self.lambda_lo, self.lambda_hi, self.lambda_mean
                ),
            ));
        }
        if self.alpha <= 0.0 {
            return Err(Error::param("alpha", "must be positive"));
        }
        if self.beta < 0.0 {
            return Err(Error::param("beta", "must be non-negative"));
        }
        if !(self.lambda_lo..=self.lambda_hi).contains(&self.lambda_0) {
            return Err(Error::param(
                "lambda_0",
                format!(
                    "must lie in [{}, {}], got {}",
                    self.lambda_lo, self.lambda_hi, self.lambda_0
                ),
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.lambda_hi - self.lambda_lo
    }

    /// Normalised long-run mean `(λ_μ − λ_lo) / (λ_hi − λ_lo)`.
    pub fn normalized_mean(&self) -> f64 {
        (self.lambda_mean - self.lambda_lo) / self.width()
    }

    /// Normalised state `(λ − λ_lo) / (λ_hi − λ_lo)`.
    pub fn normalize(&self, lambda: f64) -> f64 {
        (lambda - self.lambda_lo) / self.width()
    }

    pub fn in_band(&self, lambda: f64) -> bool {
        (self.lambda_lo..=self.lambda_hi).contains(&lambda)
    }

    pub fn with_start(&self, lambda_0: f64) -> Result<Self> {
        let p = Self { lambda_0, ..*self };
        p.validate()?;
        Ok(p)
    }

    /// Squared diffusion coefficient `β²(x − λ_lo)(λ_hi − x)`.
    pub fn variance_rate(&self, x: f64) -> f64 {
        self.beta * self.beta * (x - self.lambda_lo) * (self.lambda_hi - x)
    }

    /// Deterministic (`β = 0`) path `λ_μ + (λ_0 − λ_μ) e^{−αt}`.
    pub fn mean_path(&self, t: f64) -> f64 {
        self.lambda_mean + (self.lambda_0 - self.lambda_mean) * (-self.alpha * t).exp()
    }
}

/// Marked point process driving the recovery factor `R_t = ∏_{T_n ≤ t} R_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryParams {
    #[serde(default = "unit_rate")]
    pub jump_rate: f64,
    pub r_lo: f64,
    pub r_hi: f64,
}

fn unit_rate() -> f64 {
    1.0
}

impl RecoveryParams {
    pub fn new(jump_rate: f64, r_lo: f64, r_hi: f64) -> Result<Self> {
        let p = Self { jump_rate, r_lo, r_hi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jump_rate.is_finite() && self.jump_rate > 0.0) {
            return Err(Error::param("jump_rate", "must be positive and finite"));
        }
        if !(self.r_lo.is_finite() && self.r_hi.is_finite()) {
            return Err(Error::param("r_lo/r_hi", "must be finite"));
        }
        if !(0.0 < self.r_lo && self.r_lo <= self.r_hi && self.r_hi <= 1.0) {
            return Err(Error::param(
                "r_lo/r_hi ordering",
                format!("need 0 < r_lo <= r_hi <= 1, got [{}, {}]", self.r_lo, self.r_hi),
            ));
        }
        Ok(())
    }

    pub fn mean_factor(&self) -> f64 {
        0.5 * (self.r_lo + self.r_hi)
    }
}

/// One jump of the recovery process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryJump {
    pub time: f64,
    pub factor: f64,
}

// ---------------------------------------------------------------------------
// Brownian motion

pub fn simulate_brownian(grid: TimeGrid, dim: usize, seed: u64) -> Result<SamplePath> {
    if dim == 0 {
        return Err(Error::param("dim", "must be at least 1"));
    }
    let mut rng = rng::stream(seed, Purpose::Brownian, 0);
    Ok(brownian_with(grid, dim, &mut rng))
}

pub fn brownian_with<R: Rng + ?Sized>(grid: TimeGrid, dim: usize, rng: &mut R) -> SamplePath {
    let sd = grid.dt().sqrt();
    let mut values = vec![0.0; grid.len() * dim];
    for i in 1..grid.len() {
        for k in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            values[i * dim + k] = values[(i - 1) * dim + k] + sd * z;
        }
    }
    SamplePath::from_raw(grid, dim, values)
}

// ---------------------------------------------------------------------------
// Jacobi diffusion

/// One-step map of the Jacobi scheme on the normalised state `x ∈ [0, 1]`.
///
/// The mean reversion is integrated exactly over the step and the diffusion
/// term is an Euler increment. Near the edges the Gaussian draw is truncated
/// symmetrically to the distance from the conditional mean to the nearer
/// edge, so the step stays in `[0, 1]` and its conditional mean is the exact
/// one. A plain post-step clamp would push the mean inwards at the edges.
#[derive(Debug, Clone, Copy)]
pub(crate) struct JacobiStepper {
    lo: f64,
    hi: f64,
    width: f64,
    gamma: f64,
    decay: f64,
    vol: f64,
}

impl JacobiStepper {
    pub(crate) fn new(params: &JacobiParams, dt: f64) -> Self {
        Self {
            lo: params.lambda_lo,
            hi: params.lambda_hi,
            width: params.width(),
            gamma: params.normalized_mean(),
            decay: (-params.alpha * dt).exp(),
            vol: params.beta * dt.sqrt(),
        }
    }

    #[inline]
    pub(crate) fn step(&self, x: f64, z: f64) -> f64 {
        let mean = self.gamma + (x - self.gamma) * self.decay;
        let scale = self.vol * (x * (1.0 - x)).max(0.0).sqrt();
        let room = mean.min(1.0 - mean).max(0.0);
        let step = scale * z;
        let step = if step.abs() > room { room.copysign(z) } else { step };
        (mean + step).clamp(0.0, 1.0)
    }

    #[inline]
    pub(crate) fn to_intensity(self, x: f64) -> f64 {
        (self.lo + self.width * x).clamp(self.lo, self.hi)
    }

    pub(crate) fn is_deterministic(&self) -> bool {
        self.vol == 0.0
    }
}

pub fn simulate_jacobi(params: &JacobiParams, grid: TimeGrid, seed: u64) -> Result<SamplePath> {
    params.validate()?;
    let mut rng = rng::stream(seed, Purpose::Jacobi, 0);
    let mut values = Vec::with_capacity(grid.len());
    jacobi_fill(params, grid, &mut rng, 1.0, &mut values);
    Ok(SamplePath::from_raw(grid, 1, values))
}

/// Simulate one Jacobi path with the given generator.
pub fn jacobi_with<R: Rng + ?Sized>(params: &JacobiParams, grid: TimeGrid, rng: &mut R) -> Result<SamplePath> {
    params.validate()?;
    let mut values = Vec::with_capacity(grid.len());
    jacobi_fill(params, grid, rng, 1.0, &mut values);
    Ok(SamplePath::from_raw(grid, 1, values))
}

pub(crate) fn jacobi_fill<R: Rng + ?Sized>(
    params: &JacobiParams,
    grid: TimeGrid,
    rng: &mut R,
    sign: f64,
    out: &mut Vec<f64>,
) {
    let stepper = JacobiStepper::new(params, grid.dt());
    out.clear();
    let mut x = params.normalize(params.lambda_0).clamp(0.0, 1.0);
    out.push(params.lambda_0);
    for _ in 0..grid.n_steps() {
        let z: f64 = if stepper.is_deterministic() {
            0.0
        } else {
            StandardNormal.sample(rng)
        };
        x = stepper.step(x, sign * z);
        out.push(stepper.to_intensity(x));
    }
}

/// Drive a Jacobi path from pre-drawn standard normals (one per step).
pub(crate) fn jacobi_from_normals(params: &JacobiParams, grid: TimeGrid, normals: &[f64], sign: f64, out: &mut Vec<f64>) {
    let stepper = JacobiStepper::new(params, grid.dt());
    out.clear();
    let mut x = params.normalize(params.lambda_0).clamp(0.0, 1.0);
    out.push(params.lambda_0);
    for &z in &normals[..grid.n_steps()] {
        x = stepper.step(x, sign * z);
        out.push(stepper.to_intensity(x));
    }
}

// ---------------------------------------------------------------------------
// Integrated intensities and default times

/// How an intensity sampled on a grid is read between nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Linear between nodes; integrals use the trapezoidal rule.
    Linear,
    /// `values[i]` holds on `(t_i, t_{i+1}]` (left-point, predictable).
    StepLeft,
}

/// An intensity on a grid together with its running integral `Λ(t_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedIntensity {
    grid: TimeGrid,
    values: Vec<f64>,
    cumulative: Vec<f64>,
    interpolation: Interpolation,
    constant: Option<f64>,
}

impl IntegratedIntensity {
    pub fn new(grid: TimeGrid, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "intensity has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::NonPositiveIntensity { t: grid.node(i), value: v });
            }
        }
        let h = grid.dt();
        let cumulative = match interpolation {
            Interpolation::Linear => quad::cumulative_trapezoid(&values, h),
            Interpolation::StepLeft => {
                let mut acc = 0.0;
                let mut c = Vec::with_capacity(values.len());
                c.push(0.0);
                for &v in &values[..values.len() - 1] {
                    acc += v * h;
                    c.push(acc);
                }
                c
            }
        };
        Ok(Self {
            grid,
            values,
            cumulative,
            interpolation,
            constant: None,
        })
    }

    /// Constant intensity `c`; the running integral is `c * t_i` exactly.
    pub fn constant(grid: TimeGrid, c: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::NonPositiveIntensity { t: 0.0, value: c });
        }
        Ok(Self {
            grid,
            values: vec![c; grid.len()],
            cumulative: grid.nodes().map(|t| c * t).collect(),
            interpolation: Interpolation::StepLeft,
            constant: Some(c),
        })
    }

    /// Intensity defined by its running integral at the nodes; the node
    /// values become step-left first differences.
    pub(crate) fn from_cumulative(grid: TimeGrid, cumulative: Vec<f64>) -> Self {
        let h = grid.dt();
        let mut values: Vec<f64> = cumulative.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let last = *values.last().unwrap_or(&0.0);
        values.push(last);
        Self {
            grid,
            values,
            cumulative,
            interpolation: Interpolation::StepLeft,
            constant: None,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// `Λ(t)` for any `t` in `[0, horizon]`, consistent with the node values.
    pub fn integral_to(&self, t: f64) -> f64 {
        if let Some(c) = self.constant {
            return c * t;
        }
        let i = self.grid.step_containing(t);
        let s = t - self.grid.node(i);
        let h = self.grid.dt();
        match self.interpolation {
            Interpolation::Linear => {
                let slope = (self.values[i + 1] - self.values[i]) / h;
                self.cumulative[i] + self.values[i] * s + 0.5 * slope * s * s
            }
            Interpolation::StepLeft => self.cumulative[i] + self.values[i] * s,
        }
    }

    /// Intensity at the node immediately left of `t` (`λ_0` for `t = 0`).
    pub fn left_value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.values[0];
        }
        let x = t / self.grid.dt();
        let mut i = x.floor() as usize;
        if i as f64 == x && i > 0 {
            i -= 1;
        }
        self.values[i.min(self.grid.n_steps() - 1)]
    }

    /// First time the running integral reaches `level`, or `None` when it
    /// stays below `level` on the whole grid.
    pub fn first_passage(&self, level: f64) -> Option<f64> {
        if level <= 0.0 {
            return Some(0.0);
        }
        if self.total() < level {
            return None;
        }
        if let Some(c) = self.constant {
            return Some((level / c).min(self.grid.horizon()));
        }
        // first node where the integral reaches the level
        let j = self.cumulative.partition_point(|&c| c < level);
        let i = j - 1;
        let d = level - self.cumulative[i];
        let h = self.grid.dt();
        let s = match self.interpolation {
            Interpolation::StepLeft => d / self.values[i],
            Interpolation::Linear => {
                let a = 0.5 * (self.values[i + 1] - self.values[i]) / h;
                let b = self.values[i];
                2.0 * d / (b + (b * b + 4.0 * a * d).max(0.0).sqrt())
            }
        };
        Some((self.grid.node(i) + s.clamp(0.0, h)).min(self.grid.horizon()))
    }
}

/// Default time `τ = inf{t : ∫_0^t λ_s ds ≥ E}` with `E` standard
/// exponential; `None` when no default happens on the grid horizon.
pub fn sample_default_time(intensity: &SamplePath, seed: u64) -> Result<Option<f64>> {
    let mut rng = rng::stream(seed, Purpose::DefaultTime, 0);
    default_time_with(intensity, &mut rng)
}

pub fn default_time_with<R: Rng + ?Sized>(intensity: &SamplePath, rng: &mut R) -> Result<Option<f64>> {
    if intensity.dim() != 1 {
        return Err(Error::param("intensity", "must be a scalar path"));
    }
    let integrated = IntegratedIntensity::new(*intensity.grid(), intensity.values().to_vec(), Interpolation::Linear)?;
    let e: f64 = Exp1.sample(rng);
    Ok(integrated.first_passage(e))
}

// ---------------------------------------------------------------------------
// Recovery process

pub fn simulate_recovery(params: &RecoveryParams, grid: TimeGrid, seed: u64) -> Result<SamplePath> {
    params.validate()?;
    let mut rng = rng::stream(seed, Purpose::Recovery, 0);
    let jumps = recovery_jumps_with(params, grid.horizon(), &mut rng);
    Ok(recovery_path(grid, &jumps))
}

/// Jump times (Poisson with rate `jump_rate`) and i.i.d. uniform factors on
/// `[r_lo, r_hi]`, up to `horizon`.
pub fn recovery_jumps_with<R: Rng + ?Sized>(params: &RecoveryParams, horizon: f64, rng: &mut R) -> Vec<RecoveryJump> {
    let mut jumps = Vec::new();
    let mut t = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        t += e / params.jump_rate;
        if t > horizon {
            break;
        }
        let factor = if params.r_lo == params.r_hi {
            params.r_lo
        } else {
            rng.gen_range(params.r_lo..=params.r_hi)
        };
        jumps.push(RecoveryJump { time: t, factor });
    }
    jumps
}

/// `R_{t_i} = ∏_{T_n ≤ t_i} R_n` on the grid.
pub fn recovery_path(grid: TimeGrid, jumps: &[RecoveryJump]) -> SamplePath {
    let mut values = Vec::with_capacity(grid.len());
    let mut r = 1.0;
    let mut next = 0;
    for t in grid.nodes() {
        while next < jumps.len() && jumps[next].time <= t {
            r *= jumps[next].factor;
            next += 1;
        }
        values.push(r);
    }
    SamplePath::from_raw(grid, 1, values)
}
