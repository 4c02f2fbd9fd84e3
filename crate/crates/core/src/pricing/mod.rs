//! Robust prices of zero-coupon bonds when the pricing intensity follows a
//! Jacobi diffusion inside `[λ_lo, λ_hi]`.
//!
//! With a deterministic short rate the price splits into a discount factor
//! and `B(t,T) = E[exp(−∫_t^T λ_s ds) | λ_t = λ]`. `B` is bracketed by the
//! analytic bounds in [`bounds`], expanded in [`series`] and estimated by
//! simulation in [`mc`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_order, Error, Result};
use crate::quad;
use crate::report::{csv_line, sig12};
use crate::stochastic::JacobiParams;

pub mod bounds;
pub mod mc;
pub mod series;

pub use bounds::{bond_lower_bound, bond_upper_bound, bond_upper_bound_with, UpperBoundForm};
pub use mc::{mc_price, McSettings};
pub use series::{iterated_integral, series_price, SeriesParams};

/// Deterministic short rate.
#[derive(Clone)]
pub enum ShortRate {
    Constant(f64),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for ShortRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShortRate::Constant(r) => write!(f, "Constant({r})"),
            ShortRate::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl ShortRate {
    /// `exp(−∫_t^T r_s ds)`.
    pub fn discount(&self, t: f64, maturity: f64) -> Result<f64> {
        check_order(t, maturity)?;
        let integral = match self {
            ShortRate::Constant(r) => r * (maturity - t),
            ShortRate::Function(r) => {
                let panels = (((maturity - t) * 1000.0).ceil() as usize).max(1);
                quad::integrate(|s| r(s), t, maturity, panels)
            }
        };
        if !integral.is_finite() {
            return Err(Error::NonFinite("short-rate integral".into()));
        }
        Ok((-integral).exp())
    }
}

/// Allowance for the trapezoid and stepping error of [`mc_price`] in
/// [`PriceInterval::mc_consistent`].
pub const MC_BIAS_SLACK: f64 = 1e-6;

/// Bounds and estimates of the survival factor `E[exp(−∫_t^T λ_s ds)]` for
/// one `(t, T)`, with the riskless discount factor alongside. The bond price
/// is `discount` times the survival factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceInterval {
    pub t: f64,
    pub maturity: f64,
    pub lower: f64,
    pub upper: f64,
    /// Truncated series, present only when it agrees with the Monte Carlo
    /// estimate (see [`SeriesGate`]).
    pub series: Option<f64>,
    pub mc: f64,
    pub mc_stderr: f64,
    pub discount: f64,
}

impl PriceInterval {
    pub const CSV_HEADER: &'static str = "t,T,lower,upper,series,mc,stderr,discount";

    /// One CSV row; an unavailable series is written as `NA`.
    pub fn csv_row(&self) -> String {
        csv_line(&[
            sig12(self.t),
            sig12(self.maturity),
            sig12(self.lower),
            sig12(self.upper),
            self.series.map(sig12).unwrap_or_else(|| "NA".into()),
            sig12(self.mc),
            sig12(self.mc_stderr),
            sig12(self.discount),
        ])
    }

    /// `mc ∈ [lower − k·stderr − ε, upper + k·stderr + ε]` with
    /// `ε = MC_BIAS_SLACK` covering the time-discretisation error, which the
    /// standard error does not see (it is zero when `β = 0`).
    pub fn mc_consistent(&self, k: f64) -> bool {
        let slack = k * self.mc_stderr + MC_BIAS_SLACK;
        self.mc >= self.lower - slack && self.mc <= self.upper + slack
    }
}

/// Comparison of the truncated series with a Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesGate {
    /// `None` when the series itself reported it is not available.
    pub series: Option<f64>,
    pub mc: f64,
    pub stderr: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Absolute slack allowed on top of `3·stderr`, covering truncation and time
/// discretisation.
pub const SERIES_SLACK: f64 = 1e-3;

impl SeriesGate {
    pub fn check(series: Result<f64>, mc: f64, stderr: f64) -> Self {
        let tolerance = 3.0 * stderr + SERIES_SLACK;
        let series = series.ok();
        let pass = matches!(series, Some(v) if (v - mc).abs() <= tolerance);
        Self {
            series,
            mc,
            stderr,
            tolerance,
            pass,
        }
    }
}

/// Robust price interval for a defaultable zero-coupon bond, conditional on
/// survival to `t` and on the intensity being `lambda` at `t`.
pub fn robust_price_interval(
    params: &JacobiParams,
    lambda: f64,
    short_rate: &ShortRate,
    t: f64,
    maturity: f64,
    sp: &SeriesParams,
    mc: &McSettings,
) -> Result<PriceInterval> {
    assemble(params, lambda, short_rate, t, maturity, sp, mc)
}

/// Same interval under fractional recovery of market value: `h_params`
/// describes the market exponential compensator, which takes the place of
/// the intensity.
pub fn recovery_price_interval(
    h_params: &JacobiParams,
    h_0: f64,
    short_rate: &ShortRate,
    t: f64,
    maturity: f64,
    sp: &SeriesParams,
    mc: &McSettings,
) -> Result<PriceInterval> {
    assemble(h_params, h_0, short_rate, t, maturity, sp, mc)
}

fn assemble(
    params: &JacobiParams,
    lambda: f64,
    short_rate: &ShortRate,
    t: f64,
    maturity: f64,
    sp: &SeriesParams,
    mc: &McSettings,
) -> Result<PriceInterval> {
    let started = params.with_start(lambda)?;
    let discount = short_rate.discount(t, maturity)?;
    let lower = bond_lower_bound(&started, lambda, t, maturity)?;
    let upper = bond_upper_bound(&started, lambda, t, maturity)?;
    if lower > upper * (1.0 + 1e-12) {
        return Err(Error::NonFinite(format!("price bounds out of order: lower {lower} > upper {upper}")));
    }
    let estimate = mc_price(&started, t, maturity, mc)?;
    let gate = SeriesGate::check(series_price(&started, lambda, t, maturity, sp), estimate.mean, estimate.stderr);
    Ok(PriceInterval {
        t,
        maturity,
        lower: discount * lower,
        upper: discount * upper,
        series: gate.series.filter(|_| gate.pass).map(|v| discount * v),
        mc: discount * estimate.mean,
        mc_stderr: discount * estimate.stderr,
        discount,
    })
}
