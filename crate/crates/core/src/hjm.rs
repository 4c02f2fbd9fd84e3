//! Defaultable forward-rate (HJM) dynamics.
//!
//! Forward rates follow `f(t,T) = f(0,T) + ∫_0^t a(s,T) ds + ∫_0^t b(s,T)·dW_s`
//! under the reference measure. With `ā(t,T) = ∫_t^T a(t,u) du` and `b̄`
//! defined alike, discounted defaultable bonds are local martingales under the
//! pricing measure exactly when
//!
//! ```text
//! f(t,t) = r_t + λ*_t
//! ā(t,T) = ½‖b̄(t,T)‖² − b̄(t,T)·θ*_t
//! ```
//!
//! where `θ*` is the market price of risk. All curve times and maturities
//! share one [`TimeGrid`]; maturity integrals use the trapezoidal rule.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_order, Error, Result};
use crate::exec::Execution;
use crate::grid::{SamplePath, TimeGrid};
use crate::measures::IntensitySpec;
use crate::quad;
use crate::report::{csv_line, sig12};
use crate::rng::{self, Purpose};
use crate::stats::Estimate;
use crate::stochastic::{jacobi_from_normals, JacobiParams};

pub type TimeFunction = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `(s, t, out)`: writes the `d` coordinates of the field at `(s, t)`.
pub type VectorField = Arc<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>;
pub type VectorTimeFunction = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Drift field of the forward rates.
#[derive(Clone)]
pub enum Drift {
    Field(ScalarField),
    /// `a(t,u) = scale · b(t,u)·(b̄(t,u) − θ*_t)`, the derivative in `u` of
    /// the no-arbitrage `ā`. `scale = 1` satisfies the drift condition.
    NoArbitrage { scale: f64 },
}

#[derive(Clone)]
pub enum ShortRateMode {
    /// `r_t = f(t,t) − λ*_t`.
    Derived,
    /// Deterministic short rate.
    Explicit(TimeFunction),
}

#[derive(Clone)]
pub struct ForwardCurveModel {
    dim: usize,
    initial_curve: TimeFunction,
    drift: Drift,
    volatility: VectorField,
    theta: VectorTimeFunction,
    short_rate: ShortRateMode,
    panels: usize,
}

impl fmt::Debug for ForwardCurveModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let drift = match &self.drift {
            Drift::Field(_) => "field".to_string(),
            Drift::NoArbitrage { scale } => format!("no-arbitrage x {scale}"),
        };
        f.debug_struct("ForwardCurveModel")
            .field("dim", &self.dim)
            .field("drift", &drift)
            .field("derived_short_rate", &matches!(self.short_rate, ShortRateMode::Derived))
            .finish_non_exhaustive()
    }
}

impl ForwardCurveModel {
    /// Model with the no-arbitrage drift, `θ* = 0` and a derived short rate.
    pub fn new(
        dim: usize,
        initial_curve: impl Fn(f64) -> f64 + Send + Sync + 'static,
        volatility: impl Fn(f64, f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "must be at least 1"));
        }
        Ok(Self {
            dim,
            initial_curve: Arc::new(initial_curve),
            drift: Drift::NoArbitrage { scale: 1.0 },
            volatility: Arc::new(volatility),
            theta: Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
            short_rate: ShortRateMode::Derived,
            panels: 256,
        })
    }

    /// Flat initial curve with constant scalar volatility `b`.
    pub fn flat_constant_vol(f0: f64, b: f64) -> Self {
        Self::new(1, move |_| f0, move |_, _, out| out[0] = b).expect("dim 1")
    }

    /// Flat initial curve with `b(s,t) = σ e^{−κ(t−s)}`.
    pub fn flat_vasicek_vol(f0: f64, sigma: f64, kappa: f64) -> Self {
        Self::new(1, move |_| f0, move |s, t, out| out[0] = sigma * (-kappa * (t - s)).exp()).expect("dim 1")
    }

    pub fn with_drift_field(mut self, a: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Drift::Field(Arc::new(a));
        self
    }

    /// Constant market price of risk.
    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.dim {
            return Err(Error::param("theta", format!("expected {} coordinates, got {}", self.dim, theta.len())));
        }
        self.theta = Arc::new(move |_, out: &mut [f64]| out.copy_from_slice(&theta));
        Ok(self)
    }

    pub fn with_theta_fn(mut self, theta: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.theta = Arc::new(theta);
        self
    }

    pub fn with_short_rate(mut self, r: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.short_rate = ShortRateMode::Explicit(Arc::new(r));
        self
    }

    pub fn with_quadrature_panels(mut self, panels: usize) -> Self {
        self.panels = panels.max(1);
        self
    }

    /// Same model with the drift multiplied by `factor`.
    pub fn scaled_drift(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.drift = match &self.drift {
            Drift::NoArbitrage { scale } => Drift::NoArbitrage { scale: scale * factor },
            Drift::Field(a) => {
                let a = a.clone();
                Drift::Field(Arc::new(move |s, t| factor * a(s, t)))
            }
        };
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn short_rate_mode(&self) -> &ShortRateMode {
        &self.short_rate
    }

    pub fn initial_forward(&self, t: f64) -> f64 {
        (self.initial_curve)(t)
    }

    pub fn volatility(&self, s: f64, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.volatility)(s, t, &mut out);
        out
    }

    pub fn theta(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.theta)(t, &mut out);
        out
    }

    /// Drift `a(s, t)`.
    pub fn drift(&self, s: f64, t: f64) -> f64 {
        match &self.drift {
            Drift::Field(a) => a(s, t),
            Drift::NoArbitrage { scale } => {
                let b = self.volatility(s, t);
                let bbar = self.bbar(s, t);
                let theta = self.theta(s);
                scale * b.iter().zip(&bbar).zip(&theta).map(|((b, bb), th)| b * (bb - th)).sum::<f64>()
            }
        }
    }

    fn bbar(&self, t: f64, maturity: f64) -> Vec<f64> {
        let n = self.panels;
        let h = (maturity - t) / n as f64;
        let mut acc = vec![0.0; self.dim];
        let mut buf = vec![0.0; self.dim];
        if h == 0.0 {
            return acc;
        }
        for m in 0..=n {
            let w = if m == 0 || m == n { 0.5 * h } else { h };
            (self.volatility)(t, t + m as f64 * h, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += w * b;
            }
        }
        acc
    }

    /// `(ā(t,T), b̄(t,T))` by trapezoidal quadrature over `[t, T]`.
    pub fn bar_integrals(&self, t: f64, maturity: f64) -> Result<(f64, Vec<f64>)> {
        check_order(t, maturity)?;
        let bbar = self.bbar(t, maturity);
        if maturity == t {
            return Ok((0.0, bbar));
        }
        let abar = match &self.drift {
            Drift::Field(a) => quad::integrate(|u| a(t, u), t, maturity, self.panels),
            Drift::NoArbitrage { scale } => {
                // b̄(t,u) accumulated along the same panels as ā
                let n = self.panels;
                let h = (maturity - t) / n as f64;
                let theta = self.theta(t);
                let mut b_prev = self.volatility(t, t);
                let mut running = vec![0.0; self.dim];
                let mut a_vals = Vec::with_capacity(n + 1);
                a_vals.push(scale * dot_diff(&b_prev, &running, &theta));
                for m in 1..=n {
                    let b = self.volatility(t, t + m as f64 * h);
                    for k in 0..self.dim {
                        running[k] += 0.5 * h * (b_prev[k] + b[k]);
                    }
                    a_vals.push(scale * dot_diff(&b, &running, &theta));
                    b_prev = b;
                }
                quad::trapezoid(&a_vals, h)
            }
        };
        Ok((abar, bbar))
    }
}

fn dot_diff(b: &[f64], bbar: &[f64], theta: &[f64]) -> f64 {
    b.iter().zip(bbar).zip(theta).map(|((b, bb), th)| b * (bb - th)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// No-arbitrage value `½‖b̄(t,T)‖² − b̄(t,T)·θ*_t` of `ā(t,T)`.
pub fn drift_from_condition(model: &ForwardCurveModel, t: f64, maturity: f64) -> Result<f64> {
    let (_, bbar) = model.bar_integrals(t, maturity)?;
    let theta = model.theta(t);
    Ok(0.5 * dot(&bbar, &bbar) - dot(&bbar, &theta))
}

pub fn bar_integrals(model: &ForwardCurveModel, t: f64, maturity: f64) -> Result<(f64, Vec<f64>)> {
    model.bar_integrals(t, maturity)
}

// ---------------------------------------------------------------------------
// Fields sampled on the joint grid

/// Lower-triangular index `(k, j)`, `k <= j`, for `len` nodes.
#[derive(Debug, Clone, Copy)]
struct Tri {
    len: usize,
}

impl Tri {
    fn size(&self) -> usize {
        self.len * (self.len + 1) / 2
    }

    #[inline]
    fn at(&self, k: usize, j: usize) -> usize {
        debug_assert!(k <= j && j < self.len);
        k * self.len - k * k.saturating_sub(1) / 2 + (j - k)
    }
}

/// Model fields on the grid: `f(0,T_j)`, `a(t_k,T_j)`, `b(t_k,T_j)` and their
/// maturity integrals from `t_k` to `T_j`.
struct Discretized {
    dim: usize,
    tri: Tri,
    f0: Vec<f64>,
    theta: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    abar: Vec<f64>,
    bbar: Vec<f64>,
}

impl Discretized {
    fn build(model: &ForwardCurveModel, grid: TimeGrid) -> Self {
        let len = grid.len();
        let dim = model.dim;
        let tri = Tri { len };
        let h = grid.dt();
        let f0: Vec<f64> = grid.nodes().map(|t| model.initial_forward(t)).collect();
        let mut theta = vec![0.0; len * dim];
        for k in 0..len {
            (model.theta)(grid.node(k), &mut theta[k * dim..(k + 1) * dim]);
        }
        let mut b = vec![0.0; tri.size() * dim];
        let mut bbar = vec![0.0; tri.size() * dim];
        let mut a = vec![0.0; tri.size()];
        let mut abar = vec![0.0; tri.size()];
        for k in 0..len {
            let tk = grid.node(k);
            for j in k..len {
                let idx = tri.at(k, j);
                (model.volatility)(tk, grid.node(j), &mut b[idx * dim..(idx + 1) * dim]);
                if j > k {
                    let prev = tri.at(k, j - 1);
                    for d in 0..dim {
                        bbar[idx * dim + d] = bbar[prev * dim + d] + 0.5 * h * (b[prev * dim + d] + b[idx * dim + d]);
                    }
                }
                a[idx] = match &model.drift {
                    Drift::Field(field) => field(tk, grid.node(j)),
                    Drift::NoArbitrage { scale } => {
                        scale
                            * dot_diff(
                                &b[idx * dim..(idx + 1) * dim],
                                &bbar[idx * dim..(idx + 1) * dim],
                                &theta[k * dim..(k + 1) * dim],
                            )
                    }
                };
                if j > k {
                    let prev = tri.at(k, j - 1);
                    abar[idx] = abar[prev] + 0.5 * h * (a[prev] + a[idx]);
                }
            }
        }
        Self {
            dim,
            tri,
            f0,
            theta,
            a,
            b,
            abar,
            bbar,
        }
    }

    fn b_at(&self, k: usize, j: usize) -> &[f64] {
        let i = self.tri.at(k, j);
        &self.b[i * self.dim..(i + 1) * self.dim]
    }

    fn bbar_at(&self, k: usize, j: usize) -> &[f64] {
        let i = self.tri.at(k, j);
        &self.bbar[i * self.dim..(i + 1) * self.dim]
    }

    fn theta_at(&self, k: usize) -> &[f64] {
        &self.theta[k * self.dim..(k + 1) * self.dim]
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        if self.f0.iter().any(|v| !v.is_finite()) {
            Some("initial curve")
        } else if self.a.iter().any(|v| !v.is_finite()) {
            Some("drift field")
        } else if self.b.iter().any(|v| !v.is_finite()) {
            Some("volatility field")
        } else if self.theta.iter().any(|v| !v.is_finite()) {
            Some("market price of risk")
        } else {
            None
        }
    }
}

// ---------------------------------------------------------------------------
// Model validation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelValidation {
    /// `∫_0^{T*} |f(0,u)| du`.
    pub curve_l1: f64,
    /// `∫∫_{s ≤ t} |a(s,t)| ds dt`.
    pub drift_l1: f64,
    /// `max ‖b(s,t)‖` over grid pairs `s ≤ t`.
    pub vol_sup: f64,
    pub issues: Vec<String>,
    pub pass: bool,
}

/// Numerical surrogate of the integrability and boundedness requirements on
/// the initial curve, drift and volatility.
pub fn validate_model(model: &ForwardCurveModel, grid: TimeGrid) -> ModelValidation {
    let disc = Discretized::build(model, grid);
    let h = grid.dt();
    let abs_curve: Vec<f64> = disc.f0.iter().map(|v| v.abs()).collect();
    let curve_l1 = quad::trapezoid(&abs_curve, h);
    let mut drift_l1 = 0.0;
    for k in 0..grid.len() {
        for j in k..grid.len() {
            let w = if j == k { 0.5 } else { 1.0 };
            drift_l1 += w * disc.a[disc.tri.at(k, j)].abs() * h * h;
        }
    }
    let mut vol_sup: f64 = 0.0;
    for k in 0..grid.len() {
        for j in k..grid.len() {
            let n = dot(disc.b_at(k, j), disc.b_at(k, j)).sqrt();
            vol_sup = if n.is_nan() { f64::NAN } else { vol_sup.max(n) };
            if n.is_nan() {
                break;
            }
        }
    }
    let mut issues = Vec::new();
    if !curve_l1.is_finite() {
        issues.push("(i) initial curve is not integrable on the grid".to_string());
    }
    if !drift_l1.is_finite() {
        issues.push("(ii) drift field is not integrable on the grid".to_string());
    }
    if !vol_sup.is_finite() {
        issues.push("(iii) volatility field is unbounded on the grid".to_string());
    }
    if let Some(what) = disc.first_non_finite() {
        let msg = format!("non-finite evaluation in {what}");
        if !issues.iter().any(|i| i.contains(what)) {
            issues.push(msg);
        }
    }
    ModelValidation {
        curve_l1,
        drift_l1,
        vol_sup,
        pass: issues.is_empty(),
        issues,
    }
}

// ---------------------------------------------------------------------------
// Term structures

/// Forward rates `f(t_i, T_j)` for `t_i <= T_j` on one grid, with the
/// Brownian path that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct TermStructure {
    grid: TimeGrid,
    tri_len: usize,
    forwards: Vec<f64>,
    brownian: SamplePath,
}

impl TermStructure {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn brownian(&self) -> &SamplePath {
        &self.brownian
    }

    pub fn forward(&self, i: usize, j: usize) -> f64 {
        self.forwards[Tri { len: self.tri_len }.at(i, j)]
    }

    /// `f(t_i, T_j)` for `j = i..=n`.
    pub fn row(&self, i: usize) -> &[f64] {
        let tri = Tri { len: self.tri_len };
        let start = tri.at(i, i);
        &self.forwards[start..start + (self.tri_len - i)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.tri_len).map(|i| self.forward(i, i)).collect()
    }

    /// `∫_{t_i}^{T_j} f(t_i, u) du` by the trapezoidal rule.
    pub fn integral(&self, i: usize, j: usize) -> f64 {
        quad::trapezoid(&self.row(i)[..=j - i], self.grid.dt())
    }

    /// Curve with every row after the default time replaced by the last
    /// pre-default row (restricted to the remaining maturities).
    pub fn frozen_after(&self, default_time: f64) -> Self {
        let mut out = self.clone();
        let tri = Tri { len: self.tri_len };
        let Some(last_live) = (0..self.tri_len).rev().find(|&i| self.grid.node(i) < default_time) else {
            return out;
        };
        for i in last_live + 1..self.tri_len {
            for j in i..self.tri_len {
                out.forwards[tri.at(i, j)] = self.forward(last_live, j);
            }
        }
        out
    }

    /// CSV with columns `t,T,f`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,T,f\n");
        for i in 0..self.tri_len {
            for j in i..self.tri_len {
                s.push_str(&csv_line(&[
                    sig12(self.grid.node(i)),
                    sig12(self.grid.node(j)),
                    sig12(self.forward(i, j)),
                ]));
            }
        }
        s
    }
}

/// Left-point (Itô) evolution of every maturity column of the curve.
pub fn evolve_term_structure(model: &ForwardCurveModel, brownian: &SamplePath, grid: TimeGrid) -> Result<TermStructure> {
    if brownian.grid() != &grid {
        return Err(Error::GridMismatch("Brownian path and curve grid differ".into()));
    }
    if brownian.dim() != model.dim {
        return Err(Error::GridMismatch(format!(
            "model has {} factors, Brownian path has dimension {}",
            model.dim,
            brownian.dim()
        )));
    }
    let disc = Discretized::build(model, grid);
    if let Some(what) = disc.first_non_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    let len = grid.len();
    let tri = Tri { len };
    let h = grid.dt();
    let mut forwards = vec![0.0; tri.size()];
    forwards[..len].copy_from_slice(&disc.f0);
    let mut dw = vec![0.0; model.dim];
    for i in 0..len - 1 {
        for (d, x) in dw.iter_mut().enumerate() {
            *x = brownian.at(i + 1)[d] - brownian.at(i)[d];
        }
        for j in i + 1..len {
            let next = forwards[tri.at(i, j)] + disc.a[tri.at(i, j)] * h + dot(disc.b_at(i, j), &dw);
            forwards[tri.at(i + 1, j)] = next;
        }
    }
    if forwards.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("term structure".into()));
    }
    Ok(TermStructure {
        grid,
        tri_len: len,
        forwards,
        brownian: brownian.clone(),
    })
}

/// Result of comparing the two evaluations of `∫_t^T f(t,u) du`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    pub max_abs_error: f64,
    pub worst_t: f64,
    pub worst_maturity: f64,
}

/// Compare `∫_t^T f(t,u) du` computed from the row of the term structure with
/// `∫_0^T f(0,u)du + ∫_0^t ā(s,T)ds + ∫_0^t b̄(s,T)dW_s − ∫_0^t f(u,u)du`,
/// over every grid pair `t <= T`.
pub fn decomposition_check(model: &ForwardCurveModel, ts: &TermStructure) -> Result<DecompositionCheck> {
    let grid = ts.grid;
    if model.dim != ts.brownian.dim() {
        return Err(Error::GridMismatch("model and term structure dimensions differ".into()));
    }
    let disc = Discretized::build(model, grid);
    let len = grid.len();
    let h = grid.dt();
    let f0_cum = quad::cumulative_trapezoid(&disc.f0, h);
    let diag_cum = quad::cumulative_trapezoid(&ts.diagonal(), h);
    let mut worst = DecompositionCheck {
        max_abs_error: 0.0,
        worst_t: 0.0,
        worst_maturity: 0.0,
    };
    let dw: Vec<Vec<f64>> = (0..len - 1)
        .map(|k| (0..model.dim).map(|d| ts.brownian.at(k + 1)[d] - ts.brownian.at(k)[d]).collect())
        .collect();
    for j in 0..len {
        let mut running = 0.0;
        for i in 0..=j {
            if i > 0 {
                let k = i - 1;
                running += disc.abar[disc.tri.at(k, j)] * h + dot(disc.bbar_at(k, j), &dw[k]);
            }
            let identity = f0_cum[j] + running - diag_cum[i];
            let direct = ts.integral(i, j);
            let err = (identity - direct).abs();
            if err > worst.max_abs_error || err.is_nan() {
                worst = DecompositionCheck {
                    max_abs_error: err,
                    worst_t: grid.node(i),
                    worst_maturity: grid.node(j),
                };
            }
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Drift audit

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub t: f64,
    pub maturity: f64,
    pub forward: f64,
    /// `ā − ½‖b̄‖² + b̄·θ*` for `T > t`; for `T = t` the short-rate residual
    /// `f(t,t) − r_t − λ*_t`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftAuditReport {
    pub tolerance: f64,
    /// `f(t,t) − r_t − λ*_t` per node.
    pub short_rate_residuals: Vec<f64>,
    pub rows: Vec<AuditRow>,
    pub max_abs_residual: f64,
    pub pass: bool,
}

impl DriftAuditReport {
    /// CSV with columns `t,T,f,residual`; diagonal rows carry the short-rate
    /// residual.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,T,f,residual\n");
        for r in &self.rows {
            s.push_str(&csv_line(&[sig12(r.t), sig12(r.maturity), sig12(r.forward), sig12(r.residual)]));
        }
        s
    }
}

/// Residuals of both no-arbitrage conditions on every grid pair.
///
/// The short-rate condition is evaluated on `scenario` when given, otherwise
/// on the curve evolved with `W ≡ 0`. With a derived short rate it is zero by
/// construction.
pub fn audit_drift_condition(
    model: &ForwardCurveModel,
    lambda_star: &IntensitySpec,
    grid: TimeGrid,
    tol: f64,
    scenario: Option<&TermStructure>,
) -> Result<DriftAuditReport> {
    let owned;
    let ts = match scenario {
        Some(ts) => {
            if ts.grid != grid {
                return Err(Error::GridMismatch("scenario grid differs from audit grid".into()));
            }
            ts
        }
        None => {
            let zero = SamplePath::new(grid, model.dim, vec![0.0; grid.len() * model.dim])?;
            owned = evolve_term_structure(model, &zero, grid)?;
            &owned
        }
    };
    let disc = Discretized::build(model, grid);
    let diag = ts.diagonal();
    let (lambda, _) = lambda_star.node_values(grid, Some(ts.brownian()))?;
    let short_rate_residuals: Vec<f64> = match &model.short_rate {
        ShortRateMode::Derived => vec![0.0; grid.len()],
        ShortRateMode::Explicit(r) => (0..grid.len()).map(|i| diag[i] - r(grid.node(i)) - lambda[i]).collect(),
    };
    let mut rows = Vec::with_capacity(disc.tri.size());
    let mut max_abs: f64 = 0.0;
    for k in 0..grid.len() {
        for j in k..grid.len() {
            let residual = if j == k {
                short_rate_residuals[k]
            } else {
                let bbar = disc.bbar_at(k, j);
                disc.abar[disc.tri.at(k, j)] - 0.5 * dot(bbar, bbar) + dot(bbar, disc.theta_at(k))
            };
            max_abs = if residual.is_nan() { f64::NAN } else { max_abs.max(residual.abs()) };
            rows.push(AuditRow {
                t: grid.node(k),
                maturity: grid.node(j),
                forward: ts.forward(k, j),
                residual,
            });
        }
    }
    Ok(DriftAuditReport {
        tolerance: tol,
        short_rate_residuals,
        rows,
        max_abs_residual: max_abs,
        pass: max_abs <= tol,
    })
}

// ---------------------------------------------------------------------------
// Bond prices

/// `1{τ > t} exp(−∫_t^T f(t,u) du)`.
pub fn bond_price_zero_recovery(ts: &TermStructure, default_time: Option<f64>, t: f64, maturity: f64) -> Result<f64> {
    check_order(t, maturity)?;
    let i = ts.grid.index_of(t)?;
    let j = ts.grid.index_of(maturity)?;
    if matches!(default_time, Some(tau) if tau <= t) {
        return Ok(0.0);
    }
    Ok((-ts.integral(i, j)).exp())
}

/// `R_t exp(−∫_t^T f(t,u) du)` under fractional recovery of market value.
pub fn bond_price_recovery(ts: &TermStructure, recovery: &SamplePath, t: f64, maturity: f64) -> Result<f64> {
    check_order(t, maturity)?;
    if recovery.grid() != &ts.grid || recovery.dim() != 1 {
        return Err(Error::GridMismatch("recovery path must be scalar on the curve grid".into()));
    }
    let i = ts.grid.index_of(t)?;
    let j = ts.grid.index_of(maturity)?;
    let r = recovery.at(i)[0];
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::param("recovery", format!("R_t must lie in (0, 1], got {r}")));
    }
    Ok(r * (-ts.integral(i, j)).exp())
}

// ---------------------------------------------------------------------------
// Martingale test

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LambdaStar {
    Constant { value: f64 },
    Jacobi(JacobiParams),
}

/// How the default leg enters the simulated payoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefaultSampling {
    /// Draw the default time (and recovery jumps) and use the realised
    /// indicator.
    Indicator,
    /// Replace the indicator by its conditional expectation
    /// `exp(−∫ λ*)` given the Brownian path.
    #[default]
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSettings {
    pub n_paths: usize,
    pub steps_per_year: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub sampling: DefaultSampling,
    /// Uniform recovery factor range; `None` for zero recovery.
    pub recovery: Option<(f64, f64)>,
    pub execution: Execution,
}

impl Default for MartingaleSettings {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            steps_per_year: 1000,
            seed: 0,
            antithetic: true,
            sampling: DefaultSampling::Conditional,
            recovery: None,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub maturity: f64,
    /// `P(0,T) = exp(−∫_0^T f(0,u) du)`.
    pub initial_price: f64,
    /// Sample mean of `γ_T^{-1} P(T,T)` (times `R_T` with recovery).
    pub discounted_mean: f64,
    pub gap: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub pass: bool,
}

/// Monte Carlo check that the discounted defaultable bond is a martingale
/// under the pricing measure built from `θ*` and `λ*`.
///
/// Under that measure `W* = W − ∫θ* ds` is a Brownian motion; the payoff
/// depends on the curve only through `∫_0^T f(s,s) ds`, which is a linear
/// functional of the Brownian increments and is evaluated in `O(n)` per path.
/// A Jacobi `λ*` is driven by its own Brownian motion, independent of `W`.
pub fn martingale_test_discounted_bond(
    model: &ForwardCurveModel,
    lambda_star: &LambdaStar,
    maturity: f64,
    settings: &MartingaleSettings,
) -> Result<MartingaleReport> {
    if settings.n_paths < 100 {
        return Err(Error::param("n_paths", format!("need at least 100, got {}", settings.n_paths)));
    }
    match lambda_star {
        LambdaStar::Constant { value } if !(value.is_finite() && *value > 0.0) => {
            return Err(Error::NonPositiveIntensity { t: 0.0, value: *value });
        }
        LambdaStar::Jacobi(p) => p.validate()?,
        _ => {}
    }
    let mean_factor = match settings.recovery {
        Some((lo, hi)) => {
            if !(0.0 < lo && lo <= hi && hi <= 1.0) || lo == 1.0 {
                return Err(Error::param("recovery", format!("need 0 < r_lo <= r_hi <= 1 and r_lo < 1, got [{lo}, {hi}]")));
            }
            Some(0.5 * (lo + hi))
        }
        None => None,
    };
    let grid = TimeGrid::with_density(maturity, settings.steps_per_year)?;
    let disc = Discretized::build(model, grid);
    if let Some(what) = disc.first_non_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    let len = grid.len();
    let n = grid.n_steps();
    let h = grid.dt();
    let dim = model.dim;
    let weight = |i: usize| if i == 0 || i == n { 0.5 } else { 1.0 };

    // deterministic part of ∫ f(s,s) ds and the loadings on each ΔW*_k
    let mut det_diag = disc.f0.clone();
    for (i, d) in det_diag.iter_mut().enumerate() {
        for k in 0..i {
            *d += disc.a[disc.tri.at(k, i)] * h + dot(disc.b_at(k, i), disc.theta_at(k)) * h;
        }
    }
    let det_integral = h * (0..len).map(|i| weight(i) * det_diag[i]).sum::<f64>();
    let mut loadings = vec![0.0; n * dim];
    for k in 0..n {
        for i in k + 1..len {
            let b = disc.b_at(k, i);
            for d in 0..dim {
                loadings[k * dim + d] += h * weight(i) * b[d];
            }
        }
    }
    let explicit_rate_integral = match &model.short_rate {
        ShortRateMode::Explicit(r) => Some(quad::integrate(|t| r(t), 0.0, maturity, n)),
        ShortRateMode::Derived => None,
    };
    let initial_price = (-quad::trapezoid(&disc.f0, h)).exp();
    let sqrt_h = h.sqrt();

    let payoff = |rng: &mut rng::PathRng, normals_w: &[f64], normals_l: &[f64], sign: f64, e: &[f64], u: &[f64], lam_buf: &mut Vec<f64>| -> f64 {
        let stochastic: f64 = normals_w.iter().zip(&loadings).map(|(z, c)| sign * z * sqrt_h * c).sum();
        let diag_integral = det_integral + stochastic;
        let lambda_integral = match lambda_star {
            LambdaStar::Constant { value } => {
                lam_buf.clear();
                lam_buf.resize(len, *value);
                value * maturity
            }
            LambdaStar::Jacobi(p) => {
                jacobi_from_normals(p, grid, normals_l, sign, lam_buf);
                quad::trapezoid(lam_buf, h)
            }
        };
        let rate_integral = explicit_rate_integral.unwrap_or(diag_integral - lambda_integral);
        let discount = (-rate_integral).exp();
        let _ = rng;
        match settings.sampling {
            DefaultSampling::Conditional => discount * (-lambda_integral).exp(),
            DefaultSampling::Indicator => match mean_factor {
                None => {
                    if lambda_integral < e[0] {
                        discount
                    } else {
                        0.0
                    }
                }
                Some(m) => {
                    // jumps of R arrive with intensity λ*/(1 − m)
                    let clock = lambda_integral / (1.0 - m);
                    let (lo, hi) = settings.recovery.unwrap();
                    let mut acc = 0.0;
                    let mut r = 1.0;
                    for (ek, uk) in e.iter().zip(u) {
                        acc += ek;
                        if acc > clock {
                            break;
                        }
                        r *= lo + (hi - lo) * uk;
                    }
                    discount * r
                }
            },
        }
    };

    let pairs = if settings.antithetic { settings.n_paths / 2 } else { settings.n_paths };
    let needs_lambda_normals = matches!(lambda_star, LambdaStar::Jacobi(p) if p.beta > 0.0);
    let samples: Vec<f64> = settings.execution.map(pairs, |p| {
        let mut rng = rng::stream(settings.seed, Purpose::Martingale, p as u64);
        let normals_w: Vec<f64> = (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let normals_l: Vec<f64> = if needs_lambda_normals {
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
        } else {
            vec![0.0; n]
        };
        let (e, u) = if settings.sampling == DefaultSampling::Indicator {
            let jumps = if mean_factor.is_some() { 64 } else { 1 };
            let e: Vec<f64> = (0..jumps).map(|_| Exp1.sample(&mut rng)).collect();
            let u: Vec<f64> = (0..jumps).map(|_| rng.gen::<f64>()).collect();
            (e, u)
        } else {
            (Vec::new(), Vec::new())
        };
        let mut lam = Vec::with_capacity(len);
        let x = payoff(&mut rng, &normals_w, &normals_l, 1.0, &e, &u, &mut lam);
        if settings.antithetic {
            let y = payoff(&mut rng, &normals_w, &normals_l, -1.0, &e, &u, &mut lam);
            0.5 * (x + y)
        } else {
            x
        }
    });
    let est = Estimate::from_samples(&samples);
    let gap = est.mean - initial_price;
    Ok(MartingaleReport {
        maturity,
        initial_price,
        discounted_mean: est.mean,
        gap,
        stderr: est.stderr,
        n_paths: if settings.antithetic { 2 * pairs } else { pairs },
        pass: est.within(initial_price, 3.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::simulate_brownian;

    #[test]
    fn tri_indexing_is_dense() {
        let tri = Tri { len: 5 };
        let mut seen = vec![false; tri.size()];
        for k in 0..5 {
            for j in k..5 {
                let i = tri.at(k, j);
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn validation_examples() {
        let g = TimeGrid::new(4.0, 40).unwrap();
        let flat = ForwardCurveModel::flat_constant_vol(0.02, 0.01).with_drift_field(|_, _| 0.0);
        let v = validate_model(&flat, g);
        assert!(v.pass);
        assert!((v.curve_l1 - 0.08).abs() < 1e-12);
        assert_eq!(v.drift_l1, 0.0);
        assert!((v.vol_sup - 0.01).abs() < 1e-15);

        let singular = ForwardCurveModel::new(1, |_| 0.02, |s, t, out| out[0] = 1.0 / (t - s)).unwrap().with_drift_field(|_, _| 0.0);
        let v = validate_model(&singular, g);
        assert!(!v.pass);
        assert!(v.issues.iter().any(|i| i.starts_with("(iii)")));

        let vasicek = ForwardCurveModel::flat_vasicek_vol(0.03, 0.015, 0.5);
        let v = validate_model(&vasicek, g);
        assert!(v.pass);
        assert!(v.vol_sup <= 0.015 + 1e-15);
    }

    #[test]
    fn bar_integrals_examples() {
        let m = ForwardCurveModel::flat_constant_vol(0.02, 0.3);
        let (a, b) = m.bar_integrals(1.2, 1.2).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(b, vec![0.0]);
        let (a, b) = m.bar_integrals(0.5, 3.0).unwrap();
        assert!((b[0] - 0.3 * 2.5).abs() < 1e-12);
        assert!((a - 0.5 * 0.09 * 2.5 * 2.5).abs() < 1e-12);
        let field = m.clone().with_drift_field(|t, u| 0.09 * (u - t));
        let (a, _) = field.bar_integrals(0.5, 3.0).unwrap();
        assert!((a - 0.5 * 0.09 * 6.25).abs() < 1e-12);
        assert!(matches!(m.bar_integrals(2.0, 1.0), Err(Error::TimeOrder { .. })));
    }

    #[test]
    fn drift_condition_values() {
        let zero = ForwardCurveModel::flat_constant_vol(0.02, 0.0);
        assert_eq!(drift_from_condition(&zero, 0.0, 3.0).unwrap(), 0.0);
        let m = ForwardCurveModel::flat_constant_vol(0.02, 0.01);
        let v = drift_from_condition(&m, 0.5, 2.5).unwrap();
        assert!((v - 0.5 * 1e-4 * 4.0).abs() < 1e-15);
        let m = m.with_theta(vec![0.2]).unwrap();
        let v = drift_from_condition(&m, 0.5, 2.5).unwrap();
        assert!((v - (0.5 * 1e-4 * 4.0 - 0.01 * 0.2 * 2.0)).abs() < 1e-15);
        assert!(drift_from_condition(&m, 1.0, 0.5).is_err());
    }

    #[test]
    fn frozen_and_drifting_curves() {
        let g = TimeGrid::new(2.0, 20).unwrap();
        let w = simulate_brownian(g, 1, 3).unwrap();
        let frozen = ForwardCurveModel::flat_constant_vol(0.02, 0.0).with_drift_field(|_, _| 0.0);
        let ts = evolve_term_structure(&frozen, &w, g).unwrap();
        for i in 0..g.len() {
            assert!(ts.row(i).iter().all(|&f| f == 0.02));
        }
        let drifting = ForwardCurveModel::flat_constant_vol(0.02, 0.0).with_drift_field(|_, _| 1.0);
        let ts = evolve_term_structure(&drifting, &w, g).unwrap();
        for i in 0..g.len() {
            for &f in ts.row(i) {
                assert!((f - 0.02 - g.node(i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evolve_rejects_mismatched_inputs() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let m = ForwardCurveModel::flat_constant_vol(0.02, 0.01);
        let w = simulate_brownian(TimeGrid::new(1.0, 11).unwrap(), 1, 0).unwrap();
        assert!(evolve_term_structure(&m, &w, g).is_err());
        let w2 = simulate_brownian(g, 2, 0).unwrap();
        assert!(evolve_term_structure(&m, &w2, g).is_err());
    }

    #[test]
    fn decomposition_identity_on_a_sample_path() {
        let g = TimeGrid::new(2.0, 100).unwrap();
        let w = simulate_brownian(g, 2, 12).unwrap();
        let m = ForwardCurveModel::new(2, |t| 0.02 + 0.01 * t, |s, t, out| {
            out[0] = 0.01;
            out[1] = 0.02 * (-(t - s)).exp();
        })
        .unwrap()
        .with_theta(vec![0.1, -0.3])
        .unwrap();
        let ts = evolve_term_structure(&m, &w, g).unwrap();
        let check = decomposition_check(&m, &ts).unwrap();
        assert!(check.max_abs_error <= 5.0 * g.dt(), "{check:?}");
    }

    #[test]
    fn audit_examples() {
        let g = TimeGrid::new(1.0, 50).unwrap();
        for theta in [0.0, 0.2] {
            let m = ForwardCurveModel::flat_constant_vol(0.04, 0.01).with_theta(vec![theta]).unwrap();
            let lam = IntensitySpec::Constant(0.03);
            let r = audit_drift_condition(&m, &lam, g, 1e-8, None).unwrap();
            assert!(r.pass, "max residual {}", r.max_abs_residual);
            assert!(r.short_rate_residuals.iter().all(|&x| x == 0.0));
            let bad = audit_drift_condition(&m.scaled_drift(1.1), &lam, g, 1e-8, None).unwrap();
            assert!(!bad.pass);
        }
        // explicit short rate inconsistent with the curve
        let m = ForwardCurveModel::flat_constant_vol(0.04, 0.0).with_short_rate(|_| 0.02);
        let r = audit_drift_condition(&m, &IntensitySpec::Constant(0.03), g, 1e-8, None).unwrap();
        assert!(!r.pass);
        assert!((r.short_rate_residuals[0] - -0.01).abs() < 1e-15);
        let csv = r.to_csv();
        assert!(csv.starts_with("t,T,f,residual\n"));
        assert_eq!(csv.lines().count(), 1 + 51 * 52 / 2);
    }

    #[test]
    fn zero_recovery_prices() {
        let g = TimeGrid::new(10.0, 100).unwrap();
        let w = simulate_brownian(g, 1, 0).unwrap();
        let m = ForwardCurveModel::flat_constant_vol(0.02, 0.0).with_drift_field(|_, _| 0.0);
        let ts = evolve_term_structure(&m, &w, g).unwrap();
        assert_eq!(bond_price_zero_recovery(&ts, Some(1.0), 2.0, 7.0).unwrap(), 0.0);
        assert_eq!(bond_price_zero_recovery(&ts, Some(2.0), 2.0, 7.0).unwrap(), 0.0);
        assert_eq!(bond_price_zero_recovery(&ts, Some(5.0), 3.0, 3.0).unwrap(), 1.0);
        let p = bond_price_zero_recovery(&ts, None, 2.0, 7.0).unwrap();
        assert!((p - 0.904837418036).abs() < 1e-12);
        assert!(bond_price_zero_recovery(&ts, None, 7.0, 2.0).is_err());
    }

    #[test]
    fn recovery_prices() {
        let g = TimeGrid::new(10.0, 100).unwrap();
        let w = simulate_brownian(g, 1, 0).unwrap();
        let ts = evolve_term_structure(&ForwardCurveModel::flat_constant_vol(0.02, 0.0).with_drift_field(|_, _| 0.0), &w, g).unwrap();
        let ones = SamplePath::from_fn(g, |_| 1.0).unwrap();
        assert_eq!(
            bond_price_recovery(&ts, &ones, 2.0, 7.0).unwrap(),
            bond_price_zero_recovery(&ts, None, 2.0, 7.0).unwrap()
        );
        let r = SamplePath::from_fn(g, |t| if t >= 1.0 { 0.6 } else { 1.0 }).unwrap();
        let p = bond_price_recovery(&ts, &r, 2.0, 7.0).unwrap();
        assert!((p - 0.6 * (-0.1f64).exp()).abs() < 1e-12);
        let zero_curve = evolve_term_structure(&ForwardCurveModel::flat_constant_vol(0.0, 0.0).with_drift_field(|_, _| 0.0), &w, g).unwrap();
        assert_eq!(bond_price_recovery(&zero_curve, &r, 2.0, 7.0).unwrap(), 0.6);
    }

    #[test]
    fn frozen_after_default_keeps_live_rows() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let w = simulate_brownian(g, 1, 5).unwrap();
        let ts = evolve_term_structure(&ForwardCurveModel::flat_constant_vol(0.02, 0.05), &w, g).unwrap();
        let frozen = ts.frozen_after(0.45);
        for i in 0..=4 {
            assert_eq!(frozen.row(i), ts.row(i));
        }
        for i in 5..g.len() {
            for j in i..g.len() {
                assert_eq!(frozen.forward(i, j), ts.forward(4, j));
            }
        }
    }

    #[test]
    fn deterministic_curve_is_an_exact_martingale() {
        let m = ForwardCurveModel::flat_constant_vol(0.04, 0.0);
        let settings = MartingaleSettings {
            n_paths: 200,
            steps_per_year: 100,
            seed: 1,
            ..Default::default()
        };
        let r = martingale_test_discounted_bond(&m, &LambdaStar::Constant { value: 0.03 }, 1.0, &settings).unwrap();
        assert!(r.gap.abs() < 1e-13, "{r:?}");
        assert!(r.stderr < 1e-14);
        assert!(r.pass);
    }

    #[test]
    fn indicator_sampling_with_recovery() {
        let m = ForwardCurveModel::flat_constant_vol(0.25, 0.01);
        let settings = MartingaleSettings {
            n_paths: 40_000,
            steps_per_year: 50,
            seed: 2,
            antithetic: false,
            sampling: DefaultSampling::Indicator,
            recovery: Some((0.4, 0.8)),
            execution: Execution::default(),
        };
        let r = martingale_test_discounted_bond(&m, &LambdaStar::Constant { value: 0.2 }, 2.0, &settings).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
