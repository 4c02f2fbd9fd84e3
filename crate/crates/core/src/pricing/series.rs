//! Spectral (Dyson) expansion of `B(t,T) = E[exp(−∫_t^T λ_s ds) | λ_t = λ]`.
//!
//! Write `λ = λ_lo + (λ_hi − λ_lo) x`. The normalised state has generator
//! `L f = α(γ − x) f' + ½β² x(1 − x) f''`, which maps polynomials of degree
//! `v` to themselves. Its eigenpolynomials `ψ_v` (monic here) satisfy
//! `L ψ_v = −y_v ψ_v` with `y_v = αv + ½β² v(v − 1)`, and multiplication by
//! `x` moves `ψ_v` into `span{ψ_0, …, ψ_{v+1}}`:
//!
//! ```text
//! x ψ_v = Σ_u m(u, v) ψ_u .
//! ```
//!
//! Expanding the Feynman–Kac semigroup in powers of `λ_hi − λ_lo` gives
//!
//! ```text
//! B = e^{−λ_lo τ} (1 + Σ_{n≥1} (−(λ_hi − λ_lo))^n
//!        Σ_{v_1..v_n} ψ_{v_n}(z) Π_j m(v_j, v_{j−1}) I^n(y_{v_n}, …, y_{v_1}))
//! ```
//!
//! with `v_0 = 0`, `z` the normalised starting intensity and `I^n` the
//! iterated exponential integral below. For `β > 0` the `ψ_v` are shifted
//! Jacobi polynomials, orthogonal for the stationary Beta law, so
//! `m(u, v) = 0` unless `|u − v| ≤ 1`. With `β = 0` there is no such weight
//! and the longer downward transitions are kept.

use serde::{Deserialize, Serialize};

use crate::error::{check_order, Error, Result};
use crate::stochastic::JacobiParams;

/// Truncation controls for [`series_price`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesParams {
    /// Highest power `J` of `λ_hi − λ_lo` kept.
    #[serde(default = "default_order")]
    pub order: usize,
    /// Largest eigen-index `v` visited by the inner sums.
    #[serde(default = "default_v_max")]
    pub v_max: usize,
}

fn default_order() -> usize {
    4
}

fn default_v_max() -> usize {
    12
}

/// Above this the number of index tuples makes the sum impractical.
pub const MAX_ORDER: usize = 10;

impl Default for SeriesParams {
    fn default() -> Self {
        Self {
            order: default_order(),
            v_max: default_v_max(),
        }
    }
}

impl SeriesParams {
    pub fn new(order: usize, v_max: usize) -> Result<Self> {
        let sp = Self { order, v_max };
        sp.validate()?;
        Ok(sp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order > MAX_ORDER {
            return Err(Error::param("order", format!("at most {MAX_ORDER}, got {}", self.order)));
        }
        if self.v_max < 1 {
            return Err(Error::param("v_max", "must be at least 1"));
        }
        Ok(())
    }
}

/// `∫_t^T ∫_{s_n}^T ⋯ ∫_{s_2}^T exp(−Σ_j y_j (s_j − s_{j+1})) ds_1 ⋯ ds_n`
/// with `s_{n+1} = t`; `y` is given as `[y_n, …, y_1]`.
///
/// The integral only depends on the multiset `{0, y_1, …, y_n}`: it is
/// `(−1)^n` times the divided difference of `a ↦ e^{−aτ}` on those nodes, or
/// equivalently the bottom-left entry of `exp(τA)` for the bidiagonal `A`
/// with diagonal `−(0, y_1, …, y_n)` and unit subdiagonal. The matrix form
/// is evaluated by scaling and squaring; every intermediate is non-negative,
/// so repeated or nearly repeated `y` values need no special treatment.
pub fn iterated_integral(y: &[f64], t: f64, maturity: f64) -> f64 {
    let tau = (maturity - t).max(0.0);
    if y.is_empty() {
        return 1.0;
    }
    if tau == 0.0 {
        return 0.0;
    }
    if let [y1] = y {
        let x = y1 * tau;
        return if x < 1e-8 { tau * (1.0 - 0.5 * x) } else { -(-x).exp_m1() / y1 };
    }
    let m = y.len() + 1;
    let mut nodes = Vec::with_capacity(m);
    nodes.push(0.0);
    nodes.extend(y.iter().rev().map(|v| v.max(0.0)));
    let mut a = vec![0.0; m * m];
    for k in 0..m {
        a[k * m + k] = -nodes[k] * tau;
        if k + 1 < m {
            a[(k + 1) * m + k] = tau;
        }
    }
    expm_lower(&mut a, m);
    a[(m - 1) * m]
}

/// In-place exponential of a lower-triangular Metzler matrix.
fn expm_lower(a: &mut [f64], m: usize) {
    let norm = (0..m)
        .map(|i| (0..=i).map(|j| a[i * m + j].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(squarings);
    for v in a.iter_mut() {
        *v *= scale;
    }
    // Taylor series of the scaled matrix
    let mut result = vec![0.0; m * m];
    let mut term = vec![0.0; m * m];
    for i in 0..m {
        result[i * m + i] = 1.0;
        term[i * m + i] = 1.0;
    }
    let mut next = vec![0.0; m * m];
    for k in 1..=30 {
        lower_mul(&term, a, &mut next, m);
        let inv = 1.0 / k as f64;
        let mut size: f64 = 0.0;
        for (t, n) in term.iter_mut().zip(&next) {
            *t = n * inv;
            size = size.max(t.abs());
        }
        for (r, t) in result.iter_mut().zip(&term) {
            *r += t;
        }
        if size < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        lower_mul(&result, &result, &mut next, m);
        result.copy_from_slice(&next);
    }
    a.copy_from_slice(&result);
}

fn lower_mul(x: &[f64], y: &[f64], out: &mut [f64], m: usize) {
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = if j > i {
                0.0
            } else {
                (j..=i).map(|k| x[i * m + k] * y[k * m + j]).sum()
            };
        }
    }
}

// ---------------------------------------------------------------------------
// Eigenbasis of the normalised generator

/// Eigenpolynomials of the normalised Jacobi generator up to a fixed degree.
#[derive(Debug, Clone)]
pub struct JacobiSpectrum {
    /// `y_v`, strictly increasing.
    pub eigenvalues: Vec<f64>,
    /// Monomial coefficients of `ψ_v` (ascending powers, monic).
    pub polynomials: Vec<Vec<f64>>,
    /// `multiplication[v][u] = m(u, v)`, the coordinates of `x ψ_v`.
    pub multiplication: Vec<Vec<f64>>,
}

impl JacobiSpectrum {
    /// Spectrum with `ψ_0, …, ψ_degree` and the multiplication table for
    /// `v < degree`.
    pub fn new(params: &JacobiParams, degree: usize) -> Result<Self> {
        params.validate()?;
        let alpha = params.alpha;
        let half_b2 = 0.5 * params.beta * params.beta;
        let gamma = params.normalized_mean();
        let y: Vec<f64> = (0..=degree).map(|k| alpha * k as f64 + half_b2 * (k * k.saturating_sub(1)) as f64).collect();
        // L x^k = c_k x^{k−1} − y_k x^k
        let c: Vec<f64> = (0..=degree)
            .map(|k| alpha * gamma * k as f64 + half_b2 * (k * k.saturating_sub(1)) as f64)
            .collect();
        let mut polys = Vec::with_capacity(degree + 1);
        for v in 0..=degree {
            let mut e = vec![0.0; v + 1];
            e[v] = 1.0;
            for k in (0..v).rev() {
                let gap = y[k] - y[v];
                if gap == 0.0 {
                    return Err(Error::SeriesNotAvailable(format!("repeated eigenvalue at degree {v}")));
                }
                e[k] = c[k + 1] * e[k + 1] / gap;
            }
            polys.push(e);
        }
        // residual of L ψ_v + y_v ψ_v
        for v in 0..=degree {
            let e = &polys[v];
            let scale = e.iter().map(|x| x.abs()).fold(0.0, f64::max) * (1.0 + y[v]);
            let mut worst: f64 = 0.0;
            for k in 0..=v {
                let lhs = -y[k] * e[k] + if k < v { c[k + 1] * e[k + 1] } else { 0.0 } + y[v] * e[k];
                worst = worst.max(lhs.abs());
            }
            if !(worst <= 1e-10 * scale) {
                return Err(Error::SeriesNotAvailable(format!(
                    "eigenpolynomial {v} fails its eigen-equation (residual {worst:e})"
                )));
            }
        }
        let mut multiplication = Vec::with_capacity(degree);
        for v in 0..degree {
            let mut p = vec![0.0; v + 2];
            p[1..].copy_from_slice(&polys[v]);
            let mut coords = vec![0.0; v + 2];
            for u in (0..v + 2).rev() {
                let cu = p[u];
                coords[u] = cu;
                for (k, e) in polys[u].iter().enumerate() {
                    p[k] -= cu * e;
                }
            }
            let rest = p.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if !(rest <= 1e-10) || coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::SeriesNotAvailable(format!("multiplication table row {v} did not resolve")));
            }
            multiplication.push(coords);
        }
        Ok(Self {
            eigenvalues: y,
            polynomials: polys,
            multiplication,
        })
    }

    pub fn degree(&self) -> usize {
        self.eigenvalues.len() - 1
    }

    pub fn eval(&self, v: usize, x: f64) -> f64 {
        self.polynomials[v].iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Truncated series `B^J(t, T)`.
///
/// `J = 0` returns `e^{−λ_lo (T−t)}`. The eigen-structure is checked as it is
/// built; if any check fails the result is [`Error::SeriesNotAvailable`]
/// rather than a number. Callers that need the value to be trusted compare it
/// with a Monte Carlo estimate, see [`super::SeriesGate`].
pub fn series_price(params: &JacobiParams, lambda: f64, t: f64, maturity: f64, sp: &SeriesParams) -> Result<f64> {
    sp.validate()?;
    params.validate()?;
    check_order(t, maturity)?;
    if !params.in_band(lambda) {
        return Err(Error::OutOfBand {
            t,
            value: lambda,
            lo: params.lambda_lo,
            hi: params.lambda_hi,
        });
    }
    let tau = maturity - t;
    let base = (-params.lambda_lo * tau).exp();
    if sp.order == 0 || tau == 0.0 {
        return Ok(base);
    }
    let top = sp.order.min(sp.v_max);
    let spec = JacobiSpectrum::new(params, top + 1)?;
    let z = params.normalize(lambda).clamp(0.0, 1.0);
    let psi_at_z: Vec<f64> = (0..=top).map(|v| spec.eval(v, z)).collect();
    let tiny = 1e-14
        * spec
            .multiplication
            .iter()
            .flatten()
            .map(|m| m.abs())
            .fold(0.0, f64::max);

    let mut by_order = vec![0.0; sp.order + 1];
    let mut ys = Vec::with_capacity(sp.order);
    walk(&spec, &psi_at_z, top, sp.order, tau, tiny, 0, 1.0, &mut ys, &mut by_order);

    let width = params.width();
    let mut sum = 1.0;
    for (n, term) in by_order.iter().enumerate().skip(1) {
        sum += (-width).powi(n as i32) * term;
    }
    let value = base * sum;
    if !value.is_finite() {
        return Err(Error::SeriesNotAvailable("series sum is not finite".into()));
    }
    Ok(value)
}

/// Depth-first sum over index tuples; `ys` holds `[y_{v_1}, …, y_{v_n}]`.
#[allow(clippy::too_many_arguments)]
fn walk(
    spec: &JacobiSpectrum,
    psi_at_z: &[f64],
    top: usize,
    order: usize,
    tau: f64,
    tiny: f64,
    v: usize,
    weight: f64,
    ys: &mut Vec<f64>,
    by_order: &mut [f64],
) {
    let n = ys.len();
    if n > 0 {
        let rev: Vec<f64> = ys.iter().rev().copied().collect();
        by_order[n] += psi_at_z[v] * weight * iterated_integral(&rev, 0.0, tau);
    }
    if n == order {
        return;
    }
    let row = &spec.multiplication[v];
    for (u, &m) in row.iter().enumerate() {
        if u > top || m.abs() <= tiny {
            continue;
        }
        ys.push(spec.eigenvalues[u]);
        walk(spec, psi_at_z, top, order, tau, tiny, u, weight * m, ys, by_order);
        ys.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::bounds::bond_lower_bound;
    use proptest::prelude::*;

    /// Sum-of-exponentials form, valid for distinct nodes.
    fn distinct_closed_form(y: &[f64], tau: f64) -> f64 {
        let mut nodes = vec![0.0];
        nodes.extend_from_slice(y);
        let n = y.len();
        let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
        let dd: f64 = (0..nodes.len())
            .map(|k| {
                let den: f64 = (0..nodes.len()).filter(|&j| j != k).map(|j| nodes[k] - nodes[j]).product();
                (-nodes[k] * tau).exp() / den
            })
            .sum();
        sign * dd
    }

    fn nested_quadrature_2(y2: f64, y1: f64, tau: f64, n: usize) -> f64 {
        // ∫_0^τ e^{−y2 s2} ∫_{s2}^τ e^{−y1 (s1 − s2)} ds1 ds2
        let h = tau / n as f64;
        let inner = |s2: f64| {
            let hi = (tau - s2) / n as f64;
            let vals: Vec<f64> = (0..=n).map(|k| (-y1 * k as f64 * hi).exp()).collect();
            crate::quad::trapezoid(&vals, hi)
        };
        let vals: Vec<f64> = (0..=n).map(|k| (-y2 * k as f64 * h).exp() * inner(k as f64 * h)).collect();
        crate::quad::trapezoid(&vals, h)
    }

    #[test]
    fn one_dimensional_cases() {
        assert!((iterated_integral(&[0.0], 0.5, 2.0) - 1.5).abs() < 1e-15);
        let v = iterated_integral(&[0.7], 0.5, 2.0);
        assert!((v - (1.0 - (-0.7f64 * 1.5).exp()) / 0.7).abs() < 1e-15);
        assert_eq!(iterated_integral(&[0.3, 1.0], 1.0, 1.0), 0.0);
    }

    #[test]
    fn confluent_values() {
        // all nodes zero: volume of the simplex τ^n / n!
        let v = iterated_integral(&[0.0, 0.0, 0.0], 0.0, 2.0);
        assert!((v - 8.0 / 6.0).abs() < 1e-13);
        // I^2(y, y) = (1 − e^{−yτ}(1 + yτ)) / y²
        let (y, tau) = (0.8f64, 1.7f64);
        let exact = (1.0 - (-y * tau).exp() * (1.0 + y * tau)) / (y * y);
        assert!((iterated_integral(&[y, y], 0.0, tau) - exact).abs() < 1e-14);
        // nearly repeated nodes stay smooth
        let near = iterated_integral(&[y, y * (1.0 + 1e-9)], 0.0, tau);
        assert!((near - exact).abs() < 1e-9);
    }

    #[test]
    fn large_exponents_do_not_overflow() {
        let v = iterated_integral(&[500.0, 300.0, 800.0], 0.0, 5.0);
        assert!(v.is_finite() && v > 0.0);
        assert!((v - distinct_closed_form(&[500.0, 300.0, 800.0], 5.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_order_is_the_lower_edge_discount() {
        let p = JacobiParams::new(0.01, 0.10, 1.0, 0.3, 0.04, 0.04).unwrap();
        let v = series_price(&p, 0.07, 0.0, 3.0, &SeriesParams::new(0, 12).unwrap()).unwrap();
        assert_eq!(v, (-0.03f64).exp());
        for j in 0..=4 {
            assert_eq!(series_price(&p, 0.07, 2.0, 2.0, &SeriesParams::new(j, 12).unwrap()).unwrap(), 1.0);
        }
    }

    #[test]
    fn spectrum_is_tridiagonal_for_positive_beta() {
        let p = JacobiParams::new(0.01, 0.10, 1.0, 0.3, 0.04, 0.04).unwrap();
        let s = JacobiSpectrum::new(&p, 6).unwrap();
        for (v, row) in s.multiplication.iter().enumerate() {
            for (u, m) in row.iter().enumerate() {
                if u + 1 < v {
                    assert!(m.abs() < 1e-10, "m({u},{v}) = {m}");
                }
            }
        }
        // ψ_1 = x − γ
        assert!((s.eval(1, 0.5) - (0.5 - p.normalized_mean())).abs() < 1e-15);
    }

    #[test]
    fn deterministic_intensity_series_is_exact() {
        let p = JacobiParams::new(0.01, 0.10, 0.5, 0.0, 0.02, 0.08).unwrap();
        let exact = bond_lower_bound(&p, 0.08, 0.0, 2.0).unwrap();
        let v = series_price(&p, 0.08, 0.0, 2.0, &SeriesParams::new(8, 12).unwrap()).unwrap();
        assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
    }

    #[test]
    fn first_order_term_matches_the_mean() {
        // B^1 = e^{−λ_lo τ}(1 − w ∫ E[x_s] ds)
        let p = JacobiParams::new(0.01, 0.10, 1.3, 0.4, 0.04, 0.07).unwrap();
        let tau = 1.5;
        let v = series_price(&p, 0.07, 0.0, tau, &SeriesParams::new(1, 12).unwrap()).unwrap();
        let g = p.normalized_mean();
        let z = p.normalize(0.07);
        let mean_int = g * tau + (z - g) * (1.0 - (-1.3f64 * tau).exp()) / 1.3;
        let expected = (-0.01 * tau).exp() * (1.0 - 0.09 * mean_int);
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = JacobiParams::new(0.01, 0.10, 1.0, 0.3, 0.04, 0.04).unwrap();
        assert!(SeriesParams::new(4, 0).is_err());
        assert!(SeriesParams::new(MAX_ORDER + 1, 12).is_err());
        assert!(series_price(&p, 0.2, 0.0, 1.0, &SeriesParams::default()).is_err());
        assert!(series_price(&p, 0.04, 1.0, 0.0, &SeriesParams::default()).is_err());
    }

    proptest! {
        #[test]
        fn closed_form_matches_distinct_formula(y1 in 0.05f64..4.0, d2 in 0.1f64..3.0, d3 in 0.1f64..3.0, tau in 0.1f64..5.0) {
            let ys = [y1, y1 + d2, y1 + d2 + d3];
            for n in 1..=3 {
                let a = iterated_integral(&ys[..n], 0.0, tau);
                let b = distinct_closed_form(&ys[..n], tau);
                prop_assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "n={} {} vs {}", n, a, b);
            }
        }

        #[test]
        fn two_dimensional_quadrature_oracle(y1 in 0.0f64..3.0, y2 in 0.0f64..3.0, tau in 0.1f64..3.0) {
            let a = iterated_integral(&[y2, y1], 0.0, tau);
            let b = nested_quadrature_2(y2, y1, tau, 400);
            prop_assert!((a - b).abs() < 1e-5 * tau * tau, "{} vs {}", a, b);
        }
    }
}
