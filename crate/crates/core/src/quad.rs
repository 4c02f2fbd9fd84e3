//! Trapezoidal quadrature helpers.

/// Trapezoidal integral of equally spaced samples with spacing `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            h * (0.5 * (values[0] + values[n - 1]) + inner)
        }
    }
}

/// Running trapezoidal integral; `out[0] = 0`.
pub fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Trapezoidal integral of `f` over `[a, b]` with `panels` equal panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if b == a {
        return 0.0;
    }
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut acc = 0.5 * (f(a) + f(b));
    for k in 1..panels {
        acc += f(a + k as f64 * h);
    }
    acc * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_linear_functions() {
        let h = 0.1;
        let v: Vec<f64> = (0..=10).map(|i| 2.0 + 3.0 * i as f64 * h).collect();
        assert!((trapezoid(&v, h) - 3.5).abs() < 1e-12);
        let c = cumulative_trapezoid(&v, h);
        assert_eq!(c.len(), 11);
        assert!((c[10] - 3.5).abs() < 1e-12);
        assert!((integrate(|x| 2.0 + 3.0 * x, 0.0, 1.0, 3) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(integrate(|x| x, 0.4, 0.4, 10), 0.0);
        assert_eq!(trapezoid(&[1.0], 0.5), 0.0);
    }
}
