//! Plain-text row formatting shared by the CSV writers.

/// Format with 12 significant digits in scientific notation.
pub fn sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.11e}")
}

/// Round to 12 significant digits (what a CSV reader sees).
pub fn round12(x: f64) -> f64 {
    sig12(x).parse().unwrap_or(x)
}

pub fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}
