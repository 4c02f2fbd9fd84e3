use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    /// Two-pass mean and standard error, summed in slice order.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, stderr: 0.0, n };
        }
        let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
        let stderr = (ss / (n - 1) as f64 / n as f64).sqrt();
        Self { mean, stderr, n }
    }

    /// `|mean - target| <= k * stderr`, with a rounding floor so deterministic
    /// estimates (zero stderr) compare equal up to a few ulps.
    pub fn within(&self, target: f64, k: f64) -> bool {
        let floor = 16.0 * f64::EPSILON * target.abs().max(1.0);
        (self.mean - target).abs() <= k * self.stderr + floor
    }
}
