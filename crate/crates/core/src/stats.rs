//! Batch-means point estimates and confidence half-widths.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// A point estimate with the half-width of its 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci: f64,
}

impl Estimate {
    pub fn new(mean: f64, ci: f64) -> Self {
        Estimate { mean, ci }
    }

    /// Whether `target` lies within `width` half-widths of the estimate.
    pub fn covers(&self, target: f64, width: f64) -> bool {
        (self.mean - target).abs() <= width * self.ci
    }

    pub fn relative_ci(&self) -> f64 {
        if self.mean == 0.0 {
            0.0
        } else {
            self.ci / self.mean.abs()
        }
    }
}

/// 0.975 quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile(dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Mean of per-batch values with a t-interval half-width.
pub fn batch_estimate(values: &[f64]) -> Estimate {
    let b = values.len();
    if b == 0 {
        return Estimate::new(f64::NAN, f64::INFINITY);
    }
    let mean = values.iter().sum::<f64>() / b as f64;
    if b == 1 {
        return Estimate::new(mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    Estimate::new(mean, t_quantile(b - 1) * (var / b as f64).sqrt())
}

/// Ratio-of-sums estimate `sum(num) / sum(den)` with a delta-method
/// half-width from the batch residuals `num_b - m den_b`.
pub fn ratio_estimate(num: &[f64], den: &[f64]) -> Estimate {
    assert_eq!(num.len(), den.len());
    let b = num.len();
    let sd: f64 = den.iter().sum();
    if b == 0 || sd <= 0.0 {
        return Estimate::new(f64::NAN, f64::INFINITY);
    }
    let m = num.iter().sum::<f64>() / sd;
    if b == 1 {
        return Estimate::new(m, f64::INFINITY);
    }
    let dbar = sd / b as f64;
    let var = num
        .iter()
        .zip(den)
        .map(|(n, d)| (n - m * d).powi(2))
        .sum::<f64>()
        / (b - 1) as f64;
    Estimate::new(m, t_quantile(b - 1) * (var / b as f64).sqrt() / dbar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_quantile_matches_tables() {
        assert!((t_quantile(19) - 2.093).abs() < 1e-3);
        assert!((t_quantile(1000) - 1.962).abs() < 1e-3);
    }

    #[test]
    fn constant_batches_have_zero_width() {
        let e = batch_estimate(&[2.0; 20]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.ci, 0.0);
    }

    #[test]
    fn ratio_of_proportional_batches_is_exact() {
        let den = [1.0, 2.0, 3.0, 4.0];
        let num: Vec<f64> = den.iter().map(|d| 1.5 * d).collect();
        let e = ratio_estimate(&num, &den);
        assert!((e.mean - 1.5).abs() < 1e-15);
        assert!(e.ci < 1e-12);
    }
}
