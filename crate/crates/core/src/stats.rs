//! Small numeric helpers shared by the estimators.

use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided 95% standard-normal critical value.
pub const Z_975: f64 = 1.959_963_984_540_054;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Inverse empirical CDF (smallest order statistic whose ECDF reaches `p`).
/// `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let n = sorted.len();
    let k = (p * n as f64).ceil() as usize;
    sorted[k.clamp(1, n) - 1]
}

/// Scale estimate `(q75 − q25) / (z75 − z25)`, robust to heavy tails.
pub fn iqr_scale(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let spread = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    spread / (normal_quantile(0.75) - normal_quantile(0.25))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_constant_matches_quantile() {
        assert!((normal_quantile(0.975) - Z_975).abs() < 1e-12);
    }

    #[test]
    fn inverse_ecdf() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.51), 3.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
    }
}
