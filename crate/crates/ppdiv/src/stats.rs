//! Small statistical helpers: normal tail utilities, sample moments and a
//! Kolmogorov-Smirnov test used by samplers and diagnostics.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided p-value of a statistic under the standard normal reference.
pub fn two_sided_normal_p_value(t: f64) -> f64 {
    2.0 * (1.0 - std_normal_cdf(t.abs()))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (divisor n − 1).
pub fn sample_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Param(
            "variance needs at least two observations".to_string(),
        ));
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Ok(ss / (values.len() - 1) as f64)
}

pub fn sample_std(values: &[f64]) -> Result<f64> {
    Ok(sample_variance(values)?.sqrt())
}

/// One-sample Kolmogorov-Smirnov statistic against a CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Asymptotic Kolmogorov p-value with the Stephens small-sample correction.
pub fn ks_p_value(statistic: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * statistic;
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `sample` against `cdf`; returns (statistic, p-value).
pub fn ks_test<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> (f64, f64) {
    let d = ks_statistic(sample, cdf);
    (d, ks_p_value(d, sample.len()))
}

/// Seeded bootstrap standard error of a difference of two independent means.
///
/// `plus` enters with weight +1/n, `minus` with −1/n; both are resampled with
/// replacement `replicates` times.
pub fn bootstrap_se_of_mean_difference(
    plus: &[f64],
    minus: &[f64],
    replicates: usize,
    seed: u64,
) -> f64 {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let mut s = 0.0;
        for _ in 0..plus.len() {
            s += plus[rng.random_range(0..plus.len())];
        }
        let mut t = 0.0;
        for _ in 0..minus.len() {
            t += minus[rng.random_range(0..minus.len())];
        }
        stats.push(s / plus.len() as f64 - t / minus.len() as f64);
    }
    sample_std(&stats).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_quantiles() {
        assert_abs_diff_eq!(std_normal_quantile(0.95), 1.6448536269514722, epsilon = 1e-9);
        assert_abs_diff_eq!(std_normal_cdf(0.0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(two_sided_normal_p_value(1.959963985), 0.05, epsilon = 1e-6);
    }

    #[test]
    fn ks_uniform_sample_accepts() {
        // Deterministic uniform grid is as close to U(0,1) as it gets.
        let sample: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let (d, p) = ks_test(&sample, |x| x.clamp(0.0, 1.0));
        assert!(d < 0.01);
        assert!(p > 0.99);
    }

    #[test]
    fn ks_detects_wrong_law() {
        let sample: Vec<f64> = (0..500).map(|i| (i as f64 + 0.5) / 500.0 * 0.5).collect();
        let (_, p) = ks_test(&sample, |x| x.clamp(0.0, 1.0));
        assert!(p < 1e-6);
    }

    #[test]
    fn variance_of_constant_is_zero() {
        assert_eq!(sample_variance(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
    }
}
