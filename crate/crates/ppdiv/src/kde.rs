//! Gaussian kernel density estimation: multivariate product kernels for the
//! data density and one-dimensional estimates for projected densities, both
//! with Scott-rule bandwidths.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.5066282746310002;
// Density values are clamped away from zero so ratio denominators stay finite.
const POSITIVE_FLOOR: f64 = 1e-300;

/// Per-axis Scott-rule bandwidths h_l = sigma_l * m^(-1/(4+k)) for an m x k
/// sample, where sigma_l is the per-axis sample standard deviation.
pub fn scott_bandwidth(sample: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (m, k) = sample.shape();
    if m < 2 {
        return Err(Error::Param(
            "bandwidth selection needs at least two observations".to_string(),
        ));
    }
    let factor = (m as f64).powf(-1.0 / (4.0 + k as f64));
    let mut out = Vec::with_capacity(k);
    for axis in 0..k {
        let col = sample.column(axis);
        let mean = col.sum() / m as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (m - 1) as f64).sqrt();
        if sd == 0.0 {
            return Err(Error::DegenerateAxis { axis });
        }
        out.push(sd * factor);
    }
    Ok(out)
}

fn scott_bandwidth_1d(values: &[f64]) -> Result<f64> {
    let m = values.len();
    if m < 2 {
        return Err(Error::Param(
            "bandwidth selection needs at least two observations".to_string(),
        ));
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (m - 1) as f64).sqrt();
    if sd == 0.0 {
        return Err(Error::DegenerateAxis { axis: 0 });
    }
    Ok(sd * (m as f64).powf(-0.2))
}

/// One-dimensional Gaussian KDE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Kde1d {
    points: Vec<f64>,
    bandwidth: f64,
}

impl Kde1d {
    /// Fit with the Scott-rule bandwidth.
    pub fn fit(values: &[f64]) -> Result<Self> {
        let bandwidth = scott_bandwidth_1d(values)?;
        Ok(Self {
            points: values.to_vec(),
            bandwidth,
        })
    }

    pub fn with_bandwidth(values: &[f64], bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::Param(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if values.is_empty() {
            return Err(Error::Param("KDE needs at least one point".to_string()));
        }
        Ok(Self {
            points: values.to_vec(),
            bandwidth,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Density at `t`; strictly positive.
    pub fn eval(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        let mut sum = 0.0;
        for &x in &self.points {
            let z = (t - x) / h;
            sum += (-0.5 * z * z).exp();
        }
        (sum / (self.points.len() as f64 * h * SQRT_2PI)).max(POSITIVE_FLOOR)
    }

    pub fn eval_many(&self, ts: &[f64]) -> Vec<f64> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }

    /// Smoothed distribution function, the exact CDF of the KDE mixture.
    pub fn cdf(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        let sum: f64 = self
            .points
            .iter()
            .map(|&x| crate::stats::std_normal_cdf((t - x) / h))
            .sum();
        sum / self.points.len() as f64
    }

    /// Exact draw from the KDE mixture: a stored point plus kernel noise.
    pub fn sample<R: rand::Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        (0..n)
            .map(|_| {
                let idx = rng.random_range(0..self.points.len());
                let noise: f64 = StandardNormal.sample(rng);
                self.points[idx] + self.bandwidth * noise
            })
            .collect()
    }
}

/// Multivariate product-Gaussian KDE with per-axis bandwidths.
#[derive(Debug, Clone)]
pub struct KdeNd {
    points: DMatrix<f64>,
    bandwidths: Vec<f64>,
}

impl KdeNd {
    pub fn fit(sample: &DMatrix<f64>) -> Result<Self> {
        let bandwidths = scott_bandwidth(sample)?;
        Ok(Self {
            points: sample.clone(),
            bandwidths,
        })
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// Density at a point: (1/m) sum_i prod_l kernel((x_l - X_il)/h_l).
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let (m, d) = self.points.shape();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let norm: f64 = self.bandwidths.iter().map(|h| h * SQRT_2PI).product();
        let mut sum = 0.0;
        for i in 0..m {
            let mut quad = 0.0;
            for l in 0..d {
                let z = (x[l] - self.points[(i, l)]) / self.bandwidths[l];
                quad += z * z;
            }
            sum += (-0.5 * quad).exp();
        }
        Ok((sum / (m as f64 * norm)).max(POSITIVE_FLOOR))
    }

    /// Density at every row of `queries`, in row order.
    pub fn eval_rows(&self, queries: &DMatrix<f64>) -> Result<Vec<f64>> {
        let d = self.points.ncols();
        if queries.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: queries.ncols(),
            });
        }
        let rows: Vec<Vec<f64>> = (0..queries.nrows())
            .map(|i| queries.row(i).iter().copied().collect())
            .collect();
        Ok(rows
            .par_iter()
            .map(|row| self.eval(row).expect("dimension checked"))
            .collect())
    }
}

/// Project an m x d sample onto `a` and fit a 1-D Scott-rule KDE on the
/// projected values. Positive rescaling of `a` rescales the estimate exactly,
/// which makes every density-ratio criterion invariant under a -> lambda a.
pub fn project_and_fit(sample: &DMatrix<f64>, direction: &[f64]) -> Result<Kde1d> {
    let projected = project(sample, direction)?;
    Kde1d::fit(&projected)
}

/// Projected values a^T X_i for every row of the sample.
pub fn project(sample: &DMatrix<f64>, direction: &[f64]) -> Result<Vec<f64>> {
    if direction.len() != sample.ncols() {
        return Err(Error::DimensionMismatch {
            expected: sample.ncols(),
            got: direction.len(),
        });
    }
    if direction.iter().all(|&c| c == 0.0) {
        return Err(Error::ZeroDirection);
    }
    let a = DVector::from_column_slice(direction);
    Ok((sample * a).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn scott_rule_values() {
        // m = 50, unit standard deviation columns.
        let vals = normal_sample(50, 7);
        let mean = vals.iter().sum::<f64>() / 50.0;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 49.0).sqrt();
        let m1 = DMatrix::from_column_slice(50, 1, &vals);
        let h = scott_bandwidth(&m1).unwrap();
        assert_abs_diff_eq!(h[0], sd * 50f64.powf(-0.2), epsilon = 1e-15);
        assert_abs_diff_eq!(h[0] / sd, 0.45730505192732634, epsilon = 1e-12);

        let mut cols = vals.clone();
        cols.extend(normal_sample(50, 8));
        cols.extend(normal_sample(50, 9));
        let m3 = DMatrix::from_column_slice(50, 3, &cols);
        let h3 = scott_bandwidth(&m3).unwrap();
        assert_eq!(h3.len(), 3);
        // Exponent switches to 1/(4+3).
        assert_abs_diff_eq!(h3[0] / sd, 50f64.powf(-1.0 / 7.0), epsilon = 1e-12);
        assert_abs_diff_eq!(50f64.powf(-1.0 / 7.0), 0.5718603679678214, epsilon = 1e-12);
    }

    #[test]
    fn scott_rule_is_scale_homogeneous() {
        let vals = normal_sample(64, 3);
        let scaled: Vec<f64> = vals.iter().map(|v| v * 4.0).collect();
        let h = scott_bandwidth(&DMatrix::from_column_slice(64, 1, &vals)).unwrap()[0];
        let hs = scott_bandwidth(&DMatrix::from_column_slice(64, 1, &scaled)).unwrap()[0];
        assert_eq!(hs, 4.0 * h);
    }

    #[test]
    fn degenerate_axis_is_reported() {
        let m = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            scott_bandwidth(&m),
            Err(Error::DegenerateAxis { axis: 0 })
        ));
    }

    #[test]
    fn single_kernel_at_its_center() {
        let kde = Kde1d::with_bandwidth(&[0.0], 1.0).unwrap();
        assert_abs_diff_eq!(kde.eval(0.0), 1.0 / SQRT_2PI, epsilon = 1e-15);
    }

    #[test]
    fn two_kernels_symmetric_average() {
        let kde = Kde1d::with_bandwidth(&[-1.0, 1.0], 1.0).unwrap();
        let expected = (1.0 / SQRT_2PI) * (-0.5f64).exp();
        assert_abs_diff_eq!(kde.eval(0.0), expected, epsilon = 1e-15);
    }

    #[test]
    fn kde_consistency_at_the_mode() {
        let vals = normal_sample(10_000, 42);
        let kde = Kde1d::fit(&vals).unwrap();
        assert_abs_diff_eq!(kde.eval(0.0), 0.3989422804014327, epsilon = 0.02);
    }

    #[test]
    fn kde_integrates_to_one() {
        let vals = normal_sample(400, 11);
        let kde = Kde1d::fit(&vals).unwrap();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min) - 8.0 * kde.bandwidth();
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 8.0 * kde.bandwidth();
        let n = 20_001;
        let step = (hi - lo) / (n - 1) as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            integral += w * kde.eval(lo + step * i as f64);
        }
        integral *= step / 3.0;
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn projection_on_axis_reproduces_coordinate_kde() {
        let mut data = normal_sample(100, 5);
        data.extend(normal_sample(100, 6));
        let m = DMatrix::from_column_slice(100, 2, &data);
        let kde_a = project_and_fit(&m, &[1.0, 0.0]).unwrap();
        let kde_direct = Kde1d::fit(&data[..100]).unwrap();
        for t in [-2.0, -0.5, 0.0, 1.3] {
            assert_eq!(kde_a.eval(t), kde_direct.eval(t));
        }
    }

    #[test]
    fn projected_kde_scale_equivariance_is_exact() {
        let mut data = normal_sample(80, 15);
        data.extend(normal_sample(80, 16));
        let m = DMatrix::from_column_slice(80, 2, &data);
        let a = [0.6, -0.8];
        let doubled = [1.2, -1.6];
        let kde1 = project_and_fit(&m, &a).unwrap();
        let kde2 = project_and_fit(&m, &doubled).unwrap();
        for t in [-1.7, 0.0, 0.4, 2.2] {
            let lhs = kde2.eval(2.0 * t);
            let rhs = 0.5 * kde1.eval(t);
            assert!(
                (lhs - rhs).abs() <= 1e-12 * rhs.abs(),
                "{lhs} vs {rhs} at {t}"
            );
        }
    }

    #[test]
    fn projected_gaussian_sample_passes_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 2000;
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..2 * n {
            data.push(StandardNormal.sample(&mut rng));
        }
        let m = DMatrix::from_column_slice(n, 2, &data);
        let a = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
        let projected = project(&m, &a).unwrap();
        let mean = projected.iter().sum::<f64>() / n as f64;
        let sd = (projected.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (n - 1) as f64)
            .sqrt();
        let (_, p) = crate::stats::ks_test(&projected, |t| {
            crate::stats::std_normal_cdf((t - mean) / sd)
        });
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn multivariate_kde_positivity_and_value() {
        let kde = KdeNd {
            points: DMatrix::from_row_slice(1, 2, &[0.0, 0.0]),
            bandwidths: vec![1.0, 1.0],
        };
        assert_abs_diff_eq!(
            kde.eval(&[0.0, 0.0]).unwrap(),
            1.0 / (2.0 * std::f64::consts::PI),
            epsilon = 1e-15
        );
        // Far away the value underflows but stays positive.
        assert!(kde.eval(&[500.0, 500.0]).unwrap() > 0.0);
        assert!(kde.eval(&[0.0]).is_err());
    }

    #[test]
    fn zero_direction_rejected() {
        let m = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(matches!(
            project_and_fit(&m, &[0.0, 0.0]),
            Err(Error::ZeroDirection)
        ));
    }

    proptest::proptest! {
        #[test]
        fn kde_positive_everywhere(t in -50.0f64..50.0) {
            let vals = normal_sample(50, 1);
            let kde = Kde1d::fit(&vals).unwrap();
            proptest::prop_assert!(kde.eval(t) > 0.0);
        }
    }
}
