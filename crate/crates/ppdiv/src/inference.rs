//! Stopping-rule test and confidence-ellipsoid membership, the copula
//! goodness-of-fit wrapper, and pursuit-based regression with a
//! least-squares baseline.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anneal::{anneal_maximize_seeded, AnnealConfig, Direction};
use crate::dual::DualContext;
use crate::error::{Error, Result};
use crate::models::orthonormal_complement;
use crate::pursuit::{run_pursuit, PursuitConfig, PursuitResult};
use crate::stats;

/// Literal threshold used by the replication mode. The default mode uses
/// the two-sided (1 − alpha/2) standard normal quantile instead.
pub const PAPER_THRESHOLD: f64 = 0.2533;

/// Outcome of one stopping test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    /// sqrt(n) * criterion / sqrt(variance).
    pub statistic: f64,
    pub variance: f64,
    /// Two-sided under the standard normal reference.
    pub p_value: f64,
    pub quantile: f64,
    /// True iff |statistic| <= quantile.
    pub accept_h0: bool,
    /// The candidate direction the test was run at.
    pub direction: Direction,
    pub level_index: usize,
}

/// Settings shared by the stopping test and the membership test.
#[derive(Debug, Clone)]
pub struct TestSettings {
    pub alpha: f64,
    /// Replaces the normal quantile when set (replication mode).
    pub quantile_override: Option<f64>,
    /// Budget of the local witness search, already scaled down from the
    /// main annealing schedule.
    pub witness_anneal: AnnealConfig,
}

impl TestSettings {
    pub fn new(alpha: f64, witness_anneal: AnnealConfig) -> Self {
        Self {
            alpha,
            quantile_override: None,
            witness_anneal,
        }
    }

    fn quantile(&self) -> f64 {
        self.quantile_override
            .unwrap_or_else(|| stats::std_normal_quantile(1.0 - self.alpha / 2.0))
    }
}

/// Test of H0: the divergence at the candidate direction is zero.
///
/// The witness approximating sup over c is found by a short annealing run
/// seeded at the candidate; the statistic normalizes the criterion by the
/// sample variance of its data-side terms.
pub fn stopping_test(
    ctx: &DualContext,
    candidate: &Direction,
    settings: &TestSettings,
    level_index: usize,
) -> Result<TestReport> {
    let fixed = ctx.fixed_candidate(candidate)?;
    let objective = |c: &Direction| match fixed.eval_witness(c) {
        Ok(eval) if eval.value.is_finite() => eval.value,
        _ => -crate::pursuit::OBJECTIVE_PENALTY,
    };
    let outcome = anneal_maximize_seeded(
        objective,
        ctx.dim(),
        &settings.witness_anneal,
        Some(candidate),
    )?;
    let eval = fixed.eval_witness(&outcome.best)?;
    let variance = eval.variance()?;
    let statistic = (eval.n_pairs as f64).sqrt() * eval.value / variance.sqrt();
    let quantile = settings.quantile();
    Ok(TestReport {
        statistic,
        variance,
        p_value: stats::two_sided_normal_p_value(statistic),
        quantile,
        accept_h0: statistic.abs() <= quantile,
        direction: candidate.clone(),
        level_index,
    })
}

/// Membership of a direction in the confidence ellipsoid: true iff
/// sqrt(n) * criterion(b, b) / sqrt(variance) <= quantile.
pub fn ellipsoid_membership(
    ctx: &DualContext,
    direction: &Direction,
    settings: &TestSettings,
) -> Result<bool> {
    let eval = ctx.criterion(direction, direction)?;
    let statistic = eval.statistic()?;
    Ok(statistic <= settings.quantile())
}

/// Report of the copula goodness-of-fit procedure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CopulaReport {
    /// Extracted directions as columns, the change of basis for the test.
    pub basis: Vec<Vec<f64>>,
    pub final_test: TestReport,
    /// True iff the final stopping test accepts: the copula density of the
    /// data matches the instrumental copula in the extracted basis.
    pub verdict: bool,
    pub pursuit: PursuitResult,
}

/// Run the pursuit for exactly d levels and test the final acceptance.
pub fn copula_gof(data: &DMatrix<f64>, cfg: &PursuitConfig) -> Result<CopulaReport> {
    let d = data.ncols();
    let mut cfg = cfg.clone();
    cfg.max_k = Some(d);
    cfg.stop_on_accept = false;
    let result = run_pursuit(data, &cfg)?;
    let mut basis_matrix = DMatrix::zeros(d, d);
    for (j, level) in result.model.levels.iter().enumerate() {
        for i in 0..d {
            basis_matrix[(i, j)] = level.direction.coords()[i];
        }
    }
    let svd = basis_matrix.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let cond = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if cond > 1e6 {
        return Err(Error::BasisDegenerate { cond });
    }
    let final_test = result
        .reports
        .last()
        .cloned()
        .ok_or_else(|| Error::Param("copula test produced no levels".to_string()))?;
    Ok(CopulaReport {
        basis: (0..d)
            .map(|j| (0..d).map(|i| basis_matrix[(i, j)]).collect())
            .collect(),
        verdict: final_test.accept_h0,
        final_test,
        pursuit: result,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coefficients {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

/// Empirical moments of the instrumental draw behind the pursuit regression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstrumentalMoments {
    pub mean_response: f64,
    pub mean_predictor: f64,
    pub covariance: f64,
    pub predictor_variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionReport {
    pub pursuit_coefficients: Coefficients,
    pub least_squares_coefficients: Coefficients,
    pub correlation_pursuit: f64,
    pub correlation_data: f64,
    pub instrumental_moments: Option<InstrumentalMoments>,
}

#[derive(Debug, Clone)]
pub struct RegressionOptions {
    /// How close the stopping direction must be to a coordinate axis.
    pub tolerance_deg: f64,
    /// Size of the instrumental draw behind the conditional expectation.
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self {
            tolerance_deg: 15.0,
            sample_size: 2000,
            seed: 0,
        }
    }
}

/// Regression of the first coordinate on the second through the fitted
/// instrumental law: since the conditional law of the data equals the
/// instrumental conditional once the pursuit has stopped, the regression
/// line is mean/covariance arithmetic on an instrumental draw. An ordinary
/// least-squares fit on the data is reported alongside.
pub fn pursuit_regression(
    data: &DMatrix<f64>,
    result: &PursuitResult,
    opts: &RegressionOptions,
) -> Result<RegressionReport> {
    if data.ncols() != 2 {
        return Err(Error::Param(format!(
            "pursuit regression is bivariate; got d = {}",
            data.ncols()
        )));
    }
    let level = result
        .model
        .levels
        .last()
        .ok_or_else(|| Error::Param("pursuit extracted no direction".to_string()))?;
    let angle = nearest_axis_angle(&level.direction);
    if angle > opts.tolerance_deg {
        return Err(Error::StructureMismatch {
            angle_deg: angle,
            tolerance_deg: opts.tolerance_deg,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let draw = result.model.base.sample(opts.sample_size, &mut rng);
    let n = draw.nrows() as f64;
    let ey1 = draw.column(0).sum() / n;
    let ey2 = draw.column(1).sum() / n;
    let mut cov = 0.0;
    let mut var1 = 0.0;
    let mut var2 = 0.0;
    for i in 0..draw.nrows() {
        let a = draw[(i, 0)] - ey1;
        let b = draw[(i, 1)] - ey2;
        cov += a * b;
        var1 += a * a;
        var2 += b * b;
    }
    cov /= n - 1.0;
    var1 /= n - 1.0;
    var2 /= n - 1.0;
    if var2 == 0.0 {
        return Err(Error::DegeneratePredictor);
    }
    let slope = cov / var2;
    let intercept = ey1 - slope * ey2;
    let correlation_pursuit = cov / (var1 * var2).sqrt();

    let (ls_intercept, ls_slope, correlation_data) = least_squares(data, 0, 1)?;
    Ok(RegressionReport {
        pursuit_coefficients: Coefficients {
            intercept,
            slopes: vec![slope],
        },
        least_squares_coefficients: Coefficients {
            intercept: ls_intercept,
            slopes: vec![ls_slope],
        },
        correlation_pursuit,
        correlation_data,
        instrumental_moments: Some(InstrumentalMoments {
            mean_response: ey1,
            mean_predictor: ey2,
            covariance: cov,
            predictor_variance: var2,
        }),
    })
}

fn nearest_axis_angle(direction: &Direction) -> f64 {
    let d = direction.dim();
    (0..d)
        .map(|i| direction.angle_degrees(&Direction::axis(d, i)))
        .fold(f64::INFINITY, f64::min)
}

/// Ordinary least squares of one column on another:
/// (intercept, slope, Pearson correlation).
pub fn least_squares(
    data: &DMatrix<f64>,
    response: usize,
    predictor: usize,
) -> Result<(f64, f64, f64)> {
    let n = data.nrows();
    if n < 2 || response >= data.ncols() || predictor >= data.ncols() {
        return Err(Error::Param("least squares needs two columns and n >= 2".to_string()));
    }
    let my = data.column(response).sum() / n as f64;
    let mx = data.column(predictor).sum() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = data[(i, predictor)] - mx;
        let dy = data[(i, response)] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::DegeneratePredictor);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let correlation = if syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    Ok((intercept, slope, correlation))
}

/// Regression of every complement direction on the extracted projections,
/// for d > 2: the extracted directions are orthonormalized, completed to a
/// basis, and the instrumental conditional expectation provides the
/// coefficients. One report per complement direction.
pub fn pursuit_regression_general(
    data: &DMatrix<f64>,
    result: &PursuitResult,
) -> Result<Vec<RegressionReport>> {
    let d = data.ncols();
    let j = result.model.levels.len();
    if j == 0 || j >= d {
        return Err(Error::Param(format!(
            "general regression needs 1 <= levels < d, got {j} levels in dimension {d}"
        )));
    }
    let mut extracted = DMatrix::zeros(d, j);
    for (col, level) in result.model.levels.iter().enumerate() {
        for i in 0..d {
            extracted[(i, col)] = level.direction.coords()[i];
        }
    }
    // Orthonormalize the extracted family, then complete the basis.
    let a_basis = gram_schmidt(&extracted)?;
    let complement = orthonormal_complement(&a_basis)?;
    let model = &result.model.base;
    let sigma = model.covariance();
    let mu = model.mean();

    let gram = a_basis.transpose() * sigma * &a_basis;
    let gram_chol =
        nalgebra::Cholesky::new(gram).ok_or(Error::DegenerateConstraint)?;

    let mut reports = Vec::new();
    for col in 0..complement.ncols() {
        let b: DVector<f64> = complement.column(col).into();
        let sigma_b = sigma * &b;
        let slopes_vec = gram_chol.solve(&(a_basis.transpose() * &sigma_b));
        let intercept = b.dot(mu) - (a_basis.transpose() * mu).dot(&slopes_vec);
        let explained = slopes_vec.dot(&(a_basis.transpose() * sigma * &a_basis * &slopes_vec));
        let total = b.dot(&(sigma * &b));
        let correlation_pursuit = if total > 0.0 {
            (explained / total).max(0.0).sqrt()
        } else {
            0.0
        };

        // Least-squares comparison on the data projections.
        let response = crate::kde::project(data, b.as_slice())?;
        let predictors: Vec<Vec<f64>> = (0..j)
            .map(|c| {
                let a: Vec<f64> = a_basis.column(c).iter().copied().collect();
                crate::kde::project(data, &a).unwrap()
            })
            .collect();
        let (ls_intercept, ls_slopes, correlation_data) =
            multivariate_least_squares(&response, &predictors)?;

        reports.push(RegressionReport {
            pursuit_coefficients: Coefficients {
                intercept,
                slopes: slopes_vec.iter().copied().collect(),
            },
            least_squares_coefficients: Coefficients {
                intercept: ls_intercept,
                slopes: ls_slopes,
            },
            correlation_pursuit,
            correlation_data,
            instrumental_moments: None,
        });
    }
    Ok(reports)
}

fn gram_schmidt(columns: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = columns.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for c in 0..columns.ncols() {
        let mut v: DVector<f64> = columns.column(c).into();
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm <= 1e-10 {
            return Err(Error::BasisDegenerate { cond: f64::INFINITY });
        }
        basis.push(v / norm);
    }
    let mut out = DMatrix::zeros(d, basis.len());
    for (i, b) in basis.iter().enumerate() {
        out.set_column(i, b);
    }
    Ok(out)
}

fn multivariate_least_squares(
    response: &[f64],
    predictors: &[Vec<f64>],
) -> Result<(f64, Vec<f64>, f64)> {
    let n = response.len();
    let p = predictors.len();
    let mut design = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for (jcol, pred) in predictors.iter().enumerate() {
            design[(i, jcol + 1)] = pred[i];
        }
    }
    let y = DVector::from_column_slice(response);
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * &y;
    let chol = nalgebra::Cholesky::new(gram).ok_or(Error::DegeneratePredictor)?;
    let beta = chol.solve(&rhs);
    let fitted = design * &beta;
    let mean_y = response.iter().sum::<f64>() / n as f64;
    let sst: f64 = response.iter().map(|v| (v - mean_y) * (v - mean_y)).sum();
    let ssr: f64 = response
        .iter()
        .zip(fitted.iter())
        .map(|(y, f)| (y - f) * (y - f))
        .sum();
    let r = if sst > 0.0 {
        ((sst - ssr) / sst).max(0.0).sqrt()
    } else {
        0.0
    };
    Ok((beta[0], beta.iter().skip(1).copied().collect(), r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn least_squares_exact_line() {
        let data = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
        let (intercept, slope, corr) = least_squares(&data, 0, 1).unwrap();
        assert_abs_diff_eq!(intercept, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(slope, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(corr, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_constant_response() {
        let data = DMatrix::from_row_slice(4, 2, &[3.0, 0.0, 3.0, 1.0, 3.0, 2.0, 3.0, 5.0]);
        let (intercept, slope, corr) = least_squares(&data, 0, 1).unwrap();
        assert_abs_diff_eq!(slope, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(intercept, 3.0, epsilon = 1e-12);
        assert_eq!(corr, 0.0);
    }

    #[test]
    fn least_squares_degenerate_predictor() {
        let data = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 1.0, 2.0, 1.0]);
        assert!(matches!(
            least_squares(&data, 0, 1),
            Err(Error::DegeneratePredictor)
        ));
    }

    #[test]
    fn nearest_axis_angle_works() {
        let d = crate::anneal::canonicalize(&[0.999, 0.04]).unwrap();
        assert!(nearest_axis_angle(&d) < 3.0);
        let diag = crate::anneal::canonicalize(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(nearest_axis_angle(&diag), 45.0, epsilon = 1e-9);
    }
}
