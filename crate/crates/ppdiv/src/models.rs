//! Elliptical instrumental densities (Gaussian generator) with marginal and
//! conditional formulas, plus seeded samplers for every distribution the
//! bundled scenarios need.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Euler-Mascheroni constant; the mean of a unit Gumbel.
pub const EULER_GAMMA: f64 = 0.5772156649015329;

const DENSITY_FLOOR: f64 = 1e-300;

/// Density generator of the elliptical family. Only the Gaussian member
/// xi(t) = exp(-t) is implemented; the enum keeps the interface honest for
/// future members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Gaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EllipticalModelData {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    generator: Generator,
}

/// Elliptical density with mean vector `mu` and SPD covariance `sigma`.
///
/// With the Gaussian generator this is exactly the multivariate normal
/// density (2 pi)^(-d/2) |Sigma|^(-1/2) exp(-(x-mu)' Sigma^-1 (x-mu) / 2).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "EllipticalModelData", into = "EllipticalModelData")]
pub struct EllipticalModel {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    generator: Generator,
    chol: Option<Cholesky<f64, Dyn>>,
    log_det: f64,
}

impl TryFrom<EllipticalModelData> for EllipticalModel {
    type Error = Error;

    fn try_from(data: EllipticalModelData) -> Result<Self> {
        let d = data.mu.len();
        let mut sigma = DMatrix::zeros(d, d);
        for (i, row) in data.sigma.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                sigma[(i, j)] = *v;
            }
        }
        EllipticalModel::new(DVector::from_vec(data.mu), sigma, data.generator)
    }
}

impl From<EllipticalModel> for EllipticalModelData {
    fn from(model: EllipticalModel) -> Self {
        let d = model.dim();
        EllipticalModelData {
            mu: model.mu.iter().copied().collect(),
            sigma: (0..d)
                .map(|i| (0..d).map(|j| model.sigma[(i, j)]).collect())
                .collect(),
            generator: model.generator,
        }
    }
}

impl EllipticalModel {
    /// Build and validate; Cholesky failure means the covariance is not SPD.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, generator: Generator) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigma.nrows(),
            });
        }
        if d == 0 {
            return Ok(Self {
                mu,
                sigma,
                generator,
                chol: None,
                log_det: 0.0,
            });
        }
        let chol = Cholesky::new(sigma.clone()).ok_or(Error::SingularCovariance)?;
        // Reject numerically rank-deficient factors that slip past Cholesky;
        // rounding turns an exact zero pivot into one of order sqrt(eps).
        let diag = chol.l().diagonal();
        let max_diag = diag.max();
        if diag.min() <= 1e-7 * max_diag || !max_diag.is_finite() {
            return Err(Error::SingularCovariance);
        }
        let log_det = 2.0 * diag.iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::SingularCovariance);
        }
        Ok(Self {
            mu,
            sigma,
            generator,
            chol: Some(chol),
            log_det,
        })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d), Generator::Gaussian)
            .expect("identity covariance is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Density at `x`; clamped away from zero so downstream ratios stay finite.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if d == 0 {
            return Ok(1.0);
        }
        let centered = DVector::from_column_slice(x) - &self.mu;
        let chol = self.chol.as_ref().expect("validated in new");
        let white = chol.l().solve_lower_triangular(&centered).unwrap();
        let quad = white.norm_squared();
        let log_norm =
            -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det);
        match self.generator {
            Generator::Gaussian => Ok((log_norm - 0.5 * quad).exp().max(DENSITY_FLOOR)),
        }
    }

    /// Mean and variance of the one-dimensional projection a' X.
    pub fn project_params(&self, direction: &[f64]) -> Result<(f64, f64)> {
        if direction.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: direction.len(),
            });
        }
        if direction.iter().all(|&c| c == 0.0) {
            return Err(Error::ZeroDirection);
        }
        let a = DVector::from_column_slice(direction);
        let mean = a.dot(&self.mu);
        let variance = a.dot(&(&self.sigma * &a));
        Ok((mean, variance))
    }

    /// Density of the projection a' X at value `t` (Gaussian generator).
    pub fn projected_density(&self, direction: &[f64], t: f64) -> Result<f64> {
        let (mean, variance) = self.project_params(direction)?;
        let sd = variance.sqrt();
        let z = (t - mean) / sd;
        Ok(((-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
            .max(DENSITY_FLOOR))
    }

    /// n exact draws, one per row.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        if d == 0 {
            return out;
        }
        let lower = self.chol.as_ref().expect("validated in new").l();
        for i in 0..n {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
            let x = &self.mu + &lower * z;
            for l in 0..d {
                out[(i, l)] = x[l];
            }
        }
        out
    }

    /// Conditional law given b' x = v for every column b of `constrained`,
    /// expressed in an orthonormal basis of the unconstrained complement.
    pub fn conditional(
        &self,
        constrained: &DMatrix<f64>,
        values: &[f64],
    ) -> Result<ConditionalModel> {
        let d = self.dim();
        let q = constrained.ncols();
        if constrained.nrows() != d || values.len() != q {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: constrained.nrows(),
            });
        }
        if q == 0 || q > d {
            return Err(Error::DegenerateConstraint);
        }
        let complement = orthonormal_complement(constrained)?;
        let v = DVector::from_column_slice(values);

        // mu_c = mu + Sigma B (B' Sigma B)^-1 (v - B' mu)
        let sigma_b = &self.sigma * constrained;
        let gram = constrained.transpose() * &sigma_b;
        let gram_chol = Cholesky::new(gram).ok_or(Error::DegenerateConstraint)?;
        let shift = gram_chol.solve(&(v - constrained.transpose() * &self.mu));
        let mean_x = &self.mu + &sigma_b * shift;

        if q == d {
            return Ok(ConditionalModel {
                model: None,
                complement,
                mean_x,
            });
        }

        let sigma_c = &self.sigma - &sigma_b * gram_chol.solve(&sigma_b.transpose());
        let cond_mu = complement.transpose() * &mean_x;
        let cond_sigma = complement.transpose() * sigma_c * &complement;
        // Symmetrize against rounding before the SPD check.
        let cond_sigma = (&cond_sigma + cond_sigma.transpose()) * 0.5;
        let model = EllipticalModel::new(cond_mu, cond_sigma, self.generator)
            .map_err(|_| Error::DegenerateConstraint)?;
        Ok(ConditionalModel {
            model: Some(model),
            complement,
            mean_x,
        })
    }
}

/// Conditional law of the unconstrained components.
#[derive(Debug, Clone)]
pub struct ConditionalModel {
    /// Law of complement' x; `None` when every direction is constrained
    /// (point mass at `mean_x`).
    pub model: Option<EllipticalModel>,
    /// d x (d - q) orthonormal basis of the unconstrained subspace.
    pub complement: DMatrix<f64>,
    /// Conditional mean in the original coordinates.
    pub mean_x: DVector<f64>,
}

impl ConditionalModel {
    pub fn is_point_mass(&self) -> bool {
        self.model.is_none()
    }
}

/// Orthonormal basis of the orthogonal complement of the column span,
/// built by Gram-Schmidt over the canonical basis.
pub(crate) fn orthonormal_complement(columns: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = columns.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..columns.ncols() {
        let mut v: DVector<f64> = columns.column(j).into();
        let scale = v.norm();
        if scale == 0.0 {
            return Err(Error::DegenerateConstraint);
        }
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm <= 1e-10 * scale.max(1.0) {
            return Err(Error::DegenerateConstraint);
        }
        basis.push(v / norm);
    }
    let constrained_rank = basis.len();
    for j in 0..d {
        if basis.len() == d {
            break;
        }
        let mut v = DVector::zeros(d);
        v[j] = 1.0;
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    let free = basis.split_off(constrained_rank);
    let mut out = DMatrix::zeros(d, free.len());
    for (j, b) in free.iter().enumerate() {
        out.set_column(j, b);
    }
    Ok(out)
}

/// Fit the instrumental model: sample mean and unbiased sample covariance
/// with a Gaussian generator. Regularization is never silent; a rank
/// deficient covariance is an error.
pub fn fit_instrumental(sample: &DMatrix<f64>) -> Result<EllipticalModel> {
    let (n, d) = sample.shape();
    if n < 2 {
        return Err(Error::SingularCovariance);
    }
    let mean = DVector::from_fn(d, |l, _| sample.column(l).sum() / n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let da = sample[(i, a)] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (sample[(i, b)] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    EllipticalModel::new(mean, cov, Generator::Gaussian)
}

/// One-dimensional margin used by the Gaussian copula scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Margin {
    Gaussian { mean: f64, sd: f64 },
    /// Max-style Gumbel with CDF exp(-exp(-(x - location)/scale)).
    Gumbel { location: f64, scale: f64 },
    Exponential { rate: f64 },
}

impl Margin {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Margin::Gaussian { sd, .. } => *sd > 0.0,
            Margin::Gumbel { scale, .. } => *scale > 0.0,
            Margin::Exponential { rate } => *rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Param(format!("margin parameter out of domain: {self:?}")))
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(1e-16, 1.0 - 1e-16);
        match self {
            Margin::Gaussian { mean, sd } => mean + sd * stats::std_normal_quantile(p),
            Margin::Gumbel { location, scale } => location - scale * (-p.ln()).ln(),
            Margin::Exponential { rate } => -(1.0 - p).ln() / rate,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Margin::Gaussian { mean, sd } => stats::std_normal_cdf((x - mean) / sd),
            Margin::Gumbel { location, scale } => (-(-(x - location) / scale).exp()).exp(),
            Margin::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 - (-rate * x).exp()
                }
            }
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            Margin::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            Margin::Gumbel { location, scale } => {
                let z = (x - location) / scale;
                ((-z - (-z).exp()).exp()) / scale
            }
            Margin::Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    rate * (-rate * x).exp()
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Margin::Gaussian { mean, .. } => *mean,
            Margin::Gumbel { location, scale } => location + EULER_GAMMA * scale,
            Margin::Exponential { rate } => 1.0 / rate,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }
}

/// Data-generating distribution of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioDistribution {
    Gaussian {
        mu: Vec<f64>,
        sigma: Vec<Vec<f64>>,
    },
    Gumbel {
        location: f64,
        scale: f64,
    },
    Exponential {
        rate: f64,
    },
    /// Correlated normal pair pushed through the normal CDF and then through
    /// the inverse margin CDFs.
    GaussianCopulaPair {
        rho: f64,
        margin1: Margin,
        margin2: Margin,
    },
    Product {
        components: Vec<ScenarioDistribution>,
    },
    /// x = A z for a base draw z; builds structured densities from
    /// independent components.
    LinearMap {
        base: Box<ScenarioDistribution>,
        matrix: Vec<Vec<f64>>,
    },
}

impl ScenarioDistribution {
    pub fn dim(&self) -> usize {
        match self {
            ScenarioDistribution::Gaussian { mu, .. } => mu.len(),
            ScenarioDistribution::Gumbel { .. } | ScenarioDistribution::Exponential { .. } => 1,
            ScenarioDistribution::GaussianCopulaPair { .. } => 2,
            ScenarioDistribution::Product { components } => {
                components.iter().map(|c| c.dim()).sum()
            }
            ScenarioDistribution::LinearMap { matrix, .. } => matrix.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScenarioDistribution::Gaussian { mu, sigma } => {
                let d = mu.len();
                if sigma.len() != d || sigma.iter().any(|row| row.len() != d) {
                    return Err(Error::Param("gaussian sigma must be d x d".to_string()));
                }
                let mut m = DMatrix::zeros(d, d);
                for (i, row) in sigma.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        m[(i, j)] = *v;
                    }
                }
                EllipticalModel::new(DVector::from_vec(mu.clone()), m, Generator::Gaussian)?;
                Ok(())
            }
            ScenarioDistribution::Gumbel { scale, .. } => {
                if *scale > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Param("gumbel scale must be positive".to_string()))
                }
            }
            ScenarioDistribution::Exponential { rate } => {
                if *rate > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Param("exponential rate must be positive".to_string()))
                }
            }
            ScenarioDistribution::GaussianCopulaPair {
                rho,
                margin1,
                margin2,
            } => {
                if rho.abs() >= 1.0 {
                    return Err(Error::Param(format!("|rho| must be < 1, got {rho}")));
                }
                margin1.validate()?;
                margin2.validate()
            }
            ScenarioDistribution::Product { components } => {
                if components.is_empty() {
                    return Err(Error::Param("product needs components".to_string()));
                }
                components.iter().try_for_each(|c| c.validate())
            }
            ScenarioDistribution::LinearMap { base, matrix } => {
                base.validate()?;
                let p = base.dim();
                if matrix.is_empty() || matrix.iter().any(|row| row.len() != p) {
                    return Err(Error::Param(format!(
                        "linear map matrix must have {p} columns"
                    )));
                }
                Ok(())
            }
        }
    }

    fn draw_into<R: Rng>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        match self {
            ScenarioDistribution::Gaussian { mu, sigma } => {
                let d = mu.len();
                let mut m = DMatrix::zeros(d, d);
                for (i, row) in sigma.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        m[(i, j)] = *v;
                    }
                }
                EllipticalModel::new(DVector::from_vec(mu.clone()), m, Generator::Gaussian)
                    .expect("validated")
                    .sample(n, rng)
            }
            ScenarioDistribution::Gumbel { location, scale } => {
                let margin = Margin::Gumbel {
                    location: *location,
                    scale: *scale,
                };
                DMatrix::from_fn(n, 1, |_, _| margin.draw(rng))
            }
            ScenarioDistribution::Exponential { rate } => {
                let margin = Margin::Exponential { rate: *rate };
                DMatrix::from_fn(n, 1, |_, _| margin.draw(rng))
            }
            ScenarioDistribution::GaussianCopulaPair {
                rho,
                margin1,
                margin2,
            } => {
                let mut out = DMatrix::zeros(n, 2);
                let cross = (1.0 - rho * rho).sqrt();
                for i in 0..n {
                    let z1: f64 = StandardNormal.sample(rng);
                    let z2: f64 = StandardNormal.sample(rng);
                    let w = rho * z1 + cross * z2;
                    out[(i, 0)] = margin1.quantile(stats::std_normal_cdf(z1));
                    out[(i, 1)] = margin2.quantile(stats::std_normal_cdf(w));
                }
                out
            }
            ScenarioDistribution::Product { components } => {
                let d = self.dim();
                let mut out = DMatrix::zeros(n, d);
                let mut offset = 0;
                for comp in components {
                    let block = comp.draw_into(n, rng);
                    for i in 0..n {
                        for l in 0..block.ncols() {
                            out[(i, offset + l)] = block[(i, l)];
                        }
                    }
                    offset += block.ncols();
                }
                out
            }
            ScenarioDistribution::LinearMap { base, matrix } => {
                let z = base.draw_into(n, rng);
                let rows = matrix.len();
                let cols = matrix[0].len();
                let mut a = DMatrix::zeros(rows, cols);
                for (i, row) in matrix.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        a[(i, j)] = *v;
                    }
                }
                z * a.transpose()
            }
        }
    }
}

/// Deterministic n x d draw from a scenario distribution.
pub fn draw_scenario(
    dist: &ScenarioDistribution,
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    use rand::SeedableRng;
    if n == 0 {
        return Err(Error::Param("sample size must be at least 1".to_string()));
    }
    dist.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok(dist.draw_into(n, &mut rng))
}
