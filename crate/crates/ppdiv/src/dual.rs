//! Empirical dual representation of the Φ-divergence: density ratios, the
//! two-sample criterion whose average estimates Φ(g·f_a/g_a, f), truncated
//! subsample selection and the variance feeding the stopping test.
//!
//! For a witness direction c and candidate direction a the criterion is
//!
//!   value = mean_Y[ φ′(r_c(Y)) · f_a(aᵀY)/g_a(aᵀY) ] − mean_X[ φ*(φ′(r_c(X))) ]
//!
//! with r_c(x) = g(x)·f_c(cᵀx) / (f(x)·g_c(cᵀx)), where the f-side factors
//! come from the data sample and the g-side factors from the instrumental
//! side. With c = a the value is the plug-in divergence estimate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::anneal::{canonicalize, Direction};
use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::kde::{project, Kde1d, KdeNd};
use crate::models::EllipticalModel;

/// Density evaluations never trusted below this; points whose factors fall
/// under max(theta, floor) are masked for that evaluation.
pub const MIN_DENSITY_FLOOR: f64 = 1e-12;

/// Joint density callable used for the f- and g-sides of the ratio.
pub trait JointDensity: Send + Sync {
    fn density(&self, x: &[f64]) -> f64;
}

impl JointDensity for KdeNd {
    fn density(&self, x: &[f64]) -> f64 {
        self.eval(x).expect("dimension validated by the context")
    }
}

impl JointDensity for EllipticalModel {
    fn density(&self, x: &[f64]) -> f64 {
        EllipticalModel::density(self, x).expect("dimension validated by the context")
    }
}

/// Wrap a closure as a joint density.
pub struct DensityFn<F>(pub F);

impl<F> JointDensity for DensityFn<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn density(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

/// Per-direction one-dimensional density accessor.
pub trait ProjectedDensitySource: Send + Sync {
    /// Density of directionᵀZ at each query point.
    fn eval_proj(&self, direction: &[f64], queries: &[f64]) -> Result<Vec<f64>>;
}

/// How projected KDEs are evaluated inside the criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    /// Binned convolution for large workloads, exact sums otherwise.
    #[default]
    Auto,
    /// Exact Gaussian sums only.
    Exact,
}

/// Scott-rule KDE of the projections of a stored sample, fit lazily at each
/// direction the optimizer visits.
pub struct KdeProjection {
    sample: DMatrix<f64>,
    mode: EvalMode,
}

impl KdeProjection {
    pub fn new(sample: DMatrix<f64>) -> Self {
        Self {
            sample,
            mode: EvalMode::Auto,
        }
    }

    pub fn with_mode(sample: DMatrix<f64>, mode: EvalMode) -> Self {
        Self { sample, mode }
    }
}

impl ProjectedDensitySource for KdeProjection {
    fn eval_proj(&self, direction: &[f64], queries: &[f64]) -> Result<Vec<f64>> {
        let projected = project(&self.sample, direction)?;
        let kde = Kde1d::fit(&projected)?;
        let work = projected.len() * queries.len();
        if self.mode == EvalMode::Exact || work <= 1_000_000 {
            return Ok(kde.eval_many(queries));
        }
        match BinnedKde::build(kde.points(), kde.bandwidth()) {
            Some(binned) => Ok(queries.iter().map(|&t| binned.eval(&kde, t)).collect()),
            None => Ok(kde.eval_many(queries)),
        }
    }
}

/// Exact Gaussian marginal of an elliptical model.
pub struct GaussianProjection {
    model: EllipticalModel,
}

impl GaussianProjection {
    pub fn new(model: EllipticalModel) -> Self {
        Self { model }
    }
}

impl ProjectedDensitySource for GaussianProjection {
    fn eval_proj(&self, direction: &[f64], queries: &[f64]) -> Result<Vec<f64>> {
        queries
            .iter()
            .map(|&t| self.model.projected_density(direction, t))
            .collect()
    }
}

/// Wrap a closure (direction, t) -> density as a projected-density source.
pub struct ProjectionFn<F>(pub F);

impl<F> ProjectedDensitySource for ProjectionFn<F>
where
    F: Fn(&[f64], f64) -> f64 + Send + Sync,
{
    fn eval_proj(&self, direction: &[f64], queries: &[f64]) -> Result<Vec<f64>> {
        Ok(queries.iter().map(|&t| (self.0)(direction, t)).collect())
    }
}

/// Binned Gaussian sum with linear binning and linear interpolation; queries
/// outside the grid fall back to the exact sum. Grid anchors scale with the
/// data, so positive rescaling of a direction rescales evaluations exactly.
struct BinnedKde {
    lo: f64,
    delta: f64,
    values: Vec<f64>,
}

impl BinnedKde {
    const PAD: f64 = 8.5;
    const CELLS_PER_BANDWIDTH: f64 = 25.0;
    const MAX_CELLS: usize = 16_384;

    fn build(centers: &[f64], h: f64) -> Option<BinnedKde> {
        let lo_c = centers.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi_c = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = lo_c - Self::PAD * h;
        let hi = hi_c + Self::PAD * h;
        let span = hi - lo;
        if !(span > 0.0) || !span.is_finite() {
            return None;
        }
        let cells = (span * Self::CELLS_PER_BANDWIDTH / h).ceil() as usize + 1;
        if cells > Self::MAX_CELLS {
            return None;
        }
        let grid = cells.max(64);
        let delta = span / (grid - 1) as f64;
        let mut bins = vec![0.0f64; grid];
        for &x in centers {
            let u = (x - lo) / delta;
            let i = (u.floor() as usize).min(grid - 2);
            let frac = u - i as f64;
            bins[i] += 1.0 - frac;
            bins[i + 1] += frac;
        }
        let width = ((Self::PAD * h / delta).ceil() as usize).min(grid - 1);
        let kernel: Vec<f64> = (0..=width)
            .map(|j| {
                let z = j as f64 * delta / h;
                (-0.5 * z * z).exp()
            })
            .collect();
        let norm = centers.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt();
        let mut values = vec![0.0f64; grid];
        for (i, value) in values.iter_mut().enumerate() {
            let j_lo = i.saturating_sub(width);
            let j_hi = (i + width).min(grid - 1);
            let mut sum = 0.0;
            for (j, &mass) in bins[j_lo..=j_hi].iter().enumerate() {
                let offset = (j_lo + j).abs_diff(i);
                sum += mass * kernel[offset];
            }
            *value = sum / norm;
        }
        Some(BinnedKde { lo, delta, values })
    }

    fn eval(&self, exact: &Kde1d, t: f64) -> f64 {
        let u = (t - self.lo) / self.delta;
        if !(0.0..=(self.values.len() - 1) as f64).contains(&u) {
            return exact.eval(t);
        }
        let i = (u.floor() as usize).min(self.values.len() - 2);
        let frac = u - i as f64;
        (self.values[i] * (1.0 - frac) + self.values[i + 1] * frac).max(1e-300)
    }
}

/// Truncation threshold theta = m^(-nu) applied to both samples.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub nu: f64,
    pub min_retained: usize,
}

impl TruncationConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        let cap = 1.0 / (4.0 + d as f64);
        if !(self.nu > 0.0 && self.nu < cap) {
            return Err(Error::Param(format!(
                "nu must lie in (0, {cap:.4}) for dimension {d}, got {}",
                self.nu
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TruncationOutcome {
    pub kept_x: Vec<usize>,
    pub kept_y: Vec<usize>,
    pub theta: f64,
}

/// Keep data points where the data KDE clears theta and instrumental points
/// where the instrumental density clears theta. The per-direction condition
/// on projections is re-checked lazily inside each criterion evaluation.
pub fn truncate_samples(
    sample_x: &DMatrix<f64>,
    sample_y: &DMatrix<f64>,
    f_kde: &KdeNd,
    g_side: &dyn JointDensity,
    cfg: &TruncationConfig,
) -> Result<TruncationOutcome> {
    let m = sample_x.nrows();
    if m < 2 {
        return Err(Error::Param("truncation needs at least two points".to_string()));
    }
    cfg.validate(sample_x.ncols())?;
    let theta = (m as f64).powf(-cfg.nu);
    let mut kept_x = Vec::new();
    for i in 0..m {
        let row: Vec<f64> = sample_x.row(i).iter().copied().collect();
        if f_kde.eval(&row)? >= theta {
            kept_x.push(i);
        }
    }
    let mut kept_y = Vec::new();
    for i in 0..sample_y.nrows() {
        let row: Vec<f64> = sample_y.row(i).iter().copied().collect();
        if g_side.density(&row) >= theta {
            kept_y.push(i);
        }
    }
    if kept_x.len() < cfg.min_retained || kept_y.len() < cfg.min_retained {
        return Err(Error::TooFewRetained {
            kept_x: kept_x.len(),
            kept_y: kept_y.len(),
            min: cfg.min_retained,
        });
    }
    Ok(TruncationOutcome {
        kept_x,
        kept_y,
        theta,
    })
}

/// Extract the listed rows of a sample matrix.
pub fn select_rows(sample: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let d = sample.ncols();
    let mut out = DMatrix::zeros(rows.len(), d);
    for (new_i, &i) in rows.iter().enumerate() {
        for l in 0..d {
            out[(new_i, l)] = sample[(i, l)];
        }
    }
    out
}

/// Everything needed to evaluate the dual criterion empirically.
pub struct DualContext {
    spec: DivergenceSpec,
    data_x: DMatrix<f64>,
    data_y: DMatrix<f64>,
    f_proj: Box<dyn ProjectedDensitySource>,
    g_proj: Box<dyn ProjectedDensitySource>,
    f_joint: Box<dyn JointDensity>,
    g_joint: Box<dyn JointDensity>,
    theta: f64,
    f_at_x: Vec<f64>,
    f_at_y: Vec<f64>,
    g_at_x: Vec<f64>,
    g_at_y: Vec<f64>,
}

impl DualContext {
    /// KDE-backed context as used by the pursuit loop: the data side is
    /// estimated with a multivariate KDE and per-direction projected KDEs,
    /// the instrumental side with the provided callables.
    pub fn from_samples(
        spec: DivergenceSpec,
        data_x: &DMatrix<f64>,
        data_y: &DMatrix<f64>,
        g_joint: Box<dyn JointDensity>,
        g_proj: Box<dyn ProjectedDensitySource>,
        theta: f64,
    ) -> Result<Self> {
        let f_kde = KdeNd::fit(data_x)?;
        Self::from_parts(
            spec,
            data_x,
            data_y,
            Box::new(f_kde),
            Box::new(KdeProjection::new(data_x.clone())),
            g_joint,
            g_proj,
            theta,
        )
    }

    /// Fully custom context; tests substitute exact densities here.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        spec: DivergenceSpec,
        data_x: &DMatrix<f64>,
        data_y: &DMatrix<f64>,
        f_joint: Box<dyn JointDensity>,
        f_proj: Box<dyn ProjectedDensitySource>,
        g_joint: Box<dyn JointDensity>,
        g_proj: Box<dyn ProjectedDensitySource>,
        theta: f64,
    ) -> Result<Self> {
        if data_x.ncols() != data_y.ncols() {
            return Err(Error::DimensionMismatch {
                expected: data_x.ncols(),
                got: data_y.ncols(),
            });
        }
        // Pair the samples: keep the first n of each.
        let n = data_x.nrows().min(data_y.nrows());
        if n < 2 {
            return Err(Error::Param(
                "dual context needs at least two points per side".to_string(),
            ));
        }
        let data_x = data_x.rows(0, n).into_owned();
        let data_y = data_y.rows(0, n).into_owned();
        let row = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { m.row(i).iter().copied().collect() };
        let f_at_x: Vec<f64> = (0..n).map(|i| f_joint.density(&row(&data_x, i))).collect();
        let f_at_y: Vec<f64> = (0..n).map(|i| f_joint.density(&row(&data_y, i))).collect();
        let g_at_x: Vec<f64> = (0..n).map(|i| g_joint.density(&row(&data_x, i))).collect();
        let g_at_y: Vec<f64> = (0..n).map(|i| g_joint.density(&row(&data_y, i))).collect();
        Ok(Self {
            spec,
            data_x,
            data_y,
            f_proj,
            g_proj,
            f_joint,
            g_joint,
            theta,
            f_at_x,
            f_at_y,
            g_at_x,
            g_at_y,
        })
    }

    pub fn spec(&self) -> &DivergenceSpec {
        &self.spec
    }

    /// Paired subsample size.
    pub fn n(&self) -> usize {
        self.data_x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data_x.ncols()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn data_x(&self) -> &DMatrix<f64> {
        &self.data_x
    }

    pub fn data_y(&self) -> &DMatrix<f64> {
        &self.data_y
    }

    /// Evaluation floor: the truncation threshold, never below the numeric
    /// guard.
    pub fn floor(&self) -> f64 {
        self.theta.max(MIN_DENSITY_FLOOR)
    }

    /// The ratio r_b(x) = g(x)·f_b(bᵀx) / (f(x)·g_b(bᵀx)) at a single point;
    /// errors if any factor underflows the floor.
    pub fn density_ratio(&self, direction: &[f64], x: &[f64]) -> Result<f64> {
        let dir = canonicalize(direction)?;
        let floor = self.floor();
        let t: f64 = dir
            .coords()
            .iter()
            .zip(x.iter())
            .map(|(a, b)| a * b)
            .sum();
        let f_joint = self.f_joint.density(x);
        let g_joint = self.g_joint.density(x);
        let f_proj = self.f_proj.eval_proj(dir.coords(), &[t])?[0];
        let g_proj = self.g_proj.eval_proj(dir.coords(), &[t])?[0];
        for (value, factor) in [
            (f_joint, "data joint density"),
            (g_joint, "instrumental joint density"),
            (f_proj, "data projected density"),
            (g_proj, "instrumental projected density"),
        ] {
            if value < floor {
                return Err(Error::FloorViolation {
                    factor,
                    value,
                    floor,
                });
            }
        }
        Ok(g_joint * f_proj / (f_joint * g_proj))
    }

    /// Criterion at (witness, candidate); with witness = candidate this is
    /// the plug-in divergence estimate.
    pub fn criterion(&self, witness: &Direction, candidate: &Direction) -> Result<CriterionEval> {
        let fixed = self.fixed_candidate(candidate)?;
        fixed.eval_witness(witness)
    }

    /// Precompute the candidate-side weights so that a witness search only
    /// pays for the witness projections.
    pub fn fixed_candidate(&self, candidate: &Direction) -> Result<FixedCandidate<'_>> {
        let proj_y = project(&self.data_y, candidate.coords())?;
        let f_cand_y = self.f_proj.eval_proj(candidate.coords(), &proj_y)?;
        let g_cand_y = self.g_proj.eval_proj(candidate.coords(), &proj_y)?;
        Ok(FixedCandidate {
            ctx: self,
            candidate: candidate.clone(),
            f_cand_y,
            g_cand_y,
        })
    }
}

/// Candidate-side state shared across witness evaluations.
pub struct FixedCandidate<'a> {
    ctx: &'a DualContext,
    candidate: Direction,
    f_cand_y: Vec<f64>,
    g_cand_y: Vec<f64>,
}

impl FixedCandidate<'_> {
    pub fn candidate(&self) -> &Direction {
        &self.candidate
    }

    pub fn eval_witness(&self, witness: &Direction) -> Result<CriterionEval> {
        let ctx = self.ctx;
        let n = ctx.n();
        let floor = ctx.floor();
        let proj_x = project(&ctx.data_x, witness.coords())?;
        let proj_y = project(&ctx.data_y, witness.coords())?;
        let mut queries = proj_x.clone();
        queries.extend_from_slice(&proj_y);
        let f_w = ctx.f_proj.eval_proj(witness.coords(), &queries)?;
        let g_w = ctx.g_proj.eval_proj(witness.coords(), &queries)?;

        let mut x_terms = Vec::with_capacity(n);
        let mut masked_x = 0usize;
        for i in 0..n {
            let factors = [ctx.f_at_x[i], ctx.g_at_x[i], f_w[i], g_w[i]];
            if factors.iter().any(|&v| v < floor) {
                masked_x += 1;
                continue;
            }
            let ratio = ctx.g_at_x[i] * f_w[i] / (ctx.f_at_x[i] * g_w[i]);
            let eval = ctx.spec.eval(ratio)?;
            x_terms.push(eval.conjugate);
        }

        let mut y_terms = Vec::with_capacity(n);
        let mut masked_y = 0usize;
        for i in 0..n {
            let factors = [
                ctx.f_at_y[i],
                ctx.g_at_y[i],
                f_w[n + i],
                g_w[n + i],
                self.f_cand_y[i],
                self.g_cand_y[i],
            ];
            if factors.iter().any(|&v| v < floor) {
                masked_y += 1;
                continue;
            }
            let ratio = ctx.g_at_y[i] * f_w[n + i] / (ctx.f_at_y[i] * g_w[n + i]);
            let eval = ctx.spec.eval(ratio)?;
            y_terms.push(eval.derivative * self.f_cand_y[i] / self.g_cand_y[i]);
        }

        if x_terms.len() < 2 || y_terms.len() < 2 {
            return Err(Error::FloorViolation {
                factor: "criterion evaluation (all points masked)",
                value: 0.0,
                floor,
            });
        }
        let b1: f64 = y_terms.iter().sum::<f64>() / y_terms.len() as f64;
        let b2: f64 = x_terms.iter().sum::<f64>() / x_terms.len() as f64;
        Ok(CriterionEval {
            value: b1 - b2,
            n_pairs: n,
            x_terms,
            y_terms,
            masked_x,
            masked_y,
        })
    }
}

/// One evaluation of the dual criterion.
#[derive(Debug, Clone)]
pub struct CriterionEval {
    /// B1 − B2; the divergence estimate when witness = candidate.
    pub value: f64,
    /// Paired subsample size of the context.
    pub n_pairs: usize,
    /// Conjugate terms at retained data points (the Var side of the test).
    pub x_terms: Vec<f64>,
    /// Weighted derivative terms at retained instrumental points.
    pub y_terms: Vec<f64>,
    pub masked_x: usize,
    pub masked_y: usize,
}

impl CriterionEval {
    /// Sample variance (divisor n−1) of the data-side conjugate terms. The
    /// instrumental-side term of M is an integral, constant in x, so it does
    /// not contribute.
    pub fn variance(&self) -> Result<f64> {
        let var = crate::stats::sample_variance(&self.x_terms)?;
        if var == 0.0 {
            return Err(Error::ZeroVariance);
        }
        Ok(var)
    }

    /// The normalized test statistic sqrt(n)·value/sqrt(variance).
    pub fn statistic(&self) -> Result<f64> {
        let var = self.variance()?;
        Ok((self.n_pairs as f64).sqrt() * self.value / var.sqrt())
    }

    /// Seeded bootstrap standard error of `value`.
    pub fn bootstrap_se(&self, replicates: usize, seed: u64) -> f64 {
        crate::stats::bootstrap_se_of_mean_difference(&self.y_terms, &self.x_terms, replicates, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_instrumental, Generator};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_pair_context(n: usize, seed: u64, mode: EvalMode) -> DualContext {
        let truth = EllipticalModel::standard(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data_x = truth.sample(n, &mut rng);
        let data_y = truth.sample(n, &mut rng);
        let fitted = fit_instrumental(&data_x).unwrap();
        DualContext::from_parts(
            DivergenceSpec::relative_entropy(),
            &data_x,
            &data_y,
            Box::new(KdeNd::fit(&data_x).unwrap()),
            Box::new(KdeProjection::with_mode(data_x.clone(), mode)),
            Box::new(fitted.clone()),
            Box::new(GaussianProjection::new(fitted)),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn ratio_near_one_for_matching_distributions() {
        let ctx = gaussian_pair_context(4000, 11, EvalMode::Exact);
        let r = ctx.density_ratio(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((r - 1.0).abs() < 0.1, "ratio {r}");
    }

    #[test]
    fn ratio_scale_equivariance_is_exact() {
        let ctx = gaussian_pair_context(500, 3, EvalMode::Exact);
        let x = [0.4, -0.9];
        let r1 = ctx.density_ratio(&[0.3, 0.7], &x).unwrap();
        let r2 = ctx.density_ratio(&[0.6, 1.4], &x).unwrap();
        assert!((r1 - r2).abs() <= 1e-12 * r1.abs());
    }

    #[test]
    fn ratio_cancels_when_all_estimates_share_samples() {
        // d = 1 with b = 1: joint and projected KDEs coincide on both sides.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = EllipticalModel::standard(1).sample(200, &mut rng);
        let y = EllipticalModel::standard(1).sample(200, &mut rng);
        let ctx = DualContext::from_parts(
            DivergenceSpec::relative_entropy(),
            &x,
            &y,
            Box::new(KdeNd::fit(&x).unwrap()),
            Box::new(KdeProjection::with_mode(x.clone(), EvalMode::Exact)),
            Box::new(KdeNd::fit(&y).unwrap()),
            Box::new(KdeProjection::with_mode(y.clone(), EvalMode::Exact)),
            0.0,
        )
        .unwrap();
        for point in [[-0.7], [0.0], [1.3]] {
            let r = ctx.density_ratio(&[1.0], &point).unwrap();
            assert!((r - 1.0).abs() < 1e-12, "ratio {r}");
        }
    }

    #[test]
    fn criterion_near_zero_under_the_null() {
        let ctx = gaussian_pair_context(2000, 5, EvalMode::Auto);
        let dir = canonicalize(&[1.0, 0.0]).unwrap();
        let eval = ctx.criterion(&dir, &dir).unwrap();
        // True divergence is 0; allow a loose Monte Carlo + KDE-bias band.
        assert!(eval.value.abs() < 0.1, "criterion {}", eval.value);
    }

    #[test]
    fn criterion_scale_invariance() {
        let ctx = gaussian_pair_context(300, 9, EvalMode::Exact);
        let c1 = canonicalize(&[0.8, 0.6]).unwrap();
        let c2 = canonicalize(&[1.6, 1.2]).unwrap();
        let a1 = canonicalize(&[0.0, 2.0]).unwrap();
        let a2 = canonicalize(&[0.0, 0.5]).unwrap();
        let e1 = ctx.criterion(&c1, &a1).unwrap();
        let e2 = ctx.criterion(&c2, &a2).unwrap();
        assert_eq!(e1.value, e2.value);
    }

    #[test]
    fn binned_and_exact_evaluations_agree() {
        let exact_ctx = gaussian_pair_context(1500, 21, EvalMode::Exact);
        let auto_ctx = gaussian_pair_context(1500, 21, EvalMode::Auto);
        let dir = canonicalize(&[0.6, -0.8]).unwrap();
        let a = ctx_value(&exact_ctx, &dir);
        let b = ctx_value(&auto_ctx, &dir);
        assert!(
            (a - b).abs() < 2e-4,
            "exact {a} vs binned {b}"
        );
    }

    fn ctx_value(ctx: &DualContext, dir: &Direction) -> f64 {
        ctx.criterion(dir, dir).unwrap().value
    }

    #[test]
    fn variance_zero_for_constant_ratio() {
        // Identical densities on both sides of every factor make r identical
        // at every point, so the conjugate terms are constant.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = EllipticalModel::standard(2).sample(100, &mut rng);
        let y = EllipticalModel::standard(2).sample(100, &mut rng);
        let model = EllipticalModel::standard(2);
        let ctx = DualContext::from_parts(
            DivergenceSpec::relative_entropy(),
            &x,
            &y,
            Box::new(model.clone()),
            Box::new(GaussianProjection::new(model.clone())),
            Box::new(model.clone()),
            Box::new(GaussianProjection::new(model)),
            0.0,
        )
        .unwrap();
        let dir = canonicalize(&[1.0, 0.0]).unwrap();
        let eval = ctx.criterion(&dir, &dir).unwrap();
        assert!(matches!(eval.variance(), Err(Error::ZeroVariance)));
    }

    #[test]
    fn variance_positive_and_scale_invariant_under_the_null() {
        let ctx = gaussian_pair_context(2000, 13, EvalMode::Auto);
        let d1 = canonicalize(&[0.0, 1.0]).unwrap();
        let eval = ctx.criterion(&d1, &d1).unwrap();
        let var = eval.variance().unwrap();
        assert!(var > 0.0);
        let d2 = canonicalize(&[0.0, 4.0]).unwrap();
        let eval2 = ctx.criterion(&d2, &d2).unwrap();
        assert_eq!(var, eval2.variance().unwrap());
    }

    #[test]
    fn truncation_matches_brute_force_on_normal_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = EllipticalModel::standard(1).sample(1000, &mut rng);
        let y = EllipticalModel::standard(1).sample(1000, &mut rng);
        let f_kde = KdeNd::fit(&x).unwrap();
        let model = EllipticalModel::standard(1);
        let cfg = TruncationConfig {
            nu: 0.15,
            min_retained: 10,
        };
        let outcome = truncate_samples(&x, &y, &f_kde, &model, &cfg).unwrap();
        let theta = 1000f64.powf(-0.15);
        assert_eq!(outcome.theta, theta);
        // Brute-force enumeration with the same estimator.
        let expected: Vec<usize> = (0..1000)
            .filter(|&i| f_kde.eval(&[x[(i, 0)]]).unwrap() >= theta)
            .collect();
        assert_eq!(outcome.kept_x, expected);
        // The threshold bites: a standard normal KDE stays below 0.4.
        assert!(outcome.kept_x.len() < 1000);
        assert!(!outcome.kept_x.is_empty());
    }

    #[test]
    fn truncation_keeps_everything_when_threshold_is_below_the_density() {
        // A tight cloud has density values far above m^(-nu).
        let sigma = DMatrix::from_row_slice(1, 1, &[1e-9]);
        let model = EllipticalModel::new(DVector::zeros(1), sigma, Generator::Gaussian).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let x = model.sample(500, &mut rng);
        let y = model.sample(500, &mut rng);
        let f_kde = KdeNd::fit(&x).unwrap();
        let cfg = TruncationConfig {
            nu: 0.19,
            min_retained: 2,
        };
        let outcome = truncate_samples(&x, &y, &f_kde, &model, &cfg).unwrap();
        assert_eq!(outcome.kept_x.len(), 500);
        assert_eq!(outcome.kept_y.len(), 500);
    }

    #[test]
    fn far_outlier_is_dropped() {
        // Tight Gumbel x Normal cloud with one far outlier.
        let dist = crate::models::ScenarioDistribution::Product {
            components: vec![
                crate::models::ScenarioDistribution::Gumbel {
                    location: 0.0,
                    scale: 0.3,
                },
                crate::models::ScenarioDistribution::Gaussian {
                    mu: vec![0.0],
                    sigma: vec![vec![0.09]],
                },
            ],
        };
        let mut x = crate::models::draw_scenario(&dist, 400, 17).unwrap();
        x[(0, 0)] = 2.0;
        x[(0, 1)] = 0.0;
        let f_kde = KdeNd::fit(&x).unwrap();
        let cfg = TruncationConfig {
            nu: 0.16,
            min_retained: 2,
        };
        let theta = 400f64.powf(-0.16);
        assert!(f_kde.eval(&[2.0, 0.0]).unwrap() < theta);
        let model = fit_instrumental(&x).unwrap();
        let outcome = truncate_samples(&x, &x, &f_kde, &model, &cfg).unwrap();
        assert!(!outcome.kept_x.contains(&0));
    }

    #[test]
    fn floor_violation_reported_for_far_points() {
        let ctx = gaussian_pair_context(200, 2, EvalMode::Exact);
        let err = ctx.density_ratio(&[1.0, 0.0], &[60.0, 0.0]);
        assert!(matches!(err, Err(Error::FloorViolation { .. })));
    }
}
