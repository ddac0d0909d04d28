//! Simulated annealing over the unit sphere, with a canonical sign
//! convention so that a direction and its negative are the same point.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-norm direction with the largest-magnitude coordinate positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    coords: Vec<f64>,
}

impl Direction {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn axis(d: usize, index: usize) -> Self {
        let mut coords = vec![0.0; d];
        coords[index] = 1.0;
        Direction { coords }
    }

    /// Angle to another direction in degrees, ignoring orientation.
    pub fn angle_degrees(&self, other: &Direction) -> f64 {
        let dot: f64 = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a * b)
            .sum();
        dot.abs().clamp(0.0, 1.0).acos().to_degrees()
    }
}

/// Normalize to the unit sphere and flip the sign so that the coordinate of
/// largest magnitude (first such, on ties) is positive. Idempotent.
pub fn canonicalize(v: &[f64]) -> Result<Direction> {
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroDirection);
    }
    // Skip the division for vectors already on the sphere so that
    // canonicalizing twice is bitwise idempotent.
    let mut coords: Vec<f64> = if (norm - 1.0).abs() <= 1e-12 {
        v.to_vec()
    } else {
        v.iter().map(|c| c / norm).collect()
    };
    let mut dominant = 0;
    for (i, c) in coords.iter().enumerate() {
        if c.abs() > coords[dominant].abs() {
            dominant = i;
        }
    }
    if coords[dominant] < 0.0 {
        for c in &mut coords {
            *c = -*c;
        }
    }
    Ok(Direction { coords })
}

/// Annealing schedule. The criterion surface gives no gradients, so the
/// search is a plain Metropolis walk with geometric cooling and restarts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub steps: usize,
    pub restarts: usize,
    pub initial_temperature: f64,
    pub cooling_factor: f64,
    pub proposal_stddev: f64,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            restarts: 4,
            initial_temperature: 1.0,
            cooling_factor: 0.995,
            proposal_stddev: 0.3,
            seed: 0,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Param("annealing needs at least one step".to_string()));
        }
        if !(self.cooling_factor > 0.0 && self.cooling_factor < 1.0) {
            return Err(Error::Param(format!(
                "cooling factor must lie in (0,1), got {}",
                self.cooling_factor
            )));
        }
        if !(self.initial_temperature > 0.0) || !(self.proposal_stddev > 0.0) {
            return Err(Error::Param(
                "temperature and proposal stddev must be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// Scaled-down schedule for the local witness search inside the
    /// stopping test.
    pub fn scaled(&self, fraction: f64) -> Self {
        Self {
            steps: ((self.steps as f64 * fraction).ceil() as usize).max(10),
            restarts: 1,
            ..self.clone()
        }
    }
}

/// Outcome of one annealing run.
#[derive(Debug, Clone)]
pub struct AnnealOutcome {
    pub best: Direction,
    pub value: f64,
    /// Best-so-far value per accepted improvement: (step, value).
    pub trace: Vec<(usize, f64)>,
}

/// Minimize a direction objective over the unit sphere.
///
/// Restarts run sequentially with derived seeds; the reported minimum is the
/// best across restarts with a lexicographic tie-break on coordinates, so
/// the result is fully deterministic given the config seed.
pub fn anneal_minimize<F>(objective: F, d: usize, cfg: &AnnealConfig) -> Result<AnnealOutcome>
where
    F: Fn(&Direction) -> f64,
{
    anneal_minimize_seeded(objective, d, cfg, None)
}

/// Same as [`anneal_minimize`] but the first restart starts from `start`
/// instead of a random point.
pub fn anneal_minimize_seeded<F>(
    objective: F,
    d: usize,
    cfg: &AnnealConfig,
    start: Option<&Direction>,
) -> Result<AnnealOutcome>
where
    F: Fn(&Direction) -> f64,
{
    cfg.validate()?;
    if d == 0 {
        return Err(Error::Param("dimension must be at least 1".to_string()));
    }
    let restarts = cfg.restarts.max(1);
    let mut best: Option<AnnealOutcome> = None;
    for restart in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(restart as u64),
        );
        let init = match (restart, start) {
            (0, Some(dir)) => dir.clone(),
            _ => random_direction(d, &mut rng),
        };
        let outcome = single_run(&objective, init, cfg, &mut rng);
        best = Some(match best {
            None => outcome,
            Some(prev) => pick_better(prev, outcome),
        });
    }
    Ok(best.expect("at least one restart"))
}

fn pick_better(a: AnnealOutcome, b: AnnealOutcome) -> AnnealOutcome {
    if b.value < a.value {
        return b;
    }
    if b.value == a.value {
        // Deterministic tie-break.
        let swap = b
            .best
            .coords()
            .iter()
            .zip(a.best.coords())
            .find_map(|(x, y)| {
                if x < y {
                    Some(true)
                } else if x > y {
                    Some(false)
                } else {
                    None
                }
            })
            .unwrap_or(false);
        if swap {
            return b;
        }
    }
    a
}

fn random_direction<R: Rng>(d: usize, rng: &mut R) -> Direction {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(dir) = canonicalize(&v) {
            return dir;
        }
    }
}

fn single_run<F, R>(objective: &F, init: Direction, cfg: &AnnealConfig, rng: &mut R) -> AnnealOutcome
where
    F: Fn(&Direction) -> f64,
    R: Rng,
{
    let d = init.dim();
    let mut current = init;
    let mut current_value = objective(&current);
    let mut best = current.clone();
    let mut best_value = current_value;
    let mut trace = vec![(0usize, best_value)];
    let mut temperature = cfg.initial_temperature;
    for step in 1..=cfg.steps {
        // Tangent Gaussian proposal, shrinking with the temperature.
        let scale = cfg.proposal_stddev * (temperature / cfg.initial_temperature).sqrt();
        let noise: Vec<f64> = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect();
        let dot: f64 = noise
            .iter()
            .zip(current.coords())
            .map(|(n, c)| n * c)
            .sum();
        let proposal_raw: Vec<f64> = current
            .coords()
            .iter()
            .zip(&noise)
            .map(|(c, n)| c + (n - dot * c))
            .collect();
        let Ok(proposal) = canonicalize(&proposal_raw) else {
            temperature *= cfg.cooling_factor;
            continue;
        };
        let proposal_value = objective(&proposal);
        let accept = proposal_value <= current_value || {
            let u: f64 = rng.random();
            u < ((current_value - proposal_value) / temperature).exp()
        };
        if accept {
            current = proposal;
            current_value = proposal_value;
            if current_value < best_value {
                best = current.clone();
                best_value = current_value;
                trace.push((step, best_value));
            }
        }
        temperature *= cfg.cooling_factor;
    }
    AnnealOutcome {
        best,
        value: best_value,
        trace,
    }
}

/// Maximize by minimizing the negated objective.
pub fn anneal_maximize_seeded<F>(
    objective: F,
    d: usize,
    cfg: &AnnealConfig,
    start: Option<&Direction>,
) -> Result<AnnealOutcome>
where
    F: Fn(&Direction) -> f64,
{
    let outcome = anneal_minimize_seeded(|dir| -objective(dir), d, cfg, start)?;
    Ok(AnnealOutcome {
        best: outcome.best,
        value: -outcome.value,
        trace: outcome.trace.into_iter().map(|(s, v)| (s, -v)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalize_examples() {
        let d = canonicalize(&[0.0, -3.0, 0.0]).unwrap();
        assert_eq!(d.coords(), &[0.0, 1.0, 0.0]);

        let d = canonicalize(&[2.0, 2.0, 0.0]).unwrap();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d.coords()[0] - inv_sqrt2).abs() < 1e-15);
        assert!((d.coords()[1] - inv_sqrt2).abs() < 1e-15);

        assert!(canonicalize(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let v = [0.3, -0.8, 0.1, 0.6];
        let once = canonicalize(&v).unwrap();
        let twice = canonicalize(once.coords()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn smooth_bowl_is_found() {
        let cfg = AnnealConfig {
            seed: 42,
            ..AnnealConfig::default()
        };
        let objective =
            |dir: &Direction| 1.0 - dir.coords()[0] * dir.coords()[0];
        let outcome = anneal_minimize(objective, 3, &cfg).unwrap();
        let e1 = Direction::axis(3, 0);
        assert!(
            outcome.best.angle_degrees(&e1) < 2.0,
            "found {:?}",
            outcome.best
        );
    }

    #[test]
    fn identical_seeds_identical_runs() {
        let cfg = AnnealConfig {
            steps: 300,
            seed: 9,
            ..AnnealConfig::default()
        };
        let objective = |dir: &Direction| (dir.coords()[0] - 0.5).powi(2);
        let a = anneal_minimize(objective, 4, &cfg).unwrap();
        let b = anneal_minimize(objective, 4, &cfg).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.value, b.value);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn trace_is_monotone_and_points_stay_on_sphere() {
        let cfg = AnnealConfig {
            steps: 500,
            seed: 3,
            ..AnnealConfig::default()
        };
        let objective = |dir: &Direction| {
            let norm: f64 = dir.coords().iter().map(|c| c * c).sum::<f64>();
            assert!((norm - 1.0).abs() < 1e-12);
            dir.coords()[1].powi(2) + 0.3 * dir.coords()[2].powi(2)
        };
        let outcome = anneal_minimize(objective, 3, &cfg).unwrap();
        for pair in outcome.trace.windows(2) {
            assert!(pair[1].1 <= pair[0].1);
            assert!(pair[1].0 >= pair[0].0);
        }
    }

    #[test]
    fn matches_grid_search_in_2d() {
        let objective = |dir: &Direction| {
            let theta = dir.coords()[1].atan2(dir.coords()[0]);
            (theta - 0.7).sin().powi(2) + 0.2 * (3.0 * theta).cos()
        };
        let cfg = AnnealConfig {
            seed: 17,
            ..AnnealConfig::default()
        };
        let outcome = anneal_minimize(objective, 2, &cfg).unwrap();
        let mut grid_best = f64::INFINITY;
        for i in 0..720 {
            let theta = std::f64::consts::PI * (i as f64) / 720.0;
            let dir = canonicalize(&[theta.cos(), theta.sin()]).unwrap();
            grid_best = grid_best.min(objective(&dir));
        }
        assert!(outcome.value <= grid_best + 1e-3);
    }

    #[test]
    fn seeded_start_is_used() {
        let cfg = AnnealConfig {
            steps: 10,
            restarts: 1,
            proposal_stddev: 1e-9,
            seed: 1,
            ..AnnealConfig::default()
        };
        let start = canonicalize(&[0.6, 0.8]).unwrap();
        let outcome =
            anneal_minimize_seeded(|_d: &Direction| 1.0, 2, &cfg, Some(&start)).unwrap();
        assert!(outcome.best.angle_degrees(&start) < 1e-3);
    }
}
