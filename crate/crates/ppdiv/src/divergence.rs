//! The convex functions behind each supported Φ-divergence and a
//! deterministic quadrature oracle for Φ(Q, P) between explicit densities.
//!
//! A Φ-divergence is Φ(Q, P) = ∫ φ(q/p) p dx for a strictly convex φ with
//! φ(1) = 0. The members here are the classical Cressie-Read family:
//! relative entropy, Hellinger, χ² and the general power divergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    RelativeEntropy,
    Hellinger,
    ChiSquared,
    Power,
}

/// Which convex φ is in force, plus the exponent for the power family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    /// Exponent of the power family; ignored by the named members.
    pub gamma: f64,
}

/// φ(x), φ′(x) and the conjugate composite φ*(φ′(x)) at one point.
///
/// The conjugate term is computed through the Fenchel identity
/// φ*(φ′(x)) = x·φ′(x) − φ(x), exact for strictly convex differentiable φ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiEval {
    pub phi: f64,
    pub derivative: f64,
    pub conjugate: f64,
}

impl DivergenceSpec {
    pub fn relative_entropy() -> Self {
        Self {
            kind: DivergenceKind::RelativeEntropy,
            gamma: f64::NAN,
        }
    }

    pub fn hellinger() -> Self {
        Self {
            kind: DivergenceKind::Hellinger,
            gamma: f64::NAN,
        }
    }

    pub fn chi_squared() -> Self {
        Self {
            kind: DivergenceKind::ChiSquared,
            gamma: f64::NAN,
        }
    }

    /// Power divergence with exponent `gamma`; any γ ∉ {0, 1} is accepted.
    pub fn power(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma == 0.0 || gamma == 1.0 {
            return Err(Error::Param(format!(
                "power divergence requires a finite gamma outside {{0, 1}}, got {gamma}"
            )));
        }
        Ok(Self {
            kind: DivergenceKind::Power,
            gamma,
        })
    }

    /// Registry lookup shared by the CLI and config files.
    ///
    /// The L¹ divergence (φ(x) = |x − 1|) is part of the family on paper but
    /// is not differentiable at 1, so it cannot drive the dual estimator; the
    /// registry names it only to reject it with an explanation.
    pub fn from_name(name: &str, gamma: Option<f64>) -> Result<Self> {
        match name {
            "kl" => Ok(Self::relative_entropy()),
            "hellinger" => Ok(Self::hellinger()),
            "chi2" => Ok(Self::chi_squared()),
            "power" => {
                let gamma = gamma.ok_or_else(|| {
                    Error::Param("power divergence requires --gamma".to_string())
                })?;
                Self::power(gamma)
            }
            "l1" => Err(Error::Param(
                "the L1 divergence is not differentiable at 1 and cannot drive \
                 the dual estimator; choose kl, hellinger, chi2 or power"
                    .to_string(),
            )),
            other => Err(Error::Param(format!(
                "unknown divergence '{other}' (expected kl, hellinger, chi2 or power)"
            ))),
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            DivergenceKind::RelativeEntropy => "kl".to_string(),
            DivergenceKind::Hellinger => "hellinger".to_string(),
            DivergenceKind::ChiSquared => "chi2".to_string(),
            DivergenceKind::Power => format!("power({})", self.gamma),
        }
    }

    /// φ(x) alone, on the widest domain where it is finite.
    pub fn phi(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain { value: x, what: "phi" });
        }
        if x == 0.0 {
            return self.phi_at_zero();
        }
        Ok(match self.kind {
            DivergenceKind::RelativeEntropy => x * x.ln() - x + 1.0,
            DivergenceKind::Hellinger => {
                let s = x.sqrt() - 1.0;
                2.0 * s * s
            }
            DivergenceKind::ChiSquared => 0.5 * (x - 1.0) * (x - 1.0),
            DivergenceKind::Power => {
                let g = self.gamma;
                (x.powf(g) - g * x + g - 1.0) / (g * (g - 1.0))
            }
        })
    }

    /// The finite limit of φ at 0, where it exists.
    pub fn phi_at_zero(&self) -> Result<f64> {
        match self.kind {
            DivergenceKind::RelativeEntropy => Ok(1.0),
            DivergenceKind::Hellinger => Ok(2.0),
            DivergenceKind::ChiSquared => Ok(0.5),
            DivergenceKind::Power => {
                if self.gamma > 0.0 {
                    Ok(1.0 / self.gamma)
                } else {
                    Err(Error::Domain {
                        value: 0.0,
                        what: "phi of the power divergence with negative gamma",
                    })
                }
            }
        }
    }

    /// φ(x), φ′(x) and φ*(φ′(x)) together.
    ///
    /// x = 0 is accepted only where all three values are finite (χ² and the
    /// power family with γ > 1).
    pub fn eval(&self, x: f64) -> Result<PhiEval> {
        if !(x >= 0.0) {
            return Err(Error::Domain { value: x, what: "phi" });
        }
        if x == 0.0 {
            let ok_at_zero = matches!(self.kind, DivergenceKind::ChiSquared)
                || (self.kind == DivergenceKind::Power && self.gamma > 1.0);
            if !ok_at_zero {
                return Err(Error::Domain {
                    value: 0.0,
                    what: "phi derivative",
                });
            }
        }
        let phi = self.phi(x)?;
        let derivative = match self.kind {
            DivergenceKind::RelativeEntropy => x.ln(),
            DivergenceKind::Hellinger => 2.0 - 2.0 / x.sqrt(),
            DivergenceKind::ChiSquared => x - 1.0,
            DivergenceKind::Power => (x.powf(self.gamma - 1.0) - 1.0) / (self.gamma - 1.0),
        };
        // Fenchel identity; the only conjugate evaluation the estimator needs.
        let conjugate = x * derivative - phi;
        Ok(PhiEval {
            phi,
            derivative,
            conjugate,
        })
    }
}

/// Axis-aligned quadrature grid over one or two dimensions.
///
/// `counts` are Simpson panel node counts and must be odd and ≥ 3.
#[derive(Debug, Clone)]
pub struct QuadGrid {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub counts: Vec<usize>,
}

impl QuadGrid {
    pub fn line(lo: f64, hi: f64, count: usize) -> Self {
        Self {
            mins: vec![lo],
            maxs: vec![hi],
            counts: vec![count],
        }
    }

    pub fn rect(mins: [f64; 2], maxs: [f64; 2], counts: [usize; 2]) -> Self {
        Self {
            mins: mins.to_vec(),
            maxs: maxs.to_vec(),
            counts: counts.to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.mins.len();
        if d == 0 || d > 2 || self.maxs.len() != d || self.counts.len() != d {
            return Err(Error::Param(
                "quadrature grid must describe 1 or 2 axes with matching mins/maxs/counts"
                    .to_string(),
            ));
        }
        for axis in 0..d {
            if !(self.mins[axis] < self.maxs[axis]) {
                return Err(Error::Param(format!(
                    "quadrature axis {axis} has empty range"
                )));
            }
            if self.counts[axis] < 3 || self.counts[axis] % 2 == 0 {
                return Err(Error::Param(format!(
                    "quadrature axis {axis} needs an odd node count >= 3"
                )));
            }
        }
        Ok(())
    }

    fn nodes(&self, axis: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.counts[axis];
        let lo = self.mins[axis];
        let step = (self.maxs[axis] - lo) / (n - 1) as f64;
        (0..n).map(move |i| {
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (lo + step * i as f64, w * step / 3.0)
        })
    }
}

// Below this the reference density is treated as vanished; a compared density
// above `SUPPORT_TOL` there is an absolute-continuity violation.
const P_FLOOR: f64 = 1e-280;
const SUPPORT_TOL: f64 = 1e-12;

/// Deterministic Simpson quadrature of Φ(Q, P) = ∫ φ(q/p) p dx.
///
/// Test oracle only; the pursuit loop never calls this.
pub fn divergence_quadrature<Q, P>(
    spec: &DivergenceSpec,
    q: Q,
    p: P,
    grid: &QuadGrid,
) -> Result<f64>
where
    Q: Fn(&[f64]) -> f64,
    P: Fn(&[f64]) -> f64,
{
    grid.validate()?;
    let mut total = 0.0;
    let mut term = |x: &[f64], weight: f64| -> Result<()> {
        let pv = p(x);
        let qv = q(x);
        if pv <= P_FLOOR {
            if qv > SUPPORT_TOL {
                return Err(Error::Support {
                    at: x.to_vec(),
                    q: qv,
                });
            }
            return Ok(());
        }
        total += weight * pv * spec.phi(qv / pv)?;
        Ok(())
    };
    match grid.mins.len() {
        1 => {
            for (x, w) in grid.nodes(0) {
                term(&[x], w)?;
            }
        }
        2 => {
            let ys: Vec<(f64, f64)> = grid.nodes(1).collect();
            for (x, wx) in grid.nodes(0) {
                for &(y, wy) in &ys {
                    term(&[x, y], wx * wy)?;
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(total)
}
