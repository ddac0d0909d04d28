//! Projection pursuit density estimation through Φ-divergence minimisation.
//!
//! Starting from an elliptical instrumental density with the data's mean and
//! covariance, the algorithm repeatedly finds the direction along which a
//! multiplicative marginal correction best reduces a Φ-divergence to the
//! data density, corrects the instrumental density along it, and stops when
//! a normalized test statistic says the remaining divergence is zero. The
//! extracted directions expose the non-elliptical structure of the data and
//! feed a copula goodness-of-fit test and a regression shortcut.
//!
//! Modules follow the pipeline: [`divergence`] defines the convex functions,
//! [`models`] the elliptical laws and scenario samplers, [`kde`] the kernel
//! estimates, [`dual`] the two-sample divergence criterion, [`anneal`] the
//! sphere optimizer, [`pursuit`] the iterate-test-stop loop and [`inference`]
//! the tests and regression built on top.

pub mod anneal;
pub mod divergence;
pub mod dual;
pub mod error;
pub mod inference;
pub mod kde;
pub mod models;
pub mod pursuit;
pub mod stats;

pub use anneal::{anneal_minimize, canonicalize, AnnealConfig, Direction};
pub use divergence::{divergence_quadrature, DivergenceKind, DivergenceSpec, QuadGrid};
pub use dual::{DualContext, TruncationConfig};
pub use error::{Error, Result};
pub use inference::{
    copula_gof, ellipsoid_membership, least_squares, pursuit_regression, stopping_test,
    CopulaReport, RegressionReport, TestReport, TestSettings,
};
pub use kde::{project_and_fit, scott_bandwidth, Kde1d, KdeNd};
pub use models::{
    draw_scenario, fit_instrumental, EllipticalModel, Generator, Margin, ScenarioDistribution,
};
pub use pursuit::{
    pursuit_step, run_pursuit, PursuitConfig, PursuitLevel, PursuitModel, PursuitResult,
};

// Re-exported for downstream matrix plumbing.
pub use nalgebra;
