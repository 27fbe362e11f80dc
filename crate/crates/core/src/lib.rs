//! Numerical laboratory for score-based generative models on data supported
//! on low-dimensional sets.
//!
//! The crate evaluates exact marginal densities and scores of forward SDEs
//! started in Gaussian-mixture or point-cloud data, simulates forward and
//! reverse-time Euler–Maruyama ensembles under drift perturbations, and
//! audits those ensembles: Girsanov log-weights, Novikov integrals, drift
//! error functionals, optimal Gaussian priors with their KL bound, support
//! distances, kernel density fields and the small-time score explosion.
//!
//! Module map:
//!
//! * [`measures`] point clouds and Gaussian mixtures, sampling, JSON form
//! * [`sde`] Brownian, Ornstein–Uhlenbeck and critically damped Langevin
//!   dynamics with their Gaussian transition kernels
//! * [`score`] log-densities, scores, perturbations and reverse drifts
//! * [`integrate`] step schedules and seeded path ensembles
//! * [`girsanov`] log-weights, Novikov estimates, path losses, drift distances
//! * [`prior`] optimal Gaussian priors, KL bounds and KL estimates
//! * [`metrics`] nearest distances, KDE fields, explosion slopes, De Bruijn
//! * [`scenario`] JSON scenario runner behind the `sgmlab` binary

pub mod error;
pub mod girsanov;
pub mod integrate;
pub mod linalg;
pub mod measures;
pub mod metrics;
pub mod prior;
pub mod quadrature;
pub mod rng;
pub mod scenario;
pub mod score;
pub mod sde;
pub mod stats;

pub use error::{Result, SgmError};
pub use integrate::{Direction, PathEnsemble, StepSchedule};
pub use measures::{GaussianMixture, Measure, MixtureComponent, PointCloud};
pub use score::DriftPerturbation;
pub use sde::{SdeKind, SdeSpec, TransitionKernel};
