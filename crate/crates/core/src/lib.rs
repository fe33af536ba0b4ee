//! Tamed-adaptive Milstein approximation of scalar SDEs
//! `dX = μ(X) dt + σ(X) dW` whose coefficient derivatives are only locally
//! Hölder continuous, with the Monte Carlo tooling used to measure its strong
//! L2 convergence rate and compare it with the fixed-step tamed Milstein
//! scheme.
//!
//! Modules, bottom-up:
//! - [`model`]: coefficients, benchmark models and assumption checks.
//! - [`scheme`]: taming, the adaptive step function and the steppers.
//! - [`driver`]: seeded noise and the coupled fine/coarse Brownian driver.
//! - [`montecarlo`]: MSE(k), moments and step counts.
//! - [`analysis`]: log2-regression rate fits and scheme comparison.
//! - [`experiment`]: experiment configuration and file output.

pub mod analysis;
pub mod driver;
pub mod error;
pub mod experiment;
pub mod model;
pub mod montecarlo;
pub mod scheme;
pub mod sum;

pub use analysis::{compare_schemes, fit_convergence_rate, ComparisonRecord, RateFit};
pub use driver::{simulate_coupled_pair, CoupledSample, CouplingParams, NoiseSource, Scheme};
pub use error::{Error, Result};
pub use model::{RegularityConstants, SdeModel};
pub use montecarlo::{estimate_moment, estimate_mse, mean_step_count, MseRow};
pub use scheme::{simulate_path, SchemeConfig, Trajectory};
