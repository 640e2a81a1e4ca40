//! Sieve maximum kernel-weighted log-likelihood estimation (SMKLE) for
//! Box-Cox transformed hazards models with sparse, intermittently observed
//! longitudinal covariates.
//!
//! The hazard is modeled as `G(lambda(t | Z(t))) = alpha(t) + beta' Z(t)`
//! with a known Box-Cox transformation `G`. The baseline `alpha(t)` is
//! approximated in a B-spline sieve, and the log-likelihood is kernel
//! weighted so that only covariate measurements close in time to where the
//! hazard is evaluated contribute. The crate provides:
//!
//! - dataset ingestion and validation ([`data`]),
//! - the kernel, spline, and transform building blocks ([`kernel`],
//!   [`spline`], [`transform`]),
//! - the weighted log-likelihood, its gradient, and a slow quadrature
//!   oracle ([`likelihood`]),
//! - fitting, bandwidth cross-validation, sandwich variances, Wald tests,
//!   BIC and the Cauchy combination test ([`estimator`]),
//! - a simulation harness with an LVCF baseline for Monte Carlo studies
//!   ([`simulate`]).
//!
//! The `hazardsieve` binary wires these into `fit`, `cv`, `simulate`,
//! `replicate` and `combine-pvalues` subcommands.

pub mod cli;
pub mod data;
pub mod estimator;
pub mod kernel;
pub mod likelihood;
pub mod linalg;
mod optimize;
pub mod quad;
pub mod simulate;
pub mod spline;
pub mod transform;

pub use data::{Dataset, Measurement, Subject, ValidationReport};
pub use estimator::{Bandwidth, CvReport, FitConfig, FitResult, Init};
pub use kernel::Kernel;
pub use likelihood::{LikelihoodTerms, QuadratureRule, SieveParams};
pub use simulate::{McReport, SimConfig};
pub use spline::SplineBasis;
pub use transform::BoxCox;
