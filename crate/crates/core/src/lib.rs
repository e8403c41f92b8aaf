//! Semiparametric estimation and specification testing for linear panel
//! models whose unobserved factor structure is left unspecified.
//!
//! The model is `y_it = x_it'β + g(w_it) + ε_it`, where the nuisance `g`
//! absorbs the factor component through a set of control covariates `w`.
//! The crate provides
//!
//! - [`panel`]: balanced-panel storage and CSV ingestion,
//! - [`kernels`]: the Epanechnikov kernel and bandwidth rules,
//! - [`smoother`]: pooled local-linear regression and the `(I - S)` transform,
//! - [`estimator`]: profile least squares for `β`, the feasible `ĝ`, and
//!   the pooled comparators,
//! - [`spec_test`]: the kernel U-statistic test of conditional mean independence,
//! - [`bootstrap`]: the per-unit wild bootstrap,
//! - [`simulation`]: a Monte Carlo harness with bias/RMSE, size and power tables,
//! - [`cli`]: the `panelfactor` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod cli;
pub mod comparators;
pub mod error;
pub mod estimator;
pub mod kernels;
pub mod linalg;
pub mod panel;
pub mod rng;
pub mod simulation;
pub mod smoother;
pub mod spec_test;

pub use bootstrap::{run_bootstrap, BootstrapPlan, BootstrapReport};
pub use error::{Error, Result};
pub use estimator::{fit, g_curve, FitResult, GCurve, GCurveMethod};
pub use kernels::BandwidthSpec;
pub use panel::{ColumnMapping, PanelDataset};
pub use spec_test::{run_test, SpecTestResult};
