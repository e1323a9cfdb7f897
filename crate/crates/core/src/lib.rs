//! Precision-matrix estimation for observed-factor models by residual nodewise
//! regression, with portfolio constructors, Sharpe-ratio estimators, a Monte-Carlo
//! harness and a rolling-window backtester.

// `!(x > 0.0)` is used on purpose so that NaN lands on the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backtest;
pub mod csv_io;
pub mod error;
pub mod factor_model;
pub mod lasso;
pub mod linalg;
pub mod panel;
pub mod portfolio;
pub mod precision;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
pub use factor_model::{fit_ols, FactorModelFit};
pub use lasso::{FoldScheme, LassoPath, LassoProblem};
pub use panel::{FactorPanel, ReturnsPanel};
pub use precision::{NodewiseConfig, NodewisePrecision, ReturnsPrecision, Selector};
