//! Sparse logistic regression for balanced case-control samples.
//!
//! The crate fits the l1-penalized prospective logistic likelihood by
//! coordinate descent, sketches the regularization path by bisection over
//! the penalty (one representative penalty per support size), selects the
//! model dimension by stratified cross-validation with a BIC-type term, and
//! ships a simulation harness for case-control experiments.

pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod path;
pub mod selection;
pub mod simulate;
pub mod solver;

pub use error::{Error, Result};
pub use model::{DataSlice, Dataset, ModelFit, Params};
pub use path::{bbm, gbm, grid_path, support_in_path, GridPath, PathSketch};
pub use selection::{select, SelectionConfig, SelectionResult};
pub use solver::{fit_l1_logistic, kkt_residual, SolverConfig};
