//! Generation and evaluation of multiple-choice portfolio-allocation
//! questions.
//!
//! Each question asks for the best portfolio under one of five objectives,
//! optionally with weight bounds or an asset-count requirement. The correct
//! choice is computed by [`optimizer::solve`] and certified against a grid
//! search; the three wrong choices are feasible portfolios that are strictly
//! worse by a margin, picked by one of four distractor methods.
//!
//! The pipeline is:
//!
//! 1. [`market_data`] loads prices and turns a window into a returns matrix.
//! 2. [`optimizer`] finds the optimum for the objective and constraints.
//! 3. [`distractor`] samples feasible candidates and filters them.
//! 4. [`question`] rounds, shuffles, validates and serializes questions.
//! 5. [`eval`] runs answer-choosing clients and aggregates accuracy.

pub mod distractor;
pub mod error;
pub mod eval;
pub mod market_data;
pub mod metrics;
pub mod optimizer;
pub mod question;
pub mod seed;

pub use error::{Error, Result};
pub use market_data::{PriceTable, ReturnsMatrix};
pub use metrics::{ObjectiveKind, ObjectiveSpec, Portfolio};
pub use optimizer::{ConstraintSet, SolveReport};
