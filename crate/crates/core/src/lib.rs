//! Adaptive dyadic refinement for sparse spike recovery with total-variation
//! regularization.
//!
//! The unknown is a signed measure on `[0,1]^D` observed through Gaussian
//! measurements. Instead of solving the infinite-dimensional problem directly,
//! [`refinement::run`] solves a sequence of LASSO problems on the vertices of
//! a dyadic partition and refines only the cells where a Taylor bound on the
//! dual certificate says the constraint `|A*q| <= 1` could be violated.
//!
//! ```
//! use tvrefine::experiments::make_problem_1d;
//! use tvrefine::refinement::{run, RunConfig};
//! use tvrefine::selection::SelectionRule;
//!
//! let problem = make_problem_1d();
//! let config = RunConfig::new(problem.operator, problem.data, SelectionRule::second(), 8);
//! let log = run(&config).unwrap();
//! assert!(log.records.len() > 1);
//! ```

pub mod baseline;
pub mod error;
pub mod experiments;
pub mod geometry;
mod linalg;
pub mod operator;
pub mod refinement;
pub mod selection;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{CellPartition, DyadicCell, PointSet};
pub use operator::GaussianOperator;
pub use refinement::{run, RefinementLog, RunConfig};
pub use selection::SelectionRule;
pub use solver::{DiscreteMeasure, DualSolution};
