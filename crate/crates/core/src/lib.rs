//! Randomized regression trees with exact selective inference for the
//! means of their terminal regions.
//!
//! Trees are grown by CART with Gaussian noise added to every candidate's
//! gain. Because the noise is external and Gaussian, the probability of the
//! observed splits given the data has a closed form, and conditioning on it
//! yields exact pivots, p-values and confidence intervals for leaf means.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod error;
pub mod grow;
pub mod inference;
pub mod io;
pub mod model;
pub mod normal;
pub mod par;
pub mod quadrature;
pub mod simlab;

pub use error::{Result, RrtError};
pub use grow::{grow, predict, GrowConfig, TauRule};
pub use inference::{PivotEvaluator, Variant};
pub use model::{build_target, Dataset, FittedTree, Region, SplitCandidate, StoppingRule};
