//! Minimal forcing subset explanations for binary classifiers.
//!
//! Given a trained logistic model and a decision at a test point, this crate
//! finds a small ordered set of training instances whose removal flips that
//! decision. The search alternates a constrained counterfactual solve with
//! greedy instance selection, using either one-step Newton updates or exact
//! retraining, and ships with dataset generators, a debugging/poisoning
//! harness, and a verifier for the removal-effect stability bound.

// Hyperparameter guards use negated comparisons so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub mod mfs;
pub mod model;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Claim, Dataset, Instance, ModelParams};
