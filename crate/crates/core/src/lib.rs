//! Multi-annotator modeling for subjectively labeled text.
//!
//! Every annotator of a corpus is treated as a separate prediction target.
//! The crate provides the annotated corpus ([`corpus`]), a small
//! differentiable compute core with a trainable text encoder ([`nnkit`]),
//! the four model architectures (majority-label baseline, ensemble,
//! multi-label and multi-task, [`models`]), uncertainty estimators
//! ([`uncert`]) and the evaluation harness ([`eval`]).
//!
//! The final label of a multi-annotator model is the majority vote over the
//! predictions of all annotator slots; the variance of those predictions is
//! an uncertainty estimate that tracks how much human annotators disagree.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod models;
pub mod nnkit;
pub mod rng;
pub mod uncert;

pub use error::{Error, Result};
