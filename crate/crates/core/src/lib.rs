//! Hierarchical CoCoA: communication-efficient training of regularized
//! linear models across nodes that each drive several compute devices.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is also what files and the wire
//! protocol use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cocoa;
pub mod comm;
pub mod error;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod solver;
pub mod sparse;
pub mod synth;

pub use cocoa::{ConvergenceTrace, HierarchyConfig, StopCriteria, StopReason};
pub use error::{Error, Result};
pub use model::Model;
pub use objective::ObjectiveKind;
pub use scalar::Scalar;

pub type SparseMatrix = sparse::SparseColumnMatrix<f64>;
pub type SparseMatrixF32 = sparse::SparseColumnMatrix<f32>;
pub type Objective = objective::Objective<f64>;
pub type ObjectiveF32 = objective::Objective<f32>;
pub type Engine = cocoa::Engine<f64>;
pub type EngineF32 = cocoa::Engine<f32>;
pub type RateParams = analysis::RateParams<f64>;
