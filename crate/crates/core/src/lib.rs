//! Interactive language-grounded picking in a synthetic block world.
//!
//! A grounding network turns an image and a pickup command into a position
//! heatmap, Monte-Carlo dropout adds an uncertainty heatmap, and a question
//! network picks a clarifying question when the command is ambiguous. The
//! answer is appended to the command and the target is estimated again.

// `!(x >= 0.0)` rejects NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod blockworld;
pub mod checkpoint;
pub mod datagen;
pub mod dialogue;
pub mod error;
pub mod evaluation;
pub mod grounding;
pub mod heatmap;
pub mod inquiry;
pub mod language;
pub mod nn;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};

/// Single-precision instantiations used by the tools and the service.
pub type Real = f32;
pub type T2PModel = grounding::T2PModel<Real>;
pub type QgnModel = inquiry::QgnModel<Real>;
pub type BaselineModel = baseline::BaselineModel<Real>;
pub type Session = dialogue::Session<Real>;
pub type Heatmap = heatmap::Heatmap<Real>;
pub type UncertaintyEstimate = grounding::UncertaintyEstimate<Real>;
