//! Panoptic edge toolkit.
//!
//! Label encoding, ground-truth edge generation, center/offset training
//! targets, the center/offset fusion step, multi-task losses with analytic
//! gradients, criss-cross attention, edge panoptic quality, synthetic scenes
//! and the on-disk tensor container.

pub mod edgegen;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod label;
pub mod metrics;
pub mod numerics;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
pub use grid::Grid;
pub use label::{CategoryTaxonomy, PanopticEdgeLabel, PanopticEdgeMap, PanopticSegMap, SemanticEdgeMap};
