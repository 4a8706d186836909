//! Bot detection with text-graph interaction and attention-based semantic
//! consistency.
//!
//! The crate is layered bottom-up: [`numerics`] is a small dense tensor
//! engine with reverse-mode differentiation; [`data`] handles the dataset
//! schema and the synthetic benchmark; [`text`], [`graph`], [`interaction`]
//! and [`consistency`] are the model blocks; [`model`] assembles and trains
//! the detector; [`analysis`] runs experiments and produces reports.

pub mod analysis;
pub mod consistency;
pub mod data;
pub mod error;
pub mod graph;
pub mod interaction;
pub mod model;
pub mod numerics;
pub mod text;

pub use error::{BicError, Result};
