//! Graph-guided feature transfer for cold-start video click-through-rate
//! prediction.
//!
//! The pipeline: build a heterogeneous video/attribute graph
//! ([`graph`], [`linkage`]), pre-sample bounded neighborhoods for cold videos
//! ([`sampler`]), train the transfer network ([`model`], [`train`]), then
//! evaluate ([`eval`]) or serve ([`serving`]) it.

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod graph;
pub mod linkage;
pub mod model;
pub mod sampler;
pub mod serving;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
