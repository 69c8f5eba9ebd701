//! Loop-closure detection from fused geometric and salient visual words.

pub mod api;
pub mod config;
pub mod eval;
pub mod geom;
pub mod ingest;
pub mod loopdet;
pub mod pipeline;
pub mod salient;
pub mod types;
pub mod vocab;

pub use types::*;
