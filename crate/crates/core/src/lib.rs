//! Self-supervised monocular depth estimation from event cameras.
//!
//! A depth network consumes spatiotemporal voxel grids built from event
//! windows; during training a pose network and aligned intensity frames
//! provide a view-synthesis consistency signal. At inference only events
//! are needed.

pub mod data;
pub mod error;
pub mod eval;
pub mod events;
pub mod geometry;
pub mod models;
pub mod ops;
pub mod photometric;
pub mod train;

pub use error::{Error, Result};
