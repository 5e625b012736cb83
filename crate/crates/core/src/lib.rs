//! 2D-to-3D knowledge transfer for point-cloud segmentation, desk scale.
//!
//! The pipeline lifts RGB-D frames into point clouds ([`geom`]),
//! voxelizes them ([`cloud`]), pre-trains a sparse-voxel encoder-decoder
//! ([`net`]) on soft pseudo-labels from a pluggable 2D teacher
//! ([`distill`]), and fine-tunes under limited-annotation or
//! limited-reconstruction budgets ([`bench`]), optionally with
//! semi-supervised losses ([`semi`]). Everything is deterministic given
//! its seeds.

pub mod bench;
pub mod cloud;
pub mod distill;
pub mod error;
pub mod geom;
pub mod net;
pub mod seed;
pub mod semi;

pub use error::{Error, Result};
