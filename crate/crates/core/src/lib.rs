//! Whole-slide image stitching from simulated microscope video.
//!
//! Stage one estimates one translation per consecutive frame pair
//! ([`pairwise`]) and integrates them into an approximate stitch. Stage two
//! ([`graph`]) links frames that the approximate stitch places near each
//! other, measures their offsets by template matching, prunes the resulting
//! multigraph down to consistent edges and solves a least-squares problem for
//! the final frame coordinates.

pub mod compositor;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod pairwise;
pub mod pipeline;
pub mod simulator;
pub mod types;
pub mod vision;

pub use error::{Error, Result};
pub use types::{
    compose_coords, CoordinateSet, FrameSequence, GrayImage, Point2, Translation2D,
};
