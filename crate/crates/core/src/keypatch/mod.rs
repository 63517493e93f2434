//! Ground-truth key-patch maps from binary lesion masks.
//!
//! Boundary pixels are scored by how far the lesion fraction of a disc around
//! them departs from one half. Local maxima along each contour are kept and
//! the patches containing them are marked.

mod contour;
mod generator;
mod mask;

use thiserror::Error;

pub use contour::{is_boundary_pixel, trace_boundary, Contour, PixelPos};
pub use generator::{
    circle_proportion, generate_keypatch_map, nms_filter, score_boundary, to_patch_index, BoundaryPoint,
    GeneratorConfig, KeyPatchMap,
};
pub use mask::BinaryMask;

#[derive(Debug, Error)]
pub enum KeypatchError {
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("invalid key-patch map: {0}")]
    InvalidMap(String),
}
