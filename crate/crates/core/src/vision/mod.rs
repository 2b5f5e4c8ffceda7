//! Pixel-level primitives: corners, pyramids, Lucas-Kanade tracking,
//! binary morphology and ZNCC template matching.

pub mod corners;
pub(crate) mod filters;
pub mod lk;
pub mod morphology;
pub mod ncc;
pub mod pyramid;
pub mod template;

pub use corners::{min_eigen_map, shi_tomasi, Corner, CornerParams};
pub use lk::{lk_track, LkParams, TrackResult};
pub use morphology::{connected_components, dilate_mask, BinaryMask, Component};
pub use ncc::{match_template, MatchResult, NccTarget};
pub use pyramid::{build_pyramid, Pyramid};
pub use template::{extract_templates, Template, TemplateParams};
