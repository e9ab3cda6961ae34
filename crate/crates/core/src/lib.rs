//! Redaction by segmentation: privacy-attribute masks, superpixel-based
//! redaction scaling, text-attribute rules, and the segmentation and
//! privacy-utility evaluation protocols.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod mask;
pub mod render;
pub mod scaling;
pub mod study;
pub mod superpixel;
pub mod taxonomy;
pub mod text;

pub use error::{Error, Result};
pub use mask::{BinaryMask, RleMask, ScoreMask};
pub use taxonomy::{Attribute, Category};
