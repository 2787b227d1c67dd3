//! Weakly supervised top-down saliency from image-level labels.
//!
//! A linear classifier over spatially pooled CNN feature maps is trained per
//! category; its score is attributed back to the feature cells that won the
//! pooling slots, fused with a bottom-up prior, used to train a per-feature
//! classifier, and refined at pixel resolution.

pub mod backtrack;
pub mod bu;
#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod featsal;
pub mod inference;
pub mod io;
pub mod manifest;
pub mod map;
pub mod metrics;
pub mod pooling;
pub mod refine;
pub mod svm;
pub mod synth;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use inference::{ImageInput, ModelBundle, SaliencyEngine};
pub use map::{FeatureMap, Mask, PixelBox, RgbImage, SaliencyMap};
