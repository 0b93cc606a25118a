//! Curation-to-evaluation toolkit for dual-task airborne object analysis.
//!
//! The crate covers the whole offline pipeline:
//!
//! - [`types`]: label spaces, image records and the JSON Lines dataset manifest.
//! - [`curation`]: ingestion, deduplication, preprocessing to 32×32×3,
//!   stratified splitting and class balancing through augmentation.
//! - [`threat_rules`]: priority-ordered rules assigning Low/Medium/High threat levels.
//! - [`model`]: a dual-head convolutional network (category head + threat head)
//!   with hand-written forward and backward passes.
//! - [`training`]: Adam optimisation loop with per-epoch metrics and checkpoints.
//! - [`evaluation`]: confusion matrices, classification reports and curve plots.
//! - [`synth`]: a deterministic synthetic shape/hue dataset for testing.

pub mod curation;
pub mod error;
pub mod evaluation;
pub mod model;
pub(crate) mod seed;
pub mod synth;
pub mod tensor;
pub mod threat_rules;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use tensor::NumericArray;
pub use types::{
    CategoryLabel, DatasetManifest, ImageRecord, LabelSpace, Provenance, Split, ThreatLevel,
};

/// Side length of preprocessed images.
pub const IMAGE_SIZE: usize = 32;
/// Channels of preprocessed images.
pub const IMAGE_CHANNELS: usize = 3;
