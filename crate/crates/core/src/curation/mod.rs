//! Turning raw image directories into clean, split and balanced manifests.

pub mod augment;
pub mod balance;
pub mod ingest;
pub mod preprocess;
pub mod split;

pub use augment::{augment_image, AffineTransform, AugmentationParams, FillMode};
pub use balance::{balance_by_augmentation, BalanceReport};
pub use ingest::{dedupe, ingest_source, DedupeReport, IngestReport, SkippedFile, SourceSpec};
pub use preprocess::{load_image, load_preprocessed, preprocess_image, resize_bilinear};
pub use split::{stratified_split, train_count, SplitConfig};
