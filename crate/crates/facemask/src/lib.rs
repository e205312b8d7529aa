//! A self-contained face-mask classification pipeline: seeded image
//! augmentation, frozen feature backbones (a built-in convolutional network
//! or precomputed embedding files), a hand-written trainable classifier
//! head, an exact classification-metrics suite, and bounding-box overlay
//! inference — plus the `facemask` binary that chains the stages.
//!
//! The guide under `book/` walks through each stage; its code snippets
//! compile and run as part of this crate's test suite.

pub mod augment;
pub mod backbone;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod image;
pub mod infer;
pub mod metrics;
pub mod nnhead;
pub mod train;

#[cfg(doctest)]
mod book;

pub use dataset::{DatasetManifest, Label, ManifestRecord, Split};
pub use error::{Error, Result};
pub use image::ImageBuffer;
