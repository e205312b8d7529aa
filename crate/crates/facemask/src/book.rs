//! The guide's chapters (`book/src/*.md`), included as module docs so that
//! `cargo test` compiles and runs every code snippet in the book. Each
//! chapter is its own module purely so a failing snippet names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/images-and-datasets.md")]
pub mod images_and_datasets {}

#[doc = include_str!("../../../book/src/augmentation.md")]
pub mod augmentation {}

#[doc = include_str!("../../../book/src/backbones-and-embeddings.md")]
pub mod backbones_and_embeddings {}

#[doc = include_str!("../../../book/src/classifier-head.md")]
pub mod classifier_head {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/inference.md")]
pub mod inference {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
