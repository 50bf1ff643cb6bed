//! Patch-grid tumor detection with a trainable fully-connected CRF.
//!
//! A small convolutional extractor embeds each patch of a g-by-g super-patch;
//! a pairwise CRF over the grid couples patch labels through weighted cosine
//! distances of the embeddings, and unrolled mean-field inference turns the
//! CRF into a differentiable layer so the whole model trains end-to-end. The
//! surrounding pipeline (synthetic slides, tissue masking, patch sampling,
//! probability maps, non-maximum suppression, FROC scoring) makes the
//! CRF-vs-baseline comparison runnable on a desktop CPU.

pub mod error;
pub mod checkpoint;
pub mod crf;
pub mod commands;
pub mod config;
pub mod detect;
pub mod extractor;
pub mod metrics;
pub mod model;
pub mod slides;
pub mod train;
pub mod numerics;

pub use error::{NcrfError, Result};
