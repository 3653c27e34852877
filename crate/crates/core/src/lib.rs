//! Patch-based retinal vessel segmentation with selective cross-domain
//! instance transfer.
//!
//! The pipeline: preprocess green-channel images (standardize, CLAHE,
//! gamma), crop patches over a stride grid, train a small encoder/decoder
//! network whose channel-reduced deepest layer doubles as an image
//! embedding, cluster embeddings with picture-level seeds, vote per patch
//! on which source images to transfer into training, and evaluate stitched
//! probability maps with Acc/Sen/Spe/AUC.
//!
//! With the default `parallel` feature, per-patch prediction, latent
//! extraction, and batch gradients fan out over rayon; results are
//! reduced in input order, so outputs are identical to the sequential
//! build.

pub mod cli;
pub mod drunet;
pub mod error;
pub mod eval;
pub mod imgio;
mod par;
pub mod patchwork;
pub mod preprocess;
pub mod tensor;
pub mod transfer;

pub use error::{Error, Result};
