//! Handcrafted forgery cues (wavelet-denoised, LBP and phase-only maps), a
//! two-input learnable fusion block, and a small training and evaluation
//! harness around them.

pub mod augment;
pub mod cue;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod lbp;
pub mod nn;
pub mod phase;
pub mod tensor;
pub mod wavelet;

pub use cue::{extract, CueChannel, CueKind};
pub use error::{Error, Result};
pub use fusion::{count_additional_params, FusionBlock, FusionBlockParams, FusionVariant};
pub use tensor::ImageTensor;
