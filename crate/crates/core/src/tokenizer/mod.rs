//! Motion tokenizers: the VQ-VAE and the uniform binning baseline.

pub mod binning;
mod codebook;
mod vqvae;

pub use binning::BinningScheme;
pub use codebook::{nearest, Codebook, EmaConfig, EmaStats};
pub use vqvae::{Normalizer, SequenceForward, VqConfig, VqLossReport, VqStepLog, VqTrainConfig, VqVae};
