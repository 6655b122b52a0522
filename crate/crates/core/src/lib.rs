//! Multi-embodiment motion tokenization and instruction-tuned sequence modelling.

pub mod error;
pub mod eval;
pub mod io;
pub mod lm;
pub mod motion;
pub mod pipeline;
pub mod nn;
pub mod template;
pub mod tokenizer;
pub mod vocab;

pub use error::{Error, Result};
