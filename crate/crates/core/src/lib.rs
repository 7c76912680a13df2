//! Spatiotemporal neural networks for classifying sign-language clips.
//!
//! The crate covers the whole pipeline: tensors with reverse-mode
//! differentiation ([`tensor`]), a layer library ([`nn`]), the four
//! clip architectures ([`arch`]), frame ingestion ([`data`]), training
//! ([`train`]), metrics ([`eval`]) and the `SLM1` model file ([`modelio`]).

pub mod arch;
pub mod data;
pub mod error;
pub mod eval;
pub mod modelio;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Rng, Scalar, Tape, Tensor, Var};
