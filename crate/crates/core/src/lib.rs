//! Dual-degradation SDR-to-HDR video conversion.
//!
//! The crate bundles a small reverse-mode tensor engine, the convolutional
//! operators the network needs (plain, deformable, wavelet attention and
//! dual-modulated convolution), the SDR/HDR signal chain, a block-DCT
//! codec stand-in for synthesising training data, the usual quality
//! metrics, and a CPU-sized trainer.

pub mod color;
pub mod degradation;
pub mod error;
pub mod io;
pub mod metrics;
pub mod modulation;
pub mod net;
pub mod nn;
pub mod prove;
pub mod source;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Real, Tape, Tensor, Var};
