//! Coarse-to-fine image dehazing built from scratch: a wavelet degradation
//! prior, a selective-scan (Mamba-style) low-frequency restoration network,
//! a CNN detail enhancer with frequency-domain refinement, and self-guided
//! contrastive training — all on a small reverse-mode autodiff engine.

pub mod error;
pub mod spectral;
pub mod ssm;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Elem, ParamSet, Tensor};
