//! Frequency-aware attention U-net for paired cross-modality image synthesis.
//!
//! The crate carries its own small autodiff engine ([`tensor`]), Gaussian
//! frequency-band utilities and image I/O ([`image_ops`]), the network
//! itself ([`frea_unet`]), losses and quality metrics ([`objectives`]),
//! paired-data handling ([`data`]) and the training / evaluation driver
//! behind the `frea` binary ([`trainer`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod frea_unet;
pub mod gradcheck;
pub mod image_ops;
pub mod objectives;
pub mod tensor;
pub mod trainer;

pub use error::{FreaError, Result};
pub use tensor::{Tape, Tensor, Var};
