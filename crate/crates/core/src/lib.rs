//! Lung field segmentation for chest radiographs.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors and a reverse-mode autograd tape.
//! * [`unet`]: the encoder/decoder network, its parameters and checkpoints.
//! * [`train`]: binary cross-entropy, Adam and the epoch loop.
//! * [`imaging`]: rasters, resizing, morphology, augmentation and phantoms.
//! * [`dataset`]: dataset discovery, splitting and batch streaming.
//! * [`eval`]: thresholding, confusion counts and Dice reports.
//! * [`config`]: flat `key=value` run configuration used by the CLI.

pub mod error;
pub mod tensor;
pub mod unet;
pub mod imaging;
pub mod dataset;
pub mod rng;
pub mod eval;
pub mod train;
pub mod config;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{Graph, Scalar, Tensor, Var};
