//! Interactive image colorization conditioned on a global color theme and
//! sparse local color hints.
//!
//! The crate is organised bottom-up:
//!
//! * [`scalar`] / [`tensor`] / [`autodiff`]: a small reverse-mode engine with
//!   exactly the operators the colorization network needs, generic over
//!   `f32`/`f64`.
//! * [`colorspace`]: sRGB / CIE Lab conversion, the `[0, 1]` normalisation the
//!   network works in, and PSNR.
//! * [`hints`]: color themes, local hint planes, K-color maps and training
//!   example assembly.
//! * [`network`] / [`losses`] / [`trainer`]: the model, its composite loss and
//!   the optimisation loop, plus checkpoints.
//! * [`recommender`]: texture-driven color theme suggestions.
//! * [`eval`]: PSNR evaluation protocols.

pub mod autodiff;
pub mod colorspace;
pub mod error;
pub mod eval;
pub mod hints;
pub mod kmeans;
pub mod losses;
pub mod network;
pub mod recommender;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type ParamStore32 = autodiff::ParamStore<f32>;
pub type ParamStore64 = autodiff::ParamStore<f64>;
pub type Model32 = network::Model<f32>;
pub type Model64 = network::Model<f64>;
pub type TrainState32 = trainer::TrainState<f32>;
pub type TrainState64 = trainer::TrainState<f64>;
