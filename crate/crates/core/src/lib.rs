//! Copula-based instance-wise feature selection.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: a small reverse-mode differentiation engine, including
//!   Cholesky factorisation and the standard normal CDF.
//! * [`copula`]: correlated uniform noise through a Gaussian copula with a
//!   factor-model correlation matrix.
//! * [`samplers`]: relaxed Bernoulli masks and the successive-softmax
//!   top-k relaxation of weighted random sampling.
//! * [`networks`]: the selector and predictor networks, losses, Adam and
//!   the training loop.
//! * [`synthetic`], [`idx`]: data sources.
//! * [`evaluation`]: selection metrics and Monte-Carlo verifiers.
//!
//! All numeric code is generic over [`Scalar`]; the aliases below pin it to
//! `f64`, which is what the experiments run with.

pub mod config;
pub mod copula;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod idx;
pub mod networks;
pub mod samplers;
pub mod scalar;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tape64 = tensor::Tape<f64>;
pub type Tensor64<'t> = tensor::Tensor<'t, f64>;
