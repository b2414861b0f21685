//! Core math for frequency-domain image dehazing.
//!
//! Everything numerical lives here: a small dense-tensor substrate with
//! hand-derived backpropagation ([`tensor`], [`nn`], [`optim`]), per-channel
//! 2D Fourier transforms and amplitude/phase editing ([`spectral`]), the
//! frequency-compensated UNet with its amplitude-residual alignment
//! ([`dehaze`]), a small conditional diffusion model over amplitude residuals
//! ([`diffusion`]), unpaired-training losses ([`objectives`]) and image
//! quality metrics ([`metrics`]).
//!
//! The crate is `no_std`-compatible (`alloc` is required); disable the
//! default `std` feature for embedded use. All numeric code is generic over
//! [`Scalar`], so the same layers run in `f32` for training and `f64` for
//! the finite-difference gradient checks in [`gradcheck`].

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod dehaze;
pub mod diffusion;
mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod rng;
mod scalar;
pub mod spectral;
pub mod tensor;

pub use error::{CoreError, Result};
pub use scalar::Scalar;
pub use tensor::{Param, Tensor3};
