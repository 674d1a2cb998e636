//! Blind generative equalization of degraded audio.
//!
//! Jointly estimates a degradation filter's magnitude response and a
//! restored signal by diffusion posterior sampling against a pluggable
//! denoiser prior. The shipped Gaussian PSD prior is analytically
//! differentiable, so the whole inference stack is testable end to end
//! without trained networks.

pub mod denoiser;
pub mod error;
pub mod fft;
pub mod filter;
pub mod ltas;
pub mod optim;
pub mod sampler;
pub mod signal;
pub mod wav;

pub use error::{Error, Result};
pub use signal::Signal;
