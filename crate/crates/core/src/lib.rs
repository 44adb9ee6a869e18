//! Desk-scale probabilistic precipitation nowcasting with diffusion models.
//!
//! The crate splits the nowcasting problem in two: a 3D conditional
//! denoising-diffusion model predicts 16 low-resolution radar frames from 4
//! context frames, and a second diffusion model reconstructs each frame to
//! full resolution, either directly in pixel space ([`sr::spatial`]) or in
//! the latent space of an autoencoder ([`sr::latent`]). Forecasts are scored
//! with the usual ensemble verification metrics (CRPS, FSS, CSI, normalized
//! MSE) per lead time ([`metrics`]).
//!
//! Everything runs on the CPU in `f64` on top of a small reverse-mode
//! autodiff engine ([`nn`]); there is no GPU or external ML framework
//! involved, which keeps runs reproducible bit for bit under a fixed seed.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod rng;
pub mod sr;

pub mod book;

pub use diffusion::NoiseSchedule;
