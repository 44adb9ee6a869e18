//! The user guide, embedded so its code samples run as documentation tests.
//!
//! The book sources live in `book/` at the repository root and render with
//! mdbook; including them here keeps every snippet compiled and executed by
//! `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/diffusion.md")]
pub mod diffusion_mechanics {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod radar_data {}

#[doc = include_str!("../../../book/src/prediction.md")]
pub mod prediction_stage {}

#[doc = include_str!("../../../book/src/super-resolution.md")]
pub mod pixel_super_resolution {}

#[doc = include_str!("../../../book/src/latent.md")]
pub mod latent_super_resolution {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod forecast_verification {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod command_line_pipeline {}
