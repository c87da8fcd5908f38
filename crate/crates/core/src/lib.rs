//! Event-enhanced Gaussian splatting.
//!
//! Reconstructs a sharp 3D Gaussian scene from motion-blurred images and the
//! event streams recorded during their exposures. The building blocks:
//!
//! - [`event`]: event streams, binning and an ideal event-camera simulator
//! - [`edi`]: event-based double integral deblurring
//! - [`splat`]: Gaussian primitives, cameras and covariance projection
//! - [`raster`]: differentiable splat rendering with an analytic backward pass
//! - [`objective`]: blur synthesis, L1 + D-SSIM, event-count estimation and event loss
//! - [`train`]: scene initialization, Adam optimization and image metrics
//! - [`dataset`], [`synthetic`], [`eval`], [`bench`]: file formats, the
//!   synthetic scene generator, evaluation tables and render timing

pub mod bench;
pub mod dataset;
pub mod edi;
pub mod error;
pub mod eval;
pub mod event;
pub mod image;
pub mod objective;
pub mod raster;
pub mod splat;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
