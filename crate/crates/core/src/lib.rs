//! Unpaired multimodal shape completion for point clouds.
//!
//! A complete-shape autoencoder defines a latent space; partial shapes are
//! encoded into the same space and a conditional generator maps
//! `(partial code, z)` to plausible complete codes. A pre-trained VAE
//! encoder recovers `z` from each completion so the generator cannot ignore
//! the condition. Everything runs on a small double-precision autodiff
//! kernel with exact point-set distances.
//!
//! Modules, bottom-up:
//!
//! - [`geometry`]: point clouds, exact EMD, Chamfer, unidirectional Hausdorff.
//! - [`autodiff`]: tensors, the gradient tape, Adam, checkpoints.
//! - [`networks`]: PointNet encoders, MLP decoder, generator, discriminator.
//! - [`training`]: autoencoder, VAE and latent GAN training loops.
//! - [`data`]: procedural part-labelled shapes, part removal, virtual scans, I/O.
//! - [`eval`]: completion inference, MMD/TMD/UHD and experiment drivers.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod networks;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use geometry::PointCloud;
