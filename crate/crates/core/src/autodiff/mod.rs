//! A small reverse-mode differentiation kernel.
//!
//! Activations live on a [`Tape`] as row-major `f64` tensors. Per-point
//! features use a points-major layout: a batch of `B` clouds with `M` points
//! and `F` channels is a `[B*M, F]` matrix, so the shared per-point layers of
//! a PointNet are a single matrix product.

mod checkpoint;
mod gemm;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_store, save_store, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheck};
pub use params::{adam_step, AdamConfig, Param, ParamStore};
pub use tape::{BnMode, Tape, Var, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE};
pub use tensor::Tensor;
