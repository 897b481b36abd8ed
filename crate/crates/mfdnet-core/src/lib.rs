//! Multi-frequency deflare network core.
//!
//! Removes nighttime lens flare from RGB images by splitting the input into a
//! Laplacian pyramid, restoring the low-frequency residual with a U-shaped
//! axis-attention network, and re-fusing the high-frequency bands through
//! mask-guided refinement before pyramid reconstruction.
//!
//! Design notes:
//! - `no_std` + `alloc`: all math goes through [`scalar::Real`] (backed by
//!   `libm`), so results are bit-identical regardless of the host's `std`
//!   math library. File IO, timing, and the CLI live in the companion crate.
//! - Tensors are plain `Vec`-backed NCHW arrays ([`tensor::Tensor`]); layers
//!   own their parameters and gradients and implement hand-derived backward
//!   passes. There is no tape: module `backward` methods compose explicitly,
//!   mirroring the forward composition.
//! - Determinism is a contract: parameter init derives one RNG stream per
//!   parameter from `(seed, name)`, dataset sampling derives one stream per
//!   `(seed, index)`, and reductions run in fixed order. Two runs with the
//!   same seeds produce bit-identical parameters, batches, and losses.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod blocks;
pub mod data;
pub mod error;
pub mod hfrm;
pub mod lffpm;
pub mod losses;
pub mod macs;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod pyramid;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor;
