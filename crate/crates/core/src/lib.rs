//! Randomized Kaczmarz solvers for third-order tensor systems `A ∗ X = B`
//! under the t-product, with quantile filtering that tolerates sparse,
//! arbitrarily large corruptions in `B`.
//!
//! * [`tensor`]: storage, the t-product, tube DFTs, `T3B` files.
//! * [`spectral`]: spectral constants of `bcirc(A)` and rate formulas.
//! * [`solvers`]: TRK, QTRK, masked QTRK and a least-norm baseline.
//! * [`corruption`]: corruption plans and the adversarial masked instance.
//! * [`deblur`]: circular-convolution video deblurring as a t-product system.
//! * [`harness`]: config-driven experiments behind the `qtrk` binary.

pub mod corruption;
pub mod deblur;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod solvers;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DenseTensor3, Shape3, SpectralTensor3};
