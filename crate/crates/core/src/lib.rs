//! Invertible sharpening of blurry MRI reconstructions.
//!
//! The crate bundles everything needed to run the method end to end on a CPU:
//!
//! - [`tensor`], [`autodiff`], [`conv`], [`activation`], [`fft`]: a small dense
//!   tensor engine with reverse-mode differentiation.
//! - [`lipschitz`]: per-layer spectral-norm budgets for the residual branches.
//! - [`net`]: the invertible residual network, its fixed-point inverse and the
//!   data-consistency layer.
//! - [`mri_sim`]: synthetic phantoms, Cartesian undersampling and the blurry
//!   baseline reconstructor.
//! - [`losses`], [`metrics`]: training objectives and image-quality metrics.
//! - [`train`]: Adam, the three training regimes, evaluation and ablations.
//! - [`config`], [`cli`]: run configuration and the `invsharp` command line.

pub mod activation;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod conv;
pub mod error;
pub mod fft;
pub mod io;
pub mod lipschitz;
pub mod losses;
pub mod metrics;
pub mod mri_sim;
pub mod net;
pub mod pgm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ComplexGrid, Tensor};
