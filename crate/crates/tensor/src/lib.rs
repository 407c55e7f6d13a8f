//! Dense `f64` tensors, a reverse-mode autodiff tape, matrix norms and the
//! `FTEN` on-disk format.

mod error;
mod ften;
mod gradcheck;
mod kernels;
mod norms;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ften::{load_ften, read_ften, save_ften, write_ften};
pub use gradcheck::{grad_check, ScalarFunction, TapeFunction};
pub use norms::{
    spectral_norm, spectral_norm_fine, SpectralEstimate, SPECTRAL_FINE_MAX_ITERS, SPECTRAL_FINE_TOL, SPECTRAL_MAX_ITERS,
    SPECTRAL_TOL,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
