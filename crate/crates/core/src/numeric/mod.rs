//! Shared numerical building blocks.

pub mod dft;
pub mod linalg;
pub mod qam;
pub mod rng;

pub use dft::{dft, Dft};
pub use linalg::{hpd_solve, sinc, CMat, Cholesky};
pub use num_complex::Complex64;
pub use qam::Constellation;
pub use rng::SimRng;

pub(crate) const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
