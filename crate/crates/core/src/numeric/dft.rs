//! Unitary DFT on arbitrary lengths.
//!
//! Both directions are scaled by `1/sqrt(N)` so `inverse(forward(v)) == v` and
//! the transform preserves energy. Lengths that are not powers of two still
//! work; the planner picks a mixed-radix or Bluestein kernel.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Cached forward/inverse plans for one transform length.
#[derive(Clone)]
pub struct Dft {
    len: usize,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft").field("len", &self.len).finish()
    }
}

impl Dft {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyInput);
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            len,
            scale: 1.0 / (len as f64).sqrt(),
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place `F_N · v` (or `F_N^H · v` when `inverse`).
    pub fn apply(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.len, "DFT length mismatch");
        if inverse {
            self.inverse.process(data);
        } else {
            self.forward.process(data);
        }
        for x in data.iter_mut() {
            *x *= self.scale;
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, false);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, true);
    }
}

/// One-shot unitary DFT of `v`.
pub fn dft(v: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    let plan = Dft::new(v.len())?;
    let mut out = v.to_vec();
    plan.apply(&mut out, inverse);
    Ok(out)
}
