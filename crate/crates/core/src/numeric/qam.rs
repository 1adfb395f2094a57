//! Gray-labeled square QAM.
//!
//! Point `i` carries the bit label `b_0 b_1 ... b_{q-1}` read as the binary
//! expansion of `i` with `b_0` the most significant bit. The labeling follows
//! the LTE layout (TS 36.211, 7.1):
//!
//! | order | point |
//! |-------|-------|
//! | 4     | `[(1-2b0) + j(1-2b1)] / sqrt(2)` |
//! | 16    | `[(1-2b0)(2-(1-2b2)) + j(1-2b1)(2-(1-2b3))] / sqrt(10)` |
//!
//! so `00 -> (+1+j)/sqrt(2)` for 4QAM. Points are scaled to mean energy `E_s`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    order: usize,
    bits_per_symbol: usize,
    es: f64,
    points: Vec<Complex64>,
}

impl Constellation {
    pub fn new(order: usize) -> Result<Self> {
        Self::with_energy(order, 1.0)
    }

    pub fn with_energy(order: usize, es: f64) -> Result<Self> {
        let raw: Vec<Complex64> = match order {
            4 => (0..4)
                .map(|i| {
                    let b = |p: usize| ((i >> (1 - p)) & 1) as f64;
                    Complex64::new(1.0 - 2.0 * b(0), 1.0 - 2.0 * b(1)) / 2f64.sqrt()
                })
                .collect(),
            16 => (0..16)
                .map(|i| {
                    let b = |p: usize| ((i >> (3 - p)) & 1) as f64;
                    let re = (1.0 - 2.0 * b(0)) * (2.0 - (1.0 - 2.0 * b(2)));
                    let im = (1.0 - 2.0 * b(1)) * (2.0 - (1.0 - 2.0 * b(3)));
                    Complex64::new(re, im) / 10f64.sqrt()
                })
                .collect(),
            other => return Err(Error::InvalidOrder(other)),
        };
        if !(es > 0.0) {
            return Err(Error::config("es", "symbol energy must be positive"));
        }
        let scale = es.sqrt();
        Ok(Self {
            order,
            bits_per_symbol: order.trailing_zeros() as usize,
            es,
            points: raw.into_iter().map(|p| p * scale).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn es(&self) -> f64 {
        self.es
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Bit `p` (0 = most significant) of the label of point `index`.
    #[inline]
    pub fn label_bit(&self, index: usize, p: usize) -> u8 {
        ((index >> (self.bits_per_symbol - 1 - p)) & 1) as u8
    }

    pub fn index_of_bits(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize)
    }

    pub fn map(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        if bits.len() % self.bits_per_symbol != 0 {
            return Err(Error::BitCount {
                bits: bits.len(),
                per_symbol: self.bits_per_symbol,
            });
        }
        Ok(bits
            .chunks_exact(self.bits_per_symbol)
            .map(|c| self.points[self.index_of_bits(c)])
            .collect())
    }

    /// Nearest point; the lowest index wins ties.
    pub fn nearest(&self, y: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn unmap_hard(&self, y: Complex64) -> Vec<u8> {
        let idx = self.nearest(y);
        (0..self.bits_per_symbol).map(|p| self.label_bit(idx, p)).collect()
    }

    pub fn unmap_hard_into(&self, symbols: &[Complex64], out: &mut Vec<u8>) {
        for &y in symbols {
            let idx = self.nearest(y);
            out.extend((0..self.bits_per_symbol).map(|p| self.label_bit(idx, p)));
        }
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.order as f64
    }
}
