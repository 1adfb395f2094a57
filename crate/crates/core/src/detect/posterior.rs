//! Symbol-by-symbol delay-Doppler demapping.

use num_complex::Complex64;

use crate::numeric::{Constellation, C_ZERO};

/// Posterior of one DD symbol observed as `y = x + n`, `n ~ CN(0, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolPosterior {
    pub mean: Complex64,
    pub var: f64,
    /// Index of the most probable point.
    pub hard: usize,
}

/// Posterior mean and variance over the constellation with likelihood
/// `exp(-|y - a|^2 / v)`, optionally times prior probabilities given as logs.
///
/// `v <= 0` is treated as a noiseless observation.
pub fn dd_posterior(
    y: Complex64,
    v: f64,
    constellation: &Constellation,
    log_prior: Option<&[f64]>,
) -> SymbolPosterior {
    let pts = constellation.points();
    if !(v > 0.0) {
        let hard = constellation.nearest(y);
        return SymbolPosterior {
            mean: pts[hard],
            var: 0.0,
            hard,
        };
    }
    let mut logits = [0.0f64; 16];
    let logits = &mut logits[..pts.len()];
    for (i, (l, a)) in logits.iter_mut().zip(pts).enumerate() {
        *l = -(y - a).norm_sqr() / v + log_prior.map_or(0.0, |p| p[i]);
    }
    let (hard, max) = logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
    let mut z = 0.0;
    let mut mean = C_ZERO;
    for (l, a) in logits.iter_mut().zip(pts) {
        *l = (*l - max).exp();
        z += *l;
        mean += a * *l;
    }
    mean /= z;
    let var = logits
        .iter()
        .zip(pts)
        .map(|(p, a)| p * (a - mean).norm_sqr())
        .sum::<f64>()
        / z;
    SymbolPosterior { mean, var, hard }
}
