//! Per-layer linear stage: interference cancellation, MMSE weights, bias
//! normalization, output variances and the recycling span.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::channel::SubChannel;
use crate::error::{Error, Result};
use crate::numeric::{Cholesky, C_ZERO};

/// Smallest |mu| that can still be normalized.
pub const MU_FLOOR: f64 = 1e-12;

/// MMSE row filter for the target column of a sub-channel.
///
/// `variances` holds one prior variance per column of `sub.h`; the entry at
/// the target column is the target's own prior (normally `E_s`). Returns
/// `w = E_s h^H (H V H^H + sigma^2 I)^-1` and `mu = w h`.
pub fn mmse_weights(
    sub: &SubChannel,
    variances: &[f64],
    noise_var: f64,
    es: f64,
) -> Result<(Vec<Complex64>, Complex64)> {
    let h = &sub.h;
    if variances.len() != h.cols() {
        return Err(Error::Dimension(format!(
            "{} variances for {} columns",
            variances.len(),
            h.cols()
        )));
    }
    let rows = h.rows();
    let mut a = vec![C_ZERO; rows * rows];
    for r1 in 0..rows {
        for r2 in 0..=r1 {
            let mut s = C_ZERO;
            for (c, &v) in variances.iter().enumerate() {
                if v != 0.0 {
                    s += h[(r1, c)] * h[(r2, c)].conj() * v;
                }
            }
            a[r1 * rows + r2] = s;
        }
        a[r1 * rows + r1] += noise_var;
    }
    let target = sub.target_column();
    let g = Cholesky::factor_raw(rows, &a)?.solve(&target);
    let w: Vec<Complex64> = g.iter().map(|x| x.conj() * es).collect();
    let mu = w.iter().zip(&target).map(|(a, b)| a * b).sum();
    Ok((w, mu))
}

/// Remove already-estimated layers from the received window.
///
/// `current` holds this iteration's estimates for the `l_prime` columns left
/// of the target, `previous` last iteration's estimates for the columns to its
/// right.
pub fn cancel_interference(
    r_bar: &[Complex64],
    sub: &SubChannel,
    current: &[Complex64],
    previous: &[Complex64],
) -> Result<Vec<Complex64>> {
    let h = &sub.h;
    let lp = sub.l_prime;
    if r_bar.len() != h.rows() || current.len() != lp || previous.len() != h.cols() - lp - 1 {
        return Err(Error::Dimension("window and estimate lengths disagree with the sub-channel".into()));
    }
    let mut out = r_bar.to_vec();
    let cols = current
        .iter()
        .enumerate()
        .chain(previous.iter().enumerate().map(|(k, x)| (lp + 1 + k, x)));
    for (c, &est) in cols {
        if est == C_ZERO {
            continue;
        }
        for (r, o) in out.iter_mut().enumerate() {
            *o -= h[(r, c)] * est;
        }
    }
    Ok(out)
}

/// Apply `w`, remove the bias `mu` and return the normalized estimate with its
/// variance `E_s (mu - |mu|^2) / |mu|^2`, which holds for exact MMSE weights.
pub fn filter_and_normalize(
    w: &[Complex64],
    mu: Complex64,
    r_hat: &[Complex64],
    es: f64,
) -> Result<(Complex64, f64)> {
    let a = mu.norm();
    if a < MU_FLOOR {
        return Err(Error::DegenerateLayer(a));
    }
    let s: Complex64 = w.iter().zip(r_hat).map(|(a, b)| a * b).sum();
    Ok((s / mu, exact_post_variance(mu, es)))
}

pub(crate) fn exact_post_variance(mu: Complex64, es: f64) -> f64 {
    let m2 = mu.norm_sqr();
    (es * (mu.re - m2) / m2).max(0.0)
}

/// Unnormalized output noise-plus-interference power of an arbitrary filter:
/// `sum_{j != l'} |w H[:, j]|^2 v_j + |w|^2 sigma^2`.
///
/// Divide by `|mu|^2` for the variance of the normalized estimate.
pub fn explicit_output_variance(
    w: &[Complex64],
    sub: &SubChannel,
    error_variances: &[f64],
    noise_var: f64,
) -> f64 {
    let h = &sub.h;
    let mut total = noise_var * w.iter().map(|x| x.norm_sqr()).sum::<f64>();
    for (c, &v) in error_variances.iter().enumerate() {
        if c == sub.l_prime || v == 0.0 {
            continue;
        }
        let wh: Complex64 = w.iter().enumerate().map(|(r, x)| x * h[(r, c)]).sum();
        total += wh.norm_sqr() * v;
    }
    total
}

/// Number of layers that may reuse a filter whose bias is `a e^{j theta}`
/// before the extra MSE under a worst-case Doppler of `nu_max` taps reaches
/// `delta_beta`: `MN (acos(delta_beta / 2a) - theta) / (2 pi nu_max)`,
/// floored and at least 1.
pub fn delta_m(delta_beta: f64, nu_max: f64, a: f64, theta: f64, m: usize, n: usize) -> Result<usize> {
    if !(delta_beta > 0.0) {
        return Err(Error::config("delta_beta", "must be positive"));
    }
    if !(nu_max > 0.0) {
        return Err(Error::config("nu_max", "must be positive"));
    }
    if delta_beta > 2.0 * a {
        return Err(Error::ToleranceDomain {
            delta_beta,
            two_a: 2.0 * a,
        });
    }
    let v = (m * n) as f64 * ((delta_beta / (2.0 * a)).acos() - theta) / (2.0 * PI * nu_max);
    Ok((v.floor().max(1.0)) as usize)
}

/// Coherence time in delay-resolution samples, `MN / (2 nu_max)`.
pub fn coherence_symbols(m: usize, n: usize, nu_max: f64) -> f64 {
    (m * n) as f64 / (2.0 * nu_max)
}

/// Extra MSE of reusing the exact filter of `sub` on a copy of it whose
/// columns are all rotated by `phase`, relative to the exact filter of that
/// rotated copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecycledExcess {
    /// `E|w r - s|^2` minus its minimum, on the raw filter output.
    pub raw: f64,
    /// The same on the bias-normalized output `w r / mu`.
    pub normalized: f64,
}

pub fn recycled_excess_mse(
    sub: &SubChannel,
    variances: &[f64],
    noise_var: f64,
    es: f64,
    phase: f64,
) -> Result<RecycledExcess> {
    let (w, mu) = mmse_weights(sub, variances, noise_var, es)?;
    let rot = Complex64::from_polar(1.0, phase);
    let mut turned = sub.clone();
    for r in 0..turned.h.rows() {
        for c in 0..turned.h.cols() {
            turned.h[(r, c)] = sub.h[(r, c)] * rot;
        }
    }
    let (w_opt, mu_opt) = mmse_weights(&turned, variances, noise_var, es)?;
    let raw_mse = |w: &[Complex64], mu: Complex64| {
        es * (mu - 1.0).norm_sqr() + explicit_output_variance(w, &turned, variances, noise_var)
    };
    let norm_mse = |w: &[Complex64], mu: Complex64| {
        explicit_output_variance(w, &turned, variances, noise_var) / mu.norm_sqr()
    };
    let mu_reused = mu * rot;
    Ok(RecycledExcess {
        raw: raw_mse(&w, mu_reused) - raw_mse(&w_opt, mu_opt),
        normalized: norm_mse(&w, mu_reused) - norm_mse(&w_opt, mu_opt),
    })
}
