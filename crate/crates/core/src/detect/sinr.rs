//! Per-layer SINR of exact and recycled filters under a common prior.

use serde::{Deserialize, Serialize};

use crate::channel::{extract_subchannel, BlockChannelSet};
use crate::error::Result;

use super::mmse::{explicit_output_variance, mmse_weights};
use super::NOISE_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSinr {
    pub m: usize,
    pub exact_db: f64,
    pub approx_db: f64,
    pub refreshed: bool,
}

/// SINR `E_s / sigma^2` of the normalized output of every data layer in
/// block `n`, once with exact weights and once with weights refreshed only at
/// the layers listed in `refresh` and reused in between.
///
/// `var` holds the prior variance of every layer (length `M`); the target's
/// own entry is replaced by `E_s`.
pub fn sinr_per_layer(
    blocks: &BlockChannelSet,
    n: usize,
    var: &[f64],
    es: f64,
    refresh: &[usize],
) -> Result<Vec<LayerSinr>> {
    let g = blocks.geometry();
    let noise = blocks.noise_var().max(NOISE_FLOOR * es);
    let db = |post: f64| 10.0 * (es / post).log10();
    let mut cached: Option<Vec<_>> = None;
    let mut out = Vec::with_capacity(g.data_rows());
    for m in 0..g.data_rows() {
        let sub = extract_subchannel(blocks, n, m)?;
        let mut v: Vec<f64> = (0..sub.h.cols()).map(|c| var[sub.base + c]).collect();
        v[sub.l_prime] = es;
        let (w, mu) = mmse_weights(&sub, &v, noise, es)?;
        let exact = explicit_output_variance(&w, &sub, &v, noise) / mu.norm_sqr();
        let refreshed = cached.is_none() || refresh.contains(&m);
        if refreshed {
            cached = Some(w);
        }
        let wc = cached.as_ref().expect("filter set at first layer");
        let h = sub.target_column();
        let mu_c: num_complex::Complex64 = wc.iter().zip(&h).map(|(a, b)| a * b).sum();
        let approx = explicit_output_variance(wc, &sub, &v, noise) / mu_c.norm_sqr();
        out.push(LayerSinr {
            m,
            exact_db: db(exact),
            approx_db: db(approx),
            refreshed,
        });
    }
    Ok(out)
}
