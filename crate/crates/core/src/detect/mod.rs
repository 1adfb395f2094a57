//! Iterative cross-domain SIC-MMSE detection and baselines.
//!
//! Each iteration walks the data layers `m = 0..M-l_max`. For every block it
//! cancels the other layers from the `l_max + 1` received samples touching
//! layer `m`, applies an MMSE filter and normalizes out the bias. The `N`
//! outputs of a layer then go through an `N`-point DFT, get demapped symbol by
//! symbol in the delay-Doppler domain, and return to the time domain as priors
//! for the layers still to come.

mod baseline;
mod complexity;
mod mmse;
mod posterior;
mod sinr;

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::BlockChannelSet;
use crate::error::{Error, Result};
use crate::frame::{FrameGeometry, TimeSignal};
use crate::numeric::{Cholesky, Constellation, Dft, C_ZERO};

pub use baseline::{full_lmmse_oracle, mrc_detect, MrcOutput, DENSE_ORACLE_LIMIT};
pub use complexity::{complexity_orders, ComplexityCounter, ComplexityOrders};
pub(crate) use mmse::exact_post_variance;
pub use mmse::{
    cancel_interference, coherence_symbols, delta_m, explicit_output_variance, filter_and_normalize,
    mmse_weights, recycled_excess_mse, RecycledExcess, MU_FLOOR,
};
pub use posterior::{dd_posterior, SymbolPosterior};
pub use sinr::{sinr_per_layer, LayerSinr};

/// Noise power used in the filter when the configured noise variance is below
/// it, relative to `E_s`. Keeps the filter defined in noiseless runs.
pub const NOISE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Demap {
    /// Nearest-point decisions fed back with zero variance.
    Hard,
    /// Posterior means and variances fed back.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recycling {
    /// Span recomputed after every refresh from the MSE tolerance.
    Tolerance(f64),
    /// Fixed number of layers reusing each exact filter.
    FixedSpan(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weights {
    Exact,
    Recycled(Recycling),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub demap: Demap,
    pub weights: Weights,
    pub iterations: usize,
    /// Keep per-iteration snapshots of the linear and DD outputs.
    #[serde(default)]
    pub record_iterations: bool,
    /// Keep one trace row per layer and block.
    #[serde(default)]
    pub trace: bool,
    /// Stop once the mean DD posterior variance changes by less than this
    /// fraction between iterations. Off when `None`.
    #[serde(default)]
    pub early_exit: Option<f64>,
}

impl DetectorConfig {
    pub fn hard(iterations: usize) -> Self {
        Self {
            demap: Demap::Hard,
            weights: Weights::Exact,
            iterations,
            record_iterations: false,
            trace: false,
            early_exit: None,
        }
    }

    pub fn soft(iterations: usize) -> Self {
        Self {
            demap: Demap::Soft,
            ..Self::hard(iterations)
        }
    }

    /// Soft demapping with filter recycling bounded by `delta_beta`.
    pub fn approx(iterations: usize, delta_beta: f64) -> Self {
        Self {
            weights: Weights::Recycled(Recycling::Tolerance(delta_beta)),
            ..Self::soft(iterations)
        }
    }

    pub fn with_weights(mut self, weights: Weights) -> Self {
        self.weights = weights;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("detector.iterations", "must be at least 1"));
        }
        if let Some(tol) = self.early_exit {
            if !(tol >= 0.0) {
                return Err(Error::config("detector.early_exit", "must be non-negative"));
            }
        }
        if let Weights::Recycled(Recycling::Tolerance(db)) = self.weights {
            if !(db > 0.0) || !db.is_finite() {
                return Err(Error::config("detector.delta_beta", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Prior knowledge of the DD symbols, e.g. from a channel decoder.
///
/// Entries follow the grid order `m * N + k` over the data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorPrior {
    pub mean: Vec<Complex64>,
    pub var: Vec<f64>,
    /// Log prior probability of every constellation point, `Q` per symbol.
    pub log_prob: Vec<f64>,
}

/// Detector state at the end of an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftState {
    /// Time-domain means, index `n * M + m`.
    pub est: Vec<Complex64>,
    /// Time-domain variance per layer `m` (same for every block).
    pub var: Vec<f64>,
    /// Normalized linear outputs, index `n * M + m`.
    pub linear: Vec<Complex64>,
    /// Variance of each normalized linear output.
    pub post_var: Vec<f64>,
    /// Bias of each linear output.
    pub mu: Vec<Complex64>,
    /// DD observations `F_N s_hat`, index `m * N + k` over data rows.
    pub dd_obs: Vec<Complex64>,
    pub dd_obs_var: Vec<f64>,
    /// DD posterior means and variances.
    pub dd_mean: Vec<Complex64>,
    pub dd_var: Vec<f64>,
    /// Most probable constellation index per DD symbol.
    pub decisions: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub m: usize,
    pub n: usize,
    pub mu_re: f64,
    pub mu_im: f64,
    pub post_var: f64,
    pub sinr_db: f64,
    pub exact: bool,
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub state: SoftState,
    pub counter: ComplexityCounter,
    /// One state per iteration when requested.
    pub iterations: Vec<SoftState>,
    /// Layers where exact weights were computed, per iteration and block.
    /// Empty for exact weights, where every layer is a refresh.
    pub refreshes: Vec<Vec<Vec<usize>>>,
    pub trace: Vec<TraceRow>,
}

impl Detection {
    /// Decided symbols in the order of [`crate::frame::DdFrame::from_symbols`].
    pub fn hard_symbols(&self, geometry: &FrameGeometry, constellation: &Constellation) -> Vec<Complex64> {
        decisions_to_symbols(&self.state.decisions, geometry, constellation)
    }

    pub fn hard_bits(&self, geometry: &FrameGeometry, constellation: &Constellation) -> Vec<u8> {
        let mut bits = Vec::new();
        constellation.unmap_hard_into(&self.hard_symbols(geometry, constellation), &mut bits);
        bits
    }
}

pub(crate) fn decisions_to_symbols(
    decisions: &[usize],
    geometry: &FrameGeometry,
    constellation: &Constellation,
) -> Vec<Complex64> {
    let (d, n) = (geometry.data_rows(), geometry.n);
    (0..geometry.data_symbols())
        .map(|idx| constellation.points()[decisions[(idx % d) * n + idx / d]])
        .collect()
}

struct Cached {
    w: Vec<Complex64>,
    next: usize,
}

/// Run the iterative detector on one received frame.
///
/// `blocks` is the channel the receiver believes in; its noise variance sets
/// the filter regularization and its `nu_max` the recycling span.
pub fn detect_frame(
    r: &TimeSignal,
    blocks: &BlockChannelSet,
    constellation: &Constellation,
    cfg: &DetectorConfig,
    prior: Option<&DetectorPrior>,
) -> Result<Detection> {
    cfg.validate()?;
    let g = *blocks.geometry();
    if *r.geometry() != g {
        return Err(Error::Dimension("received frame and channel geometry differ".into()));
    }
    let (mm, nn, lm, d) = (g.m, g.n, g.l_max, g.data_rows());
    let lw = lm + 1;
    let q = constellation.order();
    let es = constellation.es();
    let noise = blocks.noise_var().max(NOISE_FLOOR * es);
    let plan = Dft::new(nn)?;
    if let Some(p) = prior {
        if p.mean.len() != d * nn || p.var.len() != d * nn || p.log_prob.len() != d * nn * q {
            return Err(Error::Dimension("prior does not match the frame".into()));
        }
    }

    let mut est = vec![C_ZERO; mm * nn];
    let mut var_t = vec![0.0; mm];
    let mut row = vec![C_ZERO; nn];
    for m in 0..d {
        match prior {
            Some(p) => {
                row.copy_from_slice(&p.mean[m * nn..(m + 1) * nn]);
                plan.inverse(&mut row);
                for (n, x) in row.iter().enumerate() {
                    est[n * mm + m] = *x;
                }
                var_t[m] = p.var[m * nn..(m + 1) * nn].iter().sum::<f64>() / nn as f64;
            }
            None => var_t[m] = es,
        }
    }
    let mut resid = r.samples().to_vec();
    for n in 0..nn {
        let hs = blocks.mul_block(n, &est[n * mm..(n + 1) * mm]);
        for (x, y) in resid[n * mm..(n + 1) * mm].iter_mut().zip(hs) {
            *x -= y;
        }
    }

    let mut state = SoftState {
        est: Vec::new(),
        var: Vec::new(),
        linear: vec![C_ZERO; mm * nn],
        post_var: vec![0.0; mm * nn],
        mu: vec![C_ZERO; mm * nn],
        dd_obs: vec![C_ZERO; d * nn],
        dd_obs_var: vec![0.0; d * nn],
        dd_mean: vec![C_ZERO; d * nn],
        dd_var: vec![0.0; d * nn],
        decisions: vec![0; d * nn],
    };
    let mut out = Detection {
        state: state.clone(),
        counter: ComplexityCounter::default(),
        iterations: Vec::new(),
        refreshes: Vec::new(),
        trace: Vec::new(),
    };
    let counter = &mut out.counter;

    let mut a = vec![C_ZERO; lw * lw];
    let mut h_t = vec![C_ZERO; lw];
    let mut r_hat = vec![C_ZERO; lw];
    let mut cache: Vec<Option<Cached>> = (0..nn).map(|_| None).collect();
    let log2n = nn.next_power_of_two().trailing_zeros() as usize;

    let mut last_dd_var: Option<f64> = None;
    for it in 0..cfg.iterations {
        cache.iter_mut().for_each(|c| *c = None);
        let mut schedule: Vec<Vec<usize>> = vec![Vec::new(); nn];
        for m in 0..d {
            let lp = m.min(lm);
            let base = m - lp;
            let ncols = lp + lm + 1;
            for n in 0..nn {
                let off = n * mm;
                for rr in 0..lw {
                    h_t[rr] = blocks.tap(n, m + rr, rr);
                    r_hat[rr] = resid[off + m + rr] + h_t[rr] * est[off + m];
                }
                counter.mults(2 * lw);
                let exact = match cfg.weights {
                    Weights::Exact => true,
                    Weights::Recycled(_) => cache[n].as_ref().is_none_or(|c| m >= c.next),
                };
                let (w, mu, post) = if exact {
                    a.fill(C_ZERO);
                    for c in 0..ncols {
                        let j = base + c;
                        let v = if j == m { es } else { var_t[j] };
                        if v == 0.0 {
                            continue;
                        }
                        // column j touches window rows j - m ..= j - m + l_max
                        let lo = j.saturating_sub(m);
                        let hi = (j + lm - m).min(lm);
                        for r1 in lo..=hi {
                            let h1 = blocks.tap(n, m + r1, m + r1 - j) * v;
                            for r2 in lo..=r1 {
                                a[r1 * lw + r2] += h1 * blocks.tap(n, m + r2, m + r2 - j).conj();
                            }
                        }
                        let k = hi + 1 - lo;
                        counter.mults(k * (k + 1) / 2);
                    }
                    for i in 0..lw {
                        a[i * lw + i] += noise;
                    }
                    let gsol = Cholesky::factor_raw(lw, &a)?.solve(&h_t);
                    counter.mults(lw * lw * lw / 6 + lw * lw + 2 * lw);
                    counter.weight_computations += 1;
                    counter.solves += 1;
                    let w: Vec<Complex64> = gsol.iter().map(|x| x.conj() * es).collect();
                    let mu: Complex64 = w.iter().zip(&h_t).map(|(a, b)| a * b).sum();
                    let post = mmse::exact_post_variance(mu, es);
                    if let Weights::Recycled(rule) = cfg.weights {
                        let span = match rule {
                            Recycling::FixedSpan(s) => s,
                            Recycling::Tolerance(db) => {
                                recycling_span(db, blocks.nu_max(), mu, mm, nn)
                            }
                        };
                        schedule[n].push(m);
                        cache[n] = Some(Cached {
                            w: w.clone(),
                            next: m.saturating_add(span).saturating_add(1),
                        });
                    }
                    (w, mu, post)
                } else {
                    let w = cache[n].as_ref().expect("cached filter").w.clone();
                    let mu: Complex64 = w.iter().zip(&h_t).map(|(a, b)| a * b).sum();
                    let mut unnorm = noise * w.iter().map(|x| x.norm_sqr()).sum::<f64>();
                    counter.mults(2 * lw);
                    for c in 0..ncols {
                        let j = base + c;
                        if j == m || var_t[j] == 0.0 {
                            continue;
                        }
                        let lo = j.saturating_sub(m);
                        let hi = (j + lm - m).min(lm);
                        let mut wh = C_ZERO;
                        for r1 in lo..=hi {
                            wh += w[r1] * blocks.tap(n, m + r1, m + r1 - j);
                        }
                        counter.mults(hi + 1 - lo);
                        unnorm += wh.norm_sqr() * var_t[j];
                    }
                    let m2 = mu.norm_sqr();
                    (w, mu, if m2 > 0.0 { unnorm / m2 } else { f64::INFINITY })
                };
                if mu.norm() < MU_FLOOR {
                    return Err(Error::DegenerateLayer(mu.norm()));
                }
                let s_hat: Complex64 = w.iter().zip(&r_hat).map(|(a, b)| a * b).sum::<Complex64>() / mu;
                counter.mults(lw + 1);
                state.linear[off + m] = s_hat;
                state.post_var[off + m] = post;
                state.mu[off + m] = mu;
                if cfg.trace {
                    out.trace.push(TraceRow {
                        iteration: it,
                        m,
                        n,
                        mu_re: mu.re,
                        mu_im: mu.im,
                        post_var: post,
                        sinr_db: 10.0 * (es / post).log10(),
                        exact,
                    });
                }
            }

            // delay-Doppler stage for layer m
            for n in 0..nn {
                row[n] = state.linear[n * mm + m];
            }
            plan.forward(&mut row);
            let mut var_sum = 0.0;
            for k in 0..nn {
                let idx = m * nn + k;
                let v = state.post_var[k * mm + m];
                state.dd_obs[idx] = row[k];
                state.dd_obs_var[idx] = v;
                let post = match cfg.demap {
                    Demap::Hard => {
                        let h = constellation.nearest(row[k]);
                        SymbolPosterior {
                            mean: constellation.points()[h],
                            var: 0.0,
                            hard: h,
                        }
                    }
                    Demap::Soft => dd_posterior(
                        row[k],
                        v,
                        constellation,
                        prior.map(|p| &p.log_prob[idx * q..(idx + 1) * q]),
                    ),
                };
                state.dd_mean[idx] = post.mean;
                state.dd_var[idx] = post.var;
                state.decisions[idx] = post.hard;
                var_sum += post.var;
                row[k] = post.mean;
            }
            counter.mults(2 * nn * log2n + 2 * nn * q);
            plan.inverse(&mut row);
            var_t[m] = var_sum / nn as f64;
            for n in 0..nn {
                let off = n * mm;
                let delta = row[n] - est[off + m];
                if delta != C_ZERO {
                    for rr in 0..lw {
                        resid[off + m + rr] -= blocks.tap(n, m + rr, rr) * delta;
                    }
                    counter.mults(lw);
                }
                est[off + m] = row[n];
            }
        }
        if matches!(cfg.weights, Weights::Recycled(_)) {
            out.refreshes.push(schedule);
        }
        if cfg.record_iterations {
            let mut snap = state.clone();
            snap.est = est.clone();
            snap.var = var_t.clone();
            out.iterations.push(snap);
        }
        if let Some(tol) = cfg.early_exit {
            let mean = state.dd_var.iter().sum::<f64>() / state.dd_var.len() as f64;
            let plateau = last_dd_var.is_some_and(|prev| (prev - mean).abs() <= tol * prev.max(f64::MIN_POSITIVE));
            last_dd_var = Some(mean);
            if plateau {
                break;
            }
        }
    }
    state.est = est;
    state.var = var_t;
    out.state = state;
    Ok(out)
}

/// Recycling span after a refresh with bias `mu`: the tolerance rule, all
/// remaining layers when the channel has no Doppler, and no recycling when
/// the tolerance cannot be met at all.
fn recycling_span(delta_beta: f64, nu_max: f64, mu: Complex64, m: usize, n: usize) -> usize {
    if nu_max <= 0.0 {
        return usize::MAX;
    }
    delta_m(delta_beta, nu_max, mu.norm(), mu.arg(), m, n).unwrap_or(0)
}

/// Per-layer trace as CSV: `iteration,m,n,mu_re,mu_im,post_var,sinr_db,exact`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
