//! State evolution of the iterative detector.
//!
//! Two scalar recursions bracket the per-iteration MSE. After the linear
//! stage the time-domain error `tau2` is the average normalized MMSE output
//! variance over an ensemble of sub-channels. The DD symbol-wise estimator
//! then turns `tau2` into `nu2` by Monte Carlo, and `nu2` becomes the prior
//! of the next iteration. The lower chain treats layers already detected in
//! the current iteration as perfectly cancelled, the upper chain as not
//! cancelled at all.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{
    build_block_channels, extract_subchannel, generate_channel, noise_variance, BlockChannelSet, DelayMode,
    PowerDelayProfile,
};
use crate::detect::{dd_posterior, mmse_weights, Detection, NOISE_FLOOR};
use crate::error::{Error, Result};
use crate::frame::FrameGeometry;
use crate::numeric::{Constellation, SimRng};

pub const MIN_MC_SAMPLES: usize = 100_000;
pub const DEFAULT_MC_SAMPLES: usize = 200_000;
const MC_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeBound {
    /// Layers detected earlier in the iteration carry no residual error.
    Lower,
    /// Layers detected earlier in the iteration still carry full power.
    Upper,
}

/// Random channels the recursion averages over.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEnsemble {
    pub geometry: FrameGeometry,
    pub profile: PowerDelayProfile,
    pub speed_kmh: f64,
    pub carrier_hz: f64,
    pub delays: DelayMode,
    /// Realizations drawn per iteration.
    pub realizations: usize,
}

impl ChannelEnsemble {
    pub fn draw(&self, noise_var: f64, rng: &mut SimRng) -> Result<Vec<BlockChannelSet>> {
        (0..self.realizations)
            .map(|_| {
                let chan = generate_channel(
                    &self.profile,
                    self.speed_kmh,
                    self.carrier_hz,
                    self.delays,
                    &self.geometry,
                    rng,
                )?;
                Ok(build_block_channels(&chan, noise_var))
            })
            .collect()
    }
}

/// Linear-stage error state: mean normalized MMSE output variance over every
/// data layer and block of every channel in `channels`.
pub fn se_linear_stage(tau2_prior: f64, channels: &[BlockChannelSet], bound: SeBound, es: f64) -> Result<f64> {
    if !(tau2_prior >= 0.0) {
        return Err(Error::config("tau2_prior", "must be non-negative"));
    }
    if channels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for blocks in channels {
        let g = *blocks.geometry();
        let d = g.data_rows();
        let noise = blocks.noise_var().max(NOISE_FLOOR * es);
        for n in 0..g.n {
            for m in 0..d {
                let sub = extract_subchannel(blocks, n, m)?;
                let v: Vec<f64> = (0..sub.h.cols())
                    .map(|c| {
                        let j = sub.base + c;
                        if j >= d {
                            0.0
                        } else if j == m {
                            es
                        } else if j < m {
                            match bound {
                                SeBound::Lower => 0.0,
                                SeBound::Upper => es,
                            }
                        } else {
                            tau2_prior
                        }
                    })
                    .collect();
                let (_, mu) = mmse_weights(&sub, &v, noise, es)?;
                acc += crate::detect::exact_post_variance(mu, es);
                count += 1;
            }
        }
    }
    Ok(acc / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Monte Carlo MSE of the posterior-mean estimate of a uniform symbol seen
/// through `y = x + n`, `n ~ CN(0, tau2)`.
pub fn dd_mse_oracle(tau2: f64, constellation: &Constellation, samples: usize, rng: &SimRng) -> Result<MseEstimate> {
    if !(tau2 >= 0.0) {
        return Err(Error::config("tau2", "must be non-negative"));
    }
    if samples < MIN_MC_SAMPLES {
        return Err(Error::config("mc_samples", format!("must be at least {MIN_MC_SAMPLES}")));
    }
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut r = rng.fork(ci as u64);
            let len = MC_CHUNK.min(samples - ci * MC_CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                let x = constellation.points()[(r.uniform() * constellation.order() as f64) as usize
                    % constellation.order()];
                let y = x + r.complex_gaussian(tau2);
                let e = (x - dd_posterior(y, tau2, constellation, None).mean).norm_sqr();
                s1 += e;
                s2 += e * e;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let k = samples as f64;
    let mean = s1 / k;
    let var = (s2 / k - mean * mean).max(0.0);
    Ok(MseEstimate {
        mean,
        stderr: (var / k).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeConfig {
    pub ensemble: ChannelEnsemble,
    pub order: usize,
    pub snr_db: f64,
    pub iterations: usize,
    pub mc_samples: usize,
}

/// One iteration of both recursions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeState {
    /// 1-based.
    pub iteration: usize,
    pub tau2_prior_low: f64,
    pub tau2_prior_up: f64,
    pub tau2_low: f64,
    pub tau2_up: f64,
    pub nu2_low: f64,
    pub nu2_up: f64,
    pub nu2_stderr: f64,
    /// `E_s / tau2_low` in dB.
    pub snr_eff_db: f64,
    pub snr_eff_up_db: f64,
}

pub fn se_run(cfg: &SeConfig, rng: &mut SimRng) -> Result<Vec<SeState>> {
    if cfg.iterations == 0 {
        return Err(Error::config("iterations", "must be at least 1"));
    }
    if cfg.ensemble.realizations == 0 {
        return Err(Error::config("se.realizations", "must be at least 1"));
    }
    let c = Constellation::new(cfg.order)?;
    let es = c.es();
    let noise = noise_variance(cfg.snr_db, es);
    let (mut prior_low, mut prior_up) = (es, es);
    let mut out = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let channels = cfg.ensemble.draw(noise, rng)?;
        let tau2_low = se_linear_stage(prior_low, &channels, SeBound::Lower, es)?;
        let tau2_up = se_linear_stage(prior_up, &channels, SeBound::Upper, es)?;
        // common random numbers keep the two chains ordered
        let mc = rng.fork(1_000_000 + it as u64);
        let low = dd_mse_oracle(tau2_low, &c, cfg.mc_samples, &mc)?;
        let up = dd_mse_oracle(tau2_up, &c, cfg.mc_samples, &mc)?;
        out.push(SeState {
            iteration: it,
            tau2_prior_low: prior_low,
            tau2_prior_up: prior_up,
            tau2_low,
            tau2_up,
            nu2_low: low.mean,
            nu2_up: up.mean,
            nu2_stderr: low.stderr.max(up.stderr),
            snr_eff_db: 10.0 * (es / tau2_low).log10(),
            snr_eff_up_db: 10.0 * (es / tau2_up).log10(),
        });
        prior_low = low.mean;
        prior_up = up.mean;
    }
    Ok(out)
}

/// Empirical linear-stage MSE per recorded iteration: mean of
/// `|s_hat - s|^2` over data layers and blocks.
pub fn linear_stage_mse(det: &Detection, truth: &[Complex64], geometry: &FrameGeometry) -> Vec<f64> {
    let (mm, d) = (geometry.m, geometry.data_rows());
    det.iterations
        .iter()
        .map(|snap| {
            let mut acc = 0.0;
            for n in 0..geometry.n {
                for m in 0..d {
                    acc += (snap.linear[n * mm + m] - truth[n * mm + m]).norm_sqr();
                }
            }
            acc / (d * geometry.n) as f64
        })
        .collect()
}

#[derive(Serialize)]
struct SeCsvRow {
    iteration: usize,
    tau2_low: f64,
    tau2_up: f64,
    tau2_sim: Option<f64>,
    nu2: f64,
    snr_eff_db: f64,
}

/// CSV `iteration,tau2_low,tau2_up,tau2_sim,nu2,snr_eff_db`; `tau2_sim` is
/// left empty when no simulation accompanies the recursion.
pub fn write_se_csv<W: Write>(states: &[SeState], sim: Option<&[f64]>, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for (i, s) in states.iter().enumerate() {
        wtr.serialize(SeCsvRow {
            iteration: s.iteration,
            tau2_low: s.tau2_low,
            tau2_up: s.tau2_up,
            tau2_sim: sim.and_then(|v| v.get(i).copied()),
            nu2: s.nu2_low,
            snr_eff_db: s.snr_eff_db,
        })?;
    }
    wtr.flush()?;
    Ok(())
}
