//! Doubly-selective multipath channels and their block-banded time-domain form.
//!
//! A path has a complex gain, a delay in taps of `T / M` and a Doppler in taps
//! of `delta_f / N`. Thanks to the zero padding, block `n` of the received signal
//! only sees block `n` of the transmit signal through a lower-banded `M x M`
//! matrix `H_n`; entry `(m, m - l)` is stored as tap `l` of row `m`.

mod profile;

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FrameGeometry, TimeSignal};
use crate::numeric::{sinc, CMat, SimRng, C_ZERO};

pub use profile::{max_doppler_hz, max_doppler_taps, PowerDelayProfile, ProfileTap};

/// How profile delays are mapped onto the tap grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayMode {
    /// Round every delay to the nearest tap.
    #[default]
    Integer,
    /// Keep fractional delays and spread them with the sinc kernel.
    Fractional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelPath {
    pub gain: Complex64,
    /// Delay in taps.
    pub delay: f64,
    /// Doppler in taps.
    pub doppler: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    geometry: FrameGeometry,
    paths: Vec<ChannelPath>,
    k_max: f64,
}

impl ChannelRealization {
    pub fn new(geometry: FrameGeometry, paths: Vec<ChannelPath>, k_max: f64) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Profile("a channel needs at least one path".into()));
        }
        let l_max = geometry.l_max as f64;
        for p in &paths {
            if !(p.delay >= 0.0 && p.delay <= l_max) {
                return Err(Error::Profile(format!(
                    "path delay {} taps outside [0, {}]",
                    p.delay, geometry.l_max
                )));
            }
            if !(p.doppler.abs() <= k_max + 1e-12) {
                return Err(Error::Profile(format!(
                    "path Doppler {} exceeds k_max {}",
                    p.doppler, k_max
                )));
            }
        }
        Ok(Self {
            geometry,
            paths,
            k_max,
        })
    }

    pub fn geometry(&self) -> &FrameGeometry {
        &self.geometry
    }

    pub fn paths(&self) -> &[ChannelPath] {
        &self.paths
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    pub fn l_max(&self) -> usize {
        self.geometry.l_max
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }

    /// True when every path sits exactly on a tap.
    pub fn is_integer_delay(&self) -> bool {
        self.paths.iter().all(|p| p.delay.fract() == 0.0)
    }

    /// One path per line: `gain_re,gain_im,delay_taps,doppler_taps`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["gain_re", "gain_im", "delay_taps", "doppler_taps"])?;
        for p in &self.paths {
            wtr.serialize((p.gain.re, p.gain.im, p.delay, p.doppler))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, geometry: FrameGeometry, k_max: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut paths = Vec::new();
        for rec in rdr.deserialize() {
            let (re, im, delay, doppler): (f64, f64, f64, f64) = rec?;
            paths.push(ChannelPath {
                gain: Complex64::new(re, im),
                delay,
                doppler,
            });
        }
        Self::new(geometry, paths, k_max)
    }
}

/// Draw one realization: complex Gaussian gains following the profile powers
/// (normalized to unit total mean power) and Dopplers uniform in `[-k_max, k_max]`.
pub fn generate_channel(
    profile: &PowerDelayProfile,
    speed_kmh: f64,
    carrier_hz: f64,
    delays: DelayMode,
    geometry: &FrameGeometry,
    rng: &mut SimRng,
) -> Result<ChannelRealization> {
    profile.validate()?;
    if !(speed_kmh >= 0.0) || !(carrier_hz > 0.0) {
        return Err(Error::Profile("speed must be >= 0 and carrier > 0".into()));
    }
    let k_max = max_doppler_taps(speed_kmh, carrier_hz, geometry);
    let taps = profile.delay_taps(geometry);
    let powers = profile.normalized_powers();
    let mut paths = Vec::with_capacity(taps.len());
    for (&d, &p) in taps.iter().zip(&powers) {
        let delay = match delays {
            DelayMode::Integer => d.round(),
            DelayMode::Fractional => d,
        };
        if delay > geometry.l_max as f64 + 1e-9 {
            return Err(Error::Profile(format!(
                "{}: delay of {d:.3} taps exceeds l_max = {}",
                profile.name, geometry.l_max
            )));
        }
        paths.push(ChannelPath {
            gain: rng.complex_gaussian(p),
            delay: delay.min(geometry.l_max as f64),
            doppler: rng.uniform_range(-k_max, k_max),
        });
    }
    ChannelRealization::new(*geometry, paths, k_max)
}

/// Discrete delay-time response at tap `l` and absolute sample `n`:
/// `sum_i h_i exp(j 2 pi kappa_i (n - l_i) / NM) sinc(l - l_i)`.
pub fn delay_time_response(chan: &ChannelRealization, l: usize, n: usize) -> Complex64 {
    let nm = chan.geometry.samples() as f64;
    chan.paths
        .iter()
        .map(|p| {
            let ph = 2.0 * PI * p.doppler * (n as f64 - p.delay) / nm;
            p.gain * Complex64::from_polar(sinc(l as f64 - p.delay), ph)
        })
        .sum()
}

/// Share of mean path power that the sinc kernel of fractional delays spreads
/// outside taps `0..=l_max`, split into the non-causal part (`l < 0`) and the
/// part beyond `l_max`.
pub fn truncated_energy_fraction(delays: &[f64], powers: &[f64], l_max: usize) -> (f64, f64) {
    // sum over all integers of sinc^2(l - d) is 1; the far tails beyond this
    // window add well under 1e-5.
    const REACH: i64 = 20_000;
    let total: f64 = powers.iter().sum();
    let (mut below, mut beyond) = (0.0, 0.0);
    for (&d, &p) in delays.iter().zip(powers) {
        if d.fract() == 0.0 {
            continue;
        }
        below += p * (-REACH..0).map(|l| sinc(l as f64 - d).powi(2)).sum::<f64>();
        beyond += p
            * (l_max as i64 + 1..l_max as i64 + REACH)
                .map(|l| sinc(l as f64 - d).powi(2))
                .sum::<f64>();
    }
    (below / total, beyond / total)
}

/// Channel-estimation error model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CsiErrorModel {
    /// Variance of the complex error on the first column of every block.
    pub sigma_h2: f64,
    /// Variance of the real error on every Doppler tap.
    pub sigma_k2: f64,
}

impl CsiErrorModel {
    pub fn perfect() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_h2 >= 0.0) || !(self.sigma_k2 >= 0.0) {
            return Err(Error::config("csi", "error variances must be >= 0"));
        }
        Ok(())
    }

    pub fn is_perfect(&self) -> bool {
        self.sigma_h2 == 0.0 && self.sigma_k2 == 0.0
    }
}

/// The `N` banded block matrices of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockChannelSet {
    geometry: FrameGeometry,
    /// `taps[(n * M + m) * (l_max + 1) + l]` is entry `(m, m - l)` of `H_n`.
    taps: Vec<Complex64>,
    noise_var: f64,
    nu_max: f64,
}

impl BlockChannelSet {
    /// Assemble from per-tap column-0 coefficients.
    ///
    /// `col0[(n * (l_max + 1) + l) * P + i]` is path `i`'s share of entry
    /// `(l, 0)` of `H_n`; every other entry on diagonal `l` follows by rotating
    /// each share with that path's Doppler `dopplers[i]`.
    fn from_first_column(
        geometry: FrameGeometry,
        col0: &[Complex64],
        dopplers: &[f64],
        noise_var: f64,
        nu_max: f64,
    ) -> Self {
        let (m_len, lw, np) = (geometry.m, geometry.l_max + 1, dopplers.len());
        let nm = geometry.samples() as f64;
        let mut taps = vec![C_ZERO; geometry.n * m_len * lw];
        taps.par_chunks_mut(m_len * lw)
            .enumerate()
            .for_each(|(n, block)| {
                for l in 0..lw {
                    let shares = &col0[(n * lw + l) * np..(n * lw + l + 1) * np];
                    for (i, &c) in shares.iter().enumerate() {
                        if c == C_ZERO {
                            continue;
                        }
                        let w = 2.0 * PI * dopplers[i] / nm;
                        for m in l..m_len {
                            block[m * lw + l] += c * Complex64::from_polar(1.0, w * (m - l) as f64);
                        }
                    }
                }
            });
        Self {
            geometry,
            taps,
            noise_var,
            nu_max,
        }
    }

    pub fn geometry(&self) -> &FrameGeometry {
        &self.geometry
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Maximum Doppler in taps the receiver assumes.
    pub fn nu_max(&self) -> f64 {
        self.nu_max
    }

    pub fn with_noise_var(mut self, noise_var: f64) -> Self {
        self.noise_var = noise_var;
        self
    }

    pub fn tap(&self, n: usize, m: usize, l: usize) -> Complex64 {
        let lw = self.geometry.l_max + 1;
        self.taps[(n * self.geometry.m + m) * lw + l]
    }

    /// The `l_max + 1` taps of row `m` of `H_n`.
    pub fn row_taps(&self, n: usize, m: usize) -> &[Complex64] {
        let lw = self.geometry.l_max + 1;
        let start = (n * self.geometry.m + m) * lw;
        &self.taps[start..start + lw]
    }

    /// Entry `(row, col)` of `H_n`, zero outside the band.
    pub fn entry(&self, n: usize, row: usize, col: usize) -> Complex64 {
        if col > row || row - col > self.geometry.l_max {
            C_ZERO
        } else {
            self.tap(n, row, row - col)
        }
    }

    pub fn block_matrix(&self, n: usize) -> CMat {
        CMat::from_fn(self.geometry.m, self.geometry.m, |r, c| self.entry(n, r, c))
    }

    /// `H_n s`.
    pub fn mul_block(&self, n: usize, s: &[Complex64]) -> Vec<Complex64> {
        let g = &self.geometry;
        (0..g.m)
            .map(|m| {
                self.row_taps(n, m)
                    .iter()
                    .take(m + 1)
                    .enumerate()
                    .map(|(l, h)| h * s[m - l])
                    .sum()
            })
            .collect()
    }

    /// Mean squared difference of all band taps, a CSI quality figure.
    pub fn tap_mse(&self, other: &BlockChannelSet) -> f64 {
        self.taps
            .iter()
            .zip(&other.taps)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / self.taps.len() as f64
    }
}

fn first_column_shares(chan: &ChannelRealization) -> Vec<Complex64> {
    let g = chan.geometry;
    let (lw, np) = (g.l_max + 1, chan.paths.len());
    let nm = g.samples() as f64;
    let mut col0 = vec![C_ZERO; g.n * lw * np];
    for n in 0..g.n {
        for l in 0..lw {
            for (i, p) in chan.paths.iter().enumerate() {
                let s = sinc(l as f64 - p.delay);
                if s == 0.0 {
                    continue;
                }
                let ph = 2.0 * PI * p.doppler * ((n * g.m + l) as f64 - p.delay) / nm;
                col0[(n * lw + l) * np + i] = p.gain * Complex64::from_polar(s, ph);
            }
        }
    }
    col0
}

/// Band taps of every `H_n` for a realization; tap `l` of row `m` in block `n`
/// equals the delay-time response at tap `l` and sample `nM + m`.
pub fn build_block_channels(chan: &ChannelRealization, noise_var: f64) -> BlockChannelSet {
    let dopplers: Vec<f64> = chan.paths.iter().map(|p| p.doppler).collect();
    BlockChannelSet::from_first_column(
        chan.geometry,
        &first_column_shares(chan),
        &dopplers,
        noise_var,
        chan.k_max,
    )
}

/// Channel as the receiver believes it to be.
///
/// Doppler taps get real Gaussian errors of variance `sigma_k2`. The first
/// column of every block gets complex Gaussian errors of variance `sigma_h2`
/// on each occupied tap (booked to the strongest path at that tap) and the
/// rest of each diagonal is regenerated from the erroneous Dopplers.
pub fn perturb_csi(
    chan: &ChannelRealization,
    model: &CsiErrorModel,
    noise_var: f64,
    rng: &mut SimRng,
) -> Result<BlockChannelSet> {
    model.validate()?;
    let g = chan.geometry;
    let (lw, np) = (g.l_max + 1, chan.paths.len());
    let sk = model.sigma_k2.sqrt();
    let dopplers: Vec<f64> = chan
        .paths
        .iter()
        .map(|p| p.doppler + sk * rng.gaussian())
        .collect();
    let mut col0 = first_column_shares(chan);
    for n in 0..g.n {
        for l in 0..lw {
            let strongest = chan
                .paths
                .iter()
                .enumerate()
                .map(|(i, p)| (i, p.gain.norm() * sinc(l as f64 - p.delay).abs()))
                .filter(|&(_, a)| a > 0.0)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            let err = rng.complex_gaussian(model.sigma_h2);
            if let Some((i, _)) = strongest {
                col0[(n * lw + l) * np + i] += err;
            }
        }
    }
    Ok(BlockChannelSet::from_first_column(
        g, &col0, &dopplers, noise_var, chan.k_max,
    ))
}

/// `r_n = H_n s_n + z_n` with `z_n ~ CN(0, sigma_n^2 I)`.
pub fn apply_channel(
    signal: &TimeSignal,
    blocks: &BlockChannelSet,
    rng: &mut SimRng,
) -> Result<TimeSignal> {
    let g = *signal.geometry();
    if g != blocks.geometry {
        return Err(Error::Dimension("signal and channel geometry differ".into()));
    }
    let mut out = TimeSignal::zeros(g);
    for n in 0..g.n {
        let r = blocks.mul_block(n, signal.block(n));
        out.block_mut(n).copy_from_slice(&r);
    }
    if blocks.noise_var > 0.0 {
        for x in out.samples_mut() {
            *x += rng.complex_gaussian(blocks.noise_var);
        }
    }
    Ok(out)
}

/// `sigma_n^2 = E_s / SNR`.
pub fn noise_variance(snr_db: f64, es: f64) -> f64 {
    es / 10f64.powf(snr_db / 10.0)
}

/// Window of `H_n` seen by layer `m`: rows `m..=m + l_max`, columns
/// `base..=m + l_max` with `base = max(m - l_max, 0)`. The target layer sits in
/// column `l_prime = min(m, l_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubChannel {
    pub n: usize,
    pub m: usize,
    pub base: usize,
    pub l_prime: usize,
    pub h: CMat,
}

impl SubChannel {
    pub fn target_column(&self) -> Vec<Complex64> {
        self.h.column(self.l_prime)
    }
}

pub fn extract_subchannel(blocks: &BlockChannelSet, n: usize, m: usize) -> Result<SubChannel> {
    let g = &blocks.geometry;
    if n >= g.n {
        return Err(Error::Dimension(format!("block {n} out of range")));
    }
    if m >= g.data_rows() {
        return Err(Error::ZeroPaddingLayer {
            m,
            data: g.data_rows(),
        });
    }
    let lm = g.l_max;
    let base = m.saturating_sub(lm);
    let l_prime = m.min(lm);
    let h = CMat::from_fn(lm + 1, l_prime + lm + 1, |r, c| {
        blocks.entry(n, m + r, base + c)
    });
    Ok(SubChannel {
        n,
        m,
        base,
        l_prime,
        h,
    })
}
