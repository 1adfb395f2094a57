//! Coded transmission and the joint detection-decoding loop.
//!
//! Each outer iteration runs the detector, turns its DD observations into
//! bit LLRs, removes the a-priori part, de-interleaves into the LDPC decoder
//! and interleaves the decoder posterior back as the next a-priori input.
//! All LLRs are `log P(b = 0) / P(b = 1)`.

mod ldpc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::BlockChannelSet;
use crate::detect::{detect_frame, DetectorConfig, DetectorPrior};
use crate::error::{Error, Result};
use crate::frame::{FrameGeometry, TimeSignal};
use crate::numeric::{Constellation, SimRng, C_ZERO};

pub use ldpc::{clamp_llr, BpOptions, BpResult, LdpcCode, BUNDLED_LENGTH, BUNDLED_SEED, LLR_CLAMP};

/// Floor on the DD observation variance when forming LLRs.
const VAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlrMethod {
    #[default]
    Exact,
    MaxLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// Decoder posterior.
    #[default]
    Intrinsic,
    /// Decoder posterior minus its input.
    Extrinsic,
}

/// Bit LLRs of one symbol observed as `y` with noise variance `v`. An
/// optional log prior per constellation point turns them into posterior
/// LLRs.
pub fn symbol_bit_llrs(
    y: Complex64,
    v: f64,
    constellation: &Constellation,
    method: LlrMethod,
    log_prior: Option<&[f64]>,
    out: &mut [f64],
) {
    symbol_bit_llrs_unclamped(y, v, constellation, method, log_prior, out);
    for o in out.iter_mut().take(constellation.bits_per_symbol()) {
        *o = clamp_llr(*o);
    }
}

/// As [`symbol_bit_llrs`] but without the final clamp, so that a saturated
/// prior can still be subtracted exactly.
fn symbol_bit_llrs_unclamped(
    y: Complex64,
    v: f64,
    constellation: &Constellation,
    method: LlrMethod,
    log_prior: Option<&[f64]>,
    out: &mut [f64],
) {
    let pts = constellation.points();
    let bps = constellation.bits_per_symbol();
    let v = if v > VAR_FLOOR { v } else { VAR_FLOOR };
    let mut metric = [0.0f64; 16];
    for (i, a) in pts.iter().enumerate() {
        metric[i] = -(y - a).norm_sqr() / v + log_prior.map_or(0.0, |p| p[i]);
    }
    for (p, o) in out.iter_mut().enumerate().take(bps) {
        let mut best = [f64::NEG_INFINITY; 2];
        for (i, &mt) in metric[..pts.len()].iter().enumerate() {
            let b = constellation.label_bit(i, p) as usize;
            best[b] = best[b].max(mt);
        }
        let l = match method {
            LlrMethod::MaxLog => best[0] - best[1],
            LlrMethod::Exact => {
                let mut s = [0.0f64; 2];
                for (i, &mt) in metric[..pts.len()].iter().enumerate() {
                    let b = constellation.label_bit(i, p) as usize;
                    s[b] += (mt - best[b]).exp();
                }
                best[0] - best[1] + s[0].ln() - s[1].ln()
            }
        };
        *o = if l.is_nan() { 0.0 } else { l };
    }
}

/// Bit LLRs for a sequence of DD observations, `log2 Q` per symbol.
pub fn llr_from_dd(obs: &[Complex64], var: &[f64], constellation: &Constellation, method: LlrMethod) -> Result<Vec<f64>> {
    if obs.len() != var.len() {
        return Err(Error::Dimension("observation and variance lengths differ".into()));
    }
    let bps = constellation.bits_per_symbol();
    let mut out = vec![0.0; obs.len() * bps];
    for ((y, v), o) in obs.iter().zip(var).zip(out.chunks_mut(bps)) {
        symbol_bit_llrs(*y, *v, constellation, method, None, o);
    }
    Ok(out)
}

pub fn extrinsic(l_out: &[f64], l_a: &[f64]) -> Result<Vec<f64>> {
    if l_out.len() != l_a.len() {
        return Err(Error::Dimension(format!("{} vs {} LLRs", l_out.len(), l_a.len())));
    }
    Ok(l_out.iter().zip(l_a).map(|(a, b)| a - b).collect())
}

/// Probability of every constellation label given independent bit LLRs,
/// each factor `(1 +/- tanh(L/2)) / 2`.
pub fn label_weights(llrs: &[f64], constellation: &Constellation) -> Vec<f64> {
    let t: Vec<f64> = llrs.iter().map(|l| (clamp_llr(*l) / 2.0).tanh()).collect();
    (0..constellation.order())
        .map(|i| {
            t.iter()
                .enumerate()
                .map(|(p, tp)| {
                    let s = if constellation.label_bit(i, p) == 0 { 1.0 } else { -1.0 };
                    (1.0 + s * tp) / 2.0
                })
                .product()
        })
        .collect()
}

/// Soft symbol mean and variance from one symbol's bit LLRs.
pub fn soft_symbols_from_llr(llrs: &[f64], constellation: &Constellation) -> Result<(Complex64, f64)> {
    if llrs.len() != constellation.bits_per_symbol() {
        return Err(Error::BitCount {
            bits: llrs.len(),
            per_symbol: constellation.bits_per_symbol(),
        });
    }
    let w = label_weights(llrs, constellation);
    let pts = constellation.points();
    let mean: Complex64 = w.iter().zip(pts).map(|(p, a)| a * p).sum();
    let second: f64 = w.iter().zip(pts).map(|(p, a)| p * a.norm_sqr()).sum();
    Ok((mean, (second - mean.norm_sqr()).max(0.0)))
}

/// Log prior of every label, computed without the tanh saturation.
fn label_log_priors(llrs: &[f64], constellation: &Constellation, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = llrs
            .iter()
            .enumerate()
            .map(|(p, &l)| {
                let l = clamp_llr(l);
                let x = if constellation.label_bit(i, p) == 0 { -l } else { l };
                // -ln(1 + e^x)
                -(x.max(0.0) + (-x.abs()).exp().ln_1p())
            })
            .sum();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn new(len: usize, rng: &mut SimRng) -> Self {
        Self {
            perm: rng.permutation(len),
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// `out[i] = x[perm[i]]`.
    pub fn interleave<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.perm.iter().map(|&p| x[p]).collect()
    }

    pub fn deinterleave<T: Copy + Default>(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); y.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = y[i];
        }
        out
    }
}

/// Placement of codewords in a frame. Codeword `i` occupies frame bits
/// `i * n .. (i + 1) * n` after interleaving; the remaining bits are uncoded.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedLayout {
    pub code: LdpcCode,
    pub interleavers: Vec<Interleaver>,
    pub frame_bits: usize,
    pub interleaver_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodedFrame {
    pub info: Vec<Vec<u8>>,
    /// Transmitted bits in symbol-mapping order.
    pub bits: Vec<u8>,
}

impl CodedLayout {
    pub fn new(code: LdpcCode, geometry: &FrameGeometry, constellation: &Constellation, interleaver_seed: u64) -> Result<Self> {
        let frame_bits = geometry.data_symbols() * constellation.bits_per_symbol();
        let count = frame_bits / code.n();
        if count == 0 {
            return Err(Error::Geometry(format!(
                "frame carries {frame_bits} bits, less than one codeword of {}",
                code.n()
            )));
        }
        let mut rng = SimRng::new(interleaver_seed);
        let interleavers = (0..count).map(|_| Interleaver::new(code.n(), &mut rng)).collect();
        Ok(Self {
            code,
            interleavers,
            frame_bits,
            interleaver_seed,
        })
    }

    pub fn codewords(&self) -> usize {
        self.interleavers.len()
    }

    pub fn coded_bits(&self) -> usize {
        self.codewords() * self.code.n()
    }

    pub fn info_bits(&self) -> usize {
        self.codewords() * self.code.k()
    }

    pub fn encode_frame(&self, rng: &mut SimRng) -> Result<CodedFrame> {
        let mut info = Vec::with_capacity(self.codewords());
        let mut bits = Vec::with_capacity(self.frame_bits);
        for il in &self.interleavers {
            let u = rng.bits(self.code.k());
            bits.extend(il.interleave(&self.code.encode(&u)?));
            info.push(u);
        }
        bits.extend(rng.bits(self.frame_bits - bits.len()));
        Ok(CodedFrame { info, bits })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurboConfig {
    pub iterations: usize,
    pub detector: DetectorConfig,
    pub llr: LlrMethod,
    pub feedback: Feedback,
    pub bp: BpOptions,
}

impl TurboConfig {
    pub fn new(iterations: usize, detector: DetectorConfig) -> Self {
        Self {
            iterations,
            detector,
            llr: LlrMethod::Exact,
            feedback: Feedback::Intrinsic,
            bp: BpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurboIteration {
    /// A-priori LLRs handed to the detector, frame bit order.
    pub l_a: Vec<f64>,
    /// Detector output LLRs, frame bit order.
    pub l_out: Vec<f64>,
    /// Extrinsic LLRs handed to the decoder, frame bit order. The prior is
    /// removed before clamping, so this is not always `l_out - l_a`.
    pub l_e: Vec<f64>,
    /// Decoder posterior per codeword, code bit order.
    pub decoder_llr: Vec<Vec<f64>>,
    pub decoded_info: Vec<Vec<u8>>,
    pub converged: Vec<bool>,
    /// Detector hard decisions for the whole frame.
    pub detector_bits: Vec<u8>,
    pub complex_mults: u64,
}

pub fn turbo_receive(
    r: &TimeSignal,
    blocks: &BlockChannelSet,
    constellation: &Constellation,
    layout: &CodedLayout,
    cfg: &TurboConfig,
) -> Result<Vec<TurboIteration>> {
    if cfg.iterations == 0 {
        return Err(Error::config("turbo.iterations", "must be at least 1"));
    }
    let g = *blocks.geometry();
    let bps = constellation.bits_per_symbol();
    let q = constellation.order();
    if g.data_symbols() * bps != layout.frame_bits {
        return Err(Error::Geometry("coded layout does not match the frame".into()));
    }
    let (d, nn) = (g.data_rows(), g.n);
    let grid = |s: usize| (s % d) * nn + s / d;
    let ncode = layout.code.n();

    let mut l_a = vec![0.0; layout.frame_bits];
    let mut prior: Option<DetectorPrior> = None;
    let mut out = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let det = detect_frame(r, blocks, constellation, &cfg.detector, prior.as_ref())?;
        let st = &det.state;
        let mut l_out = vec![0.0; layout.frame_bits];
        for (s, o) in l_out.chunks_mut(bps).enumerate() {
            let gi = grid(s);
            let lp = prior.as_ref().map(|p| &p.log_prob[gi * q..(gi + 1) * q]);
            symbol_bit_llrs_unclamped(st.dd_obs[gi], st.dd_obs_var[gi], constellation, cfg.llr, lp, o);
        }
        let l_e: Vec<f64> = extrinsic(&l_out, &l_a)?.into_iter().map(clamp_llr).collect();
        l_out.iter_mut().for_each(|l| *l = clamp_llr(*l));
        let decoded: Vec<(BpResult, Vec<f64>)> = layout
            .interleavers
            .par_iter()
            .enumerate()
            .map(|(i, il)| {
                let input = il.deinterleave(&l_e[i * ncode..(i + 1) * ncode]);
                layout.code.decode(&input, &cfg.bp).map(|res| (res, input))
            })
            .collect::<Result<_>>()?;

        let mut next_a = vec![0.0; layout.frame_bits];
        for (i, ((res, input), il)) in decoded.iter().zip(&layout.interleavers).enumerate() {
            let fb: Vec<f64> = match cfg.feedback {
                Feedback::Intrinsic => res.llr.clone(),
                Feedback::Extrinsic => res.llr.iter().zip(input).map(|(a, b)| clamp_llr(a - b)).collect(),
            };
            next_a[i * ncode..(i + 1) * ncode].copy_from_slice(&il.interleave(&fb));
        }

        let mut p = DetectorPrior {
            mean: vec![C_ZERO; d * nn],
            var: vec![0.0; d * nn],
            log_prob: vec![0.0; d * nn * q],
        };
        for (s, bits) in next_a.chunks(bps).enumerate() {
            let gi = grid(s);
            let (mean, var) = soft_symbols_from_llr(bits, constellation)?;
            p.mean[gi] = mean;
            p.var[gi] = var;
            label_log_priors(bits, constellation, &mut p.log_prob[gi * q..(gi + 1) * q]);
        }

        out.push(TurboIteration {
            l_a: std::mem::replace(&mut l_a, next_a),
            l_out,
            l_e,
            decoded_info: decoded.iter().map(|(res, _)| layout.code.extract_info(&res.hard)).collect(),
            converged: decoded.iter().map(|(res, _)| res.converged).collect(),
            decoder_llr: decoded.into_iter().map(|(res, _)| res.llr).collect(),
            detector_bits: det.hard_bits(&g, constellation),
            complex_mults: det.counter.complex_mults,
        });
        prior = Some(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_channel, build_block_channels, generate_channel, noise_variance, DelayMode, PowerDelayProfile};
    use crate::frame::{idzt_transmit, DdFrame};
    use proptest::prelude::*;

    #[test]
    fn saturated_prior_leaves_channel_extrinsic() {
        // QPSK bits are separable, so the extrinsic part of the posterior is
        // the channel LLR whatever the prior.
        let c = Constellation::new(4).unwrap();
        let y = Complex64::new(0.3, -0.9);
        let mut ch = [0.0; 2];
        symbol_bit_llrs(y, 0.2, &c, LlrMethod::Exact, None, &mut ch);
        for la in [[LLR_CLAMP, -LLR_CLAMP], [-LLR_CLAMP, -LLR_CLAMP], [3.0, LLR_CLAMP]] {
            let mut lp = [0.0; 4];
            label_log_priors(&la, &c, &mut lp);
            let mut app = [0.0; 2];
            symbol_bit_llrs_unclamped(y, 0.2, &c, LlrMethod::Exact, Some(&lp), &mut app);
            let e = extrinsic(&app, &la).unwrap();
            for (a, b) in e.iter().zip(&ch) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn llr_limits() {
        let c = Constellation::new(4).unwrap();
        let mut out = [0.0; 2];
        for (i, a) in c.points().iter().enumerate() {
            symbol_bit_llrs(*a, 1e-9, &c, LlrMethod::Exact, None, &mut out);
            for (p, l) in out.iter().enumerate() {
                let want = if c.label_bit(i, p) == 0 { LLR_CLAMP } else { -LLR_CLAMP };
                assert_eq!(*l, want);
            }
        }
        symbol_bit_llrs(C_ZERO, 0.3, &c, LlrMethod::Exact, None, &mut out);
        assert!(out.iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn llr_matches_definition() {
        let c = Constellation::new(16).unwrap();
        let mut rng = SimRng::new(1);
        let mut out = [0.0; 4];
        for _ in 0..200 {
            let y = rng.complex_gaussian(1.5);
            let v = rng.uniform_range(0.05, 2.0);
            symbol_bit_llrs(y, v, &c, LlrMethod::Exact, None, &mut out);
            for p in 0..4 {
                let mut s = [0.0; 2];
                for (i, a) in c.points().iter().enumerate() {
                    s[c.label_bit(i, p) as usize] += (-(y - a).norm_sqr() / v).exp();
                }
                let want = (s[0] / s[1]).ln();
                if want.abs() < 40.0 {
                    assert!((out[p] - want).abs() < 1e-9 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn max_log_gap_is_bounded() {
        let mut rng = SimRng::new(2);
        for order in [4, 16] {
            let c = Constellation::new(order).unwrap();
            let bound = ((order / 2) as f64).ln();
            let mut a = vec![0.0; c.bits_per_symbol()];
            let mut b = a.clone();
            for _ in 0..500 {
                let y = rng.complex_gaussian(2.0);
                let v = rng.uniform_range(0.01, 3.0);
                symbol_bit_llrs(y, v, &c, LlrMethod::Exact, None, &mut a);
                symbol_bit_llrs(y, v, &c, LlrMethod::MaxLog, None, &mut b);
                for (x, z) in a.iter().zip(&b) {
                    assert!((x - z).abs() <= bound + 1e-12);
                }
            }
        }
    }

    #[test]
    fn extrinsic_subtracts() {
        let mut rng = SimRng::new(3);
        let lo: Vec<f64> = (0..50).map(|_| rng.gaussian() * 5.0).collect();
        let la: Vec<f64> = (0..50).map(|_| rng.gaussian() * 5.0).collect();
        let e = extrinsic(&lo, &la).unwrap();
        for i in 0..50 {
            assert_eq!(e[i], lo[i] - la[i]);
        }
        assert_eq!(extrinsic(&lo, &vec![0.0; 50]).unwrap(), lo);
        assert!(extrinsic(&lo, &lo).unwrap().iter().all(|x| *x == 0.0));
        assert!(extrinsic(&lo, &la[..3]).is_err());
    }

    #[test]
    fn soft_symbol_limits_and_oracle() {
        let c = Constellation::new(16).unwrap();
        let (m, v) = soft_symbols_from_llr(&[0.0; 4], &c).unwrap();
        assert!(m.norm() < 1e-15 && (v - 1.0).abs() < 1e-12);
        for i in 0..16 {
            let l: Vec<f64> = (0..4).map(|p| if c.label_bit(i, p) == 0 { 60.0 } else { -60.0 }).collect();
            let (m, v) = soft_symbols_from_llr(&l, &c).unwrap();
            assert!((m - c.points()[i]).norm() < 1e-12 && v < 1e-12);
        }
        let mut rng = SimRng::new(4);
        for _ in 0..100 {
            let l: Vec<f64> = (0..4).map(|_| rng.gaussian() * 4.0).collect();
            let w = label_weights(&l, &c);
            let mut lp = vec![0.0; 16];
            label_log_priors(&l, &c, &mut lp);
            for i in 0..16 {
                let want: f64 = (0..4)
                    .map(|p| {
                        let p0 = 1.0 / (1.0 + (-l[p]).exp());
                        if c.label_bit(i, p) == 0 { p0 } else { 1.0 - p0 }
                    })
                    .product();
                assert!((w[i] - want).abs() < 1e-12);
                assert!((lp[i].exp() - want).abs() < 1e-12);
            }
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(soft_symbols_from_llr(&[0.0; 3], &c).is_err());
    }

    proptest! {
        #[test]
        fn extreme_llrs_stay_finite(l in prop::collection::vec(prop_oneof![
            Just(f64::INFINITY), Just(f64::NEG_INFINITY), Just(f64::NAN), Just(1e300), -1e3f64..1e3
        ], 4), re in -1e6f64..1e6, im in -1e6f64..1e6, v in prop_oneof![Just(0.0), Just(-1.0), 1e-300f64..1e6]) {
            let c = Constellation::new(16).unwrap();
            let (m, var) = soft_symbols_from_llr(&l, &c).unwrap();
            prop_assert!(m.re.is_finite() && m.im.is_finite() && var.is_finite());
            let w = label_weights(&l, &c);
            prop_assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut out = [0.0; 4];
            for method in [LlrMethod::Exact, LlrMethod::MaxLog] {
                symbol_bit_llrs(Complex64::new(re, im), v, &c, method, None, &mut out);
                prop_assert!(out.iter().all(|x| x.is_finite() && x.abs() <= LLR_CLAMP));
            }
            for x in &l {
                let y = clamp_llr(*x);
                prop_assert!(y.is_finite());
                if !x.is_nan() && *x != 0.0 {
                    prop_assert_eq!(y.signum(), x.signum());
                }
            }
        }
    }

    #[test]
    fn interleaver_round_trip() {
        let mut rng = SimRng::new(5);
        let il = Interleaver::new(1024, &mut rng);
        let x: Vec<f64> = (0..1024).map(|i| i as f64).collect();
        let y = il.interleave(&x);
        assert_ne!(y, x);
        assert_eq!(il.deinterleave(&y), x);
    }

    fn geometry() -> FrameGeometry {
        FrameGeometry::new(64, 16, 7, 15e3).unwrap()
    }

    #[test]
    fn layout_counts() {
        let g = geometry();
        let code = LdpcCode::bundled();
        let l4 = CodedLayout::new(code.clone(), &g, &Constellation::new(4).unwrap(), 1).unwrap();
        assert_eq!(l4.codewords(), 57 * 16 * 2 / 1024);
        let l16 = CodedLayout::new(code.clone(), &g, &Constellation::new(16).unwrap(), 1).unwrap();
        assert_eq!(l16.codewords(), 3);
        let small = FrameGeometry::new(16, 8, 3, 15e3).unwrap();
        assert!(CodedLayout::new(code, &small, &Constellation::new(4).unwrap(), 1).is_err());
    }

    fn coded_link(snr_db: f64, order: usize, seed: u64) -> (CodedFrame, TimeSignal, BlockChannelSet, CodedLayout, Constellation) {
        let g = geometry();
        let c = Constellation::new(order).unwrap();
        let layout = CodedLayout::new(LdpcCode::bundled(), &g, &c, seed).unwrap();
        let mut rng = SimRng::new(seed);
        let frame = layout.encode_frame(&mut rng).unwrap();
        let symbols = c.map(&frame.bits).unwrap();
        let s = idzt_transmit(&DdFrame::from_symbols(g, &symbols).unwrap());
        let p = PowerDelayProfile::eva().scaled_to(&g);
        let chan = generate_channel(&p, 120.0, 4e9, DelayMode::Integer, &g, &mut rng).unwrap();
        let blocks = build_block_channels(&chan, noise_variance(snr_db, 1.0));
        let r = apply_channel(&s, &blocks, &mut rng).unwrap();
        (frame, r, blocks, layout, c)
    }

    #[test]
    fn noiseless_turbo_is_error_free() {
        let (frame, r, blocks, layout, c) = coded_link(300.0, 16, 6);
        let it = turbo_receive(&r, &blocks, &c, &layout, &TurboConfig::new(1, DetectorConfig::soft(2))).unwrap();
        assert_eq!(it[0].decoded_info, frame.info);
        assert!(it[0].converged.iter().all(|c| *c));
    }

    #[test]
    fn prior_bookkeeping_is_exact() {
        let (_, r, blocks, layout, c) = coded_link(6.0, 4, 7);
        for feedback in [Feedback::Intrinsic, Feedback::Extrinsic] {
            let mut cfg = TurboConfig::new(3, DetectorConfig::soft(2));
            cfg.feedback = feedback;
            let its = turbo_receive(&r, &blocks, &c, &layout, &cfg).unwrap();
            assert!(its[0].l_a.iter().all(|x| *x == 0.0));
            assert_eq!(its[0].l_e, its[0].l_out);
            for t in 0..2 {
                for (i, il) in layout.interleavers.iter().enumerate() {
                    let want = match feedback {
                        Feedback::Intrinsic => il.interleave(&its[t].decoder_llr[i]),
                        Feedback::Extrinsic => {
                            let input = il.deinterleave(&its[t].l_e[i * 1024..(i + 1) * 1024]);
                            il.interleave(&its[t].decoder_llr[i].iter().zip(&input).map(|(a, b)| clamp_llr(a - b)).collect::<Vec<_>>())
                        }
                    };
                    assert_eq!(&its[t + 1].l_a[i * 1024..(i + 1) * 1024], &want[..]);
                }
                assert!(its[t + 1].l_a[layout.coded_bits()..].iter().all(|x| *x == 0.0));
            }
        }
    }
}
