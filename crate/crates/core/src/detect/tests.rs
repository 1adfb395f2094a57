use super::*;
use crate::channel::{
    apply_channel, build_block_channels, extract_subchannel, generate_channel, noise_variance, ChannelPath,
    ChannelRealization, DelayMode, PowerDelayProfile,
};
use crate::frame::{idzt_transmit, DdFrame};
use crate::numeric::{CMat, SimRng};

fn desk() -> FrameGeometry {
    FrameGeometry::new(32, 8, 5, 15e3).unwrap()
}

struct Link {
    symbols: Vec<Complex64>,
    r: TimeSignal,
    blocks: BlockChannelSet,
}

fn link(g: FrameGeometry, chan: &ChannelRealization, c: &Constellation, noise: f64, rng: &mut SimRng) -> Link {
    let bits = rng.bits(g.data_symbols() * c.bits_per_symbol());
    let symbols = c.map(&bits).unwrap();
    let s = idzt_transmit(&DdFrame::from_symbols(g, &symbols).unwrap());
    let blocks = build_block_channels(chan, noise);
    let r = apply_channel(&s, &blocks, rng).unwrap();
    Link { symbols, r, blocks }
}

fn eva(g: FrameGeometry, rng: &mut SimRng) -> ChannelRealization {
    let p = PowerDelayProfile::eva().scaled_to(&g);
    generate_channel(&p, 500.0, 4e9, DelayMode::Integer, &g, rng).unwrap()
}

fn symbol_errors(det: &Detection, l: &Link, g: &FrameGeometry, c: &Constellation) -> usize {
    det.hard_symbols(g, c)
        .iter()
        .zip(&l.symbols)
        .filter(|(a, b)| (*a - *b).norm() > 1e-9)
        .count()
}

#[test]
fn noiseless_single_path_all_modes() {
    let g = desk();
    let chan = ChannelRealization::new(
        g,
        vec![ChannelPath { gain: Complex64::new(0.6, 0.8), delay: 0.0, doppler: 0.0 }],
        0.0,
    )
    .unwrap();
    let mut rng = SimRng::new(1);
    for order in [4, 16] {
        let c = Constellation::new(order).unwrap();
        let l = link(g, &chan, &c, 0.0, &mut rng);
        for cfg in [
            DetectorConfig::hard(1),
            DetectorConfig::soft(1),
            DetectorConfig::approx(1, 0.01),
            DetectorConfig::soft(1).with_weights(Weights::Recycled(Recycling::FixedSpan(3))),
        ] {
            let det = detect_frame(&l.r, &l.blocks, &c, &cfg, None).unwrap();
            assert_eq!(symbol_errors(&det, &l, &g, &c), 0, "{cfg:?}");
        }
        let mrc = mrc_detect(&l.r, &l.blocks, &c, 1).unwrap();
        let syms = decisions_to_symbols(&mrc.decisions, &g, &c);
        assert_eq!(syms, l.symbols);
    }
}

/// Literal per-layer implementation: explicit cancellation sums over the
/// sub-channel window with the estimates of the current and the previous
/// iteration, no running residual.
fn reference_detector(l: &Link, c: &Constellation, iterations: usize) -> Vec<Vec<Complex64>> {
    let g = *l.blocks.geometry();
    let (mm, nn, lm, d) = (g.m, g.n, g.l_max, g.data_rows());
    let es = c.es();
    let noise = l.blocks.noise_var();
    let plan = Dft::new(nn).unwrap();
    let mut est = vec![C_ZERO; mm * nn];
    let mut var: Vec<f64> = (0..mm).map(|m| if m < d { es } else { 0.0 }).collect();
    let mut outputs = Vec::new();
    for _ in 0..iterations {
        let mut lin = vec![C_ZERO; mm * nn];
        for m in 0..d {
            let mut post = vec![0.0; nn];
            for n in 0..nn {
                let sub = extract_subchannel(&l.blocks, n, m).unwrap();
                let r_bar: Vec<Complex64> = (0..=lm).map(|r| l.r.block(n)[m + r]).collect();
                let col_est: Vec<Complex64> = (0..sub.h.cols()).map(|cc| est[n * mm + sub.base + cc]).collect();
                let r_hat =
                    cancel_interference(&r_bar, &sub, &col_est[..sub.l_prime], &col_est[sub.l_prime + 1..]).unwrap();
                let mut v: Vec<f64> = (0..sub.h.cols()).map(|cc| var[sub.base + cc]).collect();
                v[sub.l_prime] = es;
                let (w, mu) = mmse_weights(&sub, &v, noise, es).unwrap();
                let (s, p) = filter_and_normalize(&w, mu, &r_hat, es).unwrap();
                lin[n * mm + m] = s;
                post[n] = p;
            }
            let mut y: Vec<Complex64> = (0..nn).map(|n| lin[n * mm + m]).collect();
            plan.forward(&mut y);
            let mut vs = 0.0;
            for k in 0..nn {
                let p = dd_posterior(y[k], post[k], c, None);
                y[k] = p.mean;
                vs += p.var;
            }
            plan.inverse(&mut y);
            for n in 0..nn {
                est[n * mm + m] = y[n];
            }
            var[m] = vs / nn as f64;
        }
        outputs.push(lin);
    }
    outputs
}

#[test]
fn running_residual_matches_literal_cancellation() {
    let g = desk();
    let mut rng = SimRng::new(2);
    let c = Constellation::new(16).unwrap();
    let chan = eva(g, &mut rng);
    let l = link(g, &chan, &c, noise_variance(15.0, 1.0), &mut rng);
    let mut cfg = DetectorConfig::soft(3);
    cfg.record_iterations = true;
    let det = detect_frame(&l.r, &l.blocks, &c, &cfg, None).unwrap();
    let want = reference_detector(&l, &c, 3);
    for (snap, lin) in det.iterations.iter().zip(&want) {
        for m in 0..g.data_rows() {
            for n in 0..g.n {
                let i = n * g.m + m;
                assert!((snap.linear[i] - lin[i]).norm() < 1e-9, "m={m} n={n}");
            }
        }
    }
}

#[test]
fn exact_mu_is_real_in_unit_interval() {
    let g = desk();
    let mut rng = SimRng::new(3);
    let c = Constellation::new(4).unwrap();
    for _ in 0..5 {
        let chan = eva(g, &mut rng);
        let l = link(g, &chan, &c, noise_variance(10.0, 1.0), &mut rng);
        let det = detect_frame(&l.r, &l.blocks, &c, &DetectorConfig::soft(2), None).unwrap();
        for m in 0..g.data_rows() {
            for n in 0..g.n {
                let mu = det.state.mu[n * g.m + m];
                assert!(mu.im.abs() < 1e-9 && mu.re > 0.0 && mu.re < 1.0, "{mu}");
            }
        }
    }
}

#[test]
fn hard_and_soft_share_first_linear_stage() {
    let g = desk();
    let mut rng = SimRng::new(4);
    let c = Constellation::new(16).unwrap();
    let chan = eva(g, &mut rng);
    let l = link(g, &chan, &c, noise_variance(12.0, 1.0), &mut rng);
    let h = detect_frame(&l.r, &l.blocks, &c, &DetectorConfig::hard(1), None).unwrap();
    let s = detect_frame(&l.r, &l.blocks, &c, &DetectorConfig::soft(1), None).unwrap();
    for n in 0..g.n {
        assert_eq!(h.state.linear[n * g.m], s.state.linear[n * g.m]);
        assert_eq!(h.state.mu[n * g.m], s.state.mu[n * g.m]);
    }
    for m in 0..g.data_rows() {
        for k in 0..g.n {
            assert_eq!(h.state.dd_var[m * g.n + k], 0.0);
        }
    }
}

#[test]
fn zero_span_recycling_equals_exact() {
    let g = desk();
    let mut rng = SimRng::new(5);
    let c = Constellation::new(4).unwrap();
    let chan = eva(g, &mut rng);
    let l = link(g, &chan, &c, noise_variance(8.0, 1.0), &mut rng);
    let e = detect_frame(&l.r, &l.blocks, &c, &DetectorConfig::soft(2), None).unwrap();
    let cfg = DetectorConfig::soft(2).with_weights(Weights::Recycled(Recycling::FixedSpan(0)));
    let a = detect_frame(&l.r, &l.blocks, &c, &cfg, None).unwrap();
    assert_eq!(a.state.linear, e.state.linear);
    assert_eq!(a.counter.weight_computations, e.counter.weight_computations);
}

#[test]
fn weight_computation_counts() {
    let g = desk();
    let d = g.data_rows() as u64;
    let mut rng = SimRng::new(6);
    let c = Constellation::new(4).unwrap();
    let chan = eva(g, &mut rng);
    let l = link(g, &chan, &c, noise_variance(10.0, 1.0), &mut rng);
    let e = detect_frame(&l.r, &l.blocks, &c, &DetectorConfig::soft(3), None).unwrap();
    assert_eq!(e.counter.weight_computations, d * g.n as u64 * 3);
    for span in [1usize, 4, 10] {
        let cfg = DetectorConfig::soft(3).with_weights(Weights::Recycled(Recycling::FixedSpan(span)));
        let a = detect_frame(&l.r, &l.blocks, &c, &cfg, None).unwrap();
        let per_block = d.div_ceil(span as u64 + 1);
        assert_eq!(a.counter.weight_computations, per_block * g.n as u64 * 3);
        assert!(a.counter.weight_computations <= d.div_ceil(span as u64) * g.n as u64 * 3);
        for sched in &a.refreshes {
            for layers in sched {
                let want: Vec<usize> = (0..g.data_rows()).step_by(span + 1).collect();
                assert_eq!(layers, &want);
            }
        }
        assert!(a.counter.complex_mults < e.counter.complex_mults);
    }
}

#[test]
fn tolerance_span_without_doppler_never_refreshes() {
    let g = desk();
    let chan = ChannelRealization::new(
        g,
        vec![
            ChannelPath { gain: Complex64::new(0.8, 0.0), delay: 0.0, doppler: 0.0 },
            ChannelPath { gain: Complex64::new(0.0, 0.6), delay: 2.0, doppler: 0.0 },
        ],
        0.0,
    )
    .unwrap();
    let mut rng = SimRng::new(7);
    let c = Constellation::new(4).unwrap();
    let l = link(g, &chan, &c, 0.01, &mut rng);
    let a = detect_frame(&l.r, &l.blocks, &c, &DetectorConfig::approx(2, 0.01), None).unwrap();
    assert_eq!(a.counter.weight_computations, 2 * g.n as u64);
    assert_eq!(recycling_span(0.01, 0.0, Complex64::new(0.9, 0.0), 64, 16), usize::MAX);
    assert_eq!(recycling_span(1.5, 0.4, Complex64::new(0.5, 0.0), 64, 16), 0);
}

#[test]
fn iterations_reduce_error_at_high_snr() {
    let g = desk();
    let mut rng = SimRng::new(8);
    let c = Constellation::new(16).unwrap();
    let mut better = 0;
    for _ in 0..10 {
        let chan = eva(g, &mut rng);
        let l = link(g, &chan, &c, noise_variance(18.0, 1.0), &mut rng);
        let mut cfg = DetectorConfig::soft(3);
        cfg.record_iterations = true;
        let det = detect_frame(&l.r, &l.blocks, &c, &cfg, None).unwrap();
        let mse = |snap: &SoftState| {
            let mut acc = 0.0;
            for (idx, s) in l.symbols.iter().enumerate() {
                let (m, k) = (idx % g.data_rows(), idx / g.data_rows());
                acc += (snap.dd_mean[m * g.n + k] - s).norm_sqr();
            }
            acc
        };
        if mse(&det.iterations[2]) <= mse(&det.iterations[0]) {
            better += 1;
        }
    }
    assert!(better >= 9);
}

#[test]
fn mrc_counts_taps() {
    let g = desk();
    let mut rng = SimRng::new(9);
    let c = Constellation::new(4).unwrap();
    let chan = ChannelRealization::new(
        g,
        vec![
            ChannelPath { gain: Complex64::new(0.8, 0.0), delay: 0.0, doppler: 0.1 },
            ChannelPath { gain: Complex64::new(0.0, 0.6), delay: 3.0, doppler: -0.2 },
        ],
        0.2,
    )
    .unwrap();
    let l = link(g, &chan, &c, 0.01, &mut rng);
    let out = mrc_detect(&l.r, &l.blocks, &c, 2).unwrap();
    assert_eq!(out.counter.complex_mults, (g.data_rows() * g.n * 2 * 2) as u64);
}

#[test]
fn dense_oracle_cases() {
    let mut rng = SimRng::new(10);
    let h = CMat::identity(6);
    let r: Vec<Complex64> = (0..6).map(|_| rng.complex_gaussian(1.0)).collect();
    let s = full_lmmse_oracle(&r, &h, &[1.0; 6], 0.25).unwrap();
    for (a, b) in s.iter().zip(&r) {
        assert!((a - b / 1.25).norm() < 1e-12);
    }
    assert!(matches!(
        full_lmmse_oracle(&vec![C_ZERO; 300], &CMat::identity(300), &[1.0; 300], 0.1),
        Err(Error::TooLarge { .. })
    ));

    // noiseless, well-conditioned lower-banded block
    let g = desk();
    let chan = eva(g, &mut rng);
    let blocks = build_block_channels(&chan, 0.0);
    let mut hm = blocks.block_matrix(0);
    for i in 0..g.m {
        hm[(i, i)] += Complex64::new(1.0, 0.0);
    }
    let x: Vec<Complex64> = (0..g.m).map(|_| rng.complex_gaussian(1.0)).collect();
    let y = hm.mul_vec(&x);
    let est = full_lmmse_oracle(&y, &hm, &vec![1.0; g.m], 0.0).unwrap();
    for (a, b) in est.iter().zip(&x) {
        assert!((a - b).norm() < 1e-8);
    }
}

#[test]
fn window_filter_equals_dense_oracle_for_isolated_layer() {
    let g = desk();
    let mut rng = SimRng::new(11);
    let chan = eva(g, &mut rng);
    let blocks = build_block_channels(&chan, 0.05);
    let hm = blocks.block_matrix(2);
    let r: Vec<Complex64> = (0..g.m).map(|_| rng.complex_gaussian(1.0)).collect();
    for m in [0, 3, 12, g.data_rows() - 1] {
        let mut prior = vec![0.0; g.m];
        prior[m] = 1.0;
        let dense = full_lmmse_oracle(&r, &hm, &prior, 0.05).unwrap();
        let sub = extract_subchannel(&blocks, 2, m).unwrap();
        let mut v = vec![0.0; sub.h.cols()];
        v[sub.l_prime] = 1.0;
        let (w, _) = mmse_weights(&sub, &v, 0.05, 1.0).unwrap();
        let s: Complex64 = w.iter().zip(&r[m..=m + g.l_max]).map(|(a, b)| a * b).sum();
        assert!((s - dense[m]).norm() < 1e-8);
    }
}

#[test]
fn sinr_trace_properties() {
    let g = FrameGeometry::new(64, 8, 7, 15e3).unwrap();
    let mut rng = SimRng::new(12);
    let p = PowerDelayProfile::eva().scaled_to(&g);
    let chan = generate_channel(&p, 3000.0, 4e9, DelayMode::Integer, &g, &mut rng).unwrap();
    let blocks = build_block_channels(&chan, 0.05);
    let var: Vec<f64> = (0..g.m).map(|m| if m < g.data_rows() { 0.2 } else { 0.0 }).collect();
    let refresh: Vec<usize> = (0..g.data_rows()).step_by(10).collect();
    let s = sinr_per_layer(&blocks, 1, &var, 1.0, &refresh).unwrap();
    for x in &s {
        assert!(x.approx_db <= x.exact_db + 1e-9);
        if x.refreshed {
            assert!((x.approx_db - x.exact_db).abs() < 1e-9);
        }
    }
    assert!(s.iter().any(|x| x.approx_db < x.exact_db - 1e-6));

    let still = ChannelRealization::new(
        g,
        chan.paths().iter().map(|p| ChannelPath { doppler: 0.0, ..*p }).collect(),
        0.0,
    )
    .unwrap();
    let blocks = build_block_channels(&still, 0.05);
    let zeros = vec![0.0; g.m];
    for x in sinr_per_layer(&blocks, 0, &zeros, 1.0, &[0]).unwrap() {
        assert!((x.approx_db - x.exact_db).abs() < 1e-9);
    }

    let h = Complex64::new(0.3, -0.4);
    let one = ChannelRealization::new(g, vec![ChannelPath { gain: h, delay: 0.0, doppler: 0.0 }], 0.0).unwrap();
    let blocks = build_block_channels(&one, 0.02);
    let s = sinr_per_layer(&blocks, 0, &zeros, 1.0, &[0]).unwrap();
    let want = 10.0 * (h.norm_sqr() / 0.02).log10();
    assert!((s[5].exact_db - want).abs() < 1e-9);
}

#[test]
fn detector_trace_rows() {
    let g = desk();
    let mut rng = SimRng::new(13);
    let c = Constellation::new(4).unwrap();
    let chan = eva(g, &mut rng);
    let l = link(g, &chan, &c, 0.05, &mut rng);
    let mut cfg = DetectorConfig::approx(2, 0.01);
    cfg.trace = true;
    let det = detect_frame(&l.r, &l.blocks, &c, &cfg, None).unwrap();
    assert_eq!(det.trace.len(), 2 * g.data_rows() * g.n);
    let mut buf = Vec::new();
    write_trace_csv(&det.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,m,n,mu_re,mu_im,post_var,sinr_db,exact\n"));
}

#[test]
fn config_validation() {
    assert!(DetectorConfig::soft(0).validate().is_err());
    assert!(DetectorConfig::approx(1, 0.0).validate().is_err());
    assert!(DetectorConfig::approx(1, 0.01).validate().is_ok());
    let json = serde_json::to_string(&DetectorConfig::approx(4, 0.01)).unwrap();
    let back: DetectorConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, DetectorConfig::approx(4, 0.01));
}

#[test]
fn plateau_exit_stops_early() {
    let g = desk();
    let chan = ChannelRealization::new(
        g,
        vec![ChannelPath { gain: Complex64::new(1.0, 0.0), delay: 0.0, doppler: 0.0 }],
        0.0,
    )
    .unwrap();
    let mut rng = SimRng::new(14);
    let c = Constellation::new(4).unwrap();
    let l = link(g, &chan, &c, 0.0, &mut rng);
    let mut cfg = DetectorConfig::soft(10);
    cfg.record_iterations = true;
    cfg.early_exit = Some(1e-6);
    let det = detect_frame(&l.r, &l.blocks, &c, &cfg, None).unwrap();
    assert!(det.iterations.len() < 10);
    cfg.early_exit = Some(-1.0);
    assert!(cfg.validate().is_err());
}
