//! Experiment configuration and seeded end-to-end runs.
//!
//! Every frame draws from its own random stream `(seed, snr index, frame)`,
//! so results do not depend on the thread count and detectors compared
//! under the same seed see identical bits, channels and noise. Frames are
//! simulated in parallel batches and merged in frame order; the stopping
//! rule is applied frame by frame in that order.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, ChannelEnsemble, SeConfig, SeState, DEFAULT_MC_SAMPLES, MIN_MC_SAMPLES};
use crate::channel::{
    apply_channel, build_block_channels, generate_channel, noise_variance, perturb_csi, BlockChannelSet,
    ChannelRealization, CsiErrorModel, DelayMode, PowerDelayProfile,
};
use crate::detect::{
    complexity_orders, detect_frame, mrc_detect, sinr_per_layer, Demap, DetectorConfig, LayerSinr, Recycling,
    TraceRow, Weights,
};
use crate::error::{Error, Result};
use crate::frame::{idzt_transmit, DdFrame, FrameGeometry, TimeSignal};
use crate::numeric::{Constellation, SimRng};
use crate::turbo::{turbo_receive, BpOptions, CodedLayout, Feedback, LdpcCode, LlrMethod, TurboConfig};

/// Largest frame (in samples) accepted without the full-scale opt-in.
pub const DESK_SAMPLE_LIMIT: usize = 4096;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub m: usize,
    pub n: usize,
    pub l_max: usize,
    pub subcarrier_spacing_hz: f64,
    pub carrier_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    Eva,
    Epa,
    SinglePath,
    /// CSV with `delay_ns,power_db` rows.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub profile: ProfileSource,
    /// Compress the profile so its longest delay lands on `l_max`.
    #[serde(default)]
    pub scale_to_frame: bool,
    pub speed_kmh: f64,
    #[serde(default)]
    pub fractional_delays: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    SicMmse,
    Mrc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSettings {
    pub kind: DetectorKind,
    #[serde(default = "default_demap")]
    pub demap: Demap,
    pub iterations: usize,
    /// Filter recycling; exact weights when absent.
    #[serde(default)]
    pub recycling: Option<Recycling>,
    #[serde(default)]
    pub early_exit: Option<f64>,
}

fn default_demap() -> Demap {
    Demap::Soft
}

impl DetectorSettings {
    pub fn sic(demap: Demap, iterations: usize, recycling: Option<Recycling>) -> Self {
        Self {
            kind: DetectorKind::SicMmse,
            demap,
            iterations,
            recycling,
            early_exit: None,
        }
    }

    pub fn mrc(iterations: usize) -> Self {
        Self {
            kind: DetectorKind::Mrc,
            ..Self::sic(Demap::Hard, iterations, None)
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        let base = match self.demap {
            Demap::Hard => DetectorConfig::hard(self.iterations),
            Demap::Soft => DetectorConfig::soft(self.iterations),
        };
        let mut cfg = match self.recycling {
            Some(r) => base.with_weights(Weights::Recycled(r)),
            None => base,
        };
        cfg.early_exit = self.early_exit;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeSource {
    Bundled,
    Alist(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurboSettings {
    pub code: CodeSource,
    pub iterations: usize,
    #[serde(default)]
    pub feedback: Feedback,
    #[serde(default)]
    pub llr: LlrMethod,
    #[serde(default = "default_bp_iterations")]
    pub bp_iterations: usize,
    #[serde(default)]
    pub min_sum: bool,
    #[serde(default)]
    pub interleaver_seed: u64,
}

fn default_bp_iterations() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stopping {
    pub min_bits: u64,
    pub min_errors: u64,
    pub max_frames: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeSettings {
    /// Channel realizations per state-evolution iteration.
    pub realizations: usize,
    pub mc_samples: usize,
    /// Frames averaged for the simulated MSE trace.
    pub trace_frames: usize,
}

impl Default for SeSettings {
    fn default() -> Self {
        Self {
            realizations: 64,
            mc_samples: DEFAULT_MC_SAMPLES,
            trace_frames: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexitySettings {
    pub delta_m: usize,
}

impl Default for ComplexitySettings {
    fn default() -> Self {
        Self { delta_m: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub channel: ChannelConfig,
    pub modulation_order: usize,
    pub detector: DetectorSettings,
    #[serde(default)]
    pub turbo: Option<TurboSettings>,
    #[serde(default)]
    pub csi: CsiErrorModel,
    pub snr_db: Vec<f64>,
    pub seed: u64,
    pub stopping: Stopping,
    #[serde(default)]
    pub se: SeSettings,
    #[serde(default)]
    pub complexity: ComplexitySettings,
}

impl RunConfig {
    /// Full-scale parameters: M=512, N=128, 15 kHz, 4 GHz, EVA, 120 km/h.
    pub fn paper() -> Self {
        Self {
            geometry: GeometryConfig {
                m: 512,
                n: 128,
                l_max: 19,
                subcarrier_spacing_hz: 15e3,
                carrier_hz: 4e9,
            },
            channel: ChannelConfig {
                profile: ProfileSource::Eva,
                scale_to_frame: false,
                speed_kmh: 120.0,
                fractional_delays: false,
            },
            modulation_order: 4,
            detector: DetectorSettings::sic(Demap::Soft, 10, Some(Recycling::Tolerance(0.01))),
            turbo: None,
            csi: CsiErrorModel::perfect(),
            snr_db: vec![8.0, 10.0, 12.0, 14.0, 16.0],
            seed: 1,
            stopping: Stopping {
                min_bits: 1_000_000,
                min_errors: 100,
                max_frames: 10_000,
            },
            se: SeSettings::default(),
            complexity: ComplexitySettings::default(),
        }
    }

    /// Reduced frame for quick runs: M=64, N=16, l_max=7, EVA scaled to fit.
    pub fn desk() -> Self {
        let mut cfg = Self::paper();
        cfg.geometry.m = 64;
        cfg.geometry.n = 16;
        cfg.geometry.l_max = 7;
        cfg.channel.scale_to_frame = true;
        cfg
    }

    pub fn from_json_reader<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json_reader(BufReader::new(File::open(path)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn frame_geometry(&self) -> Result<FrameGeometry> {
        let g = &self.geometry;
        FrameGeometry::new(g.m, g.n, g.l_max, g.subcarrier_spacing_hz)
    }

    pub fn constellation(&self) -> Result<Constellation> {
        Constellation::new(self.modulation_order)
    }

    /// Profile as used for this frame (scaled when requested).
    pub fn profile(&self) -> Result<PowerDelayProfile> {
        let p = match &self.channel.profile {
            ProfileSource::Eva => PowerDelayProfile::eva(),
            ProfileSource::Epa => PowerDelayProfile::epa(),
            ProfileSource::SinglePath => PowerDelayProfile::single_path(),
            ProfileSource::File(path) => {
                let name = path.file_stem().map_or("custom".into(), |s| s.to_string_lossy().into_owned());
                PowerDelayProfile::from_csv_reader(&name, BufReader::new(File::open(path)?))?
            }
        };
        Ok(if self.channel.scale_to_frame {
            p.scaled_to(&self.frame_geometry()?)
        } else {
            p
        })
    }

    fn delay_mode(&self) -> DelayMode {
        if self.channel.fractional_delays {
            DelayMode::Fractional
        } else {
            DelayMode::Integer
        }
    }

    /// Check every field; `allow_full` lifts the desk-size limit.
    pub fn validate(&self, allow_full: bool) -> Result<()> {
        let g = &self.geometry;
        if g.m == 0 {
            return Err(Error::config("geometry.m", "must be positive"));
        }
        if g.n == 0 {
            return Err(Error::config("geometry.n", "must be positive"));
        }
        if g.l_max >= g.m {
            return Err(Error::config("geometry.l_max", format!("must be below m = {}", g.m)));
        }
        if !(g.subcarrier_spacing_hz > 0.0) {
            return Err(Error::config("geometry.subcarrier_spacing_hz", "must be positive"));
        }
        if !(g.carrier_hz > 0.0) {
            return Err(Error::config("geometry.carrier_hz", "must be positive"));
        }
        if !allow_full && g.m * g.n > DESK_SAMPLE_LIMIT {
            return Err(Error::config(
                "geometry",
                format!("{} x {} exceeds the desk limit of {DESK_SAMPLE_LIMIT} samples; pass --full", g.m, g.n),
            ));
        }
        if !(self.channel.speed_kmh >= 0.0) {
            return Err(Error::config("channel.speed_kmh", "must be non-negative"));
        }
        if ![4, 16].contains(&self.modulation_order) {
            return Err(Error::config("modulation_order", "must be 4 or 16"));
        }
        let d = &self.detector;
        if d.iterations == 0 {
            return Err(Error::config("detector.iterations", "must be at least 1"));
        }
        match d.recycling {
            Some(Recycling::Tolerance(db)) if !(db > 0.0) || !db.is_finite() => {
                return Err(Error::config("detector.recycling.tolerance", "must be positive"));
            }
            _ => {}
        }
        if d.kind == DetectorKind::Mrc && (d.recycling.is_some() || d.demap == Demap::Soft) {
            return Err(Error::config("detector", "mrc takes neither recycling nor soft demapping"));
        }
        if let Some(tol) = d.early_exit {
            if !(tol >= 0.0) {
                return Err(Error::config("detector.early_exit", "must be non-negative"));
            }
        }
        if let Some(t) = &self.turbo {
            if t.iterations == 0 {
                return Err(Error::config("turbo.iterations", "must be at least 1"));
            }
            if t.bp_iterations == 0 {
                return Err(Error::config("turbo.bp_iterations", "must be at least 1"));
            }
            if d.kind != DetectorKind::SicMmse {
                return Err(Error::config("turbo", "requires the sic_mmse detector"));
            }
        }
        if !(self.csi.sigma_h2 >= 0.0) {
            return Err(Error::config("csi.sigma_h2", "must be non-negative"));
        }
        if !(self.csi.sigma_k2 >= 0.0) {
            return Err(Error::config("csi.sigma_k2", "must be non-negative"));
        }
        if self.snr_db.is_empty() {
            return Err(Error::config("snr_db", "must list at least one point"));
        }
        if let Some(i) = self.snr_db.iter().position(|s| !s.is_finite()) {
            return Err(Error::config(format!("snr_db[{i}]"), "must be finite"));
        }
        if self.stopping.min_errors < 100 {
            return Err(Error::config("stopping.min_errors", "must be at least 100"));
        }
        if self.stopping.max_frames == 0 {
            return Err(Error::config("stopping.max_frames", "must be at least 1"));
        }
        if self.se.realizations == 0 {
            return Err(Error::config("se.realizations", "must be at least 1"));
        }
        if self.se.mc_samples < MIN_MC_SAMPLES {
            return Err(Error::config("se.mc_samples", format!("must be at least {MIN_MC_SAMPLES}")));
        }
        if self.se.trace_frames < 2 {
            return Err(Error::config("se.trace_frames", "must be at least 2"));
        }
        if self.complexity.delta_m == 0 {
            return Err(Error::config("complexity.delta_m", "must be at least 1"));
        }
        let geo = self.frame_geometry()?;
        let profile = self.profile()?;
        let longest = profile.delay_taps(&geo).into_iter().fold(0.0, f64::max);
        let longest = if self.channel.fractional_delays { longest } else { longest.round() };
        if longest > g.l_max as f64 + 1e-9 {
            return Err(Error::config(
                "geometry.l_max",
                format!("profile {} needs {longest:.2} taps; raise l_max or set scale_to_frame", profile.name),
            ));
        }
        Ok(())
    }
}

/// Everything a frame needs, resolved once per run.
struct Setup {
    geometry: FrameGeometry,
    profile: PowerDelayProfile,
    constellation: Constellation,
    cfg: RunConfig,
}

impl Setup {
    fn new(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            geometry: cfg.frame_geometry()?,
            profile: cfg.profile()?,
            constellation: cfg.constellation()?,
            cfg: cfg.clone(),
        })
    }

    fn channel(&self, rng: &mut SimRng) -> Result<ChannelRealization> {
        generate_channel(
            &self.profile,
            self.cfg.channel.speed_kmh,
            self.cfg.geometry.carrier_hz,
            self.cfg.delay_mode(),
            &self.geometry,
            rng,
        )
    }

    /// Transmit `bits`, pass the channel, and return the received frame with
    /// the true and the believed channel.
    fn link(&self, bits: &[u8], snr_db: f64, rng: &mut SimRng) -> Result<Link> {
        let c = &self.constellation;
        let s = idzt_transmit(&DdFrame::from_symbols(self.geometry, &c.map(bits)?)?);
        let chan = self.channel(rng)?;
        let noise = noise_variance(snr_db, c.es());
        let truth = build_block_channels(&chan, noise);
        let r = apply_channel(&s, &truth, rng)?;
        let believed = if self.cfg.csi.is_perfect() {
            truth
        } else {
            perturb_csi(&chan, &self.cfg.csi, noise, rng)?
        };
        let mut dump = Vec::new();
        chan.write_csv(&mut dump)?;
        Ok(Link { s, r, believed, dump })
    }
}

struct Link {
    s: TimeSignal,
    r: TimeSignal,
    believed: BlockChannelSet,
    dump: Vec<u8>,
}

fn frame_rng(seed: u64, snr_index: usize, frame: u64) -> SimRng {
    SimRng::with_stream(seed, ((snr_index as u64) << 40) | frame)
}

fn count_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

/// Per-frame result: errors per reported stage over `bits` bits.
struct FrameOutcome {
    errors: Vec<u64>,
    bits: u64,
    raw_errors: Vec<u64>,
    raw_bits: u64,
    mults: u64,
    dump: Vec<u8>,
}

struct SweepPoint {
    frames: u64,
    errors: Vec<u64>,
    bits: u64,
    raw_errors: Vec<u64>,
    raw_bits: u64,
    mults: u64,
    wall_time_s: f64,
}

/// Simulate frames in order until the stopping rule fires, feeding channel
/// dumps to `dumps` in frame order.
fn sweep<F>(stop: &Stopping, dumps: &mut Vec<u8>, frame: F) -> Result<SweepPoint>
where
    F: Fn(u64) -> Result<FrameOutcome> + Sync,
{
    let start = Instant::now();
    let batch = (rayon::current_num_threads() * 2).max(4) as u64;
    let mut acc = SweepPoint {
        frames: 0,
        errors: Vec::new(),
        bits: 0,
        raw_errors: Vec::new(),
        raw_bits: 0,
        mults: 0,
        wall_time_s: 0.0,
    };
    'outer: while acc.frames < stop.max_frames {
        let lo = acc.frames;
        let hi = (lo + batch).min(stop.max_frames);
        let results: Vec<FrameOutcome> = (lo..hi).into_par_iter().map(&frame).collect::<Result<_>>()?;
        for r in results {
            if acc.errors.is_empty() {
                acc.errors = vec![0; r.errors.len()];
                acc.raw_errors = vec![0; r.raw_errors.len()];
            }
            acc.errors.iter_mut().zip(&r.errors).for_each(|(a, b)| *a += b);
            acc.raw_errors.iter_mut().zip(&r.raw_errors).for_each(|(a, b)| *a += b);
            acc.bits += r.bits;
            acc.raw_bits += r.raw_bits;
            acc.mults += r.mults;
            acc.frames += 1;
            dumps.extend_from_slice(&r.dump);
            let last = *acc.errors.last().unwrap_or(&0);
            if last >= stop.min_errors && acc.bits >= stop.min_bits {
                break 'outer;
            }
        }
    }
    acc.wall_time_s = start.elapsed().as_secs_f64();
    Ok(acc)
}

/// Wilson score interval at 95%.
pub fn binomial_ci95(errors: u64, bits: u64) -> (f64, f64) {
    if bits == 0 {
        return (0.0, 1.0);
    }
    let n = bits as f64;
    let p = errors as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if errors == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if errors == bits { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResultRow {
    pub snr_db: f64,
    pub ber: f64,
    pub ber_ci_low: f64,
    pub ber_ci_high: f64,
    pub bit_count: u64,
    pub error_count: u64,
    pub frame_count: u64,
    pub multiply_count: u64,
    /// Not written to CSV so that reruns stay byte-identical.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl ResultRow {
    fn new(snr_db: f64, errors: u64, bits: u64, frames: u64, mults: u64, wall_time_s: f64) -> Self {
        let (lo, hi) = binomial_ci95(errors, bits);
        Self {
            snr_db,
            ber: if bits == 0 { 0.0 } else { errors as f64 / bits as f64 },
            ber_ci_low: lo,
            ber_ci_high: hi,
            bit_count: bits,
            error_count: errors,
            frame_count: frames,
            multiply_count: mults,
            wall_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub seed: u64,
    pub frames: Vec<u64>,
    /// SHA-256 over `blob <len>\0` followed by the channel CSV dumps of every
    /// simulated frame in order.
    pub channel_hash: String,
}

impl RunManifest {
    fn new(config: &RunConfig, frames: Vec<u64>, dumps: &[u8]) -> Self {
        Self {
            config: config.clone(),
            seed: config.seed,
            frames,
            channel_hash: content_hash(dumps),
        }
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        Ok(serde_json::to_writer_pretty(w, self)?)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style content hash: the length-prefixed header, then the content.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerRun {
    pub rows: Vec<ResultRow>,
    pub manifest: RunManifest,
}

/// Uncoded BER per SNR point for the configured detector.
pub fn run_ber(cfg: &RunConfig) -> Result<BerRun> {
    let setup = Setup::new(cfg)?;
    let g = setup.geometry;
    let c = &setup.constellation;
    let det_cfg = cfg.detector.detector_config();
    let nbits = g.data_symbols() * c.bits_per_symbol();
    let mut dumps = Vec::new();
    let mut rows = Vec::new();
    let mut frames = Vec::new();
    for (si, &snr) in cfg.snr_db.iter().enumerate() {
        let pt = sweep(&cfg.stopping, &mut dumps, |f| {
            let mut rng = frame_rng(cfg.seed, si, f);
            let bits = rng.bits(nbits);
            let link = setup.link(&bits, snr, &mut rng)?;
            let (decided, mults) = match cfg.detector.kind {
                DetectorKind::SicMmse => {
                    let det = detect_frame(&link.r, &link.believed, c, &det_cfg, None)?;
                    (det.hard_bits(&g, c), det.counter.complex_mults)
                }
                DetectorKind::Mrc => {
                    let out = mrc_detect(&link.r, &link.believed, c, cfg.detector.iterations)?;
                    let syms = crate::detect::decisions_to_symbols(&out.decisions, &g, c);
                    let mut b = Vec::new();
                    c.unmap_hard_into(&syms, &mut b);
                    (b, out.counter.complex_mults)
                }
            };
            let e = count_errors(&decided, &bits);
            Ok(FrameOutcome {
                errors: vec![e],
                bits: nbits as u64,
                raw_errors: vec![e],
                raw_bits: nbits as u64,
                mults,
                dump: link.dump,
            })
        })?;
        frames.push(pt.frames);
        rows.push(ResultRow::new(snr, pt.errors.first().copied().unwrap_or(0), pt.bits, pt.frames, pt.mults, pt.wall_time_s));
    }
    Ok(BerRun {
        rows,
        manifest: RunManifest::new(cfg, frames, &dumps),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TurboRow {
    pub snr_db: f64,
    /// 1-based outer iteration.
    pub iteration: usize,
    pub ber: f64,
    pub ber_ci_low: f64,
    pub ber_ci_high: f64,
    pub bit_count: u64,
    pub error_count: u64,
    /// Hard-decision BER of the detector over all frame bits.
    pub detector_ber: f64,
    pub frame_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurboRun {
    pub rows: Vec<TurboRow>,
    pub manifest: RunManifest,
}

pub fn load_code(source: &CodeSource) -> Result<LdpcCode> {
    match source {
        CodeSource::Bundled => Ok(LdpcCode::bundled()),
        CodeSource::Alist(path) => LdpcCode::read_alist(BufReader::new(File::open(path)?)),
    }
}

/// Coded BER after every outer iteration of the turbo receiver.
pub fn run_turbo(cfg: &RunConfig) -> Result<TurboRun> {
    let t = cfg
        .turbo
        .as_ref()
        .ok_or_else(|| Error::config("turbo", "missing turbo section"))?;
    let setup = Setup::new(cfg)?;
    let g = setup.geometry;
    let c = &setup.constellation;
    let layout = CodedLayout::new(load_code(&t.code)?, &g, c, t.interleaver_seed)?;
    let tcfg = TurboConfig {
        iterations: t.iterations,
        detector: cfg.detector.detector_config(),
        llr: t.llr,
        feedback: t.feedback,
        bp: BpOptions {
            max_iterations: t.bp_iterations,
            min_sum: t.min_sum,
        },
    };
    let mut rows = Vec::new();
    let mut dumps = Vec::new();
    let mut frames = Vec::new();
    for (si, &snr) in cfg.snr_db.iter().enumerate() {
        let pt = sweep(&cfg.stopping, &mut dumps, |f| {
            let mut rng = frame_rng(cfg.seed, si, f);
            let coded = layout.encode_frame(&mut rng)?;
            let link = setup.link(&coded.bits, snr, &mut rng)?;
            let its = turbo_receive(&link.r, &link.believed, c, &layout, &tcfg)?;
            let errors = its
                .iter()
                .map(|it| {
                    it.decoded_info
                        .iter()
                        .zip(&coded.info)
                        .map(|(a, b)| count_errors(a, b))
                        .sum()
                })
                .collect();
            let raw_errors = its.iter().map(|it| count_errors(&it.detector_bits, &coded.bits)).collect();
            Ok(FrameOutcome {
                errors,
                bits: layout.info_bits() as u64,
                raw_errors,
                raw_bits: coded.bits.len() as u64,
                mults: its.iter().map(|it| it.complex_mults).sum(),
                dump: link.dump,
            })
        })?;
        frames.push(pt.frames);
        for (i, (&e, &re)) in pt.errors.iter().zip(&pt.raw_errors).enumerate() {
            let (lo, hi) = binomial_ci95(e, pt.bits);
            rows.push(TurboRow {
                snr_db: snr,
                iteration: i + 1,
                ber: e as f64 / pt.bits.max(1) as f64,
                ber_ci_low: lo,
                ber_ci_high: hi,
                bit_count: pt.bits,
                error_count: e,
                detector_ber: re as f64 / pt.raw_bits.max(1) as f64,
                frame_count: pt.frames,
            });
        }
    }
    Ok(TurboRun {
        rows,
        manifest: RunManifest::new(cfg, frames, &dumps),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseRow {
    /// 0 is the prior before any detection.
    pub iteration: usize,
    pub mse_sim: f64,
    pub tau2_low: f64,
    pub tau2_up: f64,
    pub mse_sim_stderr: f64,
}

fn se_config(cfg: &RunConfig, setup: &Setup, snr_db: f64) -> SeConfig {
    SeConfig {
        ensemble: ChannelEnsemble {
            geometry: setup.geometry,
            profile: setup.profile.clone(),
            speed_kmh: cfg.channel.speed_kmh,
            carrier_hz: cfg.geometry.carrier_hz,
            delays: cfg.delay_mode(),
            realizations: cfg.se.realizations,
        },
        order: cfg.modulation_order,
        snr_db,
        iterations: cfg.detector.iterations,
        mc_samples: cfg.se.mc_samples,
    }
}

/// State evolution at the first SNR point.
pub fn run_se(cfg: &RunConfig) -> Result<Vec<SeState>> {
    let setup = Setup::new(cfg)?;
    let mut rng = SimRng::with_stream(cfg.seed, u64::MAX);
    analysis::se_run(&se_config(cfg, &setup, cfg.snr_db[0]), &mut rng)
}

/// Simulated per-iteration linear-stage MSE next to both state-evolution
/// bounds, at the first SNR point.
pub fn run_mse_trace(cfg: &RunConfig) -> Result<Vec<MseRow>> {
    if cfg.detector.kind != DetectorKind::SicMmse {
        return Err(Error::config("detector.kind", "the MSE trace needs sic_mmse"));
    }
    let setup = Setup::new(cfg)?;
    let g = setup.geometry;
    let c = &setup.constellation;
    let snr = cfg.snr_db[0];
    let mut det_cfg = cfg.detector.detector_config();
    det_cfg.record_iterations = true;
    det_cfg.early_exit = None;
    let nbits = g.data_symbols() * c.bits_per_symbol();
    let per_frame: Vec<Vec<f64>> = (0..cfg.se.trace_frames as u64)
        .into_par_iter()
        .map(|f| {
            let mut rng = frame_rng(cfg.seed, 0, f);
            let bits = rng.bits(nbits);
            let link = setup.link(&bits, snr, &mut rng)?;
            let det = detect_frame(&link.r, &link.believed, c, &det_cfg, None)?;
            Ok(analysis::linear_stage_mse(&det, link.s.samples(), &g))
        })
        .collect::<Result<_>>()?;
    let se = run_se(cfg)?;
    let k = per_frame.len() as f64;
    let es = c.es();
    let mut rows = vec![MseRow {
        iteration: 0,
        mse_sim: es,
        tau2_low: es,
        tau2_up: es,
        mse_sim_stderr: 0.0,
    }];
    for (i, s) in se.iter().enumerate() {
        let mean = per_frame.iter().map(|v| v[i]).sum::<f64>() / k;
        let var = per_frame.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / (k - 1.0);
        rows.push(MseRow {
            iteration: i + 1,
            mse_sim: mean,
            tau2_low: s.tau2_low,
            tau2_up: s.tau2_up,
            mse_sim_stderr: (var / k).sqrt(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinrRow {
    pub m: usize,
    pub exact_db: f64,
    pub approx_db: f64,
    pub refreshed: bool,
}

impl From<LayerSinr> for SinrRow {
    fn from(s: LayerSinr) -> Self {
        Self {
            m: s.m,
            exact_db: s.exact_db,
            approx_db: s.approx_db,
            refreshed: s.refreshed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinrTrace {
    pub rows: Vec<SinrRow>,
    /// Per-layer detector trace of the frame the SINR was taken from.
    pub trace: Vec<TraceRow>,
}

/// Per-layer SINR of block 0 in the second detector iteration, exact
/// versus recycled weights, using the prior variances left by the first
/// iteration and the refresh schedule the detector chose.
pub fn run_sinr_trace(cfg: &RunConfig) -> Result<SinrTrace> {
    let setup = Setup::new(cfg)?;
    let g = setup.geometry;
    let c = &setup.constellation;
    let recycling = cfg.detector.recycling.unwrap_or(Recycling::Tolerance(0.01));
    let mut det_cfg = DetectorConfig::soft(2).with_weights(Weights::Recycled(recycling));
    det_cfg.record_iterations = true;
    det_cfg.trace = true;
    let mut rng = frame_rng(cfg.seed, 0, 0);
    let bits = rng.bits(g.data_symbols() * c.bits_per_symbol());
    let link = setup.link(&bits, cfg.snr_db[0], &mut rng)?;
    let det = detect_frame(&link.r, &link.believed, c, &det_cfg, None)?;
    let var = &det.iterations[0].var;
    let refresh = &det.refreshes[1][0];
    let rows = sinr_per_layer(&link.believed, 0, var, c.es(), refresh)?
        .into_iter()
        .map(SinrRow::from)
        .collect();
    Ok(SinrTrace { rows, trace: det.trace })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub detector: String,
    /// Order-of-magnitude count per iteration from the closed forms.
    pub formula: f64,
    /// Measured complex multiplies per iteration (0 when not simulated).
    pub measured_mults: f64,
    /// Measured exact weight computations per iteration.
    pub weight_computations: f64,
}

/// Formula orders at the configured size next to counters measured on one
/// frame. The recycled detector uses a fixed span of `complexity.delta_m`.
pub fn complexity_report(cfg: &RunConfig) -> Result<Vec<ComplexityRow>> {
    let setup = Setup::new(cfg)?;
    let g = setup.geometry;
    let c = &setup.constellation;
    let dm = cfg.complexity.delta_m;
    let orders = complexity_orders(g.m, g.n, g.l_max, setup.profile.taps.len(), c.order(), dm);
    let iters = cfg.detector.iterations;
    let mut rng = frame_rng(cfg.seed, 0, 0);
    let bits = rng.bits(g.data_symbols() * c.bits_per_symbol());
    let link = setup.link(&bits, cfg.snr_db[0], &mut rng)?;
    let per = |x: u64| x as f64 / iters as f64;
    let exact = detect_frame(&link.r, &link.believed, c, &DetectorConfig::soft(iters), None)?;
    let approx_cfg = DetectorConfig::soft(iters).with_weights(Weights::Recycled(Recycling::FixedSpan(dm)));
    let approx = detect_frame(&link.r, &link.believed, c, &approx_cfg, None)?;
    let mrc = mrc_detect(&link.r, &link.believed, c, iters)?;
    let row = |name: &str, formula: f64, mults: f64, weights: f64| ComplexityRow {
        detector: name.into(),
        formula,
        measured_mults: mults,
        weight_computations: weights,
    };
    Ok(vec![
        row("classical_mmse", orders.classical_mmse, 0.0, 0.0),
        row(
            "sic_mmse",
            orders.sic_mmse,
            per(exact.counter.complex_mults),
            per(exact.counter.weight_computations),
        ),
        row(
            "approx_sic_mmse",
            orders.approx_sic_mmse,
            per(approx.counter.complex_mults),
            per(approx.counter.weight_computations),
        ),
        row("mrc", orders.mrc, per(mrc.counter.complex_mults), 0.0),
        row("message_passing", orders.message_passing, 0.0, 0.0),
    ])
}

/// Serialize rows as CSV with a header line.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::desk();
        cfg.geometry.m = 32;
        cfg.geometry.n = 8;
        cfg.geometry.l_max = 5;
        cfg.detector.iterations = 2;
        cfg.snr_db = vec![6.0, 12.0];
        cfg.stopping = Stopping {
            min_bits: 20_000,
            min_errors: 100,
            max_frames: 40,
        };
        cfg.se.realizations = 4;
        cfg.se.mc_samples = MIN_MC_SAMPLES;
        cfg.se.trace_frames = 4;
        cfg
    }

    #[test]
    fn presets_validate_and_round_trip() {
        RunConfig::desk().validate(false).unwrap();
        assert!(RunConfig::paper().validate(false).is_err());
        RunConfig::paper().validate(true).unwrap();
        let json = RunConfig::desk().to_json().unwrap();
        let back = RunConfig::from_json_reader(json.as_bytes()).unwrap();
        assert_eq!(back, RunConfig::desk());
        let g = RunConfig::paper();
        assert_eq!((g.geometry.m, g.geometry.n, g.geometry.l_max), (512, 128, 19));
    }

    #[test]
    fn validation_names_the_field() {
        let field_of = |cfg: RunConfig| match cfg.validate(false) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        let mut c = RunConfig::desk();
        c.snr_db.clear();
        assert_eq!(field_of(c), "snr_db");
        let mut c = RunConfig::desk();
        c.stopping.min_errors = 10;
        assert_eq!(field_of(c), "stopping.min_errors");
        let mut c = RunConfig::desk();
        c.geometry.l_max = 64;
        assert_eq!(field_of(c), "geometry.l_max");
        let mut c = RunConfig::desk();
        c.modulation_order = 8;
        assert_eq!(field_of(c), "modulation_order");
        let mut c = RunConfig::desk();
        c.detector.recycling = Some(Recycling::Tolerance(-1.0));
        assert_eq!(field_of(c), "detector.recycling.tolerance");
        let mut c = RunConfig::desk();
        c.snr_db = vec![1.0, f64::NAN];
        assert_eq!(field_of(c), "snr_db[1]");
        let mut c = RunConfig::desk();
        c.channel.scale_to_frame = false;
        c.geometry.l_max = 1;
        assert_eq!(field_of(c), "geometry.l_max");
        let mut c = RunConfig::desk();
        c.csi.sigma_k2 = -1.0;
        assert_eq!(field_of(c), "csi.sigma_k2");
        assert!(RunConfig::from_json_reader(r#"{"bogus": 1}"#.as_bytes()).is_err());
    }

    #[test]
    fn wilson_interval() {
        let (lo, hi) = binomial_ci95(0, 1000);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.003_826).abs() < 1e-5);
        let (lo, hi) = binomial_ci95(50, 1000);
        assert!(lo < 0.05 && hi > 0.05);
        assert!((lo - 0.038_1).abs() < 1e-3 && (hi - 0.065_4).abs() < 1e-3);
    }

    #[test]
    fn content_hash_matches_git_style() {
        // sha256 of "blob 0\0"
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn ber_runs_are_reproducible() {
        let cfg = tiny();
        let a = run_ber(&cfg).unwrap();
        let b = run_ber(&cfg).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_csv(&a.rows, &mut ca).unwrap();
        write_csv(&b.rows, &mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.manifest, b.manifest);
        let text = String::from_utf8(ca).unwrap();
        assert!(text.starts_with(
            "snr_db,ber,ber_ci_low,ber_ci_high,bit_count,error_count,frame_count,multiply_count\n"
        ));
        for r in &a.rows {
            assert_eq!(r.ber, r.error_count as f64 / r.bit_count as f64);
            assert!(r.frame_count <= 40);
        }
        assert!(a.rows[0].ber > a.rows[1].ber);
        let mut other = cfg.clone();
        other.seed = 99;
        assert_ne!(run_ber(&other).unwrap().manifest.channel_hash, a.manifest.channel_hash);
    }

    #[test]
    fn stopping_rule_is_exact() {
        let mut cfg = tiny();
        cfg.snr_db = vec![4.0];
        cfg.stopping.min_bits = 1;
        cfg.stopping.max_frames = 1000;
        let run = run_ber(&cfg).unwrap();
        let row = run.rows[0];
        assert!(row.error_count >= 100);
        // one frame fewer would not have satisfied the rule
        let bits_per_frame = row.bit_count / row.frame_count;
        let mut fewer = cfg.clone();
        fewer.stopping.max_frames = row.frame_count - 1;
        let prev = run_ber(&fewer).unwrap().rows[0];
        assert!(prev.error_count < 100);
        assert_eq!(prev.bit_count + bits_per_frame, row.bit_count);
    }

    #[test]
    fn noiseless_single_path_has_no_errors() {
        let mut cfg = tiny();
        cfg.channel.profile = ProfileSource::SinglePath;
        cfg.channel.speed_kmh = 0.0;
        cfg.snr_db = vec![300.0];
        cfg.stopping.max_frames = 4;
        for det in [
            DetectorSettings::sic(Demap::Soft, 1, None),
            DetectorSettings::sic(Demap::Hard, 1, None),
            DetectorSettings::sic(Demap::Soft, 1, Some(Recycling::Tolerance(0.01))),
            DetectorSettings::mrc(1),
        ] {
            cfg.detector = det;
            assert_eq!(run_ber(&cfg).unwrap().rows[0].error_count, 0, "{det:?}");
        }
    }

    #[test]
    fn turbo_run_reports_every_iteration() {
        let mut cfg = tiny();
        cfg.geometry.m = 64;
        cfg.geometry.n = 16;
        cfg.geometry.l_max = 7;
        cfg.snr_db = vec![4.0];
        cfg.stopping.max_frames = 3;
        cfg.turbo = Some(TurboSettings {
            code: CodeSource::Bundled,
            iterations: 2,
            feedback: Feedback::Intrinsic,
            llr: LlrMethod::Exact,
            bp_iterations: 30,
            min_sum: false,
            interleaver_seed: 3,
        });
        let run = run_turbo(&cfg).unwrap();
        assert_eq!(run.rows.len(), 2);
        assert_eq!(run.rows[1].iteration, 2);
        assert_eq!(run.rows[0].bit_count, 3 * LdpcCode::bundled().k() as u64);
    }

    #[test]
    fn traces_and_report() {
        let cfg = tiny();
        let mse = run_mse_trace(&cfg).unwrap();
        assert_eq!(mse.len(), 3);
        assert_eq!(mse[0].mse_sim, 1.0);
        assert!(mse[1].tau2_low <= mse[1].tau2_up);
        let sinr = run_sinr_trace(&cfg).unwrap();
        assert_eq!(sinr.rows.len(), 27);
        assert!(sinr.rows[0].refreshed);
        for r in &sinr.rows {
            assert!(r.approx_db <= r.exact_db + 1e-9);
        }
        let rep = complexity_report(&cfg).unwrap();
        assert_eq!(rep.len(), 5);
        assert!(rep[2].weight_computations < rep[1].weight_computations);
    }
}
