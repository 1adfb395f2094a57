//! Delay-Doppler frame layout and the transforms between the delay-Doppler
//! grid and the transmitted time samples.
//!
//! Indexing is 0-based throughout. The grid is `M x N` with the delay index `m`
//! as the row and the Doppler index `k` as the column; the last `l_max` rows
//! are zero padding. Time samples are stacked block by block, so sample `m` of
//! block `n` sits at `n * M + m` (column-major `vec()` of an `M x N` matrix).

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{CMat, Dft, C_ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    /// Delay bins (subcarriers).
    pub m: usize,
    /// Doppler bins (time slots).
    pub n: usize,
    /// Zero-padding length in delay taps.
    pub l_max: usize,
    /// Subcarrier spacing in Hz.
    pub subcarrier_spacing_hz: f64,
}

impl FrameGeometry {
    pub fn new(m: usize, n: usize, l_max: usize, subcarrier_spacing_hz: f64) -> Result<Self> {
        let g = Self {
            m,
            n,
            l_max,
            subcarrier_spacing_hz,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Geometry("N must be positive".into()));
        }
        if self.l_max == 0 || self.l_max >= self.m {
            return Err(Error::Geometry(format!(
                "need 0 < l_max < M, got l_max = {} with M = {}",
                self.l_max, self.m
            )));
        }
        if !(self.subcarrier_spacing_hz > 0.0) || !self.subcarrier_spacing_hz.is_finite() {
            return Err(Error::Geometry("subcarrier spacing must be positive".into()));
        }
        Ok(())
    }

    /// Number of data rows `M - l_max`.
    pub fn data_rows(&self) -> usize {
        self.m - self.l_max
    }

    pub fn data_symbols(&self) -> usize {
        self.data_rows() * self.n
    }

    pub fn samples(&self) -> usize {
        self.m * self.n
    }

    /// Multicarrier symbol period `T = 1 / delta_f`.
    pub fn symbol_period(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    /// Delay resolution `T / M`.
    pub fn sample_interval(&self) -> f64 {
        self.symbol_period() / self.m as f64
    }

    pub fn is_zero_padding(&self, m: usize) -> bool {
        m >= self.data_rows()
    }
}

/// Delay-Doppler symbol grid, row-major `(m, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdFrame {
    geometry: FrameGeometry,
    grid: Vec<Complex64>,
}

impl DdFrame {
    pub fn zeros(geometry: FrameGeometry) -> Self {
        Self {
            geometry,
            grid: vec![C_ZERO; geometry.samples()],
        }
    }

    /// Place data symbols on the grid. Symbol `k * (M - l_max) + m` lands at
    /// row `m`, column `k`.
    pub fn from_symbols(geometry: FrameGeometry, symbols: &[Complex64]) -> Result<Self> {
        let d = geometry.data_rows();
        if symbols.len() != geometry.data_symbols() {
            return Err(Error::Dimension(format!(
                "{} symbols for {} data slots",
                symbols.len(),
                geometry.data_symbols()
            )));
        }
        let mut f = Self::zeros(geometry);
        for (idx, &s) in symbols.iter().enumerate() {
            let (k, m) = (idx / d, idx % d);
            f.grid[m * geometry.n + k] = s;
        }
        Ok(f)
    }

    /// Arbitrary grid; rows in the padding region must be zero.
    pub fn from_grid(geometry: FrameGeometry, grid: Vec<Complex64>) -> Result<Self> {
        if grid.len() != geometry.samples() {
            return Err(Error::Dimension(format!(
                "grid has {} entries, expected {}",
                grid.len(),
                geometry.samples()
            )));
        }
        let f = Self { geometry, grid };
        for m in geometry.data_rows()..geometry.m {
            if f.row(m).iter().any(|x| *x != C_ZERO) {
                return Err(Error::Geometry(format!("padding row {m} is not zero")));
            }
        }
        Ok(f)
    }

    pub fn geometry(&self) -> &FrameGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &[Complex64] {
        &self.grid
    }

    pub fn get(&self, m: usize, k: usize) -> Complex64 {
        self.grid[m * self.geometry.n + k]
    }

    pub fn set(&mut self, m: usize, k: usize, v: Complex64) {
        assert!(!self.geometry.is_zero_padding(m), "row {m} is zero padding");
        self.grid[m * self.geometry.n + k] = v;
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        let n = self.geometry.n;
        &self.grid[m * n..(m + 1) * n]
    }

    /// Data symbols in the order accepted by [`DdFrame::from_symbols`].
    pub fn data_symbols(&self) -> Vec<Complex64> {
        let d = self.geometry.data_rows();
        (0..self.geometry.data_symbols())
            .map(|idx| self.get(idx % d, idx / d))
            .collect()
    }

    pub fn energy(&self) -> f64 {
        self.grid.iter().map(|x| x.norm_sqr()).sum()
    }
}

/// Time-domain frame: `N` blocks of `M` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    geometry: FrameGeometry,
    samples: Vec<Complex64>,
}

impl TimeSignal {
    pub fn new(geometry: FrameGeometry, samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() != geometry.samples() {
            return Err(Error::Dimension(format!(
                "signal has {} samples, expected {}",
                samples.len(),
                geometry.samples()
            )));
        }
        Ok(Self { geometry, samples })
    }

    pub fn zeros(geometry: FrameGeometry) -> Self {
        Self {
            geometry,
            samples: vec![C_ZERO; geometry.samples()],
        }
    }

    pub fn geometry(&self) -> &FrameGeometry {
        &self.geometry
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn block(&self, n: usize) -> &[Complex64] {
        let m = self.geometry.m;
        &self.samples[n * m..(n + 1) * m]
    }

    pub fn block_mut(&mut self, n: usize) -> &mut [Complex64] {
        let m = self.geometry.m;
        &mut self.samples[n * m..(n + 1) * m]
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x.norm_sqr()).sum()
    }
}

/// Transmit path `s = vec(X_DD F_N^H)`: an `N`-point IDFT along every delay row.
pub fn idzt_transmit(frame: &DdFrame) -> TimeSignal {
    let g = *frame.geometry();
    let plan = Dft::new(g.n).expect("N > 0 by geometry invariant");
    let mut out = TimeSignal::zeros(g);
    let mut row = vec![C_ZERO; g.n];
    for m in 0..g.data_rows() {
        row.copy_from_slice(frame.row(m));
        plan.inverse(&mut row);
        for (n, v) in row.iter().enumerate() {
            out.samples[n * g.m + m] = *v;
        }
    }
    out
}

fn dft_matrix(n: usize, inverse: bool) -> CMat {
    let sign = if inverse { 1.0 } else { -1.0 };
    let scale = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, n, |r, c| {
        let ang = sign * 2.0 * std::f64::consts::PI * ((r * c) % n) as f64 / n as f64;
        Complex64::from_polar(scale, ang)
    })
}

/// ISFFT followed by a rectangular-pulse Heisenberg transform, with explicit
/// dense DFT matrices: `s = vec(F_M^H (F_M X_DD F_N^H))`.
///
/// Kept as an independent reference for [`idzt_transmit`].
pub fn isfft_heisenberg_transmit(frame: &DdFrame) -> TimeSignal {
    let g = *frame.geometry();
    let x = CMat::from_rows(g.m, g.n, frame.grid().to_vec()).expect("grid shape");
    let f_m = dft_matrix(g.m, false);
    let f_m_h = dft_matrix(g.m, true);
    let f_n_h = dft_matrix(g.n, true);
    let x_tf = f_m.matmul(&x).matmul(&f_n_h);
    let s = f_m_h.matmul(&x_tf);
    let mut out = TimeSignal::zeros(g);
    for n in 0..g.n {
        for m in 0..g.m {
            out.samples[n * g.m + m] = s[(m, n)];
        }
    }
    out
}

/// Move one layer's `N` time-domain estimates to the Doppler domain.
///
/// Variances pass through unchanged: the unitary transform keeps the noise
/// covariance, and only its diagonal is tracked.
pub fn layer_to_dd(plan: &Dft, est: &[Complex64], variances: &[f64]) -> (Vec<Complex64>, Vec<f64>) {
    let mut obs = est.to_vec();
    plan.forward(&mut obs);
    (obs, variances.to_vec())
}

/// Bring DD-domain estimates of one delay row back to time samples.
///
/// The diagonal of `F_N^H diag(v) F_N` is `mean(v)` at every index, which is
/// the only part of the time-domain covariance that is kept.
pub fn dd_to_layer(plan: &Dft, dd_syms: &[Complex64], dd_var: &[f64]) -> (Vec<Complex64>, Vec<f64>) {
    let mut est = dd_syms.to_vec();
    plan.inverse(&mut est);
    let mean = dd_var.iter().sum::<f64>() / dd_var.len().max(1) as f64;
    (est, vec![mean; dd_var.len()])
}

const DUMP_MAGIC: &[u8; 16] = b"ZPOTFS_DDFRAME01";

/// Binary frame dump.
///
/// Layout, all little-endian: 16-byte magic `ZPOTFS_DDFRAME01`, then `M`, `N`,
/// `l_max` as `u32`, the subcarrier spacing as `f64`, then the grid row by row
/// as `(re, im)` pairs of `f64`.
pub fn write_frame_dump<W: Write>(frame: &DdFrame, mut w: W) -> Result<()> {
    let g = frame.geometry();
    w.write_all(DUMP_MAGIC)?;
    for v in [g.m, g.n, g.l_max] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&g.subcarrier_spacing_hz.to_le_bytes())?;
    for x in frame.grid() {
        w.write_all(&x.re.to_le_bytes())?;
        w.write_all(&x.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_frame_dump<R: Read>(mut r: R) -> Result<DdFrame> {
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Parse("bad frame dump magic".into()));
    }
    let mut u = [0u8; 4];
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        r.read_exact(&mut u)?;
        *d = u32::from_le_bytes(u) as usize;
    }
    let mut f = [0u8; 8];
    r.read_exact(&mut f)?;
    let g = FrameGeometry::new(dims[0], dims[1], dims[2], f64::from_le_bytes(f))?;
    let mut grid = Vec::with_capacity(g.samples());
    for _ in 0..g.samples() {
        r.read_exact(&mut f)?;
        let re = f64::from_le_bytes(f);
        r.read_exact(&mut f)?;
        grid.push(Complex64::new(re, f64::from_le_bytes(f)));
    }
    DdFrame::from_grid(g, grid)
}
