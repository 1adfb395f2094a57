//! Reference receivers: iterative maximal-ratio combining and a dense
//! block-wise LMMSE used as a test oracle.

use num_complex::Complex64;

use crate::channel::BlockChannelSet;
use crate::error::{Error, Result};
use crate::frame::TimeSignal;
use crate::numeric::{hpd_solve, CMat, Constellation, Dft, C_ZERO};

use super::complexity::ComplexityCounter;

/// Largest block the dense oracle accepts.
pub const DENSE_ORACLE_LIMIT: usize = 256;

#[derive(Debug, Clone)]
pub struct MrcOutput {
    /// Constellation index per DD symbol, grid order `m * N + k`.
    pub decisions: Vec<usize>,
    pub counter: ComplexityCounter,
}

/// Delay-domain iterative RAKE: every layer combines its `l_max + 1` delayed
/// copies with maximal-ratio weights after cancelling all other layers with
/// the latest hard estimates, then decides in the DD domain.
///
/// Starts from zero estimates (no initial time-frequency equalization).
pub fn mrc_detect(
    r: &TimeSignal,
    blocks: &BlockChannelSet,
    constellation: &Constellation,
    iterations: usize,
) -> Result<MrcOutput> {
    let g = *blocks.geometry();
    if *r.geometry() != g {
        return Err(Error::Dimension("received frame and channel geometry differ".into()));
    }
    if iterations == 0 {
        return Err(Error::config("iterations", "must be at least 1"));
    }
    let (mm, nn, lm, d) = (g.m, g.n, g.l_max, g.data_rows());
    let plan = Dft::new(nn)?;
    let mut est = vec![C_ZERO; mm * nn];
    let mut resid = r.samples().to_vec();
    let mut decisions = vec![0; d * nn];
    let mut counter = ComplexityCounter::default();
    let mut row = vec![C_ZERO; nn];
    for _ in 0..iterations {
        for m in 0..d {
            for n in 0..nn {
                let off = n * mm;
                let (mut num, mut den) = (C_ZERO, 0.0);
                for l in 0..=lm {
                    let h = blocks.tap(n, m + l, l);
                    if h == C_ZERO {
                        continue;
                    }
                    num += h.conj() * (resid[off + m + l] + h * est[off + m]);
                    den += h.norm_sqr();
                    counter.mults(1);
                }
                row[n] = if den > 0.0 { num / den } else { C_ZERO };
            }
            plan.forward(&mut row);
            for k in 0..nn {
                let i = constellation.nearest(row[k]);
                decisions[m * nn + k] = i;
                row[k] = constellation.points()[i];
            }
            plan.inverse(&mut row);
            for n in 0..nn {
                let off = n * mm;
                let delta = row[n] - est[off + m];
                if delta != C_ZERO {
                    for l in 0..=lm {
                        resid[off + m + l] -= blocks.tap(n, m + l, l) * delta;
                    }
                }
                est[off + m] = row[n];
            }
        }
    }
    Ok(MrcOutput { decisions, counter })
}

/// `V H^H (H V H^H + sigma^2 I)^-1 r` for one dense block.
pub fn full_lmmse_oracle(
    r: &[Complex64],
    h: &CMat,
    prior_var: &[f64],
    noise_var: f64,
) -> Result<Vec<Complex64>> {
    let (rows, cols) = (h.rows(), h.cols());
    if rows > DENSE_ORACLE_LIMIT || cols > DENSE_ORACLE_LIMIT {
        return Err(Error::TooLarge {
            size: rows.max(cols),
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    if r.len() != rows || prior_var.len() != cols {
        return Err(Error::Dimension("oracle inputs disagree in size".into()));
    }
    let hv = CMat::from_fn(rows, cols, |i, j| h[(i, j)] * prior_var[j]);
    let mut a = hv.matmul(&h.conj_transpose());
    for i in 0..rows {
        a[(i, i)] += noise_var;
    }
    let y = hpd_solve(&a, r)?;
    Ok(hv.conj_transpose().mul_vec(&y))
}
