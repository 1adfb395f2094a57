//! Binary LDPC codes: construction, alist IO, systematic encoding and
//! belief-propagation decoding.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::numeric::SimRng;

/// Magnitude limit for every LLR leaving the decoder.
pub const LLR_CLAMP: f64 = 50.0;

/// Seed of the bundled length-1024 code.
pub const BUNDLED_SEED: u64 = 0x1dc0_de00_0400;
pub const BUNDLED_LENGTH: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct LdpcCode {
    n: usize,
    /// Variable indices of each check.
    checks: Vec<Vec<usize>>,
    /// Flattened edges, grouped by check.
    edge_var: Vec<usize>,
    check_ptr: Vec<usize>,
    /// Edge ids of each variable.
    var_edges: Vec<Vec<usize>>,
    encoder: Encoder,
}

#[derive(Debug, Clone, PartialEq)]
struct Encoder {
    words: usize,
    /// Reduced rows, bit-packed, one per pivot.
    rows: Vec<Vec<u64>>,
    pivots: Vec<usize>,
    info_positions: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BpOptions {
    pub max_iterations: usize,
    pub min_sum: bool,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            min_sum: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpResult {
    /// Posterior LLRs `log P(0)/P(1)`, including the input.
    pub llr: Vec<f64>,
    pub hard: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

impl LdpcCode {
    /// Build from the variable lists of each check.
    pub fn from_checks(n: usize, checks: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 || checks.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut var_edges = vec![Vec::new(); n];
        let mut edge_var = Vec::new();
        let mut check_ptr = vec![0];
        for (ci, row) in checks.iter().enumerate() {
            let mut sorted = row.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Parse(format!("check {ci} lists a variable twice")));
            }
            for &v in row {
                if v >= n {
                    return Err(Error::Parse(format!("check {ci} references variable {v} >= {n}")));
                }
                var_edges[v].push(edge_var.len());
                edge_var.push(v);
            }
            check_ptr.push(edge_var.len());
        }
        let encoder = Encoder::new(n, &checks);
        Ok(Self {
            n,
            checks,
            edge_var,
            check_ptr,
            var_edges,
            encoder,
        })
    }

    /// Random regular code with `col_weight` ones per column and `row_weight`
    /// per row, free of repeated edges.
    pub fn regular(n: usize, col_weight: usize, row_weight: usize, seed: u64) -> Result<Self> {
        if n == 0 || col_weight == 0 || row_weight == 0 || (n * col_weight) % row_weight != 0 {
            return Err(Error::config("ldpc", "n * col_weight must be a multiple of row_weight"));
        }
        let m = n * col_weight / row_weight;
        let mut rng = SimRng::new(seed);
        let mut sockets: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, col_weight)).collect();
        rng.shuffle(&mut sockets);
        // swap away repeated variables inside a check
        for _ in 0..1000 {
            let mut clean = true;
            for c in 0..m {
                for a in 0..row_weight {
                    for b in 0..a {
                        if sockets[c * row_weight + a] == sockets[c * row_weight + b] {
                            clean = false;
                            let other = (rng.uniform() * sockets.len() as f64) as usize % sockets.len();
                            sockets.swap(c * row_weight + a, other);
                        }
                    }
                }
            }
            if clean {
                let checks = sockets.chunks(row_weight).map(|c| c.to_vec()).collect();
                return Self::from_checks(n, checks);
            }
        }
        Err(Error::config("ldpc", "could not remove repeated edges"))
    }

    /// The (3,6)-regular rate-1/2 code of length 1024 shipped with the crate.
    pub fn bundled() -> Self {
        Self::regular(BUNDLED_LENGTH, 3, 6, BUNDLED_SEED).expect("bundled code parameters are valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_checks(&self) -> usize {
        self.checks.len()
    }

    /// Information bits per codeword, `n - rank(H)`.
    pub fn k(&self) -> usize {
        self.encoder.info_positions.len()
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n as f64
    }

    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    /// Codeword positions that carry the information bits, in order.
    pub fn info_positions(&self) -> &[usize] {
        &self.encoder.info_positions
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k() {
            return Err(Error::Dimension(format!("{} info bits for k = {}", info.len(), self.k())));
        }
        let enc = &self.encoder;
        let mut packed = vec![0u64; enc.words];
        let mut cw = vec![0u8; self.n];
        for (&pos, &b) in enc.info_positions.iter().zip(info) {
            if b & 1 == 1 {
                packed[pos / 64] |= 1 << (pos % 64);
                cw[pos] = 1;
            }
        }
        for (row, &p) in enc.rows.iter().zip(&enc.pivots) {
            let ones: u32 = row.iter().zip(&packed).map(|(a, b)| (a & b).count_ones()).sum();
            cw[p] = (ones & 1) as u8;
        }
        Ok(cw)
    }

    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.encoder.info_positions.iter().map(|&p| codeword[p]).collect()
    }

    pub fn syndrome_ok(&self, bits: &[u8]) -> bool {
        self.checks
            .iter()
            .all(|row| row.iter().fold(0u8, |acc, &v| acc ^ (bits[v] & 1)) == 0)
    }

    /// Flooding belief propagation on input LLRs `log P(0)/P(1)`. Stops as
    /// soon as the hard decisions satisfy every check.
    pub fn decode(&self, input: &[f64], opts: &BpOptions) -> Result<BpResult> {
        if input.len() != self.n {
            return Err(Error::Dimension(format!("{} LLRs for n = {}", input.len(), self.n)));
        }
        let l_in: Vec<f64> = input.iter().map(|x| clamp_llr(*x)).collect();
        let mut hard: Vec<u8> = l_in.iter().map(|&x| u8::from(x < 0.0)).collect();
        if self.syndrome_ok(&hard) {
            return Ok(BpResult {
                llr: l_in,
                hard,
                converged: true,
                iterations: 0,
            });
        }
        let edges = self.edge_var.len();
        let mut c2v = vec![0.0; edges];
        let mut v2c = vec![0.0; edges];
        let mut total = l_in.clone();
        let mut scratch = Vec::new();
        for it in 1..=opts.max_iterations {
            for (e, &v) in self.edge_var.iter().enumerate() {
                v2c[e] = total[v] - c2v[e];
            }
            for c in 0..self.checks.len() {
                let (lo, hi) = (self.check_ptr[c], self.check_ptr[c + 1]);
                if opts.min_sum {
                    min_sum_update(&v2c[lo..hi], &mut c2v[lo..hi]);
                } else {
                    tanh_update(&v2c[lo..hi], &mut c2v[lo..hi], &mut scratch);
                }
            }
            for v in 0..self.n {
                let s = l_in[v] + self.var_edges[v].iter().map(|&e| c2v[e]).sum::<f64>();
                total[v] = clamp_llr(s);
                hard[v] = u8::from(total[v] < 0.0);
            }
            if self.syndrome_ok(&hard) {
                return Ok(BpResult {
                    llr: total,
                    hard,
                    converged: true,
                    iterations: it,
                });
            }
        }
        Ok(BpResult {
            llr: total,
            hard,
            converged: false,
            iterations: opts.max_iterations,
        })
    }

    /// Read the standard alist text format.
    pub fn read_alist<R: BufRead>(r: R) -> Result<Self> {
        let mut nums = Vec::new();
        for line in r.lines() {
            for tok in line?.split_whitespace() {
                nums.push(tok.parse::<usize>().map_err(|e| Error::Parse(format!("alist: {e}")))?);
            }
        }
        let mut it = nums.into_iter();
        let mut next = |what: &str| it.next().ok_or_else(|| Error::Parse(format!("alist truncated at {what}")));
        let n = next("n")?;
        let m = next("m")?;
        let max_col = next("max column degree")?;
        let max_row = next("max row degree")?;
        let col_deg: Vec<usize> = (0..n).map(|_| next("column degrees")).collect::<Result<_>>()?;
        let row_deg: Vec<usize> = (0..m).map(|_| next("row degrees")).collect::<Result<_>>()?;
        if col_deg.iter().any(|&d| d > max_col) || row_deg.iter().any(|&d| d > max_row) {
            return Err(Error::Parse("alist degree exceeds declared maximum".into()));
        }
        // column lists are redundant with the row lists; entries padded to
        // the maximum degree with zeros are allowed
        let mut col_edges = 0;
        for &d in &col_deg {
            let mut seen = 0;
            while seen < d {
                if next("column lists")? != 0 {
                    seen += 1;
                }
            }
            col_edges += d;
        }
        let mut checks = Vec::with_capacity(m);
        for &d in &row_deg {
            let mut row = Vec::with_capacity(d);
            while row.len() < d {
                let v = next("row lists")?;
                if v != 0 {
                    row.push(v - 1);
                }
            }
            checks.push(row);
        }
        if col_edges != checks.iter().map(Vec::len).sum::<usize>() {
            return Err(Error::Parse("alist row and column degrees disagree".into()));
        }
        Self::from_checks(n, checks)
    }

    pub fn write_alist<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.checks.len();
        let max_col = self.var_edges.iter().map(Vec::len).max().unwrap_or(0);
        let max_row = self.checks.iter().map(Vec::len).max().unwrap_or(0);
        writeln!(w, "{} {}", self.n, m)?;
        writeln!(w, "{max_col} {max_row}")?;
        let join = |v: Vec<usize>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(w, "{}", join(self.var_edges.iter().map(Vec::len).collect()))?;
        writeln!(w, "{}", join(self.checks.iter().map(Vec::len).collect()))?;
        for edges in &self.var_edges {
            let mut cs: Vec<usize> = edges.iter().map(|&e| self.check_of_edge(e) + 1).collect();
            cs.resize(max_col, 0);
            writeln!(w, "{}", join(cs))?;
        }
        for row in &self.checks {
            let mut vs: Vec<usize> = row.iter().map(|v| v + 1).collect();
            vs.resize(max_row, 0);
            writeln!(w, "{}", join(vs))?;
        }
        Ok(())
    }

    fn check_of_edge(&self, e: usize) -> usize {
        self.check_ptr.partition_point(|&p| p <= e) - 1
    }
}

impl Encoder {
    /// Reduced row echelon form of `H` over GF(2).
    fn new(n: usize, checks: &[Vec<usize>]) -> Self {
        let words = n.div_ceil(64);
        let mut rows: Vec<Vec<u64>> = checks
            .iter()
            .map(|row| {
                let mut r = vec![0u64; words];
                for &v in row {
                    r[v / 64] ^= 1 << (v % 64);
                }
                r
            })
            .collect();
        let mut pivots = Vec::new();
        let mut rank = 0;
        for col in 0..n {
            let (w, b) = (col / 64, 1u64 << (col % 64));
            let Some(p) = (rank..rows.len()).find(|&r| rows[r][w] & b != 0) else {
                continue;
            };
            rows.swap(rank, p);
            let pivot = rows[rank].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != rank && row[w] & b != 0 {
                    row.iter_mut().zip(&pivot).for_each(|(x, y)| *x ^= y);
                }
            }
            pivots.push(col);
            rank += 1;
            if rank == rows.len() {
                break;
            }
        }
        rows.truncate(rank);
        let mut is_pivot = vec![false; n];
        pivots.iter().for_each(|&p| is_pivot[p] = true);
        let info_positions = (0..n).filter(|&c| !is_pivot[c]).collect();
        Self {
            words,
            rows,
            pivots,
            info_positions,
        }
    }
}

pub fn clamp_llr(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-LLR_CLAMP, LLR_CLAMP)
    }
}

fn tanh_update(input: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    let d = input.len();
    scratch.clear();
    scratch.extend(input.iter().map(|x| (x / 2.0).tanh()));
    // prefix and suffix products avoid dividing by a zero factor
    let mut prefix = 1.0;
    for i in 0..d {
        out[i] = prefix;
        prefix *= scratch[i];
    }
    let mut suffix = 1.0;
    for i in (0..d).rev() {
        let p = (out[i] * suffix).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
        out[i] = clamp_llr(2.0 * p.atanh());
        suffix *= scratch[i];
    }
}

fn min_sum_update(input: &[f64], out: &mut [f64]) {
    let mut sign = 1.0;
    let (mut min1, mut min2, mut arg) = (f64::INFINITY, f64::INFINITY, 0);
    for (i, &x) in input.iter().enumerate() {
        if x < 0.0 {
            sign = -sign;
        }
        let a = x.abs();
        if a < min1 {
            min2 = min1;
            min1 = a;
            arg = i;
        } else if a < min2 {
            min2 = a;
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        let s = if input[i] < 0.0 { -sign } else { sign };
        *o = s * if i == arg { min2 } else { min1 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn awgn_llrs(cw: &[u8], ebn0_db: f64, rate: f64, rng: &mut SimRng) -> Vec<f64> {
        let sigma2 = 1.0 / (2.0 * rate * 10f64.powf(ebn0_db / 10.0));
        cw.iter()
            .map(|&b| {
                let y = 1.0 - 2.0 * b as f64 + sigma2.sqrt() * rng.gaussian();
                2.0 * y / sigma2
            })
            .collect()
    }

    #[test]
    fn bundled_code_shape() {
        let code = LdpcCode::bundled();
        assert_eq!(code.n(), 1024);
        assert_eq!(code.num_checks(), 512);
        assert!(code.checks().iter().all(|c| c.len() == 6));
        assert!(code.var_edges.iter().all(|e| e.len() == 3));
        assert!(code.k() >= 512 && code.k() <= 520);
        assert_eq!(code, LdpcCode::bundled());
    }

    #[test]
    fn encoded_words_satisfy_checks() {
        let code = LdpcCode::bundled();
        let mut rng = SimRng::new(1);
        for _ in 0..20 {
            let info = rng.bits(code.k());
            let cw = code.encode(&info).unwrap();
            assert!(code.syndrome_ok(&cw));
            assert_eq!(code.extract_info(&cw), info);
        }
        assert!(code.encode(&[0; 3]).is_err());
    }

    #[test]
    fn encoder_on_dependent_rows() {
        // third row is the sum of the first two
        let code = LdpcCode::from_checks(6, vec![vec![0, 1, 2], vec![2, 3, 4], vec![0, 1, 3, 4], vec![4, 5]]).unwrap();
        assert_eq!(code.k(), 3);
        for x in 0..8u8 {
            let info = [x & 1, (x >> 1) & 1, (x >> 2) & 1];
            let cw = code.encode(&info).unwrap();
            assert!(code.syndrome_ok(&cw));
        }
        assert!(LdpcCode::from_checks(4, vec![vec![0, 0]]).is_err());
        assert!(LdpcCode::from_checks(4, vec![vec![0, 7]]).is_err());
    }

    #[test]
    fn alist_round_trip() {
        let code = LdpcCode::regular(96, 3, 6, 5).unwrap();
        let mut buf = Vec::new();
        code.write_alist(&mut buf).unwrap();
        let back = LdpcCode::read_alist(&buf[..]).unwrap();
        assert_eq!(back, code);
        let text = "4 2\n1 2\n1 1 1 1\n2 2\n1\n1\n2\n2\n1 2\n3 4\n";
        let small = LdpcCode::read_alist(text.as_bytes()).unwrap();
        assert_eq!(small.checks(), &[vec![0, 1], vec![2, 3]]);
        assert!(LdpcCode::read_alist("4 2\n1 2\n".as_bytes()).is_err());
        assert!(LdpcCode::read_alist("4 x\n".as_bytes()).is_err());
    }

    #[test]
    fn confident_inputs_decode_immediately() {
        let code = LdpcCode::bundled();
        let res = code.decode(&vec![10.0; code.n()], &BpOptions::default()).unwrap();
        assert!(res.converged && res.iterations == 0);
        assert!(res.hard.iter().all(|&b| b == 0));

        let mut rng = SimRng::new(2);
        let cw = code.encode(&rng.bits(code.k())).unwrap();
        let llr: Vec<f64> = cw.iter().map(|&b| if b == 0 { 8.0 } else { -8.0 }).collect();
        let res = code.decode(&llr, &BpOptions { max_iterations: 1, min_sum: false }).unwrap();
        assert_eq!(res.hard, cw);
    }

    #[test]
    fn corrects_flipped_bits() {
        let code = LdpcCode::bundled();
        let mut rng = SimRng::new(3);
        let cw = code.encode(&rng.bits(code.k())).unwrap();
        let mut llr: Vec<f64> = cw.iter().map(|&b| if b == 0 { 2.0 } else { -2.0 }).collect();
        for i in (0..code.n()).step_by(97) {
            llr[i] = -llr[i];
        }
        for min_sum in [false, true] {
            let res = code.decode(&llr, &BpOptions { max_iterations: 50, min_sum }).unwrap();
            assert!(res.converged);
            assert_eq!(res.hard, cw);
            assert!(res.llr.iter().all(|x| x.abs() <= LLR_CLAMP));
        }
    }

    #[test]
    fn check_node_rules() {
        let input = [1.0, -2.0, 0.5, 3.0];
        let mut out = [0.0; 4];
        let mut scratch = Vec::new();
        tanh_update(&input, &mut out, &mut scratch);
        for i in 0..4 {
            let p: f64 = (0..4).filter(|&j| j != i).map(|j| (input[j] / 2.0).tanh()).product();
            assert!((out[i] - 2.0 * p.atanh()).abs() < 1e-12);
        }
        min_sum_update(&input, &mut out);
        assert_eq!(out, [-0.5, 0.5, -1.0, -0.5]);
        tanh_update(&[0.0, 1.0, 2.0], &mut out[..3], &mut scratch);
        assert_eq!(&out[..3], &[2.0 * ((0.5f64).tanh() * 1f64.tanh()).atanh(), 0.0, 0.0]);
    }

    #[test]
    fn ber_falls_with_snr() {
        let code = LdpcCode::bundled();
        let mut rng = SimRng::new(4);
        let mut bers = Vec::new();
        for ebn0 in [0.0, 1.0, 2.0] {
            let mut errors = 0usize;
            let mut bits = 0usize;
            for _ in 0..40 {
                let info = rng.bits(code.k());
                let cw = code.encode(&info).unwrap();
                let res = code.decode(&awgn_llrs(&cw, ebn0, code.rate(), &mut rng), &BpOptions::default()).unwrap();
                errors += code.extract_info(&res.hard).iter().zip(&info).filter(|(a, b)| a != b).count();
                bits += info.len();
            }
            bers.push(errors as f64 / bits as f64);
        }
        assert!(bers[0] > bers[1] && bers[1] > bers[2], "{bers:?}");
    }
}
