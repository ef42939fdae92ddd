//! Monte Carlo detection records and the per-pair CHSH estimator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BellError, Result};
use crate::pointer::{Axis, PixelGrid};
use crate::polarization::chsh_sign;
use crate::weak::{MeasurementSettings, PixelPmf};

/// Events drawn per RNG substream.
pub const CHUNK_SIZE: usize = 1 << 16;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of substream `index` derived from a run seed.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// One detected pair: the pixel hit by each photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceEvent {
    pub seq: u64,
    pub xa: u16,
    pub ya: u16,
    pub xb: u16,
    pub yb: u16,
}

impl CoincidenceEvent {
    pub fn pixel(&self, axis: Axis) -> usize {
        match axis {
            Axis::XA => self.xa as usize,
            Axis::YA => self.ya as usize,
            Axis::XB => self.xb as usize,
            Axis::YB => self.yb as usize,
        }
    }
}

/// Draws `n` i.i.d. events from `pmf`.
///
/// Events are generated in chunks of [`CHUNK_SIZE`], each from its own
/// substream, so the output does not depend on the number of threads.
pub fn sample_events(pmf: &PixelPmf, n: usize, seed: u64) -> Result<Vec<CoincidenceEvent>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let total = pmf.total();
    if (total - 1.0).abs() > 1e-6 {
        return Err(BellError::domain(format!("pmf is not normalized (sum = {total})")));
    }
    if pmf.n > u16::MAX as usize {
        return Err(BellError::domain("grid too large for event records"));
    }
    let table = WeightedAliasIndex::new(pmf.probs.clone())
        .map_err(|e| BellError::domain(format!("cannot build alias table: {e}")))?;
    let n_chunks = n.div_ceil(CHUNK_SIZE);
    let chunks: Vec<Vec<CoincidenceEvent>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, chunk as u64));
            let start = chunk * CHUNK_SIZE;
            let end = (start + CHUNK_SIZE).min(n);
            (start..end)
                .map(|seq| {
                    let [xa, ya, xb, yb] = pmf.cell(table.sample(&mut rng));
                    CoincidenceEvent {
                        seq: seq as u64,
                        xa: xa as u16,
                        ya: ya as u16,
                        xb: xb as u16,
                        yb: yb as u16,
                    }
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Coincidence counts `N(X_A, Y_A, X_B, Y_B)`, same layout as [`PixelPmf`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceTensor {
    pub n: usize,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl CoincidenceTensor {
    pub fn get(&self, xa: usize, ya: usize, xb: usize, yb: usize) -> u64 {
        let n = self.n;
        self.counts[((xa * n + ya) * n + xb) * n + yb]
    }

    /// Counts summed over Bob's pixels, indexed `X_A·n + Y_A`.
    pub fn alice_marginal(&self) -> Vec<u64> {
        self.counts.chunks(self.n * self.n).map(|r| r.iter().sum()).collect()
    }
}

pub fn accumulate_tensor(events: &[CoincidenceEvent], n: usize) -> Result<CoincidenceTensor> {
    let mut counts = vec![0u64; n * n * n * n];
    for e in events {
        let idx = [e.xa, e.ya, e.xb, e.yb];
        if idx.iter().any(|&i| i as usize >= n) {
            return Err(BellError::domain(format!("event {} outside {n}x{n} grid", e.seq)));
        }
        let [xa, ya, xb, yb] = idx.map(|i| i as usize);
        counts[((xa * n + ya) * n + xb) * n + yb] += 1;
    }
    Ok(CoincidenceTensor { n, counts, total: events.len() as u64 })
}

/// Per-pair CHSH estimate and its four correlation terms `c[j-1][l-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub s_hat: f64,
    pub c: [[f64; 2]; 2],
}

/// Pixel-centre positions along every axis, plus the couplings they are divided by.
#[derive(Debug, Clone)]
pub struct Estimator {
    positions: [Vec<f64>; 4],
    g: [f64; 4],
}

impl Estimator {
    pub fn new(s: &MeasurementSettings, grid: &PixelGrid) -> Result<Self> {
        grid.validate()?;
        s.validate()?;
        for axis in Axis::ALL {
            if s.g(axis) == 0.0 {
                return Err(BellError::domain(format!(
                    "coupling on {axis:?} is zero: per-pair estimator undefined"
                )));
            }
        }
        Ok(Estimator {
            positions: Axis::ALL.map(|a| grid.positions(a)),
            g: Axis::ALL.map(|a| s.g(a)),
        })
    }

    /// `Ĉ_jl = 4 ξ_jA ξ_lB/(g g) − 2 ξ_jA/g − 2 ξ_lB/g + 1`, `Ŝ = Ĉ11 − Ĉ12 + Ĉ21 + Ĉ22`.
    pub fn estimate_at(&self, pixels: [usize; 4]) -> PairEstimate {
        let u: [f64; 4] = std::array::from_fn(|i| self.positions[i][pixels[i]] / self.g[i]);
        let mut c = [[0.0; 2]; 2];
        let mut s_hat = 0.0;
        for j in 1..=2 {
            for l in 1..=2 {
                let a = u[Axis::for_setting(true, j).index()];
                let b = u[Axis::for_setting(false, l).index()];
                let cjl = 4.0 * a * b - 2.0 * a - 2.0 * b + 1.0;
                c[j - 1][l - 1] = cjl;
                s_hat += chsh_sign(j, l) * cjl;
            }
        }
        PairEstimate { s_hat, c }
    }

    pub fn estimate(&self, e: &CoincidenceEvent) -> PairEstimate {
        self.estimate_at(Axis::ALL.map(|a| e.pixel(a)))
    }
}

pub fn single_pair_s(e: &CoincidenceEvent, s: &MeasurementSettings, grid: &PixelGrid) -> Result<PairEstimate> {
    for axis in Axis::ALL {
        if e.pixel(axis) >= grid.n {
            return Err(BellError::domain(format!("event {} outside the grid", e.seq)));
        }
    }
    Ok(Estimator::new(s, grid)?.estimate(e))
}

/// Per-pair estimates for a whole record, in event order.
pub fn estimate_all(events: &[CoincidenceEvent], s: &MeasurementSettings, grid: &PixelGrid) -> Result<Vec<PairEstimate>> {
    let est = Estimator::new(s, grid)?;
    if events.iter().any(|e| Axis::ALL.iter().any(|&a| e.pixel(a) >= grid.n)) {
        return Err(BellError::domain("event outside the grid"));
    }
    Ok(events.par_iter().map(|e| est.estimate(e)).collect())
}

/// Mean and variance of `Ŝ` under the pmf, summed cell by cell.
pub fn s_hat_distribution(pmf: &PixelPmf, s: &MeasurementSettings, grid: &PixelGrid) -> Result<(f64, f64)> {
    if pmf.n != grid.n {
        return Err(BellError::domain("pmf and grid sizes differ"));
    }
    let est = Estimator::new(s, grid)?;
    let nn = pmf.n * pmf.n;
    let rows: Vec<(f64, f64)> = pmf
        .probs
        .par_chunks(nn)
        .enumerate()
        .map(|(row, probs)| {
            let (mut m1, mut m2) = (0.0, 0.0);
            for (col, &p) in probs.iter().enumerate() {
                let pix = [row / pmf.n, row % pmf.n, col / pmf.n, col % pmf.n];
                let v = est.estimate_at(pix).s_hat;
                m1 += p * v;
                m2 += p * v * v;
            }
            (m1, m2)
        })
        .collect();
    let (m1, m2) = rows.iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    Ok((m1, (m2 - m1 * m1).max(0.0)))
}

/// `E[Ŝ] = Σ_cells pmf · Ŝ(cell)`.
pub fn expected_s_hat(pmf: &PixelPmf, s: &MeasurementSettings, grid: &PixelGrid) -> Result<f64> {
    Ok(s_hat_distribution(pmf, s, grid)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub bin_width: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec { bin_width: 1.0, min: -60.0, max: 60.0 }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0) || !(self.min < self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(BellError::domain(format!("invalid histogram {self:?}")));
        }
        Ok(())
    }

    pub fn edges(&self) -> Vec<f64> {
        let bins = ((self.max - self.min) / self.bin_width).round().max(1.0) as usize;
        (0..=bins).map(|i| self.min + i as f64 * self.bin_width).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn build(values: &[f64], spec: &HistogramSpec) -> Result<Self> {
        spec.validate()?;
        let edges = spec.edges();
        let bins = edges.len() - 1;
        let hi = edges[bins];
        let mut counts = vec![0u64; bins];
        let (mut underflow, mut overflow) = (0, 0);
        for &v in values {
            if v < spec.min {
                underflow += 1;
            } else if v >= hi {
                overflow += 1;
            } else {
                let i = (((v - spec.min) / spec.bin_width) as usize).min(bins - 1);
                counts[i] += 1;
            }
        }
        Ok(Histogram { edges, counts, underflow, overflow })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

/// Run-level statistics of the per-pair estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_events: u64,
    #[serde(rename = "S_ave")]
    pub s_ave: f64,
    pub stddev: f64,
    pub stderr: f64,
    pub histogram: Histogram,
}

pub fn aggregate(estimates: &[f64], hist: &HistogramSpec) -> Result<RunSummary> {
    if estimates.is_empty() {
        return Err(BellError::domain("cannot aggregate an empty run"));
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = if estimates.len() > 1 {
        estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let stddev = var.sqrt();
    Ok(RunSummary {
        n_events: estimates.len() as u64,
        s_ave: mean,
        stddev,
        stderr: stddev / n.sqrt(),
        histogram: Histogram::build(estimates, hist)?,
    })
}

/// Mixes in a uniform background over all cells with weight `rate`.
pub fn inject_accidentals(pmf: &PixelPmf, rate: f64) -> Result<PixelPmf> {
    if !(0.0..1.0).contains(&rate) {
        return Err(BellError::domain(format!("accidental rate must lie in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(pmf.clone());
    }
    let uniform = rate / pmf.probs.len() as f64;
    let probs = pmf.probs.iter().map(|p| (1.0 - rate) * p + uniform).collect();
    Ok(PixelPmf { n: pmf.n, probs, captured: pmf.captured })
}
