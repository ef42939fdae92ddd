//! Projective two-qubit tomography and maximum-likelihood reconstruction.

use nalgebra::{DMatrix, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::coincidence::substream_seed;
use crate::error::{BellError, Result};
use crate::polarization::{
    concurrence, fidelity, kron, negativity, purity, singlet, Mat2, Mat4, TwoQubitState, C64,
};
use crate::weak::visibility;

/// Eigenstates of the three Pauli operators, as prepared by a QWP+HWP+PBS analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PauliState {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl PauliState {
    pub const ALL: [PauliState; 6] = [
        PauliState::H,
        PauliState::V,
        PauliState::D,
        PauliState::A,
        PauliState::R,
        PauliState::L,
    ];

    pub fn ket(self) -> Vector2<C64> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (a, b) = match self {
            PauliState::H => (C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
            PauliState::V => (C64::new(0.0, 0.0), C64::new(1.0, 0.0)),
            PauliState::D => (C64::new(h, 0.0), C64::new(h, 0.0)),
            PauliState::A => (C64::new(h, 0.0), C64::new(-h, 0.0)),
            PauliState::R => (C64::new(h, 0.0), C64::new(0.0, h)),
            PauliState::L => (C64::new(h, 0.0), C64::new(0.0, -h)),
        };
        Vector2::new(a, b)
    }

    pub fn projector(self) -> Mat2 {
        let k = self.ket();
        k * k.adjoint()
    }
}

impl fmt::Display for PauliState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for PauliState {
    type Err = BellError;

    fn from_str(s: &str) -> Result<Self> {
        PauliState::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| BellError::domain(format!("unknown analyzer setting {s:?}")))
    }
}

/// A pair of single-photon analyzer settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProjSetting {
    pub a: PauliState,
    pub b: PauliState,
}

impl ProjSetting {
    pub fn projector(&self) -> Mat4 {
        kron(&self.a.projector(), &self.b.projector())
    }
}

/// All 36 pairs of Pauli eigenstates.
pub fn tomography_settings() -> Vec<ProjSetting> {
    PauliState::ALL
        .iter()
        .flat_map(|&a| PauliState::ALL.iter().map(move |&b| ProjSetting { a, b }))
        .collect()
}

/// Rank of the linear map from density matrices to Born probabilities.
pub fn design_rank(settings: &[ProjSetting]) -> usize {
    let mut rows = Vec::with_capacity(settings.len() * 16);
    for s in settings {
        let p = s.projector();
        // real coordinates of the Hermitian projector
        for i in 0..4 {
            for j in 0..4 {
                rows.push(if i <= j { p[(i, j)].re } else { p[(j, i)].im });
            }
        }
    }
    let m = DMatrix::from_row_slice(settings.len(), 16, &rows);
    m.svd(false, false).rank(1e-9)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountEntry {
    pub setting: ProjSetting,
    pub counts: u64,
    pub shots: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub entries: Vec<CountEntry>,
}

impl CountRecord {
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if e.shots == 0 || e.counts > e.shots {
                return Err(BellError::domain(format!(
                    "invalid count entry {} of {} for {:?}",
                    e.counts, e.shots, e.setting
                )));
            }
        }
        Ok(())
    }

    /// CSV with header `setting_a,setting_b,counts,shots`. Lines starting with
    /// `#` are skipped when reading.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting_a,setting_b,counts,shots\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.setting.a, e.setting.b, e.counts, e.shots));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        if lines.next().map(str::trim) != Some("setting_a,setting_b,counts,shots") {
            return Err(BellError::domain("missing count record header"));
        }
        let mut entries = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 4 {
                return Err(BellError::domain(format!("malformed count row {line:?}")));
            }
            let parse = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| BellError::domain(format!("bad integer {s:?}")))
            };
            entries.push(CountEntry {
                setting: ProjSetting { a: f[0].parse()?, b: f[1].parse()? },
                counts: parse(f[2])?,
                shots: parse(f[3])?,
            });
        }
        let rec = CountRecord { entries };
        rec.validate()?;
        Ok(rec)
    }
}

/// Born probability, with small negative or >1 round-off tolerated.
fn born(rho: &TwoQubitState, p: &Mat4) -> Result<f64> {
    let prob = rho.expectation(p).re;
    if !(-1e-10..=1.0 + 1e-10).contains(&prob) {
        return Err(BellError::numeric(format!("invalid Born probability {prob}")));
    }
    Ok(prob.clamp(0.0, 1.0))
}

/// Independent binomial counts per setting.
pub fn simulate_counts(rho: &TwoQubitState, settings: &[ProjSetting], shots: u64, seed: u64) -> Result<CountRecord> {
    if shots == 0 {
        return Err(BellError::domain("shots per setting must be positive"));
    }
    let entries = settings
        .par_iter()
        .enumerate()
        .map(|(i, setting)| {
            let p = born(rho, &setting.projector())?;
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, i as u64));
            let counts = Binomial::new(shots, p)
                .map_err(|e| BellError::numeric(format!("binomial({shots}, {p}): {e}")))?
                .sample(&mut rng);
            Ok(CountEntry { setting: *setting, counts, shots })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CountRecord { entries })
}

/// Noise-free counts rounded from exact probabilities.
pub fn expected_counts(rho: &TwoQubitState, settings: &[ProjSetting], shots: u64) -> Result<CountRecord> {
    let entries = settings
        .iter()
        .map(|setting| {
            let p = born(rho, &setting.projector())?;
            Ok(CountEntry { setting: *setting, counts: (p * shots as f64).round() as u64, shots })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CountRecord { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub dilution: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions { max_iterations: 10_000, tolerance: 1e-9, dilution: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedState {
    pub rho: TwoQubitState,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖(R − I) ρ‖_F` at the returned state.
    pub gradient_norm: f64,
    /// Log-likelihood after every accepted step, starting from the initial guess.
    #[serde(skip)]
    pub history: Vec<f64>,
}

struct Likelihood<'a> {
    projectors: Vec<Mat4>,
    record: &'a CountRecord,
    total_shots: f64,
}

impl<'a> Likelihood<'a> {
    fn new(record: &'a CountRecord) -> Self {
        Likelihood {
            projectors: record.entries.iter().map(|e| e.setting.projector()).collect(),
            record,
            total_shots: record.entries.iter().map(|e| e.shots as f64).sum(),
        }
    }

    fn probs(&self, rho: &Mat4) -> Vec<f64> {
        self.projectors.iter().map(|p| (rho * p).trace().re).collect()
    }

    fn log_likelihood(&self, rho: &Mat4) -> f64 {
        let mut acc = 0.0;
        for (e, p) in self.record.entries.iter().zip(self.probs(rho)) {
            let (k, n) = (e.counts as f64, e.shots as f64);
            if k > 0.0 {
                acc += k * p.ln();
            }
            if n - k > 0.0 {
                acc += (n - k) * (1.0 - p).ln();
            }
        }
        acc
    }

    /// `R = Σ_s [k_s/p_s Π_s + (n_s − k_s)/(1 − p_s) (I − Π_s)] / Σ_s n_s`.
    fn r_operator(&self, rho: &Mat4) -> Mat4 {
        let mut r = Mat4::zeros();
        for ((e, proj), p) in self.record.entries.iter().zip(&self.projectors).zip(self.probs(rho)) {
            let (k, n) = (e.counts as f64, e.shots as f64);
            if k > 0.0 {
                r += proj.scale(k / p);
            }
            if n - k > 0.0 {
                r += (Mat4::identity() - proj).scale((n - k) / (1.0 - p));
            }
        }
        r.unscale(self.total_shots)
    }
}

fn frobenius(m: &Mat4) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Diluted iterative RρR maximum-likelihood reconstruction.
pub fn reconstruct_mle(counts: &CountRecord) -> Result<ReconstructedState> {
    reconstruct_mle_with(counts, &MleOptions::default())
}

pub fn reconstruct_mle_with(counts: &CountRecord, opts: &MleOptions) -> Result<ReconstructedState> {
    counts.validate()?;
    let settings: Vec<ProjSetting> = counts.entries.iter().map(|e| e.setting).collect();
    if design_rank(&settings) < 16 {
        return Err(BellError::domain("tomography settings are not informationally complete"));
    }
    let lik = Likelihood::new(counts);
    let id = Mat4::identity();
    let mut rho = id.scale(0.25);
    let mut ll = lik.log_likelihood(&rho);
    let mut history = vec![ll];
    let mut eps = opts.dilution;
    let mut iterations = 0;
    let mut grad = frobenius(&((lik.r_operator(&rho) - id) * rho));
    while iterations < opts.max_iterations && grad >= opts.tolerance {
        iterations += 1;
        let r = lik.r_operator(&rho);
        let step = id + r.scale(eps);
        let mut next = step * rho * step;
        next = next.unscale(next.trace().re);
        next = (next + next.adjoint()).scale(0.5);
        let next_ll = lik.log_likelihood(&next);
        // changes below the summation round-off of ll carry no information
        if next_ll < ll - 64.0 * f64::EPSILON * ll.abs() {
            eps *= 0.5;
            if eps < 1e-12 {
                break;
            }
            continue;
        }
        rho = next;
        ll = next_ll;
        history.push(ll);
        grad = frobenius(&((lik.r_operator(&rho) - id) * rho));
    }
    Ok(ReconstructedState {
        rho: TwoQubitState::from_matrix_clipped(&rho)?,
        log_likelihood: ll,
        iterations,
        converged: grad < opts.tolerance,
        gradient_norm: grad,
        history,
    })
}

/// Figure-of-merit values quoted for a reconstructed state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Fidelity with the singlet.
    pub fidelity: f64,
    pub purity: f64,
    pub negativity: f64,
    pub concurrence: f64,
    pub visibility: f64,
}

pub fn metric_report(rho: &TwoQubitState) -> Result<MetricReport> {
    Ok(MetricReport {
        fidelity: fidelity(rho, &singlet())?,
        purity: purity(rho),
        negativity: negativity(rho),
        concurrence: concurrence(rho)?,
        visibility: visibility(rho)?,
    })
}

/// Trace distance `½‖ρ − σ‖₁`.
pub fn trace_distance(a: &TwoQubitState, b: &TwoQubitState) -> f64 {
    let d = a.matrix() - b.matrix();
    0.5 * crate::polarization::hermitian_eigenvalues(&d).iter().map(|l| l.abs()).sum::<f64>()
}
