//! Sequential weak couplings of polarization to transverse pointer position.
//!
//! Each coupling is the projector-controlled translation
//! `U = Π(θ) ⊗ T_g + (I − Π(θ)) ⊗ 1`, which is the exact value of
//! `exp(−i g Π(θ) ⊗ P)` because `Π² = Π`. Composing four of them splits the
//! joint state into 16 branches labelled by which projectors "fired"; every
//! observable in this module is a contraction of the branch Gram matrix with
//! per-axis pointer overlap integrals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;

use crate::error::{BellError, Result};
use crate::pointer::{bin_overlap, overlap_kappa, pixel_bins, Axis, PixelGrid};
use crate::polarization::{
    c, chsh_sign, hermitian_eigenvalues, kron, projector, AngleSet, Ket4, Mat2, Mat4,
    SingleQubitOp, TwoQubitState, C64,
};

/// Coupling displacement per pointer axis, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Couplings {
    pub x_a: f64,
    pub y_a: f64,
    pub x_b: f64,
    pub y_b: f64,
}

impl Couplings {
    pub fn uniform(g: f64) -> Self {
        Couplings { x_a: g, y_a: g, x_b: g, y_b: g }
    }

    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::XA => self.x_a,
            Axis::YA => self.y_a,
            Axis::XB => self.x_b,
            Axis::YB => self.y_b,
        }
    }

    pub fn set(&mut self, axis: Axis, g: f64) {
        match axis {
            Axis::XA => self.x_a = g,
            Axis::YA => self.y_a = g,
            Axis::XB => self.x_b = g,
            Axis::YB => self.y_b = g,
        }
    }
}

/// Order in which the four couplings act on the input, first to last.
pub const DEFAULT_ORDERING: [Axis; 4] = [Axis::YB, Axis::YA, Axis::XB, Axis::XA];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSettings {
    pub angles: AngleSet,
    pub couplings: Couplings,
    pub sigma: f64,
    pub ordering: [Axis; 4],
}

impl MeasurementSettings {
    pub fn new(angles: AngleSet, couplings: Couplings, sigma: f64) -> Result<Self> {
        let s = MeasurementSettings { angles, couplings, sigma, ordering: DEFAULT_ORDERING };
        s.validate()?;
        Ok(s)
    }

    /// All four couplings equal to `g_over_sigma · sigma`.
    pub fn uniform(angles: AngleSet, g_over_sigma: f64, sigma: f64) -> Result<Self> {
        Self::new(angles, Couplings::uniform(g_over_sigma * sigma), sigma)
    }

    pub fn with_ordering(mut self, ordering: [Axis; 4]) -> Result<Self> {
        self.ordering = ordering;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.angles.validate()?;
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(BellError::domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        for axis in Axis::ALL {
            if !self.couplings.get(axis).is_finite() {
                return Err(BellError::domain(format!("coupling {axis:?} is not finite")));
            }
        }
        for axis in Axis::ALL {
            if self.ordering.iter().filter(|&&a| a == axis).count() != 1 {
                return Err(BellError::domain(format!(
                    "ordering must be a permutation of the four couplings, got {:?}",
                    self.ordering
                )));
            }
        }
        Ok(())
    }

    pub fn g(&self, axis: Axis) -> f64 {
        self.couplings.get(axis)
    }

    /// Analyzer angle coupled to `axis`: x ↔ index 1, y ↔ index 2.
    pub fn angle(&self, axis: Axis) -> f64 {
        match axis {
            Axis::XA => self.angles.alpha1,
            Axis::YA => self.angles.alpha2,
            Axis::XB => self.angles.beta1,
            Axis::YB => self.angles.beta2,
        }
    }

    fn position(&self, axis: Axis) -> usize {
        self.ordering.iter().position(|&a| a == axis).expect("validated ordering")
    }

    /// The two axes of one photon as `(first applied, second applied)`.
    pub fn particle_order(&self, alice: bool) -> (Axis, Axis) {
        let (x, y) = if alice { (Axis::XA, Axis::YA) } else { (Axis::XB, Axis::YB) };
        if self.position(x) < self.position(y) {
            (x, y)
        } else {
            (y, x)
        }
    }

    /// Couplings acting on one photon, first applied first.
    fn particle_ops(&self, alice: bool) -> Result<[(Axis, SingleQubitOp); 2]> {
        let (first, second) = self.particle_order(alice);
        Ok([
            (first, projector(self.angle(first))?),
            (second, projector(self.angle(second))?),
        ])
    }
}

/// Branch label bit of `axis` in branch index `k`.
pub fn branch_bit(k: usize, axis: Axis) -> usize {
    (k >> axis.index()) & 1
}

fn projector_branch(p: &SingleQubitOp, bit: usize) -> Mat2 {
    if bit == 1 {
        p.0
    } else {
        p.complement().0
    }
}

/// Polarization operator of branch `k`: on each photon the later-applied
/// projector stands to the left.
pub fn branch_operator(s: &MeasurementSettings, k: usize) -> Result<Mat4> {
    let side = |alice: bool| -> Result<Mat2> {
        let [(a1, p1), (a2, p2)] = s.particle_ops(alice)?;
        Ok(projector_branch(&p2, branch_bit(k, a2)) * projector_branch(&p1, branch_bit(k, a1)))
    };
    Ok(kron(&side(true)?, &side(false)?))
}

/// One pure component of the input and its 16 branch amplitudes.
#[derive(Debug, Clone)]
pub struct BranchComponent {
    pub weight: f64,
    pub amplitudes: [Ket4; 16],
}

/// Expansion of the post-interaction joint state into 16 branches.
///
/// Branch `k` carries the polarization vector `O_k |ψ⟩` and pointer shifts
/// `bit_k(axis) · g_axis`. Mixed inputs are expanded component by component
/// over the eigen-decomposition of `ρ_in`.
#[derive(Debug, Clone)]
pub struct BranchDecomposition {
    pub components: Vec<BranchComponent>,
    pub shifts: [[f64; 4]; 16],
}

impl BranchDecomposition {
    /// `G[k][k'] = Σ_p w_p ⟨amp_{p,k'} | amp_{p,k}⟩`.
    pub fn gram(&self) -> [[C64; 16]; 16] {
        let mut g = [[C64::new(0.0, 0.0); 16]; 16];
        for comp in &self.components {
            for (k, row) in g.iter_mut().enumerate() {
                for (kp, cell) in row.iter_mut().enumerate() {
                    *cell += comp.amplitudes[kp].dotc(&comp.amplitudes[k]) * comp.weight;
                }
            }
        }
        g
    }

    /// Pointer-pair weight tensor: index `q_axis = 2·bit_k + bit_k'` per axis,
    /// flattened as `q_xA + 4 q_yA + 16 q_xB + 64 q_yB`.
    pub fn pair_weights(&self) -> [f64; 256] {
        let g = self.gram();
        let mut w = [0.0; 256];
        for (k, row) in g.iter().enumerate() {
            for (kp, cell) in row.iter().enumerate() {
                let mut q = 0;
                for axis in Axis::ALL {
                    q += (2 * branch_bit(k, axis) + branch_bit(kp, axis)) << (2 * axis.index());
                }
                w[q] += cell.re;
            }
        }
        w
    }

    /// Polarization state left after tracing out all pointers.
    pub fn reduced_state(&self, s: &MeasurementSettings) -> Result<Mat4> {
        let mut out = Mat4::zeros();
        for comp in &self.components {
            for k in 0..16 {
                for kp in 0..16 {
                    let mut factor = 1.0;
                    for axis in Axis::ALL {
                        factor *= overlap_kappa(
                            self.shifts[k][axis.index()] - self.shifts[kp][axis.index()],
                            s.sigma,
                        )?;
                    }
                    out += comp.amplitudes[k] * comp.amplitudes[kp].adjoint() * c(comp.weight * factor);
                }
            }
        }
        Ok(out)
    }
}

/// Expands `ρ_in` through the four couplings.
pub fn branch_expansion(rho_in: &TwoQubitState, s: &MeasurementSettings) -> Result<BranchDecomposition> {
    s.validate()?;
    let ops: Vec<Mat4> = (0..16).map(|k| branch_operator(s, k)).collect::<Result<_>>()?;
    let m = rho_in.matrix();
    let eig = nalgebra::SymmetricEigen::new((m + m.adjoint()).scale(0.5));
    let mut components = Vec::new();
    for (i, &w) in eig.eigenvalues.iter().enumerate() {
        if w <= 1e-15 {
            continue;
        }
        let psi: Ket4 = eig.eigenvectors.column(i).into_owned();
        let amplitudes = std::array::from_fn(|k| ops[k] * psi);
        components.push(BranchComponent { weight: w, amplitudes });
    }
    let shifts = std::array::from_fn(|k| {
        std::array::from_fn(|i| branch_bit(k, Axis::ALL[i]) as f64 * s.g(Axis::ALL[i]))
    });
    Ok(BranchDecomposition { components, shifts })
}

/// Per-axis factor of a branch-pair term, indexed by `q = 2·bit + bit'`.
type AxisFactor = [f64; 4];

/// `Σ_q W[q] Π_axis factor_axis[q_axis]`.
fn contract(w: &[f64; 256], f: [&AxisFactor; 4]) -> f64 {
    let mut acc = 0.0;
    for q in 0..256 {
        if w[q] == 0.0 {
            continue;
        }
        acc += w[q] * f[0][q & 3] * f[1][(q >> 2) & 3] * f[2][(q >> 4) & 3] * f[3][(q >> 6) & 3];
    }
    acc
}

/// Builds a per-axis factor from a function of the two pointer shifts.
fn axis_factor(g: f64, mut f: impl FnMut(f64, f64) -> Result<f64>) -> Result<AxisFactor> {
    let mut out = [0.0; 4];
    for (q, slot) in out.iter_mut().enumerate() {
        *slot = f((q >> 1) as f64 * g, (q & 1) as f64 * g)?;
    }
    Ok(out)
}

/// First moments of the four pointers and the four Alice–Bob joint moments.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentSet {
    pub x_a: f64,
    pub y_a: f64,
    pub x_b: f64,
    pub y_b: f64,
    pub xa_xb: f64,
    pub xa_yb: f64,
    pub ya_xb: f64,
    pub ya_yb: f64,
}

impl MomentSet {
    pub fn first(&self, axis: Axis) -> f64 {
        match axis {
            Axis::XA => self.x_a,
            Axis::YA => self.y_a,
            Axis::XB => self.x_b,
            Axis::YB => self.y_b,
        }
    }

    /// `⟨ξ_jA ξ_lB⟩` with `j, l ∈ {1, 2}`.
    pub fn joint(&self, j: usize, l: usize) -> f64 {
        match (j, l) {
            (1, 1) => self.xa_xb,
            (1, _) => self.xa_yb,
            (_, 1) => self.ya_xb,
            _ => self.ya_yb,
        }
    }

    fn set_first(&mut self, axis: Axis, v: f64) {
        match axis {
            Axis::XA => self.x_a = v,
            Axis::YA => self.y_a = v,
            Axis::XB => self.x_b = v,
            Axis::YB => self.y_b = v,
        }
    }

    fn set_joint(&mut self, j: usize, l: usize, v: f64) {
        match (j, l) {
            (1, 1) => self.xa_xb = v,
            (1, _) => self.xa_yb = v,
            (_, 1) => self.ya_xb = v,
            _ => self.ya_yb = v,
        }
    }

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.x_a, self.y_a, self.x_b, self.y_b, self.xa_xb, self.xa_yb, self.ya_xb, self.ya_yb,
        ]
    }

    /// Fills all eight moments from per-axis "mass" and "position" factors.
    fn from_factors(w: &[f64; 256], mass: &[AxisFactor; 4], pos: &[AxisFactor; 4]) -> Self {
        let mut m = MomentSet::default();
        let norm = contract(w, [&mass[0], &mass[1], &mass[2], &mass[3]]);
        for axis in Axis::ALL {
            let mut f = [&mass[0], &mass[1], &mass[2], &mass[3]];
            f[axis.index()] = &pos[axis.index()];
            m.set_first(axis, contract(w, f) / norm);
        }
        for j in 1..=2 {
            for l in 1..=2 {
                let a = Axis::for_setting(true, j).index();
                let b = Axis::for_setting(false, l).index();
                let mut f = [&mass[0], &mass[1], &mass[2], &mass[3]];
                f[a] = &pos[a];
                f[b] = &pos[b];
                m.set_joint(j, l, contract(w, f) / norm);
            }
        }
        m
    }
}

/// Exact pointer moments of the post-interaction state.
///
/// Uses `∫ f(ξ−s) f(ξ−s') dξ = κ(s−s')` and `∫ ξ f(ξ−s) f(ξ−s') dξ = κ(s−s')·(s+s')/2`.
pub fn exact_moments(rho_in: &TwoQubitState, s: &MeasurementSettings) -> Result<MomentSet> {
    let w = branch_expansion(rho_in, s)?.pair_weights();
    let mut mass = [[0.0; 4]; 4];
    let mut pos = [[0.0; 4]; 4];
    for axis in Axis::ALL {
        let g = s.g(axis);
        mass[axis.index()] = axis_factor(g, |a, b| overlap_kappa(a - b, s.sigma))?;
        pos[axis.index()] = axis_factor(g, |a, b| Ok(overlap_kappa(a - b, s.sigma)? * 0.5 * (a + b)))?;
    }
    Ok(MomentSet::from_factors(&w, &mass, &pos))
}

/// Weak-limit moments `⟨ξ_jK⟩ = g Tr[ρ Π(θ_Kj)]`, `⟨ξ_jA ξ_lB⟩ = g g Tr[ρ Π(α_j)⊗Π(β_l)]`.
pub fn weak_moments_first_order(rho_in: &TwoQubitState, s: &MeasurementSettings) -> Result<MomentSet> {
    s.validate()?;
    let id = Mat2::identity();
    let mut m = MomentSet::default();
    for axis in Axis::ALL {
        let p = projector(s.angle(axis))?.0;
        let op = if axis.is_alice() { kron(&p, &id) } else { kron(&id, &p) };
        m.set_first(axis, s.g(axis) * rho_in.expectation(&op).re);
    }
    for j in 1..=2 {
        for l in 1..=2 {
            let (a, b) = (Axis::for_setting(true, j), Axis::for_setting(false, l));
            let op = kron(&projector(s.angle(a))?.0, &projector(s.angle(b))?.0);
            m.set_joint(j, l, s.g(a) * s.g(b) * rho_in.expectation(&op).re);
        }
    }
    Ok(m)
}

/// `C(α_j, β_l) = 4⟨ξ_jA ξ_lB⟩/(g g) − 2⟨ξ_jA⟩/g − 2⟨ξ_lB⟩/g + 1`.
pub fn correlation_from_moments(m: &MomentSet, s: &MeasurementSettings, j: usize, l: usize) -> Result<f64> {
    if !(1..=2).contains(&j) || !(1..=2).contains(&l) {
        return Err(BellError::domain(format!("setting indices must be 1 or 2, got ({j}, {l})")));
    }
    let (a, b) = (Axis::for_setting(true, j), Axis::for_setting(false, l));
    let (ga, gb) = (s.g(a), s.g(b));
    if ga == 0.0 || gb == 0.0 {
        return Err(BellError::domain(format!(
            "zero coupling on {a:?} or {b:?}: correlation undefined"
        )));
    }
    Ok(4.0 * m.joint(j, l) / (ga * gb) - 2.0 * m.first(a) / ga - 2.0 * m.first(b) / gb + 1.0)
}

pub fn chsh_from_moments(m: &MomentSet, s: &MeasurementSettings) -> Result<f64> {
    let mut total = 0.0;
    for j in 1..=2 {
        for l in 1..=2 {
            total += chsh_sign(j, l) * correlation_from_moments(m, s, j, l)?;
        }
    }
    Ok(total)
}

/// `E(ρ) = ΠρΠ + Π⊥ρΠ⊥ + κ(ΠρΠ⊥ + Π⊥ρΠ)` on one photon.
pub fn dephase(rho: &Mat4, axis: Axis, theta: f64, kappa: f64) -> Result<Mat4> {
    let p = projector(theta)?.0;
    let q = Mat2::identity() - p;
    let id = Mat2::identity();
    let (p4, q4) = if axis.is_alice() {
        (kron(&p, &id), kron(&q, &id))
    } else {
        (kron(&id, &p), kron(&id, &q))
    };
    let pr = p4 * rho;
    let qr = q4 * rho;
    Ok(pr * p4 + qr * q4 + (pr * q4 + qr * p4).scale(kappa))
}

/// The composed four-coupling channel applied to a raw matrix, in the configured order.
pub fn apply_output_channel(rho: &Mat4, s: &MeasurementSettings) -> Result<Mat4> {
    s.validate()?;
    let mut out = *rho;
    for &axis in &s.ordering {
        out = dephase(&out, axis, s.angle(axis), overlap_kappa(s.g(axis), s.sigma)?)?;
    }
    Ok(out)
}

/// Polarization state after the four weak couplings with all pointers traced out.
pub fn output_polarization_state(rho_in: &TwoQubitState, s: &MeasurementSettings) -> Result<TwoQubitState> {
    TwoQubitState::from_matrix_clipped(&apply_output_channel(rho_in.matrix(), s)?)
}

/// The 16 Kraus operators of the composed channel.
///
/// Each dephasing step has Kraus pair `√((1+κ)/2) I`, `√((1−κ)/2) σ_z(θ)`.
pub fn output_kraus(s: &MeasurementSettings) -> Result<Vec<Mat4>> {
    s.validate()?;
    let id = Mat2::identity();
    let mut ops = vec![Mat4::identity()];
    for &axis in &s.ordering {
        let kappa = overlap_kappa(s.g(axis), s.sigma)?;
        let sz = projector(s.angle(axis))?.0.scale(2.0) - id;
        let sz4 = if axis.is_alice() { kron(&sz, &id) } else { kron(&id, &sz) };
        let pair = [
            Mat4::identity().scale(((1.0 + kappa) / 2.0).sqrt()),
            sz4.scale(((1.0 - kappa) / 2.0).sqrt()),
        ];
        ops = ops
            .iter()
            .flat_map(|k| pair.iter().map(move |p| p * k))
            .collect();
    }
    Ok(ops)
}

/// Coincidence-fringe visibility, minimised over Alice's H/V and D/A bases.
///
/// With Alice's analyzer fixed at `θ_A ∈ {0, π/4}` the coincidence rate
/// `Tr[ρ Π(θ_A) ⊗ Π(θ_B)]` is `a + r cos(2θ_B − φ)` in Bob's angle, so the
/// fringe visibility is `r / a`.
pub fn visibility(rho: &TwoQubitState) -> Result<f64> {
    let id = Mat2::identity();
    let z = Mat2::new(c(1.0), c(0.0), c(0.0), c(-1.0));
    let x = Mat2::new(c(0.0), c(1.0), c(1.0), c(0.0));
    let mut worst = f64::INFINITY;
    for theta_a in [0.0, FRAC_PI_4] {
        let pa = projector(theta_a)?.0;
        let a = 0.5 * rho.expectation(&kron(&pa, &id)).re;
        let zz = 0.5 * rho.expectation(&kron(&pa, &z)).re;
        let xx = 0.5 * rho.expectation(&kron(&pa, &x)).re;
        if a <= 1e-15 {
            return Err(BellError::numeric(format!(
                "no coincidences with Alice at {theta_a}: visibility undefined"
            )));
        }
        worst = worst.min(zz.hypot(xx) / a);
    }
    Ok(worst.clamp(0.0, 1.0))
}

/// Exact single-pair distribution over `(X_A, Y_A, X_B, Y_B)`.
///
/// Stored densely as an `n² × n²` row-major matrix: row `X_A·n + Y_A`,
/// column `X_B·n + Y_B`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPmf {
    pub n: usize,
    pub probs: Vec<f64>,
    /// Probability that both photons land on the arrays (1 with clipped edges).
    pub captured: f64,
}

impl PixelPmf {
    pub fn index(&self, xa: usize, ya: usize, xb: usize, yb: usize) -> usize {
        ((xa * self.n + ya) * self.n + xb) * self.n + yb
    }

    pub fn cell(&self, index: usize) -> [usize; 4] {
        let n = self.n;
        [index / (n * n * n), (index / (n * n)) % n, (index / n) % n, index % n]
    }

    pub fn get(&self, xa: usize, ya: usize, xb: usize, yb: usize) -> f64 {
        self.probs[self.index(xa, ya, xb, yb)]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Marginal over Bob's pixels, indexed `X_A·n + Y_A`.
    pub fn alice_marginal(&self) -> Vec<f64> {
        let nn = self.n * self.n;
        self.probs.chunks(nn).map(|row| row.iter().sum()).collect()
    }
}

/// Per-axis pixel-bin overlaps `U[q][bin]`.
fn bin_factors(s: &MeasurementSettings, grid: &PixelGrid, axis: Axis) -> Result<[Vec<f64>; 4]> {
    let bins = pixel_bins(grid, grid.axis_center(axis));
    let g = s.g(axis);
    let mut out: [Vec<f64>; 4] = Default::default();
    for (q, v) in out.iter_mut().enumerate() {
        let (s1, s2) = ((q >> 1) as f64 * g, (q & 1) as f64 * g);
        *v = bins
            .iter()
            .map(|&(lo, hi)| bin_overlap(lo, hi, s1, s2, s.sigma))
            .collect::<Result<_>>()?;
    }
    Ok(out)
}

const NEGATIVE_CELL_TOL: f64 = 1e-12;

fn clip_cells(probs: &mut [f64]) -> Result<()> {
    for p in probs.iter_mut() {
        if *p < -NEGATIVE_CELL_TOL {
            return Err(BellError::numeric(format!("pmf cell {p:e} is negative")));
        }
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    Ok(())
}

/// Joint pixel distribution of one detected pair.
///
/// Without clipped edges the distribution is conditioned on both photons
/// hitting the arrays; `captured` records the unconditioned mass.
pub fn joint_pixel_pmf(rho_in: &TwoQubitState, s: &MeasurementSettings, grid: &PixelGrid) -> Result<PixelPmf> {
    grid.validate()?;
    let n = grid.n;
    let w = branch_expansion(rho_in, s)?.pair_weights();
    let u: Vec<[Vec<f64>; 4]> = Axis::ALL
        .iter()
        .map(|&a| bin_factors(s, grid, a))
        .collect::<Result<_>>()?;

    // contract the y_B and x_B axes first: t2[q_xA + 4 q_yA][xb * n + yb]
    let mut t2 = vec![vec![0.0; n * n]; 16];
    for (qa, row) in t2.iter_mut().enumerate() {
        for q2 in 0..4 {
            for q3 in 0..4 {
                let wq = w[qa + 16 * q2 + 64 * q3];
                if wq == 0.0 {
                    continue;
                }
                for xb in 0..n {
                    let f = wq * u[2][q2][xb];
                    for yb in 0..n {
                        row[xb * n + yb] += f * u[3][q3][yb];
                    }
                }
            }
        }
    }

    let mut probs = vec![0.0; n * n * n * n];
    probs
        .par_chunks_mut(n * n)
        .enumerate()
        .for_each(|(a_cell, out)| {
            let (xa, ya) = (a_cell / n, a_cell % n);
            for (qa, row) in t2.iter().enumerate() {
                let f = u[0][qa & 3][xa] * u[1][qa >> 2][ya];
                if f == 0.0 {
                    continue;
                }
                for (o, r) in out.iter_mut().zip(row) {
                    *o += f * r;
                }
            }
        });
    clip_cells(&mut probs)?;
    let captured: f64 = probs.iter().sum();
    if grid.clip_edges {
        if (captured - 1.0).abs() > 1e-9 {
            return Err(BellError::numeric(format!("pmf sums to {captured}, expected 1")));
        }
    } else {
        if !(captured > 0.0) {
            return Err(BellError::domain("beam misses the detector entirely"));
        }
        probs.iter_mut().for_each(|p| *p /= captured);
    }
    Ok(PixelPmf { n, probs, captured })
}

/// Alice's pixel distribution with Bob's pointers traced out.
///
/// Tracing Bob's pointers is the same as dephasing Bob's photon, after which
/// only Alice's four branches remain.
pub fn alice_pixel_pmf(rho_in: &TwoQubitState, s: &MeasurementSettings, grid: &PixelGrid) -> Result<Vec<f64>> {
    grid.validate()?;
    s.validate()?;
    let mut rho = *rho_in.matrix();
    for &axis in s.ordering.iter().filter(|a| !a.is_alice()) {
        rho = dephase(&rho, axis, s.angle(axis), overlap_kappa(s.g(axis), s.sigma)?)?;
    }
    let [(first, p1), (second, p2)] = s.particle_ops(true)?;
    let id = Mat2::identity();
    let op = |k: usize| -> Mat4 {
        kron(&(projector_branch(&p2, (k >> 1) & 1) * projector_branch(&p1, k & 1)), &id)
    };
    let u_first = bin_factors(s, grid, first)?;
    let u_second = bin_factors(s, grid, second)?;
    let n = grid.n;
    let mut out = vec![0.0; n * n];
    for k in 0..4 {
        for kp in 0..4 {
            let wt = (op(k) * rho * op(kp).adjoint()).trace().re;
            let q1 = 2 * (k & 1) + (kp & 1);
            let q2 = 2 * ((k >> 1) & 1) + ((kp >> 1) & 1);
            for i in 0..n {
                for j in 0..n {
                    // cell index is X_A·n + Y_A
                    let (ix, iy) = if first == Axis::XA { (i, j) } else { (j, i) };
                    out[ix * n + iy] += wt * u_first[q1][i] * u_second[q2][j];
                }
            }
        }
    }
    clip_cells(&mut out)?;
    if !grid.clip_edges {
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= total);
    }
    Ok(out)
}

/// Pointer moments of pixel-centre positions under the exact pmf.
///
/// Equal to summing `pmf · position` over cells, but factorized per axis so it
/// stays cheap for large grids.
pub fn pixel_moments(rho_in: &TwoQubitState, s: &MeasurementSettings, grid: &PixelGrid) -> Result<MomentSet> {
    grid.validate()?;
    let w = branch_expansion(rho_in, s)?.pair_weights();
    let mut mass = [[0.0; 4]; 4];
    let mut pos = [[0.0; 4]; 4];
    for axis in Axis::ALL {
        let u = bin_factors(s, grid, axis)?;
        let x = grid.positions(axis);
        for q in 0..4 {
            mass[axis.index()][q] = u[q].iter().sum();
            pos[axis.index()][q] = u[q].iter().zip(&x).map(|(a, b)| a * b).sum();
        }
    }
    Ok(MomentSet::from_factors(&w, &mass, &pos))
}

/// Largest negative eigenvalue of a Hermitian matrix; used by invariant checks.
pub fn min_eigenvalue(m: &Mat4) -> f64 {
    hermitian_eigenvalues(m).min()
}
