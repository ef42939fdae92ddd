//! Two-qubit polarization algebra.
//!
//! Single-qubit analyzers live in the real (x–z) plane of the Bloch sphere:
//! the analyzer at angle `θ` measures along Bloch direction `(sin 2θ, 0, cos 2θ)`,
//! so `θ` and `θ + π` describe the same projector. Two-qubit states are stored
//! as 4×4 density matrices in the basis order `{HH, HV, VH, VV}`, with Alice's
//! photon as the left tensor factor.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{BellError, Result};

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;
pub type Ket4 = Vector4<C64>;

/// Tolerance used for the Hermiticity and trace invariants.
pub const STATE_TOL: f64 = 1e-12;
/// Most negative eigenvalue accepted (and clipped to zero) in a density matrix.
pub const EIGEN_TOL: f64 = 1e-10;

pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn check_finite(theta: f64) -> Result<()> {
    if theta.is_finite() {
        Ok(())
    } else {
        Err(BellError::domain(format!("angle must be finite, got {theta}")))
    }
}

/// Kronecker product of two single-qubit operators, left factor acting on Alice.
pub fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    let mut out = Mat4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

/// A 2×2 operator on one photon's polarization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleQubitOp(pub Mat2);

impl SingleQubitOp {
    pub fn identity() -> Self {
        SingleQubitOp(Mat2::identity())
    }

    pub fn pauli_z() -> Self {
        SingleQubitOp(Mat2::new(c(1.0), c(0.0), c(0.0), c(-1.0)))
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (self.0 - self.0.adjoint()).iter().all(|z| z.norm() <= tol)
    }

    pub fn is_projector(&self, tol: f64) -> bool {
        self.is_hermitian(tol)
            && (self.0 * self.0 - self.0).iter().all(|z| z.norm() <= tol)
    }

    /// `I - self`.
    pub fn complement(&self) -> Self {
        SingleQubitOp(Mat2::identity() - self.0)
    }
}

/// The real symmetric involution `U(θ) = [[cos θ, sin θ], [sin θ, -cos θ]]`.
pub fn rotation_u(theta: f64) -> Result<SingleQubitOp> {
    check_finite(theta)?;
    let (s, co) = theta.sin_cos();
    Ok(SingleQubitOp(Mat2::new(c(co), c(s), c(s), c(-co))))
}

/// `σ_z(θ) = U(θ) σ_z U†(θ)`.
pub fn sigma_z_rotated(theta: f64) -> Result<SingleQubitOp> {
    let u = rotation_u(theta)?.0;
    Ok(SingleQubitOp(u * SingleQubitOp::pauli_z().0 * u.adjoint()))
}

/// Rank-1 projector `Π(θ) = (I + σ_z(θ)) / 2`.
pub fn projector(theta: f64) -> Result<SingleQubitOp> {
    let sz = sigma_z_rotated(theta)?.0;
    Ok(SingleQubitOp((Mat2::identity() + sz).scale(0.5)))
}

/// The four CHSH analyzer angles in radians.
///
/// `alpha1`/`beta1` are read out on the x pointers, `alpha2`/`beta2` on the y pointers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleSet {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AngleSet {
    /// CHSH-optimal settings `α = (0, π/4)`, `β = (π/8, 3π/8)`.
    fn default() -> Self {
        AngleSet {
            alpha1: 0.0,
            alpha2: FRAC_PI_4,
            beta1: FRAC_PI_8,
            beta2: 3.0 * FRAC_PI_8,
        }
    }
}

impl AngleSet {
    pub fn validate(&self) -> Result<()> {
        for a in [self.alpha1, self.alpha2, self.beta1, self.beta2] {
            check_finite(a)?;
        }
        Ok(())
    }

    pub fn alpha(&self, j: usize) -> f64 {
        if j == 1 {
            self.alpha1
        } else {
            self.alpha2
        }
    }

    pub fn beta(&self, l: usize) -> f64 {
        if l == 1 {
            self.beta1
        } else {
            self.beta2
        }
    }
}

/// Sign of `C(α_j, β_l)` in `S = C11 - C12 + C21 + C22`.
pub fn chsh_sign(j: usize, l: usize) -> f64 {
    if j == 1 && l == 2 {
        -1.0
    } else {
        1.0
    }
}

/// A two-qubit density matrix over `{HH, HV, VH, VV}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityMatrixJson", into = "DensityMatrixJson")]
pub struct TwoQubitState(Mat4);

impl TwoQubitState {
    /// Validates trace, Hermiticity and positivity.
    pub fn new(rho: Mat4) -> Result<Self> {
        if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(BellError::domain("density matrix has non-finite entries"));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(BellError::domain(format!("trace must be 1, got {tr}")));
        }
        if (rho - rho.adjoint()).iter().any(|z| z.norm() > STATE_TOL) {
            return Err(BellError::domain("density matrix is not Hermitian"));
        }
        let min = hermitian_eigenvalues(&rho).min();
        if min < -EIGEN_TOL {
            return Err(BellError::domain(format!(
                "density matrix has negative eigenvalue {min:e}"
            )));
        }
        Ok(TwoQubitState(rho))
    }

    /// Hermitizes, clips eigenvalues in `[-EIGEN_TOL, 0)` to zero and renormalizes.
    ///
    /// Anything more negative is reported as a numeric error.
    pub fn from_matrix_clipped(rho: &Mat4) -> Result<Self> {
        let h = (rho + rho.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(h);
        if eig.eigenvalues.min() < -EIGEN_TOL {
            return Err(BellError::numeric(format!(
                "eigenvalue {:e} below clipping tolerance",
                eig.eigenvalues.min()
            )));
        }
        let vals = eig.eigenvalues.map(|l| l.max(0.0));
        let total: f64 = vals.sum();
        if total <= 0.0 {
            return Err(BellError::numeric("density matrix has zero trace"));
        }
        let v = &eig.eigenvectors;
        let d = Mat4::from_diagonal(&vals.map(|l| c(l / total)));
        let out = v * d * v.adjoint();
        Ok(TwoQubitState((out + out.adjoint()).scale(0.5)))
    }

    pub fn from_pure(psi: &Ket4) -> Result<Self> {
        let norm = psi.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(BellError::domain("state vector must have finite nonzero norm"));
        }
        let psi = psi.unscale(norm);
        Ok(TwoQubitState(psi * psi.adjoint()))
    }

    pub fn maximally_mixed() -> Self {
        TwoQubitState(Mat4::identity().scale(0.25))
    }

    /// Computational basis product state `|ab⟩` with `a, b ∈ {0 = H, 1 = V}`.
    pub fn basis(a: usize, b: usize) -> Self {
        let mut psi = Ket4::zeros();
        psi[2 * a + b] = c(1.0);
        TwoQubitState(psi * psi.adjoint())
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    pub fn into_matrix(self) -> Mat4 {
        self.0
    }

    /// `Tr[ρ O]`.
    pub fn expectation(&self, op: &Mat4) -> C64 {
        (self.0 * op).trace()
    }

    pub fn eigenvalues(&self) -> Vector4<f64> {
        hermitian_eigenvalues(&self.0)
    }

    /// Haar-random pure state.
    pub fn random_pure<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let psi = Ket4::from_fn(|_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        Self::from_pure(&psi).expect("gaussian vector is nonzero")
    }

    /// Random full-rank state from the Ginibre ensemble.
    pub fn random_mixed<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let g = Mat4::from_fn(|_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let m = g * g.adjoint();
        let tr = m.trace().re;
        let m = m.unscale(tr);
        TwoQubitState((m + m.adjoint()).scale(0.5))
    }
}

/// Serialized form: row-major real and imaginary parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityMatrixJson {
    pub re: [[f64; 4]; 4],
    pub im: [[f64; 4]; 4],
}

impl From<TwoQubitState> for DensityMatrixJson {
    fn from(s: TwoQubitState) -> Self {
        let mut re = [[0.0; 4]; 4];
        let mut im = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                re[i][j] = s.0[(i, j)].re;
                im[i][j] = s.0[(i, j)].im;
            }
        }
        DensityMatrixJson { re, im }
    }
}

impl TryFrom<DensityMatrixJson> for TwoQubitState {
    type Error = BellError;

    fn try_from(j: DensityMatrixJson) -> Result<Self> {
        TwoQubitState::new(Mat4::from_fn(|r, k| C64::new(j.re[r][k], j.im[r][k])))
    }
}

/// The singlet `|ψ−⟩ = (|HV⟩ − |VH⟩)/√2` as a ket.
pub fn singlet_ket() -> Ket4 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Ket4::new(c(0.0), c(h), c(-h), c(0.0))
}

pub fn singlet() -> TwoQubitState {
    TwoQubitState::from_pure(&singlet_ket()).expect("singlet is normalized")
}

/// `V·ρ_{ψ−} + (1 − V)·I/4`.
pub fn werner(visibility: f64) -> Result<TwoQubitState> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(BellError::domain(format!(
            "visibility must lie in [0, 1], got {visibility}"
        )));
    }
    let rho = singlet().0.scale(visibility) + Mat4::identity().scale((1.0 - visibility) / 4.0);
    Ok(TwoQubitState(rho))
}

/// `Tr[ρ (σ_z(α) ⊗ σ_z(β))]`.
pub fn correlation_strong(rho: &TwoQubitState, alpha: f64, beta: f64) -> Result<f64> {
    let op = kron(&sigma_z_rotated(alpha)?.0, &sigma_z_rotated(beta)?.0);
    Ok(rho.expectation(&op).re)
}

/// Signed CHSH combination `C(α1,β1) − C(α1,β2) + C(α2,β1) + C(α2,β2)`.
pub fn chsh_s(rho: &TwoQubitState, angles: &AngleSet) -> Result<f64> {
    angles.validate()?;
    let mut s = 0.0;
    for j in 1..=2 {
        for l in 1..=2 {
            s += chsh_sign(j, l) * correlation_strong(rho, angles.alpha(j), angles.beta(l))?;
        }
    }
    Ok(s)
}

pub fn purity(rho: &TwoQubitState) -> f64 {
    (rho.0 * rho.0).trace().re
}

pub(crate) fn hermitian_eigenvalues(m: &Mat4) -> Vector4<f64> {
    SymmetricEigen::new((m + m.adjoint()).scale(0.5)).eigenvalues
}

/// Square root of a positive semidefinite Hermitian matrix. Eigenvalues
/// below the round-off floor are treated as exact zeros.
fn psd_sqrt(m: &Mat4) -> Result<Mat4> {
    let eig = SymmetricEigen::new((m + m.adjoint()).scale(0.5));
    if eig.eigenvalues.min() < -EIGEN_TOL {
        return Err(BellError::numeric(format!(
            "matrix square root of non-PSD input (eigenvalue {:e})",
            eig.eigenvalues.min()
        )));
    }
    let floor = SPECTRAL_FLOOR * eig.eigenvalues.max().max(1.0);
    let d = Mat4::from_diagonal(&eig.eigenvalues.map(|l| c(if l <= floor { 0.0 } else { l.sqrt() })));
    let v = &eig.eigenvectors;
    Ok(v * d * v.adjoint())
}

const SPECTRAL_FLOOR: f64 = 1e-14;

/// Spectrum of `√(√ρ1 ρ2 √ρ1)`, obtained as the singular values of `√ρ2 √ρ1`.
fn sqrt_spectrum(rho1: &Mat4, rho2: &Mat4) -> Result<Vector4<f64>> {
    let a = psd_sqrt(rho2)? * psd_sqrt(rho1)?;
    Ok(a.singular_values())
}

/// Uhlmann fidelity `(Tr √(√ρ1 ρ2 √ρ1))²`.
pub fn fidelity(rho1: &TwoQubitState, rho2: &TwoQubitState) -> Result<f64> {
    let f = sqrt_spectrum(&rho1.0, &rho2.0)?.sum().powi(2);
    Ok(f.clamp(0.0, 1.0))
}

/// Partial transpose on Bob's qubit.
pub fn partial_transpose(rho: &TwoQubitState) -> Mat4 {
    let m = &rho.0;
    Mat4::from_fn(|r, k| {
        let (a, b) = (r / 2, r % 2);
        let (a2, b2) = (k / 2, k % 2);
        m[(2 * a + b2, 2 * a2 + b)]
    })
}

/// Twice the magnitude of the negative spectrum of `ρ^{T_B}`; the singlet scores 1.
pub fn negativity(rho: &TwoQubitState) -> f64 {
    let vals = hermitian_eigenvalues(&partial_transpose(rho));
    let n: f64 = vals.iter().filter(|&&l| l < 0.0).fold(0.0, |acc, l| acc - l);
    (2.0 * n).clamp(0.0, 1.0)
}

/// Wootters concurrence `max(0, λ1 − λ2 − λ3 − λ4)`.
pub fn concurrence(rho: &TwoQubitState) -> Result<f64> {
    let sy = Mat2::new(c(0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), c(0.0));
    let yy = kron(&sy, &sy);
    let flipped = yy * rho.0.conjugate() * yy;
    let mut l: Vec<f64> = sqrt_spectrum(&rho.0, &flipped)?.iter().copied().collect();
    l.sort_by(|a, b| b.total_cmp(a));
    Ok((l[0] - l[1] - l[2] - l[3]).clamp(0.0, 1.0))
}
