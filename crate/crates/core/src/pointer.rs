//! Gaussian pointer states and the pixelated detector.
//!
//! Lengths are measured in pixel pitches. A pointer is the real Gaussian
//! amplitude `f(ξ) = (2πσ²)^{-1/4} exp(-ξ²/4σ²)`, so `|f|²` has standard
//! deviation `σ`. Translating it by `s` gives `f(ξ - s)`.

use serde::{Deserialize, Serialize};
use libm::erfc;
use std::f64::consts::SQRT_2;

use crate::error::{BellError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPointer {
    pub sigma: f64,
}

impl GaussianPointer {
    pub fn new(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(GaussianPointer { sigma })
    }

    /// Pointer amplitude `f(ξ - shift)`.
    pub fn amplitude(&self, xi: f64, shift: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        (2.0 * std::f64::consts::PI * s2).powf(-0.25) * (-(xi - shift).powi(2) / (4.0 * s2)).exp()
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(BellError::domain(format!("pointer width must be positive, got {sigma}")))
    }
}

/// `⟨f|T_g|f⟩ = exp(-g²/8σ²)`.
pub fn overlap_kappa(g: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok((-g * g / (8.0 * sigma * sigma)).exp())
}

/// `Φ(b) - Φ(a)` for the standard normal CDF, accurate in both tails.
pub fn normal_mass(a: f64, b: f64) -> f64 {
    // Φ(z) = erfc(-z/√2)/2 and 1 - Φ(z) = erfc(z/√2)/2
    let upper = |z: f64| -> f64 {
        if z == f64::INFINITY {
            0.0
        } else if z == f64::NEG_INFINITY {
            2.0
        } else {
            erfc(z / SQRT_2)
        }
    };
    let lower = |z: f64| -> f64 {
        if z == f64::INFINITY {
            2.0
        } else if z == f64::NEG_INFINITY {
            0.0
        } else {
            erfc(-z / SQRT_2)
        }
    };
    if a >= 0.0 {
        0.5 * (upper(a) - upper(b))
    } else if b <= 0.0 {
        0.5 * (lower(b) - lower(a))
    } else {
        1.0 - 0.5 * (lower(a) + upper(b))
    }
}

/// `∫_lo^hi f(ξ - s1) f(ξ - s2) dξ`.
///
/// The product of two shifted Gaussians is `κ(s1 - s2)` times a normal
/// density of width `σ` centred on the midpoint.
pub fn bin_overlap(bin_lo: f64, bin_hi: f64, s1: f64, s2: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if !(bin_lo < bin_hi) || bin_lo.is_nan() || bin_hi.is_nan() {
        return Err(BellError::domain(format!("degenerate bin ({bin_lo}, {bin_hi})")));
    }
    let m = 0.5 * (s1 + s2);
    let kappa = overlap_kappa(s1 - s2, sigma)?;
    Ok(kappa * normal_mass((bin_lo - m) / sigma, (bin_hi - m) / sigma))
}

/// The four pointer axes, in the order `(x_A, y_A, x_B, y_B)` used throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    XA,
    YA,
    XB,
    YB,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::XA, Axis::YA, Axis::XB, Axis::YB];

    pub fn index(self) -> usize {
        match self {
            Axis::XA => 0,
            Axis::YA => 1,
            Axis::XB => 2,
            Axis::YB => 3,
        }
    }

    pub fn is_alice(self) -> bool {
        matches!(self, Axis::XA | Axis::YA)
    }

    /// Axis carrying the measurement of `α_j` (Alice) or `β_j` (Bob): 1 → x, 2 → y.
    pub fn for_setting(alice: bool, j: usize) -> Axis {
        match (alice, j) {
            (true, 1) => Axis::XA,
            (true, _) => Axis::YA,
            (false, 1) => Axis::XB,
            (false, _) => Axis::YB,
        }
    }
}

/// Square SPAD array on each branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelGrid {
    /// Pixels per side.
    pub n: usize,
    pub pitch: f64,
    /// Unshifted beam centre `(x, y)` on Alice's array, in pixel coordinates.
    pub center_a: [f64; 2],
    pub center_b: [f64; 2],
    /// Extend the outermost bins to ±∞ so no probability falls off the array.
    #[serde(default = "default_clip_edges")]
    pub clip_edges: bool,
}

fn default_clip_edges() -> bool {
    true
}

impl Default for PixelGrid {
    fn default() -> Self {
        PixelGrid {
            n: 24,
            pitch: 1.0,
            center_a: [12.0, 12.0],
            center_b: [12.0, 12.0],
            clip_edges: true,
        }
    }
}

impl PixelGrid {
    /// An `n × n` grid centred on both branches.
    pub fn centered(n: usize) -> Self {
        let c = n as f64 / 2.0;
        PixelGrid {
            n,
            pitch: 1.0,
            center_a: [c, c],
            center_b: [c, c],
            clip_edges: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(BellError::domain(format!("grid needs n >= 2, got {}", self.n)));
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return Err(BellError::domain(format!("pitch must be positive, got {}", self.pitch)));
        }
        for c in self.center_a.iter().chain(self.center_b.iter()) {
            if !(0.0..=self.n as f64).contains(c) {
                return Err(BellError::domain(format!(
                    "beam centre {c} outside [0, {}]",
                    self.n
                )));
            }
        }
        Ok(())
    }

    pub fn axis_center(&self, axis: Axis) -> f64 {
        match axis {
            Axis::XA => self.center_a[0],
            Axis::YA => self.center_a[1],
            Axis::XB => self.center_b[0],
            Axis::YB => self.center_b[1],
        }
    }

    /// Pixel-centre coordinates of every pixel along `axis`.
    pub fn positions(&self, axis: Axis) -> Vec<f64> {
        let c = self.axis_center(axis);
        (0..self.n)
            .map(|i| (i as f64 + 0.5 - c) * self.pitch)
            .collect()
    }
}

/// Pixel-centre coordinate relative to the unshifted beam centre.
pub fn pixel_to_position(grid: &PixelGrid, index: usize, axis_center: f64) -> Result<f64> {
    if index >= grid.n {
        return Err(BellError::domain(format!(
            "pixel index {index} out of range for n = {}",
            grid.n
        )));
    }
    Ok((index as f64 + 0.5 - axis_center) * grid.pitch)
}

/// Bin edges of the `n` pixels along one axis.
pub fn pixel_bins(grid: &PixelGrid, axis_center: f64) -> Vec<(f64, f64)> {
    let mut bins: Vec<(f64, f64)> = (0..grid.n)
        .map(|i| {
            let lo = (i as f64 - axis_center) * grid.pitch;
            (lo, lo + grid.pitch)
        })
        .collect();
    if grid.clip_edges {
        bins[0].0 = f64::NEG_INFINITY;
        let last = bins.len() - 1;
        bins[last].1 = f64::INFINITY;
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Trapezoid rule for `∫ f(ξ - s1) f(ξ - s2) dξ` over `[lo, hi]`.
    fn quad_overlap(lo: f64, hi: f64, s1: f64, s2: f64, sigma: f64) -> f64 {
        let p = GaussianPointer::new(sigma).unwrap();
        let steps = 40_000;
        let h = (hi - lo) / steps as f64;
        let f = |x: f64| p.amplitude(x, s1) * p.amplitude(x, s2);
        let mut acc = 0.5 * (f(lo) + f(hi));
        for k in 1..steps {
            acc += f(lo + k as f64 * h);
        }
        acc * h
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(overlap_kappa(0.0, 2.0).unwrap(), 1.0);
        assert_eq!(overlap_kappa(0.4, 1.1).unwrap(), overlap_kappa(-0.4, 1.1).unwrap());
        let q = quad_overlap(-20.0, 20.0, 1.0, 0.0, 1.0);
        assert_abs_diff_eq!(q, 0.882497, epsilon = 1e-6);
        assert_abs_diff_eq!(overlap_kappa(1.0, 1.0).unwrap(), q, epsilon = 1e-10);
        assert!(overlap_kappa(1.0, 0.0).is_err());
        assert!(overlap_kappa(1.0, -1.0).is_err());
    }

    #[test]
    fn kappa_matches_quadrature_on_grid() {
        for &sigma in &[0.5, 1.0, 2.0, 3.0] {
            for &g in &[0.0f64, 0.1, 0.5, 1.0, 2.5] {
                let span = 12.0 * sigma + g.abs();
                let q = quad_overlap(-span, span, g, 0.0, sigma);
                assert!((q - overlap_kappa(g, sigma).unwrap()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn bin_overlap_examples() {
        let inf = f64::INFINITY;
        assert_abs_diff_eq!(bin_overlap(-inf, inf, 0.0, 0.0, 1.7).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bin_overlap(-1.3, 1.3, 0.0, 0.0, 1.3).unwrap(), 0.682689, epsilon = 1e-6);
        let v = bin_overlap(-inf, inf, 1.0, -1.0, 1.0).unwrap();
        assert_abs_diff_eq!(v, (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(quad_overlap(-20.0, 20.0, 1.0, -1.0, 1.0), 0.606531, epsilon = 1e-6);
        assert!(bin_overlap(1.0, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(bin_overlap(2.0, 1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn bin_overlap_matches_quadrature_on_finite_bins() {
        for &(lo, hi, s1, s2, sigma) in &[
            (-0.5, 0.5, 0.3, 0.0, 3.0),
            (2.0, 3.0, 0.3, 0.3, 3.0),
            (-4.0, -3.0, 1.0, -0.5, 1.5),
            (5.0, 6.0, 0.0, 0.9, 1.0),
        ] {
            let exact = bin_overlap(lo, hi, s1, s2, sigma).unwrap();
            assert!((exact - quad_overlap(lo, hi, s1, s2, sigma)).abs() < 1e-9);
        }
    }

    #[test]
    fn normal_mass_tails() {
        assert_abs_diff_eq!(normal_mass(-1.0, 1.0), 0.6826894921370859, epsilon = 1e-14);
        // far tail: relative accuracy retained
        let t = normal_mass(10.0, f64::INFINITY);
        assert!((t / 7.619853024160527e-24 - 1.0).abs() < 1e-10);
        assert_abs_diff_eq!(normal_mass(-3.0, 0.5), normal_mass(-0.5, 3.0), epsilon = 1e-15);
    }

    #[test]
    fn pixel_positions() {
        let grid = PixelGrid::default();
        assert_eq!(pixel_to_position(&grid, 11, 12.0).unwrap(), -0.5);
        assert_eq!(pixel_to_position(&grid, 12, 12.0).unwrap(), 0.5);
        for i in 0..23 {
            let a = pixel_to_position(&grid, i, 12.0).unwrap();
            let b = pixel_to_position(&grid, i + 1, 12.0).unwrap();
            assert_eq!(b - a, grid.pitch);
        }
        assert!(pixel_to_position(&grid, 24, 12.0).is_err());
        assert_eq!(grid.positions(Axis::YB)[3], pixel_to_position(&grid, 3, 12.0).unwrap());
    }

    #[test]
    fn bins_examples() {
        let mut grid = PixelGrid::centered(2);
        grid.clip_edges = false;
        assert_eq!(pixel_bins(&grid, 1.0), vec![(-1.0, 0.0), (0.0, 1.0)]);
        grid.clip_edges = true;
        assert_eq!(
            pixel_bins(&grid, 1.0),
            vec![(f64::NEG_INFINITY, 0.0), (0.0, f64::INFINITY)]
        );
        let grid = PixelGrid::default();
        let total: f64 = pixel_bins(&grid, 12.0)
            .iter()
            .map(|&(lo, hi)| bin_overlap(lo, hi, 0.0, 0.0, 3.0).unwrap())
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(PixelGrid::default().validate().is_ok());
        assert!(PixelGrid { n: 1, ..PixelGrid::default() }.validate().is_err());
        assert!(PixelGrid { pitch: 0.0, ..PixelGrid::default() }.validate().is_err());
        assert!(PixelGrid { center_b: [12.0, 25.0], ..PixelGrid::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn bins_are_complete(s in -5.0..5.0f64, sigma in 0.5..4.0f64, c in 8.0..16.0f64) {
            let grid = PixelGrid { center_a: [c, c], ..PixelGrid::default() };
            let total: f64 = pixel_bins(&grid, c)
                .iter()
                .map(|&(lo, hi)| bin_overlap(lo, hi, s, s, sigma).unwrap())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }

        #[test]
        fn cross_terms_bounded_by_kappa(s1 in -3.0..3.0f64, s2 in -3.0..3.0f64, sigma in 0.5..4.0f64) {
            let grid = PixelGrid::default();
            let total: f64 = pixel_bins(&grid, 12.0)
                .iter()
                .map(|&(lo, hi)| bin_overlap(lo, hi, s1, s2, sigma).unwrap())
                .sum();
            prop_assert!(total.abs() <= overlap_kappa((s1 - s2).abs(), sigma).unwrap() + 1e-12);
        }
    }
}
