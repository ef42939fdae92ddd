//! Simulation of a Bell (CHSH) test in which every detected photon pair
//! yields its own estimate of the Bell parameter.
//!
//! Each photon of a polarization-entangled pair passes two weak
//! polarization measurements in sequence. Every measurement displaces a
//! Gaussian transverse pointer (x for the first analyzer, y for the second)
//! when its projector fires, and a pixelated detector records where each
//! photon lands. From the four pixel coordinates of a single pair one can
//! form an unbiased estimate of all four CHSH correlations at once.
//!
//! Modules, bottom up:
//!
//! - [`polarization`]: analyzers, canonical states, CHSH value, fidelity,
//!   purity, negativity and concurrence.
//! - [`pointer`]: Gaussian pointer overlaps and the pixel grid.
//! - [`weak`]: exact branch expansion of the four couplings, pointer
//!   moments, the traced-out polarization channel and the joint pixel pmf.
//! - [`coincidence`]: Monte Carlo detection records and the per-pair estimator.
//! - [`tomography`]: simulated projective tomography and MLE reconstruction.
//! - [`experiment`]: configuration and the commands behind the `bellsim` CLI.

pub mod coincidence;
pub mod error;
pub mod experiment;
pub mod pointer;
pub mod polarization;
pub mod tomography;
pub mod weak;

pub use error::{BellError, Result};
