//! Numerical laboratory for time-harmonic TE scattering by perfectly
//! conducting periodic gratings.
//!
//! The scattering problem is posed on the bounded cell between the grating
//! surface and an artificial line `x2 = b`, closed there by the exact
//! Dirichlet-to-Neumann (DtN) operator of the Rayleigh expansion. Random
//! surfaces come from a truncated Karhunen-Loève expansion of a Gaussian
//! covariance. The harness measures the stability quotient
//! `(|grad u| + k|u|) / |g|` and compares it with the wavenumber-explicit
//! envelope `max(b^2 k^2 / sqrt(eps), b^3 k^(5/2))`.
//!
//! Module map:
//! - [`modes`]: incident wave, lattice, quasi-periodic modes, resonance distance.
//! - [`trace`]: boundary traces on `x2 = b`, DtN operator, dual norms, efficiencies.
//! - [`transform`]: grating profiles and the flattening map onto a rectangle.
//! - [`solver`]: Fourier/finite-difference discretization and direct solve.
//! - [`random`]: Karhunen-Loève surfaces, sampling and admissibility screening.
//! - [`harness`]: wavenumber sweeps, exponent fits and Monte Carlo campaigns.

pub mod error;
pub mod harness;
pub mod modes;
pub mod random;
pub mod solver;
pub mod trace;
pub mod transform;

mod fourier;

pub use error::{GratingError, Result};
pub use num_complex::Complex64;
