//! Incident plane wave, lattice and the quasi-periodic mode family.
//!
//! For an incident wave `exp(i alpha x1 - i beta x2)` on a grating of period
//! `period`, the scattered field above the structure is a sum over the modes
//! `exp(i alpha_n x1 + i beta_n x2)` with
//!
//! ```text
//! alpha_n = alpha + 2 pi n / period,   beta_n^2 = k^2 - alpha_n^2,   Im beta_n >= 0.
//! ```
//!
//! A wavenumber is resonant (Rayleigh-Wood anomaly) when some `beta_n`
//! vanishes. The resonance distance `eps = min_n | |alpha_n| - k |` measures how
//! far the configuration sits from such a point.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GratingError, Result};

/// Extra evanescent modes kept beyond the propagating cutoff by default.
pub const DEFAULT_EXTRA_MODES: usize = 8;

/// Incident wave and lattice parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneWaveConfig {
    k: f64,
    theta: f64,
    period: f64,
    height: f64,
    alpha: f64,
    beta: f64,
}

impl PlaneWaveConfig {
    /// `k` wavenumber, `theta` incident angle, `period` the lattice period
    /// and `height` the artificial boundary `x2 = b`.
    pub fn new(k: f64, theta: f64, period: f64, height: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(invalid("k", "must be finite and > 0"));
        }
        if !(theta.is_finite() && theta.abs() < FRAC_PI_2) {
            return Err(invalid("theta", "in (-pi/2, pi/2)"));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(invalid("period", "must be finite and > 0"));
        }
        if !(height.is_finite() && height > 0.0) {
            return Err(invalid("height", "must be finite and > 0"));
        }
        Ok(Self {
            k,
            theta,
            period,
            height,
            alpha: k * theta.sin(),
            beta: k * theta.cos(),
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Same incidence and lattice at another wavenumber.
    pub fn with_k(&self, k: f64) -> Result<Self> {
        Self::new(k, self.theta, self.period, self.height)
    }

    /// Same wave at another boundary height.
    pub fn with_height(&self, height: f64) -> Result<Self> {
        Self::new(self.k, self.theta, self.period, height)
    }

    /// Transverse wavenumber of mode `n`.
    pub fn alpha_n(&self, n: i64) -> f64 {
        self.alpha + 2.0 * PI * n as f64 / self.period
    }

    /// Vertical wavenumber of mode `n` on the branch `Re >= 0`, `Im >= 0`.
    pub fn beta_n(&self, n: i64) -> Complex64 {
        vertical_wavenumber(self.k, self.alpha_n(n))
    }

    /// Smallest admissible truncation order: two evanescent modes past the cutoff.
    pub fn min_truncation(&self) -> usize {
        (self.period * self.k / (2.0 * PI)).ceil() as usize + 2
    }

    /// Default truncation order.
    pub fn default_truncation(&self) -> usize {
        (self.period * self.k / (2.0 * PI)).ceil() as usize + DEFAULT_EXTRA_MODES
    }
}

/// `sqrt(k^2 - a^2)` with nonnegative real and imaginary parts.
pub fn vertical_wavenumber(k: f64, a: f64) -> Complex64 {
    let s = (k - a) * (k + a);
    if s >= 0.0 {
        Complex64::new(s.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-s).sqrt())
    }
}

/// The truncated mode family `n = -N..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    config: PlaneWaveConfig,
    order: usize,
    alphas: Vec<f64>,
    betas: Vec<Complex64>,
    epsilon: f64,
}

/// Build the mode family of truncation order `order`.
pub fn make_modes(config: PlaneWaveConfig, order: usize) -> Result<ModeSet> {
    let min = config.min_truncation();
    if order < min {
        return Err(GratingError::TruncationTooSmall { order, min });
    }
    let n = order as i64;
    let alphas: Vec<f64> = (-n..=n).map(|i| config.alpha_n(i)).collect();
    let betas = alphas
        .iter()
        .map(|&a| vertical_wavenumber(config.k, a))
        .collect();
    Ok(ModeSet {
        config,
        order,
        epsilon: resonance_distance(&config, order),
        alphas,
        betas,
    })
}

/// `min_n | |alpha_n| - k |` over `n = -N..=N`; zero marks an exact resonance.
pub fn resonance_distance(config: &PlaneWaveConfig, order: usize) -> f64 {
    let n = order as i64;
    (-n..=n)
        .map(|i| (config.alpha_n(i).abs() - config.k).abs())
        .fold(f64::INFINITY, f64::min)
}

/// The one-sided quantity `min_n |k - alpha_n|`, kept for diagnostics.
pub fn literal_resonance_distance(config: &PlaneWaveConfig, order: usize) -> f64 {
    let n = order as i64;
    (-n..=n)
        .map(|i| (config.k - config.alpha_n(i)).abs())
        .fold(f64::INFINITY, f64::min)
}

/// True iff the resonance distance is at least `eps_min`.
pub fn is_admissible(config: &PlaneWaveConfig, order: usize, eps_min: f64) -> bool {
    resonance_distance(config, order) >= eps_min
}

impl ModeSet {
    pub fn config(&self) -> &PlaneWaveConfig {
        &self.config
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of modes, `2N + 1`.
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Position of mode `n` in the coefficient vectors.
    ///
    /// Panics if `|n| > N`.
    pub fn index(&self, n: i64) -> usize {
        let idx = n + self.order as i64;
        assert!(
            idx >= 0 && (idx as usize) < self.len(),
            "mode {n} outside the truncation"
        );
        idx as usize
    }

    pub fn contains(&self, n: i64) -> bool {
        n.unsigned_abs() as usize <= self.order
    }

    /// Mode numbers in storage order.
    pub fn indices(&self) -> impl Iterator<Item = i64> + '_ {
        let n = self.order as i64;
        -n..=n
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[Complex64] {
        &self.betas
    }

    pub fn alpha(&self, n: i64) -> f64 {
        self.alphas[self.index(n)]
    }

    pub fn beta(&self, n: i64) -> Complex64 {
        self.betas[self.index(n)]
    }

    pub fn is_propagating(&self, n: i64) -> bool {
        self.alpha(n).abs() < self.config.k
    }

    /// `sqrt(|k^2 - alpha_n^2|)` per mode, in storage order.
    pub fn abs_beta(&self) -> impl Iterator<Item = f64> + '_ {
        self.betas.iter().map(|b| b.norm())
    }
}
