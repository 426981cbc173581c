//! Quasi-periodic traces on the artificial boundary `x2 = b`.
//!
//! A trace is stored through its coefficients on the exponentials
//! `exp(i alpha_n x1)`, `n = -N..=N`. In this basis the DtN operator is the
//! diagonal multiplier `i beta_n`, the `L^2` norm follows from Parseval
//! (`|v|^2 = period * sum |v_n|^2`), and the dual weighted norms read
//!
//! ```text
//! |v|_A^2 = sum |v_n|^2 / w_n,   |v|_B^2 = sum |v_n|^2 w_n,   w_n = sqrt|k^2 - alpha_n^2| + 1/b.
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, GratingError, Result};
use crate::modes::ModeSet;

/// Evanescent amplitudes are withheld once `Im beta_n * b` exceeds this.
pub const EVANESCENT_AMPLIFICATION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    modes: Arc<ModeSet>,
    coeffs: Vec<Complex64>,
}

impl BoundaryTrace {
    pub fn zeros(modes: &Arc<ModeSet>) -> Self {
        Self {
            modes: Arc::clone(modes),
            coeffs: vec![Complex64::new(0.0, 0.0); modes.len()],
        }
    }

    pub fn from_coeffs(modes: &Arc<ModeSet>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != modes.len() {
            return Err(invalid(
                "coeffs",
                format!("expected {} coefficients, got {}", modes.len(), coeffs.len()),
            ));
        }
        Ok(Self {
            modes: Arc::clone(modes),
            coeffs,
        })
    }

    /// Unit coefficient on mode `n`.
    pub fn delta(modes: &Arc<ModeSet>, n: i64) -> Self {
        let mut t = Self::zeros(modes);
        let i = modes.index(n);
        t.coeffs[i] = Complex64::new(1.0, 0.0);
        t
    }

    pub fn modes(&self) -> &Arc<ModeSet> {
        &self.modes
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, n: i64) -> Complex64 {
        self.coeffs[self.modes.index(n)]
    }

    /// `(n, v_n)` pairs in ascending `n`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        self.modes.indices().zip(self.coeffs.iter().copied())
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.modes, &other.modes) || *self.modes == *other.modes {
            Ok(())
        } else {
            Err(GratingError::ModeSetMismatch)
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(Self {
            modes: Arc::clone(&self.modes),
            coeffs,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(Self {
            modes: Arc::clone(&self.modes),
            coeffs,
        })
    }

    /// `L^2(Gamma)` norm by Parseval.
    pub fn l2_norm(&self) -> f64 {
        (self.modes.config().period() * self.sum_sq()).sqrt()
    }

    fn sum_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `int_Gamma u conj(v) dx1`.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        self.check_same(other)?;
        let s: Complex64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b.conj())
            .sum();
        Ok(s * self.modes.config().period())
    }

    /// Point value `v(x1) = sum v_n exp(i alpha_n x1)`.
    pub fn eval(&self, x1: f64) -> Complex64 {
        self.modes
            .alphas()
            .iter()
            .zip(&self.coeffs)
            .map(|(a, c)| c * Complex64::from_polar(1.0, a * x1))
            .sum()
    }

    /// Debug dump: header `n,re,im`, one row per mode, ascending `n`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,re,im")?;
        for (n, c) in self.iter() {
            writeln!(out, "{},{},{}", n, c.re, c.im)?;
        }
        Ok(())
    }

    /// Inverse of [`BoundaryTrace::write_csv`].
    pub fn read_csv<R: BufRead>(modes: &Arc<ModeSet>, input: R) -> Result<Self> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "n,re,im" => {}
            _ => return Err(invalid("csv", "missing header `n,re,im`")),
        }
        let mut t = Self::zeros(modes);
        let mut seen = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| invalid("csv", e.to_string()));
            if parts.len() != 3 {
                return Err(invalid("csv", format!("bad row `{line}`")));
            }
            let n: i64 = parts[0].trim().parse().map_err(|_| invalid("csv", format!("bad mode `{}`", parts[0])))?;
            if !modes.contains(n) {
                return Err(invalid("csv", format!("mode {n} outside the truncation")));
            }
            t.coeffs[modes.index(n)] = Complex64::new(parse(parts[1])?, parse(parts[2])?);
            seen += 1;
        }
        if seen != modes.len() {
            return Err(invalid("csv", format!("expected {} rows, got {seen}", modes.len())));
        }
        Ok(t)
    }
}

/// `(Tv)_n = i beta_n v_n`.
pub fn apply_dtn(v: &BoundaryTrace) -> BoundaryTrace {
    let i = Complex64::new(0.0, 1.0);
    let coeffs = v
        .coeffs
        .iter()
        .zip(v.modes.betas())
        .map(|(c, b)| i * b * c)
        .collect();
    BoundaryTrace {
        modes: Arc::clone(&v.modes),
        coeffs,
    }
}

/// Trace of the incident wave `exp(i alpha x1 - i beta x2)` on `x2 = b`.
pub fn incident_trace(modes: &Arc<ModeSet>) -> BoundaryTrace {
    let c = modes.config();
    let mut t = BoundaryTrace::zeros(modes);
    t.coeffs[modes.index(0)] = Complex64::from_polar(1.0, -c.beta() * c.height());
    t
}

/// Source `g = d_nu u_inc - T u_inc = -2 i beta exp(i alpha x1 - i beta b)`.
pub fn boundary_source(modes: &Arc<ModeSet>) -> BoundaryTrace {
    let c = modes.config();
    let mut t = BoundaryTrace::zeros(modes);
    t.coeffs[modes.index(0)] =
        Complex64::new(0.0, -2.0 * c.beta()) * Complex64::from_polar(1.0, -c.beta() * c.height());
    t
}

fn dual_weights(modes: &ModeSet) -> impl Iterator<Item = f64> + '_ {
    let inv_b = 1.0 / modes.config().height();
    modes.abs_beta().map(move |a| a + inv_b)
}

/// `H^{-1/2}`-like weighted norm.
pub fn norm_a(v: &BoundaryTrace) -> f64 {
    v.coeffs
        .iter()
        .zip(dual_weights(&v.modes))
        .map(|(c, w)| c.norm_sqr() / w)
        .sum::<f64>()
        .sqrt()
}

/// `H^{1/2}`-like weighted norm, dual to [`norm_a`].
pub fn norm_b(v: &BoundaryTrace) -> f64 {
    v.coeffs
        .iter()
        .zip(dual_weights(&v.modes))
        .map(|(c, w)| c.norm_sqr() * w)
        .sum::<f64>()
        .sqrt()
}

/// Split into the propagating (`|alpha_n| < k`) and evanescent parts.
pub fn split_lh(v: &BoundaryTrace) -> Result<(BoundaryTrace, BoundaryTrace)> {
    let k = v.modes.config().k();
    let zero = Complex64::new(0.0, 0.0);
    let mut low = BoundaryTrace::zeros(&v.modes);
    let mut high = BoundaryTrace::zeros(&v.modes);
    for (i, (n, c)) in v.iter().enumerate() {
        let a = v.modes.alphas()[i].abs();
        if a == k {
            return Err(GratingError::ResonantMode { n });
        }
        if a < k {
            low.coeffs[i] = c;
            high.coeffs[i] = zero;
        } else {
            high.coeffs[i] = c;
        }
    }
    Ok((low, high))
}

/// `period * sum sqrt|k^2 - alpha_n^2| |v_n|^2 - sqrt(eps k) |v|^2`, which
/// is nonnegative for every trace once `eps` is the resonance distance.
pub fn check_lemma_sqrtk(v: &BoundaryTrace, eps: f64) -> f64 {
    let c = v.modes.config();
    let weighted: f64 = v
        .coeffs
        .iter()
        .zip(v.modes.abs_beta())
        .map(|(x, a)| a * x.norm_sqr())
        .sum();
    c.period() * weighted - (eps * c.k()).sqrt() * c.period() * v.sum_sq()
}

/// Rayleigh amplitudes `A_n` of the scattered field.
#[derive(Debug, Clone, PartialEq)]
pub struct RayleighAmplitudes {
    modes: Arc<ModeSet>,
    amps: Vec<Option<Complex64>>,
}

impl RayleighAmplitudes {
    pub fn modes(&self) -> &Arc<ModeSet> {
        &self.modes
    }

    /// `None` for evanescent modes whose extraction would amplify by more than
    /// `exp(EVANESCENT_AMPLIFICATION_LIMIT)`.
    pub fn amplitude(&self, n: i64) -> Option<Complex64> {
        self.amps[self.modes.index(n)]
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, Option<Complex64>)> + '_ {
        self.modes.indices().zip(self.amps.iter().copied())
    }
}

/// `A_n = u^s_n exp(-i beta_n b)` from the scattered-field trace.
pub fn rayleigh_amplitudes(scattered: &BoundaryTrace) -> RayleighAmplitudes {
    let b = scattered.modes.config().height();
    let amps = scattered
        .coeffs
        .iter()
        .zip(scattered.modes.betas())
        .map(|(c, beta)| {
            if beta.im * b > EVANESCENT_AMPLIFICATION_LIMIT {
                None
            } else {
                Some(c * (Complex64::new(0.0, -1.0) * beta * b).exp())
            }
        })
        .collect();
    RayleighAmplitudes {
        modes: Arc::clone(&scattered.modes),
        amps,
    }
}

/// Diffraction efficiencies `e_n = (beta_n / beta) |A_n|^2` of the
/// propagating orders.
pub fn efficiencies(amps: &RayleighAmplitudes) -> BTreeMap<i64, f64> {
    let c = amps.modes.config();
    amps.iter()
        .filter(|(n, _)| amps.modes.is_propagating(*n))
        .map(|(n, a)| {
            let a = a.unwrap_or_default();
            (n, amps.modes.beta(n).re / c.beta() * a.norm_sqr())
        })
        .collect()
}
