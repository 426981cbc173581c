//! Grating profiles and the flattening map.
//!
//! The map `F(y1, y2) = (y1, y2 + alpha(y2) f(y1))` pulls the grating cell
//! `{f(x1) < x2 < b}` back to the rectangle `[0, period] x [0, b]`. The cutoff
//! `alpha` equals one below `gamma0 / 2`, zero above `gamma0`, and blends with a
//! cubic Hermite polynomial in between, so `F` is the identity near the
//! artificial boundary.
//!
//! With `d = det J_F = 1 + alpha'(y2) f(y1)` and `B = J_Q J_Q^T` for the inverse
//! map `Q`, the transformed Helmholtz operator reads
//! `div_y(d B grad_y u) + k^2 d u`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GratingError, Result};

/// Shape of a periodic surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProfileShape {
    /// `f(x) = mean + sum_j cos[j-1] cos(2 pi j x / period) + sin[j-1] sin(2 pi j x / period)`.
    Trig {
        mean: f64,
        cos: Vec<f64>,
        sin: Vec<f64>,
    },
    /// Uniform samples `f(j period / len)` joined by straight lines.
    Samples(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GratingProfile {
    shape: ProfileShape,
    period: f64,
}

impl GratingProfile {
    pub fn flat(period: f64) -> Self {
        Self {
            shape: ProfileShape::Trig {
                mean: 0.0,
                cos: Vec::new(),
                sin: Vec::new(),
            },
            period,
        }
    }

    pub fn trig(period: f64, mean: f64, cos: Vec<f64>, sin: Vec<f64>) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(invalid("period", "must be finite and > 0"));
        }
        if !mean.is_finite() || cos.iter().chain(&sin).any(|v| !v.is_finite()) {
            return Err(invalid("profile", "coefficients must be finite"));
        }
        let mut cos = cos;
        let mut sin = sin;
        let len = cos.len().max(sin.len());
        cos.resize(len, 0.0);
        sin.resize(len, 0.0);
        Ok(Self {
            shape: ProfileShape::Trig { mean, cos, sin },
            period,
        })
    }

    /// `amplitude * sin(2 pi x / period)`.
    pub fn sinusoid(period: f64, amplitude: f64) -> Self {
        Self::trig(period, 0.0, vec![0.0], vec![amplitude]).expect("finite coefficients")
    }

    pub fn samples(period: f64, values: Vec<f64>) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(invalid("period", "must be finite and > 0"));
        }
        if values.len() < 2 {
            return Err(invalid("samples", "need at least two samples"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("samples", "values must be finite"));
        }
        Ok(Self {
            shape: ProfileShape::Samples(values),
            period,
        })
    }

    pub fn shape(&self) -> &ProfileShape {
        &self.shape
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// True for the profile `f == 0`.
    pub fn is_flat(&self) -> bool {
        match &self.shape {
            ProfileShape::Trig { mean, cos, sin } => {
                *mean == 0.0 && cos.iter().chain(sin).all(|&v| v == 0.0)
            }
            ProfileShape::Samples(v) => v.iter().all(|&x| x == 0.0),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.shape {
            ProfileShape::Trig { mean, cos, sin } => {
                let w = 2.0 * PI / self.period;
                let mut s = *mean;
                for (j, (a, b)) in cos.iter().zip(sin).enumerate() {
                    let t = w * (j + 1) as f64 * x;
                    s += a * t.cos() + b * t.sin();
                }
                s
            }
            ProfileShape::Samples(v) => {
                let (i, frac) = self.locate(x, v.len());
                let j = (i + 1) % v.len();
                v[i] + frac * (v[j] - v[i])
            }
        }
    }

    /// `f'(x)`; for sampled profiles the slope of the segment starting at or
    /// left of `x`.
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.shape {
            ProfileShape::Trig { cos, sin, .. } => {
                let w = 2.0 * PI / self.period;
                let mut s = 0.0;
                for (j, (a, b)) in cos.iter().zip(sin).enumerate() {
                    let wj = w * (j + 1) as f64;
                    let t = wj * x;
                    s += wj * (b * t.cos() - a * t.sin());
                }
                s
            }
            ProfileShape::Samples(v) => {
                let (i, _) = self.locate(x, v.len());
                let j = (i + 1) % v.len();
                (v[j] - v[i]) * v.len() as f64 / self.period
            }
        }
    }

    fn locate(&self, x: f64, len: usize) -> (usize, f64) {
        let s = (x / self.period).rem_euclid(1.0) * len as f64;
        let i = (s.floor() as usize).min(len - 1);
        (i, s - i as f64)
    }

    /// Upper bound on `sup |f'|`.
    pub fn lipschitz_bound(&self) -> f64 {
        match &self.shape {
            ProfileShape::Trig { cos, sin, .. } => {
                let w = 2.0 * PI / self.period;
                cos.iter()
                    .zip(sin)
                    .enumerate()
                    .map(|(j, (a, b))| w * (j + 1) as f64 * (a.abs() + b.abs()))
                    .sum()
            }
            ProfileShape::Samples(v) => {
                let scale = v.len() as f64 / self.period;
                (0..v.len())
                    .map(|i| (v[(i + 1) % v.len()] - v[i]).abs() * scale)
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Upper bound on `sup |f|`: exact for sampled profiles, dense sampling
    /// plus a Lipschitz correction for series.
    pub fn sup_abs(&self) -> f64 {
        self.sup_by(f64::abs)
    }

    /// Upper bound on `sup max(f, 0)`.
    pub fn sup_positive(&self) -> f64 {
        self.sup_by(|v| v.max(0.0))
    }

    fn sup_by(&self, g: impl Fn(f64) -> f64) -> f64 {
        match &self.shape {
            ProfileShape::Samples(v) => v.iter().map(|&x| g(x)).fold(0.0, f64::max),
            ProfileShape::Trig { mean, cos, sin } => {
                if cos.is_empty() {
                    return g(*mean);
                }
                let q = (64 * cos.len()).max(1024);
                let h = self.period / q as f64;
                let max = (0..q).map(|i| g(self.eval(i as f64 * h))).fold(0.0, f64::max);
                let bound = max + 0.5 * h * self.lipschitz_bound();
                // a single harmonic attains its extremes in closed form
                if cos.len() == 1 {
                    let amp = cos[0].hypot(sin[0]);
                    return g(mean + amp).max(g(mean - amp)).min(bound);
                }
                bound
            }
        }
    }

    /// Values on the uniform grid `x_j = j period / m`.
    pub fn values_on_grid(&self, m: usize) -> Vec<f64> {
        (0..m).map(|j| self.eval(j as f64 * self.period / m as f64)).collect()
    }

    /// Trig-series export `j,a_j,b_j` (row `j = 0` carries the mean).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let ProfileShape::Trig { mean, cos, sin } = &self.shape else {
            return Err(invalid("profile", "only trig-series profiles export to `j,a_j,b_j`"));
        };
        writeln!(out, "j,a_j,b_j")?;
        writeln!(out, "0,{},0", mean)?;
        for (j, (a, b)) in cos.iter().zip(sin).enumerate() {
            writeln!(out, "{},{},{}", j + 1, a, b)?;
        }
        Ok(())
    }
}

/// Smoothstep `3 r^2 - 2 r^3`, clamped to `[0, 1]`.
fn smoothstep(r: f64) -> f64 {
    let r = r.clamp(0.0, 1.0);
    r * r * (3.0 - 2.0 * r)
}

/// Cutoff `alpha(t)`: 1 for `t <= gamma0/2`, 0 for `t >= gamma0`.
pub fn cutoff_alpha(t: f64, gamma0: f64) -> f64 {
    let half = 0.5 * gamma0;
    if t <= half {
        1.0
    } else if t >= gamma0 {
        0.0
    } else {
        1.0 - smoothstep((t - half) / half)
    }
}

/// `alpha'(t)`; bounded by `3 / gamma0`.
pub fn cutoff_alpha_derivative(t: f64, gamma0: f64) -> f64 {
    let half = 0.5 * gamma0;
    if t <= half || t >= gamma0 {
        0.0
    } else {
        let r = (t - half) / half;
        -6.0 * r * (1.0 - r) / half
    }
}

/// `max |alpha'| = 3 / gamma0`.
pub fn cutoff_max_slope(gamma0: f64) -> f64 {
    3.0 / gamma0
}

/// Default cutoff height: `min(b/2, 1)` provided `sup|f| * 3 / gamma0 <= 1/2`.
pub fn gamma0_default(profile: &GratingProfile, height: f64) -> Result<f64> {
    let cap = (0.5 * height).min(1.0);
    let sup = profile.sup_abs();
    let needed = 6.0 * sup;
    if needed > cap || height <= 4.0 * profile.sup_positive() {
        return Err(GratingError::ProfileTooSteep {
            sup_abs: sup,
            needed,
            cap,
        });
    }
    Ok(cap)
}

/// Entries of the transformed operator at one reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCoefficients {
    pub det: f64,
    pub b11: f64,
    pub b12: f64,
    pub b22: f64,
}

impl MapCoefficients {
    pub const IDENTITY: Self = Self {
        det: 1.0,
        b11: 1.0,
        b12: 0.0,
        b22: 1.0,
    };

    /// `det * B`, the conductivity of the transformed operator.
    pub fn weighted(&self) -> [f64; 3] {
        [self.det * self.b11, self.det * self.b12, self.det * self.b22]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatteningMap {
    profile: GratingProfile,
    gamma0: f64,
    height: f64,
    margin: f64,
}

/// Flattening map with the default cutoff height.
pub fn make_map(profile: &GratingProfile, height: f64) -> Result<FlatteningMap> {
    let gamma0 = gamma0_default(profile, height)?;
    FlatteningMap::with_gamma0(profile, height, gamma0)
}

impl FlatteningMap {
    pub fn with_gamma0(profile: &GratingProfile, height: f64, gamma0: f64) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma0 < height) {
            return Err(invalid("gamma0", "need 0 < gamma0 < b"));
        }
        let margin = 1.0 - profile.sup_abs() * cutoff_max_slope(gamma0);
        if margin <= 0.0 {
            return Err(GratingError::InjectivityViolated { margin });
        }
        Ok(Self {
            profile: profile.clone(),
            gamma0,
            height,
            margin,
        })
    }

    pub fn profile(&self) -> &GratingProfile {
        &self.profile
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    /// Lower bound on `det J_F` over the rectangle.
    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// `x = F(y)`.
    pub fn apply(&self, y1: f64, y2: f64) -> (f64, f64) {
        let a = cutoff_alpha(y2, self.gamma0);
        if a == 0.0 {
            return (y1, y2);
        }
        (y1, y2 + a * self.profile.eval(y1))
    }

    /// `y = F^{-1}(x)` by safeguarded Newton iteration on the monotone map
    /// `y2 -> y2 + alpha(y2) f(x1)`.
    pub fn invert(&self, x1: f64, x2: f64) -> (f64, f64) {
        let f = self.profile.eval(x1);
        if f == 0.0 || x2 >= self.gamma0 {
            return (x1, x2);
        }
        let phi = |t: f64| t + cutoff_alpha(t, self.gamma0) * f - x2;
        let (mut lo, mut hi) = (x2 - f.abs() - 1e-12, x2 + f.abs() + 1e-12);
        let mut t = x2 - f;
        for _ in 0..100 {
            let r = phi(t);
            if r.abs() <= 1e-15 * (1.0 + x2.abs()) {
                break;
            }
            if r > 0.0 {
                hi = hi.min(t);
            } else {
                lo = lo.max(t);
            }
            let slope = 1.0 + cutoff_alpha_derivative(t, self.gamma0) * f;
            let next = t - r / slope;
            t = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        (x1, t)
    }

    /// `det J_F` and `B = J_Q J_Q^T` at the reference point `y`.
    pub fn jacobian_coeffs(&self, y1: f64, y2: f64) -> MapCoefficients {
        let a = cutoff_alpha(y2, self.gamma0);
        let da = cutoff_alpha_derivative(y2, self.gamma0);
        if a == 0.0 && da == 0.0 {
            return MapCoefficients::IDENTITY;
        }
        let f = self.profile.eval(y1);
        let fp = self.profile.derivative(y1);
        if f == 0.0 && fp == 0.0 {
            return MapCoefficients::IDENTITY;
        }
        let det = 1.0 + da * f;
        let s = a * fp;
        MapCoefficients {
            det,
            b11: 1.0,
            b12: -s / det,
            b22: (1.0 + s * s) / (det * det),
        }
    }
}

/// Map between two grating cells, `D_{f0} -> D_{f1}`:
/// `F(y) = (y1, y2 + alpha(y2 - f0(y1)) (f1 - f0)(y1))`.
#[derive(Debug, Clone)]
pub struct RelativeMap {
    reference: GratingProfile,
    target: GratingProfile,
    gamma0: f64,
}

impl RelativeMap {
    pub fn new(reference: &GratingProfile, target: &GratingProfile, gamma0: f64) -> Result<Self> {
        let diff_sup = (0..4096)
            .map(|i| {
                let x = i as f64 * reference.period() / 4096.0;
                (target.eval(x) - reference.eval(x)).abs()
            })
            .fold(0.0, f64::max);
        let margin = 1.0 - diff_sup * cutoff_max_slope(gamma0);
        if margin <= 0.0 {
            return Err(GratingError::InjectivityViolated { margin });
        }
        Ok(Self {
            reference: reference.clone(),
            target: target.clone(),
            gamma0,
        })
    }

    pub fn apply(&self, y1: f64, y2: f64) -> (f64, f64) {
        let f0 = self.reference.eval(y1);
        let a = cutoff_alpha(y2 - f0, self.gamma0);
        (y1, y2 + a * (self.target.eval(y1) - f0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_PI: f64 = 2.0 * PI;

    #[test]
    fn cutoff_examples() {
        let g = 0.8;
        assert_eq!(cutoff_alpha(0.0, g), 1.0);
        assert_eq!(cutoff_alpha(g, g), 0.0);
        assert_eq!(cutoff_alpha(g / 2.0, g), 1.0);
        assert!((cutoff_alpha(0.75 * g, g) - 0.5).abs() < 1e-15);
        assert!((cutoff_alpha_derivative(0.75 * g, g).abs() - 3.0 / g).abs() < 1e-12);
        // sampled maximum of |alpha'| matches 3 / gamma0
        let max = (0..=100_000)
            .map(|i| cutoff_alpha_derivative(i as f64 * g / 100_000.0, g).abs())
            .fold(0.0, f64::max);
        assert!((max - cutoff_max_slope(g)).abs() < 1e-8);
    }

    #[test]
    fn cutoff_is_c1_and_monotone() {
        let g = 1.0;
        let h = 1e-6;
        let mut prev = cutoff_alpha(0.0, g);
        for i in 1..2000 {
            let t = i as f64 * 1.2 / 2000.0;
            let v = cutoff_alpha(t, g);
            assert!(v <= prev + 1e-15);
            prev = v;
            let fd = (cutoff_alpha(t + h, g) - cutoff_alpha(t - h, g)) / (2.0 * h);
            assert!((fd - cutoff_alpha_derivative(t, g)).abs() < 1e-5);
        }
    }

    #[test]
    fn map_examples() {
        let flat = GratingProfile::flat(TWO_PI);
        let map = make_map(&flat, 1.0).unwrap();
        assert_eq!(map.apply(1.0, 0.3), (1.0, 0.3));
        assert_eq!(map.jacobian_coeffs(1.0, 0.1), MapCoefficients::IDENTITY);

        let p = GratingProfile::sinusoid(TWO_PI, 0.1);
        let map = FlatteningMap::with_gamma0(&p, 2.0, 0.8).unwrap();
        let (x1, x2) = map.apply(PI / 2.0, 0.0);
        assert_eq!(x1, PI / 2.0);
        assert!((x2 - 0.1).abs() < 1e-15);
        assert_eq!(map.apply(0.3, 0.8).1, 0.8);
    }

    #[test]
    fn gamma0_examples() {
        assert_eq!(gamma0_default(&GratingProfile::flat(TWO_PI), 1.0).unwrap(), 0.5);
        assert_eq!(gamma0_default(&GratingProfile::sinusoid(TWO_PI, 0.05), 2.0).unwrap(), 1.0);
        let tall = GratingProfile::sinusoid(TWO_PI, 0.4);
        assert!(matches!(
            gamma0_default(&tall, 1.0),
            Err(GratingError::ProfileTooSteep { .. })
        ));
    }

    #[test]
    fn injectivity_violation() {
        let p = GratingProfile::sinusoid(TWO_PI, 0.4);
        assert!(matches!(
            FlatteningMap::with_gamma0(&p, 1.0, 0.5),
            Err(GratingError::InjectivityViolated { .. })
        ));
    }

    #[test]
    fn identity_above_cutoff_is_bitwise() {
        let p = GratingProfile::trig(TWO_PI, 0.01, vec![0.02, 0.01], vec![0.03]).unwrap();
        let map = make_map(&p, 1.0).unwrap();
        for i in 0..50 {
            let y1 = i as f64 * 0.13;
            for y2 in [map.gamma0(), 0.7, 1.0] {
                let c = map.jacobian_coeffs(y1, y2);
                assert_eq!(c.det.to_bits(), 1.0f64.to_bits());
                assert_eq!(c.b11.to_bits(), 1.0f64.to_bits());
                assert_eq!(c.b12.to_bits(), 0.0f64.to_bits());
                assert_eq!(c.b22.to_bits(), 1.0f64.to_bits());
            }
        }
    }

    #[test]
    fn coefficients_match_finite_difference_jacobian() {
        let p = GratingProfile::trig(TWO_PI, 0.0, vec![0.02], vec![0.05, 0.01]).unwrap();
        let map = make_map(&p, 1.0).unwrap();
        let h = 1e-6;
        for &(y1, y2) in &[(0.3, 0.1), (2.0, 0.3), (4.1, 0.4), (5.5, 0.0)] {
            let (a1, a2) = map.apply(y1 + h, y2);
            let (b1, b2) = map.apply(y1 - h, y2);
            let (c1, c2) = map.apply(y1, y2 + h);
            let (d1, d2) = map.apply(y1, (y2 - h).max(0.0));
            let dy2 = y2 + h - (y2 - h).max(0.0);
            let j = [
                [(a1 - b1) / (2.0 * h), (c1 - d1) / dy2],
                [(a2 - b2) / (2.0 * h), (c2 - d2) / dy2],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
            let bij = |i: usize, k: usize| inv[i][0] * inv[k][0] + inv[i][1] * inv[k][1];
            let c = map.jacobian_coeffs(y1, y2);
            assert!((c.det - det).abs() < 1e-6);
            assert!((c.b11 - bij(0, 0)).abs() < 1e-6);
            assert!((c.b12 - bij(0, 1)).abs() < 1e-6);
            assert!((c.b22 - bij(1, 1)).abs() < 1e-6);
            assert!(c.det > 0.0 && c.b11 * c.b22 - c.b12 * c.b12 > 0.0);
        }
    }

    #[test]
    fn round_trip_inverse() {
        let p = GratingProfile::trig(TWO_PI, 0.0, vec![0.03], vec![0.05]).unwrap();
        let map = make_map(&p, 1.0).unwrap();
        for i in 0..40 {
            for j in 0..=40 {
                let y = (i as f64 * TWO_PI / 40.0, j as f64 / 40.0);
                let x = map.apply(y.0, y.1);
                let back = map.invert(x.0, x.1);
                assert!((back.0 - y.0).abs() < 1e-10 && (back.1 - y.1).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn det_scales_linearly_with_amplitude() {
        let sup = |eta: f64| {
            let map = FlatteningMap::with_gamma0(&GratingProfile::sinusoid(TWO_PI, eta), 1.0, 0.5).unwrap();
            let mut s: f64 = 0.0;
            for i in 0..200 {
                for j in 0..=400 {
                    let c = map.jacobian_coeffs(i as f64 * TWO_PI / 200.0, j as f64 / 400.0);
                    s = s.max((c.det - 1.0).abs());
                }
            }
            s
        };
        let (a, b, c) = (sup(0.02), sup(0.01), sup(0.005));
        assert!((a / b - 2.0).abs() < 0.2);
        assert!((b / c - 2.0).abs() < 0.2);
        // sup|det - 1| = eta * 3 / gamma0 up to grid sampling
        assert!((b / 0.01 - 6.0).abs() < 0.05);
    }

    #[test]
    fn relative_map_composes() {
        let f1 = GratingProfile::sinusoid(TWO_PI, 0.05);
        let f0 = GratingProfile::trig(TWO_PI, 0.0, vec![0.02], vec![]).unwrap();
        let to_ref = make_map(&f0, 1.0).unwrap();
        let rel = RelativeMap::new(&f0, &f1, 0.4).unwrap();
        for i in 0..30 {
            let y1 = i as f64 * 0.2;
            let (a1, a2) = to_ref.apply(y1, 0.0);
            let (b1, b2) = rel.apply(a1, a2);
            assert_eq!(b1, y1);
            assert!((b2 - f1.eval(y1)).abs() < 1e-14);
            let (_, top) = rel.apply(y1, 0.9);
            assert_eq!(top, 0.9);
        }
    }

    #[test]
    fn profile_bounds() {
        let p = GratingProfile::sinusoid(TWO_PI, 0.15);
        assert!((p.sup_abs() - 0.15).abs() < 1e-15);
        assert!((p.lipschitz_bound() - 0.15).abs() < 1e-15);
        let s = GratingProfile::samples(2.0, vec![0.0, 0.2, -0.1, 0.0]).unwrap();
        assert_eq!(s.sup_abs(), 0.2);
        assert!((s.lipschitz_bound() - 0.6).abs() < 1e-15);
        assert!((s.eval(0.25) - 0.1).abs() < 1e-15);
        assert!((s.eval(2.25) - 0.1).abs() < 1e-15);
        let multi = GratingProfile::trig(TWO_PI, 0.0, vec![0.1, 0.05], vec![0.0, 0.02]).unwrap();
        let dense = (0..100_000)
            .map(|i| multi.eval(i as f64 * TWO_PI / 100_000.0).abs())
            .fold(0.0, f64::max);
        assert!(multi.sup_abs() >= dense);
        assert!(multi.sup_abs() <= dense + 1e-3);
    }
}
