//! Karhunen-Loève surfaces for the Gaussian covariance
//! `c(tau) = sigma^2 exp(-tau^2 / ell^2)`, periodized over one period.
//!
//! The eigenfunctions of the periodized covariance are the real Fourier
//! family `sqrt(1/L)`, `sqrt(2/L) sin(2 pi j x / L)`, `sqrt(2/L) cos(2 pi j x / L)`,
//! with eigenvalues `lambda_j = int c_per(tau) cos(2 pi j tau / L) dtau`
//! computed by the trapezoidal rule (spectrally accurate for periodic
//! integrands).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, GratingError, Result};
use crate::transform::{gamma0_default, FlatteningMap, GratingProfile, ProfileShape};

/// Truncation stops at the first `j` with `lambda_j / lambda_0` below this.
pub const DEFAULT_EIGENVALUE_RATIO: f64 = 1e-8;

/// Quadrature values above this negative threshold are treated as roundoff.
const NEGATIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KlModel {
    mean: GratingProfile,
    sigma: f64,
    ell: f64,
    lambdas: Vec<f64>,
}

/// Covariance `sigma^2 exp(-tau^2/ell^2)` summed over the images `tau + m L`.
pub fn periodized_covariance(sigma: f64, ell: f64, period: f64, tau: f64) -> f64 {
    let s2 = sigma * sigma;
    let term = |t: f64| s2 * (-(t / ell).powi(2)).exp();
    let mut total = term(tau);
    for m in 1.. {
        let pair = term(tau + m as f64 * period) + term(tau - m as f64 * period);
        total += pair;
        if pair <= 1e-16 * s2 {
            break;
        }
    }
    total
}

fn check_params(sigma: f64, ell: f64, period: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma", "must be finite and >= 0"));
    }
    if !(ell > 0.0 && ell.is_finite()) {
        return Err(invalid("ell", "must be finite and > 0"));
    }
    if !(period > 0.0 && period.is_finite()) {
        return Err(invalid("period", "must be finite and > 0"));
    }
    Ok(())
}

/// Node count resolving both the correlation length and the highest mode.
fn default_nodes(ell: f64, period: f64, order: usize) -> usize {
    let n = 4 * (order + 1) + (8.0 * period / ell).ceil() as usize;
    n.max(64)
}

/// Eigenvalues `lambda_0..=lambda_order` with the default quadrature.
pub fn kl_eigenvalues(sigma: f64, ell: f64, period: f64, order: usize) -> Result<Vec<f64>> {
    kl_eigenvalues_with_nodes(sigma, ell, period, order, default_nodes(ell, period, order))
}

/// Eigenvalues by the `nodes`-point trapezoidal rule on `[-L/2, L/2)`.
pub fn kl_eigenvalues_with_nodes(
    sigma: f64,
    ell: f64,
    period: f64,
    order: usize,
    nodes: usize,
) -> Result<Vec<f64>> {
    check_params(sigma, ell, period)?;
    if nodes < 2 {
        return Err(invalid("nodes", "need at least 2 quadrature nodes"));
    }
    let dt = period / nodes as f64;
    let samples: Vec<(f64, f64)> = (0..nodes)
        .map(|q| {
            let t = -0.5 * period + q as f64 * dt;
            (t, periodized_covariance(sigma, ell, period, t))
        })
        .collect();
    (0..=order)
        .map(|j| {
            let w = 2.0 * PI * j as f64 / period;
            let v: f64 = samples.iter().map(|(t, c)| c * (w * t).cos()).sum::<f64>() * dt;
            if v < -NEGATIVE_TOLERANCE {
                Err(GratingError::NonPositiveEigenvalue { index: j, value: v })
            } else {
                Ok(v.max(0.0))
            }
        })
        .collect()
}

/// Closed form of the eigenvalues for the periodized Gaussian covariance,
/// `sigma^2 ell sqrt(pi) exp(-(pi j ell / L)^2)` (Poisson summation).
pub fn kl_eigenvalue_exact(sigma: f64, ell: f64, period: f64, j: usize) -> f64 {
    sigma * sigma * ell * PI.sqrt() * (-(PI * j as f64 * ell / period).powi(2)).exp()
}

/// Smallest `J` with `lambda_J / lambda_0 < ratio`.
pub fn default_kl_order(ell: f64, period: f64, ratio: f64) -> Result<usize> {
    check_params(1.0, ell, period)?;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid("ratio", "must lie in (0, 1)"));
    }
    // Guess from the closed form, then confirm with the quadrature.
    let guess = ((-ratio.ln()).sqrt() * period / (PI * ell)).ceil() as usize + 4;
    let lambdas = kl_eigenvalues(1.0, ell, period, guess)?;
    lambdas
        .iter()
        .position(|&l| l < ratio * lambdas[0])
        .ok_or_else(|| invalid("ell", "eigenvalue decay too slow for the truncation rule"))
}

impl KlModel {
    /// Model truncated at the default order.
    pub fn new(mean: GratingProfile, sigma: f64, ell: f64) -> Result<Self> {
        let order = default_kl_order(ell, mean.period(), DEFAULT_EIGENVALUE_RATIO)?;
        Self::with_order(mean, sigma, ell, order)
    }

    pub fn with_order(mean: GratingProfile, sigma: f64, ell: f64, order: usize) -> Result<Self> {
        if matches!(mean.shape(), ProfileShape::Samples(_)) {
            return Err(invalid("mean", "the mean surface must be a trigonometric series"));
        }
        let lambdas = kl_eigenvalues(sigma, ell, mean.period(), order)?;
        Ok(Self {
            mean,
            sigma,
            ell,
            lambdas,
        })
    }

    pub fn mean(&self) -> &GratingProfile {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn period(&self) -> f64 {
        self.mean.period()
    }

    /// Truncation order `J`.
    pub fn order(&self) -> usize {
        self.lambdas.len() - 1
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Number of standard normals per sample, `2J + 1`.
    pub fn dimension(&self) -> usize {
        2 * self.order() + 1
    }

    /// Fluctuation coefficients `(a_0, [(a_j, b_j)])` on `1, cos, sin` for
    /// `xi = [xi_0, xi_1s, xi_1c, xi_2s, xi_2c, ...]`.
    pub fn fluctuation(&self, xi: &[f64]) -> Result<(f64, Vec<(f64, f64)>)> {
        if xi.len() != self.dimension() {
            return Err(invalid(
                "xi",
                format!("expected {} normals, got {}", self.dimension(), xi.len()),
            ));
        }
        let l = self.period();
        let a0 = (self.lambdas[0] / l).sqrt() * xi[0];
        let scale = (2.0 / l).sqrt();
        let pairs = (1..=self.order())
            .map(|j| {
                let s = self.lambdas[j].sqrt() * scale;
                (s * xi[2 * j], s * xi[2 * j - 1])
            })
            .collect();
        Ok((a0, pairs))
    }

    /// Pointwise variance of the truncated field (independent of `x`).
    pub fn pointwise_variance(&self) -> f64 {
        let l = self.period();
        self.lambdas[0] / l + self.lambdas[1..].iter().map(|v| 2.0 * v / l).sum::<f64>()
    }

    /// Covariance of the truncated field at lag `tau`.
    pub fn truncated_covariance(&self, tau: f64) -> f64 {
        let l = self.period();
        self.lambdas[0] / l
            + self.lambdas[1..]
                .iter()
                .enumerate()
                .map(|(i, v)| 2.0 * v / l * (2.0 * PI * (i + 1) as f64 * tau / l).cos())
                .sum::<f64>()
    }

    /// Draw `2J + 1` iid standard normals.
    pub fn draw_xi<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dimension()).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// Surface `mean + sum sqrt(lambda_j) xi_j phi_j`.
pub fn sample_surface(model: &KlModel, xi: &[f64]) -> Result<GratingProfile> {
    let (a0, pairs) = model.fluctuation(xi)?;
    let (mean, cos, sin) = match model.mean.shape() {
        ProfileShape::Trig { mean, cos, sin } => (*mean, cos.clone(), sin.clone()),
        ProfileShape::Samples(_) => unreachable!("rejected at construction"),
    };
    let len = cos.len().max(pairs.len());
    let mut c = vec![0.0; len];
    let mut s = vec![0.0; len];
    c[..cos.len()].copy_from_slice(&cos);
    s[..sin.len()].copy_from_slice(&sin);
    for (j, (a, b)) in pairs.into_iter().enumerate() {
        c[j] += a;
        s[j] += b;
    }
    GratingProfile::trig(model.period(), mean + a0, c, s)
}

/// Spatial average of `g(x) g(x + tau)` over one period for the fluctuation
/// `g` of the sample drawn from `xi`.
pub fn spatial_autocovariance(model: &KlModel, xi: &[f64], tau: f64) -> Result<f64> {
    let (a0, pairs) = model.fluctuation(xi)?;
    let l = model.period();
    Ok(a0 * a0
        + pairs
            .iter()
            .enumerate()
            .map(|(i, (a, b))| 0.5 * (a * a + b * b) * (2.0 * PI * (i + 1) as f64 * tau / l).cos())
            .sum::<f64>())
}

/// Cutoff-height rule used when screening samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Gamma0Rule {
    /// `gamma0 = min(b/2, 1)` with `6 sup|f| <= gamma0`.
    Default,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Screening {
    Accept,
    Reject(String),
}

impl Screening {
    pub fn is_accept(&self) -> bool {
        matches!(self, Screening::Accept)
    }
}

/// Accept when `sup|f| < b/4` and the flattening map with the chosen cutoff is injective.
pub fn screen_sample(profile: &GratingProfile, height: f64, rule: Gamma0Rule) -> Screening {
    let sup = profile.sup_abs();
    if !(sup < 0.25 * height) {
        return Screening::Reject(format!("height: sup|f| = {sup:.4} >= b/4 = {:.4}", 0.25 * height));
    }
    let gamma0 = match rule {
        Gamma0Rule::Default => match gamma0_default(profile, height) {
            Ok(g) => g,
            Err(e) => return Screening::Reject(format!("cutoff: {e}")),
        },
        Gamma0Rule::Fixed(g) => g,
    };
    match FlatteningMap::with_gamma0(profile, height, gamma0) {
        Ok(_) => Screening::Accept,
        Err(e) => Screening::Reject(format!("injectivity: {e}")),
    }
}

/// Seed of draw `attempt` for sample `index`, mixed from the master seed so
/// that every work item owns an independent stream.
pub fn sub_seed(master: u64, index: u64, attempt: u64) -> u64 {
    let mut z = master;
    for word in [index, attempt] {
        z = splitmix(z ^ splitmix(word.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for a given sub-seed.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sample `index` drawn with sub-seed `(master, index, attempt)`.
pub fn draw_sample(model: &KlModel, master: u64, index: u64, attempt: u64) -> Result<(u64, GratingProfile)> {
    let seed = sub_seed(master, index, attempt);
    let xi = model.draw_xi(&mut rng_for(seed));
    Ok((seed, sample_surface(model, &xi)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO_PI: f64 = 2.0 * PI;

    #[test]
    fn leading_eigenvalue_matches_gaussian_integral() {
        let l = kl_eigenvalues(1.0, 0.3, TWO_PI, 4).unwrap();
        assert!((l[0] - 0.3 * PI.sqrt()).abs() < 1e-12);
        assert!((l[0] - 0.5317).abs() < 1e-4);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        for ell in [0.05, 0.3, 1.0] {
            let l = kl_eigenvalues(0.7, ell, TWO_PI, 40).unwrap();
            for (j, v) in l.iter().enumerate() {
                let exact = kl_eigenvalue_exact(0.7, ell, TWO_PI, j);
                assert!((v - exact).abs() < 1e-13, "ell {ell} j {j}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn node_doubling_is_converged() {
        let n = default_nodes(0.3, TWO_PI, 30);
        let a = kl_eigenvalues_with_nodes(1.0, 0.3, TWO_PI, 30, n).unwrap();
        let b = kl_eigenvalues_with_nodes(1.0, 0.3, TWO_PI, 30, 2 * n).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn under_resolved_quadrature_is_detected() {
        // three nodes alias mode 2 onto mode 1 with the wrong sign
        let r = kl_eigenvalues_with_nodes(1.0, 1.0, TWO_PI, 2, 3);
        assert!(matches!(r, Err(GratingError::NonPositiveEigenvalue { index: 2, .. })));
    }

    #[test]
    fn zero_variance_model() {
        let m = KlModel::new(GratingProfile::flat(TWO_PI), 0.0, 0.5).unwrap();
        assert!(m.lambdas().iter().all(|&l| l == 0.0));
        let (_, f) = draw_sample(&m, 1, 0, 0).unwrap();
        assert!(f.is_flat());
    }

    #[test]
    fn default_order_rule() {
        let j = default_kl_order(0.5, TWO_PI, 1e-8).unwrap();
        let l = kl_eigenvalues(1.0, 0.5, TWO_PI, j).unwrap();
        assert!(l[j] / l[0] < 1e-8);
        assert!(l[j - 1] / l[0] >= 1e-8);
    }

    #[test]
    fn eigenvalues_monotone_and_trace_bounded() {
        let m = KlModel::new(GratingProfile::flat(TWO_PI), 0.05, 0.5).unwrap();
        let l = m.lambdas();
        assert!(l.windows(2).all(|w| w[1] <= w[0]));
        assert!(l.iter().all(|&v| v >= 0.0));
        let trace = l[0] + 2.0 * l[1..].iter().sum::<f64>();
        assert!(trace <= 0.05f64.powi(2) * TWO_PI * (1.0 + 1e-12));
    }

    #[test]
    fn single_mode_offset() {
        let m = KlModel::with_order(GratingProfile::sinusoid(TWO_PI, 0.1), 0.05, 0.5, 6).unwrap();
        let mut xi = vec![0.0; m.dimension()];
        xi[0] = 1.0;
        let f = sample_surface(&m, &xi).unwrap();
        let shift = (m.lambdas()[0] / TWO_PI).sqrt();
        for x in [0.0, 0.7, 2.0, 5.5] {
            assert!((f.eval(x) - 0.1 * x.sin() - shift).abs() < 1e-15);
        }
    }

    #[test]
    fn sample_mean_and_variance_at_origin() {
        let m = KlModel::new(GratingProfile::flat(TWO_PI), 0.05, 0.5).unwrap();
        let n = 4000;
        let values: Vec<f64> = (0..n)
            .map(|i| draw_sample(&m, 11, i, 0).unwrap().1.eval(0.0))
            .collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = m.pointwise_variance();
        assert!(mean.abs() <= 3.0 * (target / n as f64).sqrt());
        // sd of the sample variance is about var * sqrt(2/n)
        assert!((var - target).abs() <= 4.0 * target * (2.0 / n as f64).sqrt());
        assert!((target - 0.0025).abs() < 1e-10);
    }

    #[test]
    fn screening_examples() {
        assert!(screen_sample(&GratingProfile::flat(TWO_PI), 1.0, Gamma0Rule::Default).is_accept());
        let tall = GratingProfile::sinusoid(TWO_PI, 0.5);
        match screen_sample(&tall, 1.0, Gamma0Rule::Default) {
            Screening::Reject(r) => assert!(r.starts_with("height")),
            Screening::Accept => panic!("accepted sup|f| = b/2"),
        }
        let mid = GratingProfile::sinusoid(TWO_PI, 0.2);
        assert!(!screen_sample(&mid, 1.0, Gamma0Rule::Default).is_accept());
        assert!(!screen_sample(&mid, 1.0, Gamma0Rule::Fixed(0.5)).is_accept());
        assert!(screen_sample(&mid, 1.0, Gamma0Rule::Fixed(0.9)).is_accept());
    }

    #[test]
    fn sub_seeds_differ_by_index_and_attempt() {
        let s: std::collections::HashSet<u64> = (0..50)
            .flat_map(|i| (0..3).map(move |a| sub_seed(7, i, a)))
            .collect();
        assert_eq!(s.len(), 150);
        assert_ne!(sub_seed(7, 0, 0), sub_seed(8, 0, 0));
    }

    proptest! {
        #[test]
        fn samples_are_reproducible(seed in any::<u64>(), index in 0u64..1000) {
            let m = KlModel::with_order(GratingProfile::flat(TWO_PI), 0.05, 0.5, 12).unwrap();
            let (s1, a) = draw_sample(&m, seed, index, 0).unwrap();
            let (s2, b) = draw_sample(&m, seed, index, 0).unwrap();
            prop_assert_eq!(s1, s2);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn samples_obey_the_lipschitz_bound(seed in any::<u64>()) {
            let m = KlModel::with_order(GratingProfile::flat(TWO_PI), 0.05, 0.5, 12).unwrap();
            let xi = m.draw_xi(&mut rng_for(seed));
            let f = sample_surface(&m, &xi).unwrap();
            let scale = (2.0 / TWO_PI).sqrt();
            let bound: f64 = (1..=12)
                .map(|j| j as f64 * m.lambdas()[j].sqrt() * (xi[2 * j - 1].abs() + xi[2 * j].abs()) * scale)
                .sum();
            for q in 0..200 {
                let x = q as f64 * TWO_PI / 200.0;
                prop_assert!(f.derivative(x).abs() <= bound * (1.0 + 1e-12));
            }
        }
    }
}
