//! Wavenumber sweeps, exponent fits and Monte Carlo campaigns measuring the
//! stability quotient `(|grad u| + k |u|) / |g|` against the envelope
//! `max(b^2 k^2 / sqrt(eps), b^3 k^(5/2))`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, GratingError, Result};
use crate::modes::{make_modes, resonance_distance, PlaneWaveConfig};
use crate::random::{draw_sample, screen_sample, Gamma0Rule, KlModel, Screening};
use crate::solver::{assemble, energy_norms, solve, SolutionField, SolverGrid};
use crate::trace::boundary_source;
use crate::transform::GratingProfile;

/// Maximum fraction of rejected draws before a campaign is abandoned.
pub const MAX_REJECTION_RATE: f64 = 0.2;

/// How `(N, M, P)` scale with the wavenumber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridRule {
    /// Modes beyond the propagating cutoff, `N = ceil(L k / 2 pi) + extra`.
    pub extra_modes: usize,
    /// `M` is the next power of two `>= oversampling (2N + 1)`.
    pub oversampling: usize,
    /// `P = ceil(points_per_wavelength k b / 2 pi)`.
    pub points_per_wavelength: f64,
    pub min_p: usize,
    /// Fixed `N`, `M` or `P` in place of the scaling rule.
    pub order: Option<usize>,
    pub m: Option<usize>,
    pub p: Option<usize>,
}

impl Default for GridRule {
    fn default() -> Self {
        Self {
            extra_modes: crate::modes::DEFAULT_EXTRA_MODES,
            oversampling: 4,
            points_per_wavelength: 40.0,
            min_p: 16,
            order: None,
            m: None,
            p: None,
        }
    }
}

impl GridRule {
    /// Truncation order and grid for `config`.
    pub fn resolve(&self, config: &PlaneWaveConfig) -> Result<(usize, SolverGrid)> {
        let order = self
            .order
            .unwrap_or(config.min_truncation() - 2 + self.extra_modes.max(2));
        let m = self
            .m
            .unwrap_or((self.oversampling * (2 * order + 1)).next_power_of_two());
        let p = self.p.unwrap_or_else(|| {
            let p = (self.points_per_wavelength * config.k() * config.height() / (2.0 * std::f64::consts::PI)).ceil();
            (p as usize).max(self.min_p)
        });
        Ok((order, SolverGrid::new(m, p)?))
    }

    /// The same rule with `P` multiplied by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        Self {
            points_per_wavelength: self.points_per_wavelength * factor,
            min_p: (self.min_p as f64 * factor).ceil() as usize,
            p: self.p.map(|p| (p as f64 * factor).ceil() as usize),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Resonant,
    Reduced,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Resonant => "resonant",
            Branch::Reduced => "reduced",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Envelope {
    pub value: f64,
    /// `b^2 k^2 / sqrt(eps)`.
    pub resonant: f64,
    /// `b^3 k^(5/2)`.
    pub reduced: f64,
    pub branch: Branch,
    /// `eps >= 1 / (b^2 k)`, where the reduced term dominates.
    pub crossover: bool,
}

pub fn envelope(k: f64, b: f64, eps: f64) -> Result<Envelope> {
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be > 0"));
    }
    let resonant = b * b * k * k / eps.sqrt();
    let reduced = b.powi(3) * k.powf(2.5);
    let branch = if resonant > reduced {
        Branch::Resonant
    } else {
        Branch::Reduced
    };
    Ok(Envelope {
        value: resonant.max(reduced),
        resonant,
        reduced,
        branch,
        crossover: eps >= 1.0 / (b * b * k),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRecord {
    pub k: f64,
    pub theta: f64,
    pub b: f64,
    pub eps: f64,
    pub g_norm: f64,
    pub grad_norm: f64,
    pub l2_norm: f64,
    pub quotient: f64,
    pub envelope: f64,
    pub branch: Branch,
    pub crossover: bool,
    pub m: usize,
    pub p: usize,
    pub n: usize,
}

impl StabilityRecord {
    pub fn ratio(&self) -> f64 {
        self.quotient / self.envelope
    }
}

/// Solve one configuration with the grids of `rule` and keep the field.
pub fn solve_config(
    config: &PlaneWaveConfig,
    profile: &GratingProfile,
    rule: &GridRule,
) -> Result<(StabilityRecord, SolutionField)> {
    let (order, grid) = rule.resolve(config)?;
    let modes = Arc::new(make_modes(*config, order)?);
    let eps = modes.epsilon();
    let system = assemble(config, profile, grid, &modes)?;
    let field = solve(&system)?;
    let norms = energy_norms(&field);
    let g_norm = boundary_source(&modes).l2_norm();
    let env = envelope(config.k(), config.height(), eps)?;
    let record = StabilityRecord {
        k: config.k(),
        theta: config.theta(),
        b: config.height(),
        eps,
        g_norm,
        grad_norm: norms.grad,
        l2_norm: norms.l2,
        quotient: (norms.grad + config.k() * norms.l2) / g_norm,
        envelope: env.value,
        branch: env.branch,
        crossover: env.crossover,
        m: grid.m,
        p: grid.p,
        n: order,
    };
    Ok((record, field))
}

/// Stability record for one configuration.
pub fn measure(config: &PlaneWaveConfig, profile: &GratingProfile, rule: &GridRule) -> Result<StabilityRecord> {
    solve_config(config, profile, rule).map(|(r, _)| r)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepOutcome {
    pub records: Vec<StabilityRecord>,
    /// Wavenumbers below the resonance margin, with their distance.
    pub skipped: Vec<(f64, f64)>,
    pub failures: Vec<(f64, GratingError)>,
}

enum SweepItem {
    Record(StabilityRecord),
    Skipped(f64, f64),
    Failed(f64, GratingError),
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| invalid("threads", e.to_string()))
}

/// Solve at every admissible wavenumber in `k_grid`; resonant ones are
/// skipped and per-point failures collected.
pub fn sweep(
    template: &PlaneWaveConfig,
    profile: &GratingProfile,
    k_grid: &[f64],
    eps_min: f64,
    rule: &GridRule,
    threads: Option<usize>,
) -> Result<SweepOutcome> {
    if !(eps_min > 0.0) {
        return Err(invalid("eps_min", "must be > 0"));
    }
    if k_grid.windows(2).any(|w| !(w[0] < w[1])) || k_grid.iter().any(|k| !k.is_finite()) {
        return Err(invalid("k_grid", "must be finite and strictly ascending"));
    }
    let items: Vec<SweepItem> = pool(threads)?.install(|| {
        k_grid
            .par_iter()
            .map(|&k| {
                let config = match template.with_k(k) {
                    Ok(c) => c,
                    Err(e) => return SweepItem::Failed(k, e),
                };
                let order = match rule.resolve(&config) {
                    Ok((n, _)) => n,
                    Err(e) => return SweepItem::Failed(k, e),
                };
                let eps = resonance_distance(&config, order);
                if eps < eps_min {
                    log::info!("skipping k = {k}: eps = {eps:.3e} < {eps_min}");
                    return SweepItem::Skipped(k, eps);
                }
                match measure(&config, profile, rule) {
                    Ok(r) => SweepItem::Record(r),
                    Err(e) => SweepItem::Failed(k, e),
                }
            })
            .collect()
    });
    let mut out = SweepOutcome::default();
    for item in items {
        match item {
            SweepItem::Record(r) => out.records.push(r),
            SweepItem::Skipped(k, e) => out.skipped.push((k, e)),
            SweepItem::Failed(k, e) => {
                log::warn!("k = {k} failed: {e}");
                out.failures.push((k, e))
            }
        }
    }
    Ok(out)
}

/// `count` equispaced wavenumbers on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub count: usize,
}

/// Least-squares slope of `log quotient` against `log k` over the records in
/// the reduced regime `eps >= 1/(b^2 k)`.
pub fn fit_exponent(records: &[StabilityRecord]) -> Result<ExponentFit> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.crossover)
        .map(|r| (r.k.ln(), r.quotient.ln()))
        .collect();
    let n = pts.len();
    if n < 5 {
        return Err(GratingError::InsufficientData(format!(
            "{n} reduced-regime records, need at least 5"
        )));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(GratingError::InsufficientData("all wavenumbers coincide".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (sse / (nf - 2.0) / sxx).sqrt();
    Ok(ExponentFit {
        slope,
        stderr,
        intercept,
        count: n,
    })
}

/// Largest `quotient / envelope` over the records.
pub fn fitted_constant(records: &[StabilityRecord]) -> Option<f64> {
    records.iter().map(StabilityRecord::ratio).reduce(f64::max)
}

/// One draw of a Monte Carlo campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McDraw {
    pub sample: u64,
    pub attempt: u64,
    pub seed: u64,
    pub accepted: bool,
    pub reason: Option<String>,
    pub grad_norm: f64,
    pub l2_norm: f64,
    pub quotient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub n_samples: usize,
    pub n_rejected: usize,
    /// Sample mean of `|grad u|^2`.
    pub mean_sq_grad: f64,
    /// Sample mean of `k^2 |u|^2`.
    pub mean_sq_l2: f64,
    pub g_norm: f64,
    /// `(sqrt(E|grad u|^2) + sqrt(E k^2 |u|^2)) / |g|`.
    pub stochastic_quotient: f64,
    /// 95% half-width of the stochastic quotient (delta method).
    pub ci95: f64,
    pub eps: f64,
    pub envelope: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOutcome {
    pub summary: McSummary,
    /// Every draw in `(sample, attempt)` order, rejected ones included.
    pub draws: Vec<McDraw>,
}

pub struct McSettings {
    pub n_samples: usize,
    pub master_seed: u64,
    pub rule: GridRule,
    pub gamma0: Gamma0Rule,
    pub eps_min: f64,
    pub threads: Option<usize>,
}

/// Sample, screen and solve `n_samples` surfaces; rejected draws are redrawn
/// with the next attempt's sub-seed.
pub fn monte_carlo(model: &KlModel, config: &PlaneWaveConfig, settings: &McSettings) -> Result<McOutcome> {
    let n = settings.n_samples;
    if n < 2 {
        return Err(invalid("n_samples", "need at least 2 samples"));
    }
    if (model.period() - config.period()).abs() > 1e-12 * config.period() {
        return Err(invalid("period", "surface and wave periods differ"));
    }
    let (order, _) = settings.rule.resolve(config)?;
    let eps = resonance_distance(config, order);
    if eps < settings.eps_min {
        return Err(invalid(
            "k",
            format!("resonance distance {eps:.3e} is below eps_min = {}", settings.eps_min),
        ));
    }
    // A single sample needing this many redraws already breaks the cap.
    let max_attempts = (MAX_REJECTION_RATE * n as f64).floor() as u64 + 1;
    let seed = settings.master_seed;
    let per_sample: Vec<Result<Vec<McDraw>>> = pool(settings.threads)?.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let mut draws = Vec::new();
                for attempt in 0..max_attempts {
                    let (sub, profile) = draw_sample(model, seed, i, attempt)?;
                    if let Screening::Reject(reason) = screen_sample(&profile, config.height(), settings.gamma0) {
                        draws.push(McDraw {
                            sample: i,
                            attempt,
                            seed: sub,
                            accepted: false,
                            reason: Some(reason),
                            grad_norm: f64::NAN,
                            l2_norm: f64::NAN,
                            quotient: f64::NAN,
                        });
                        continue;
                    }
                    let r = measure(config, &profile, &settings.rule)?;
                    draws.push(McDraw {
                        sample: i,
                        attempt,
                        seed: sub,
                        accepted: true,
                        reason: None,
                        grad_norm: r.grad_norm,
                        l2_norm: r.l2_norm,
                        quotient: r.quotient,
                    });
                    break;
                }
                Ok(draws)
            })
            .collect()
    });
    let mut draws = Vec::new();
    for d in per_sample {
        draws.extend(d?);
    }
    let n_rejected = draws.iter().filter(|d| !d.accepted).count();
    if n_rejected as f64 > MAX_REJECTION_RATE * n as f64 {
        return Err(GratingError::RejectionRateExceeded {
            rejected: n_rejected,
            samples: n,
        });
    }
    let accepted: Vec<&McDraw> = draws.iter().filter(|d| d.accepted).collect();
    let k = config.k();
    let nf = n as f64;
    let mean_sq_grad = accepted.iter().map(|d| d.grad_norm * d.grad_norm).sum::<f64>() / nf;
    let mean_sq_l2 = accepted.iter().map(|d| (k * d.l2_norm).powi(2)).sum::<f64>() / nf;
    let modes = Arc::new(make_modes(*config, order)?);
    let g_norm = boundary_source(&modes).l2_norm();
    let (rg, rl) = (mean_sq_grad.sqrt(), mean_sq_l2.sqrt());
    let stochastic_quotient = (rg + rl) / g_norm;
    let influence: Vec<f64> = accepted
        .iter()
        .map(|d| {
            let a = if rg > 0.0 { d.grad_norm.powi(2) / (2.0 * rg) } else { 0.0 };
            let b = if rl > 0.0 { (k * d.l2_norm).powi(2) / (2.0 * rl) } else { 0.0 };
            (a + b) / g_norm
        })
        .collect();
    let mean_inf = influence.iter().sum::<f64>() / nf;
    let var = influence.iter().map(|z| (z - mean_inf).powi(2)).sum::<f64>() / (nf - 1.0);
    let env = envelope(k, config.height(), eps)?;
    Ok(McOutcome {
        summary: McSummary {
            n_samples: n,
            n_rejected,
            mean_sq_grad,
            mean_sq_l2,
            g_norm,
            stochastic_quotient,
            ci95: 1.96 * (var / nf).sqrt(),
            eps,
            envelope: env.value,
            seed,
        },
        draws,
    })
}

pub const SWEEP_HEADER: &str = "k,theta,b,eps,g_norm,grad_norm,l2_norm,quotient,envelope,branch,M,P,N";
pub const MC_HEADER: &str = "sample,seed,quotient,accepted";

pub fn write_sweep_csv<W: Write>(records: &[StabilityRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.k, r.theta, r.b, r.eps, r.g_norm, r.grad_norm, r.l2_norm, r.quotient, r.envelope, r.branch, r.m, r.p, r.n
        )?;
    }
    Ok(())
}

/// One row per draw; rejected draws leave the quotient empty.
pub fn write_mc_csv<W: Write>(draws: &[McDraw], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{MC_HEADER}")?;
    for d in draws {
        if d.accepted {
            writeln!(out, "{},{},{},true", d.sample, d.seed, d.quotient)?;
        } else {
            writeln!(out, "{},{},,false", d.sample, d.seed)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const TWO_PI: f64 = 2.0 * PI;

    fn synthetic(ks: &[f64], q: impl Fn(f64) -> f64) -> Vec<StabilityRecord> {
        ks.iter()
            .map(|&k| StabilityRecord {
                k,
                theta: 0.0,
                b: 1.0,
                eps: 0.5,
                g_norm: 1.0,
                grad_norm: 0.0,
                l2_norm: 0.0,
                quotient: q(k),
                envelope: 1.0,
                branch: Branch::Reduced,
                crossover: true,
                m: 8,
                p: 4,
                n: 1,
            })
            .collect()
    }

    #[test]
    fn envelope_examples() {
        let e = envelope(4.0, 2.0, 0.5).unwrap();
        assert!((e.resonant - 90.50966799187809).abs() < 1e-12);
        assert_eq!(e.value, 256.0);
        assert_eq!(e.branch, Branch::Reduced);
        assert!(e.crossover);
        let e = envelope(4.0, 1.0, 1e-4).unwrap();
        assert!((e.value - 1600.0).abs() < 1e-9);
        assert_eq!(e.branch, Branch::Resonant);
        assert!(!e.crossover);
        for k in [2.0, 5.0, 13.0] {
            let e = envelope(k, 1.0, 1.0 / k).unwrap();
            assert!((e.resonant - e.reduced).abs() < 1e-12 * e.reduced);
        }
        assert!(envelope(1.0, 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn envelope_is_monotone(k in 0.5f64..30.0, b in 0.5f64..3.0, eps in 1e-4f64..2.0, t in 1.0f64..2.0) {
            let base = envelope(k, b, eps).unwrap().value;
            prop_assert!(envelope(k * t, b, eps).unwrap().value >= base);
            prop_assert!(envelope(k, b * t, eps).unwrap().value >= base);
            prop_assert!(envelope(k, b, eps * t).unwrap().value <= base);
        }
    }

    #[test]
    fn fit_exact_power_laws() {
        let ks = linspace(2.0, 10.0, 9);
        let f = fit_exponent(&synthetic(&ks, |k| k * k)).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(f.stderr < 1e-12);
        let f = fit_exponent(&synthetic(&ks, |_| 7.0)).unwrap();
        assert!(f.slope.abs() < 1e-12);
        assert!(matches!(
            fit_exponent(&synthetic(&ks[..4], |k| k)),
            Err(GratingError::InsufficientData(_))
        ));
    }

    #[test]
    fn grid_rule_defaults() {
        let c = PlaneWaveConfig::new(2.5, 0.0, TWO_PI, 1.0).unwrap();
        let (n, g) = GridRule::default().resolve(&c).unwrap();
        assert_eq!(n, 11);
        assert_eq!(g.m, 128);
        assert_eq!(g.p, 16);
        let c = c.with_k(19.8).unwrap();
        let (n, g) = GridRule::default().resolve(&c).unwrap();
        assert_eq!(n, 28);
        assert_eq!(g.m, 256);
        assert_eq!(g.p, 127);
        let fixed = GridRule {
            order: Some(30),
            p: Some(200),
            ..GridRule::default()
        };
        let (n, g) = fixed.resolve(&c).unwrap();
        assert_eq!((n, g.m, g.p), (30, 256, 200));
    }

    #[test]
    fn sweep_skips_resonances() {
        let c = PlaneWaveConfig::new(2.5, 0.0, TWO_PI, 1.0).unwrap();
        let flat = GratingProfile::flat(TWO_PI);
        let out = sweep(&c, &flat, &[3.0], 0.2, &GridRule::default(), Some(1)).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.skipped.len(), 1);
        let out = sweep(&c, &flat, &[2.3, 2.5, 2.7], 0.2, &GridRule::default(), Some(2)).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.records.iter().all(|r| r.quotient > 0.0 && r.eps >= 0.2));
        assert!(sweep(&c, &flat, &[2.5, 2.3], 0.2, &GridRule::default(), None).is_err());
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_sweep_csv(&synthetic(&[2.0], |k| k), &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("k,theta,b,eps,g_norm,grad_norm,l2_norm,quotient,envelope,branch,M,P,N\n"));
        assert!(s.contains(",reduced,8,4,1"));
        let mut buf = Vec::new();
        write_mc_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sample,seed,quotient,accepted\n");
    }
}
