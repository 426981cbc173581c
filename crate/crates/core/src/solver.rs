//! Discretization and direct solution of the transformed grating problem.
//!
//! The total field is written `u = exp(i alpha y1) w` with `w` periodic, which
//! makes quasi-periodicity exact. On the reference rectangle the unknown `w`
//! is collocated at `M` equispaced points in `y1` (Fourier differentiation,
//! shifted by `i alpha`) and `P + 1` levels in `y2` (second-order centered
//! differences). Row `0` carries the Dirichlet condition on the grating, row
//! `P` the transparent condition `d_nu u = T u + g` with a one-sided
//! second-order normal derivative and the DtN operator applied in Fourier
//! space.
//!
//! Above the cutoff height of the flattening map the operator has constant
//! coefficients and every Fourier mode decouples. Those rows are eliminated
//! mode by mode from the top, which leaves a diagonal (in mode space) closure
//! for the remaining rows. The rows below the cutoff form a block-tridiagonal
//! system with dense `M x M` blocks that is factorized by block Gaussian
//! elimination.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;

use crate::error::{GratingError, Result};
use crate::fourier::{bin_mode, mode_bin, Transform};
use crate::modes::{vertical_wavenumber, ModeSet, PlaneWaveConfig};
use crate::trace::{boundary_source, BoundaryTrace};
use crate::transform::{make_map, FlatteningMap, GratingProfile, MapCoefficients};

/// Relative residual accepted from the direct solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// `M` collocation points in `y1` and `P` intervals in `y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SolverGrid {
    pub m: usize,
    pub p: usize,
}

impl SolverGrid {
    pub fn new(m: usize, p: usize) -> Result<Self> {
        if !m.is_power_of_two() || m < 8 {
            return Err(GratingError::GridTooCoarse(format!(
                "M = {m} must be a power of two >= 8"
            )));
        }
        if p < 4 {
            return Err(GratingError::GridTooCoarse(format!("P = {p} must be >= 4")));
        }
        Ok(Self { m, p })
    }

    pub fn spacing(&self, height: f64) -> f64 {
        height / self.p as f64
    }

    pub fn unknowns(&self) -> usize {
        self.m * (self.p + 1)
    }

    /// `M >= 2(2N + 1)` and at least 20 points per vertical wavelength.
    pub fn check(&self, config: &PlaneWaveConfig, order: usize) -> Result<()> {
        let min_m = 2 * (2 * order + 1);
        if self.m < min_m {
            return Err(GratingError::GridTooCoarse(format!(
                "M = {} aliases the DtN modes, need M >= {min_m}",
                self.m
            )));
        }
        let min_p = 20.0 * config.k() * config.height() / (2.0 * PI);
        if (self.p as f64) < min_p {
            return Err(GratingError::GridTooCoarse(format!(
                "P = {} gives fewer than 20 points per wavelength, need P >= {}",
                self.p,
                min_p.ceil()
            )));
        }
        Ok(())
    }
}

/// Discrete problem for the periodic unknown `w`, rows ordered by `y2` level.
///
/// Interior rows are scaled by `h^2` and the top row by `h`, so every row is
/// dimensionless.
#[derive(Clone)]
pub struct LinearSystem {
    config: PlaneWaveConfig,
    modes: Arc<ModeSet>,
    map: FlatteningMap,
    grid: SolverGrid,
    h: f64,
    transform: Transform,
    /// `alpha + 2 pi n / period` per FFT bin.
    wavenumbers: Vec<f64>,
    betas: Vec<Complex64>,
    /// Fourier coefficients of `g` per FFT bin (values of `g exp(-i alpha y1)`).
    source: Vec<Complex64>,
    first_identity_row: usize,
    flat: bool,
}

/// Assemble the discrete problem on `grid` for the wave `config` over `profile`.
pub fn assemble(
    config: &PlaneWaveConfig,
    profile: &GratingProfile,
    grid: SolverGrid,
    modes: &Arc<ModeSet>,
) -> Result<LinearSystem> {
    if modes.config() != config {
        return Err(GratingError::ModeSetMismatch);
    }
    grid.check(config, modes.order())?;
    let map = make_map(profile, config.height())?;
    let h = grid.spacing(config.height());
    let m = grid.m;
    let wavenumbers: Vec<f64> = (0..m)
        .map(|j| config.alpha_n(bin_mode(j, m)))
        .collect();
    let betas = wavenumbers
        .iter()
        .map(|&a| vertical_wavenumber(config.k(), a))
        .collect();
    let mut source = vec![ZERO; m];
    source[0] = boundary_source(modes).coeff(0);

    let flat = profile.is_flat();
    let first_identity_row = if flat {
        1
    } else {
        let mut p = 1;
        while ((p - 1) as f64) * h < map.gamma0() {
            p += 1;
        }
        p
    };
    if first_identity_row + 1 > grid.p {
        return Err(GratingError::GridTooCoarse(format!(
            "the top two rows must lie above the cutoff height {}",
            map.gamma0()
        )));
    }
    Ok(LinearSystem {
        config: *config,
        modes: Arc::clone(modes),
        map,
        grid,
        h,
        transform: Transform::new(m),
        wavenumbers,
        betas,
        source,
        first_identity_row,
        flat,
    })
}

/// Weighted coefficients `det*B` and `det` on one `y2` level.
struct Level {
    g11: Vec<f64>,
    g12: Vec<f64>,
    g22: Vec<f64>,
    det: Vec<f64>,
}

impl LinearSystem {
    pub fn config(&self) -> &PlaneWaveConfig {
        &self.config
    }

    pub fn modes(&self) -> &Arc<ModeSet> {
        &self.modes
    }

    pub fn map(&self) -> &FlatteningMap {
        &self.map
    }

    pub fn grid(&self) -> SolverGrid {
        self.grid
    }

    pub fn unknowns(&self) -> usize {
        self.grid.unknowns()
    }

    /// Half bandwidth in the level-ordered layout: the one-sided top stencil
    /// reaches two levels down.
    pub fn bandwidth(&self) -> usize {
        3 * self.grid.m - 1
    }

    /// Rows at or above this level have identity coefficients.
    pub fn first_identity_row(&self) -> usize {
        self.first_identity_row
    }

    /// Replace the source by zero.
    pub fn zero_source(&mut self) {
        self.source.iter_mut().for_each(|s| *s = ZERO);
    }

    /// Per-mode symbol of the constant-coefficient interior operator,
    /// `d^2/dy2^2 + (k^2 - alpha_n^2)`: returns the `k^2 - alpha_n^2` part
    /// for the grid mode `n`.
    pub fn interior_symbol(&self, n: i64) -> f64 {
        let a = self.wavenumbers[mode_bin(n, self.grid.m)];
        self.config.k().powi(2) - a * a
    }

    fn y1(&self, j: usize) -> f64 {
        j as f64 * self.config.period() / self.grid.m as f64
    }

    fn level(&self, y2: f64) -> Level {
        let m = self.grid.m;
        let mut lv = Level {
            g11: vec![1.0; m],
            g12: vec![0.0; m],
            g22: vec![1.0; m],
            det: vec![1.0; m],
        };
        if self.flat {
            return lv;
        }
        for j in 0..m {
            let c = self.map.jacobian_coeffs(self.y1(j), y2);
            if c == MapCoefficients::IDENTITY {
                continue;
            }
            let [g11, g12, g22] = c.weighted();
            lv.g11[j] = g11;
            lv.g12[j] = g12;
            lv.g22[j] = g22;
            lv.det[j] = c.det;
        }
        lv
    }

    fn derivative_symbol(&self) -> Vec<Complex64> {
        self.wavenumbers.iter().map(|&a| I * a).collect()
    }

    fn shifted_derivative(&self, w: &[Complex64]) -> Vec<Complex64> {
        let mut out = w.to_vec();
        self.transform.multiply(&self.derivative_symbol(), &mut out);
        out
    }

    /// Apply the discrete operator to the level-ordered vector `w`.
    pub fn apply(&self, w: &[Complex64]) -> Vec<Complex64> {
        let (m, p_top, h) = (self.grid.m, self.grid.p, self.h);
        assert_eq!(w.len(), self.unknowns());
        let row = |p: usize| &w[p * m..(p + 1) * m];
        let kh2 = (self.config.k() * h).powi(2);
        let mut out = vec![ZERO; w.len()];
        out[..m].copy_from_slice(row(0));

        let dw: Vec<Vec<Complex64>> = (0..=p_top).map(|p| self.shifted_derivative(row(p))).collect();
        let mut below = self.level(0.0);
        let mut here = self.level(h);
        for p in 1..p_top {
            let above = self.level((p + 1) as f64 * h);
            let half_up = self.level((p as f64 + 0.5) * h);
            let half_dn = self.level((p as f64 - 0.5) * h);
            let (wm, w0, wp) = (row(p - 1), row(p), row(p + 1));
            let mut flux1: Vec<Complex64> = (0..m)
                .map(|j| here.g11[j] * h * h * dw[p][j] + 0.5 * h * here.g12[j] * (wp[j] - wm[j]))
                .collect();
            self.transform.multiply(&self.derivative_symbol(), &mut flux1);
            let o = &mut out[p * m..(p + 1) * m];
            for j in 0..m {
                o[j] = flux1[j]
                    + 0.5 * h * (above.g12[j] * dw[p + 1][j] - below.g12[j] * dw[p - 1][j])
                    + half_up.g22[j] * (wp[j] - w0[j])
                    - half_dn.g22[j] * (w0[j] - wm[j])
                    + kh2 * here.det[j] * w0[j];
            }
            below = here;
            here = above;
        }

        let mut tw = row(p_top).to_vec();
        let dtn: Vec<Complex64> = self.betas.iter().map(|b| I * b).collect();
        self.transform.multiply(&dtn, &mut tw);
        let (a, b, c) = (row(p_top), row(p_top - 1), row(p_top - 2));
        let o = &mut out[p_top * m..];
        for j in 0..m {
            o[j] = 0.5 * (3.0 * a[j] - 4.0 * b[j] + c[j]) - h * tw[j];
        }
        out
    }

    /// Right-hand side: zero except the top row, `h g`.
    pub fn rhs(&self) -> Vec<Complex64> {
        let m = self.grid.m;
        let mut r = vec![ZERO; self.unknowns()];
        let mut g = self.source.clone();
        self.transform.inverse(&mut g);
        for (dst, v) in r[self.grid.p * m..].iter_mut().zip(g) {
            *dst = self.h * v;
        }
        r
    }

    /// `||A w - r|| / ||r||`, or the absolute residual when `r = 0`.
    pub fn residual(&self, w: &[Complex64]) -> f64 {
        let aw = self.apply(w);
        let r = self.rhs();
        let num: f64 = aw.iter().zip(&r).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if den > 0.0 {
            num / den
        } else {
            num
        }
    }

    fn dense_derivative(&self) -> Mat<Complex64> {
        let m = self.grid.m;
        let col = self.transform.circulant_column(&self.derivative_symbol());
        Mat::from_fn(m, m, |j, l| col[(j + m - l) % m])
    }

    /// Lower, diagonal and upper blocks of interior row `p`.
    fn blocks(&self, p: usize, diff: &Mat<Complex64>) -> [Mat<Complex64>; 3] {
        let (m, h) = (self.grid.m, self.h);
        let kh2 = (self.config.k() * h).powi(2);
        let below = self.level((p - 1) as f64 * h);
        let here = self.level(p as f64 * h);
        let above = self.level((p + 1) as f64 * h);
        let half_up = self.level((p as f64 + 0.5) * h);
        let half_dn = self.level((p as f64 - 0.5) * h);

        let scaled = Mat::from_fn(m, m, |j, l| diff[(j, l)] * here.g11[j] * h * h);
        let mut diag = diff * &scaled;
        let cross = Mat::from_fn(m, m, |j, l| diff[(j, l)] * here.g12[l] * 0.5 * h);
        let mut upper = cross.clone();
        let mut lower = Mat::from_fn(m, m, |j, l| -cross[(j, l)]);
        for j in 0..m {
            for l in 0..m {
                upper[(j, l)] += above.g12[j] * 0.5 * h * diff[(j, l)];
                lower[(j, l)] -= below.g12[j] * 0.5 * h * diff[(j, l)];
            }
            diag[(j, j)] += Complex64::new(kh2 * here.det[j] - half_up.g22[j] - half_dn.g22[j], 0.0);
            upper[(j, j)] += half_up.g22[j];
            lower[(j, j)] += half_dn.g22[j];
        }
        [lower, diag, upper]
    }
}

/// Solution of the discrete problem.
#[derive(Clone)]
pub struct SolutionField {
    system: LinearSystem,
    /// Periodic factor `w`, level-ordered.
    periodic: Vec<Complex64>,
    /// Total field `u` at the nodes, level-ordered.
    values: Vec<Complex64>,
    residual: f64,
}

/// Direct solve: per-mode elimination above the cutoff, block elimination below.
pub fn solve(system: &LinearSystem) -> Result<SolutionField> {
    let (m, p_top, h) = (system.grid.m, system.grid.p, system.h);
    let k2 = system.config.k().powi(2);
    let pid = system.first_identity_row;

    // Top row combined with row P-1: w_P = R_P w_{P-1} + s_P per mode.
    let mut ratio = vec![vec![ZERO; m]; p_top + 1];
    let mut shift = vec![vec![ZERO; m]; p_top + 1];
    for n in 0..m {
        let kappa2 = k2 - system.wavenumbers[n].powi(2);
        let c = 2.0 - h * h * kappa2;
        let denom = Complex64::new(1.0, 0.0) - I * h * system.betas[n];
        ratio[p_top][n] = Complex64::new(0.5 * (4.0 - c), 0.0) / denom;
        shift[p_top][n] = h * system.source[n] / denom;
        for p in (pid..p_top).rev() {
            let d = c - ratio[p + 1][n];
            if d.norm() < 1e-300 {
                return Err(GratingError::SingularSystem(format!(
                    "zero pivot in mode elimination (bin {n}, level {p})"
                )));
            }
            ratio[p][n] = 1.0 / d;
            shift[p][n] = shift[p + 1][n] / d;
        }
    }

    let mut periodic = vec![ZERO; system.unknowns()];
    // Coefficients of w on level pid - 1.
    let mut below_hat = vec![ZERO; m];
    if pid > 1 {
        let coupled = solve_coupled(system, &ratio[pid], &shift[pid])?;
        for (p, w) in coupled.into_iter().enumerate() {
            periodic[(p + 1) * m..(p + 2) * m].copy_from_slice(&w);
        }
        below_hat.copy_from_slice(&periodic[(pid - 1) * m..pid * m]);
        system.transform.forward(&mut below_hat);
    }
    for p in pid..=p_top {
        for n in 0..m {
            below_hat[n] = ratio[p][n] * below_hat[n] + shift[p][n];
        }
        let mut vals = below_hat.clone();
        system.transform.inverse(&mut vals);
        periodic[p * m..(p + 1) * m].copy_from_slice(&vals);
    }

    if periodic.iter().any(|v| !v.is_finite()) {
        return Err(GratingError::SingularSystem("non-finite solution".into()));
    }
    let residual = system.residual(&periodic);
    if !(residual <= RESIDUAL_TOLERANCE) {
        return Err(GratingError::SingularSystem(format!(
            "relative residual {residual:.3e} exceeds {RESIDUAL_TOLERANCE:.0e}"
        )));
    }
    let values = (0..=p_top)
        .flat_map(|p| (0..m).map(move |j| (p, j)))
        .map(|(p, j)| {
            if p == 0 {
                ZERO
            } else {
                Complex64::from_polar(1.0, system.config.alpha() * system.y1(j)) * periodic[p * m + j]
            }
        })
        .collect();
    Ok(SolutionField {
        system: system.clone(),
        periodic,
        values,
        residual,
    })
}

/// Block Gaussian elimination over the coupled rows `1..pid`, closed at the
/// top by `w_pid = R w_{pid-1} + s` (diagonal in mode space).
fn solve_coupled(
    system: &LinearSystem,
    ratio: &[Complex64],
    shift: &[Complex64],
) -> Result<Vec<Vec<Complex64>>> {
    // Work items already run in parallel; nested block kernels stay serial so
    // results do not depend on the thread count.
    faer::set_global_parallelism(faer::Par::Seq);
    let m = system.grid.m;
    let q = system.first_identity_row - 1;
    let diff = system.dense_derivative();
    let closure_col = system.transform.circulant_column(ratio);
    let closure = Mat::from_fn(m, m, |j, l| closure_col[(j + m - l) % m]);
    let mut closure_shift = shift.to_vec();
    system.transform.inverse(&mut closure_shift);

    let mut couplings: Vec<Mat<Complex64>> = Vec::with_capacity(q);
    let mut partial: Vec<Mat<Complex64>> = Vec::with_capacity(q);
    let mut last = Mat::<Complex64>::zeros(m, 1);
    for p in 1..=q {
        let [lower, mut diag, upper] = system.blocks(p, &diff);
        let mut rhs = Mat::<Complex64>::zeros(m, 1);
        if p == q {
            diag += &upper * &closure;
            let s = Mat::from_fn(m, 1, |j, _| closure_shift[j]);
            rhs -= &upper * &s;
        }
        if p > 1 {
            diag -= &lower * &couplings[p - 2];
            rhs -= &lower * &partial[p - 2];
        }
        let lu = diag.partial_piv_lu();
        let z = lu.solve(&rhs);
        if p < q {
            couplings.push(lu.solve(&upper));
            partial.push(z);
        } else {
            last = z;
        }
    }
    let mut rows = vec![vec![ZERO; m]; q];
    rows[q - 1] = (0..m).map(|j| last[(j, 0)]).collect();
    for p in (0..q - 1).rev() {
        let next = Mat::from_fn(m, 1, |j, _| rows[p + 1][j]);
        let w = &partial[p] - &couplings[p] * &next;
        rows[p] = (0..m).map(|j| w[(j, 0)]).collect();
    }
    Ok(rows)
}

/// `||grad u||_{L^2(D)}` and `||u||_{L^2(D)}`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergyNorms {
    pub grad: f64,
    pub l2: f64,
}

/// Energy norms in physical space, integrated on the reference rectangle with
/// the transformed coefficients: spectral in `y1`, trapezoidal in `y2`.
pub fn energy_norms(field: &SolutionField) -> EnergyNorms {
    let (grad2, l22) = field.energy_squares();
    EnergyNorms {
        grad: grad2.sqrt(),
        l2: l22.sqrt(),
    }
}

/// Terms of the energy identity `int_Gamma u d_nu conj(u) = ||grad u||^2 - k^2 ||u||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenIdentity {
    pub boundary: Complex64,
    pub volume: f64,
    /// `|boundary - volume| / (||grad u||^2 + k^2 ||u||^2)`.
    pub relative_residual: f64,
}

impl SolutionField {
    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn config(&self) -> &PlaneWaveConfig {
        &self.system.config
    }

    pub fn grid(&self) -> SolverGrid {
        self.system.grid
    }

    pub fn map(&self) -> &FlatteningMap {
        &self.system.map
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Total field at node `(j, p)`: `y1 = j period / M`, `y2 = p b / P`.
    pub fn value(&self, j: usize, p: usize) -> Complex64 {
        self.values[p * self.system.grid.m + j]
    }

    /// Level-ordered node values of the total field.
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Reference coordinates of node `(j, p)`.
    pub fn node(&self, j: usize, p: usize) -> (f64, f64) {
        (self.system.y1(j), p as f64 * self.system.h)
    }

    fn level_row(&self, p: usize) -> &[Complex64] {
        let m = self.system.grid.m;
        &self.periodic[p * m..(p + 1) * m]
    }

    /// Second-order `d/dy2` of `w` on level `p`.
    fn vertical_derivative(&self, p: usize) -> Vec<Complex64> {
        let (m, pt, h) = (self.system.grid.m, self.system.grid.p, self.system.h);
        let r = |q: usize| self.level_row(q);
        (0..m)
            .map(|j| {
                if p == 0 {
                    (-3.0 * r(0)[j] + 4.0 * r(1)[j] - r(2)[j]) / (2.0 * h)
                } else if p == pt {
                    (3.0 * r(pt)[j] - 4.0 * r(pt - 1)[j] + r(pt - 2)[j]) / (2.0 * h)
                } else {
                    (r(p + 1)[j] - r(p - 1)[j]) / (2.0 * h)
                }
            })
            .collect()
    }

    fn energy_squares(&self) -> (f64, f64) {
        let (m, pt, h) = (self.system.grid.m, self.system.grid.p, self.system.h);
        let dx = self.system.config.period() / m as f64;
        let (mut grad, mut l2) = (0.0, 0.0);
        for p in 0..=pt {
            let weight = if p == 0 || p == pt { 0.5 * h } else { h } * dx;
            let lv = self.system.level(p as f64 * h);
            let w = self.level_row(p);
            let d1 = self.system.shifted_derivative(w);
            let d2 = self.vertical_derivative(p);
            let (mut g, mut s) = (0.0, 0.0);
            for j in 0..m {
                g += lv.g11[j] * d1[j].norm_sqr()
                    + 2.0 * lv.g12[j] * (d1[j] * d2[j].conj()).re
                    + lv.g22[j] * d2[j].norm_sqr();
                s += lv.det[j] * w[j].norm_sqr();
            }
            grad += weight * g;
            l2 += weight * s;
        }
        (grad, l2)
    }

    /// Discrete check of the energy identity behind the stability proof.
    pub fn green_identity(&self) -> GreenIdentity {
        let (m, pt) = (self.system.grid.m, self.system.grid.p);
        let dx = self.system.config.period() / m as f64;
        let top = self.level_row(pt);
        let dn = self.vertical_derivative(pt);
        let boundary: Complex64 = top.iter().zip(&dn).map(|(u, d)| u * d.conj()).sum::<Complex64>() * dx;
        let (grad, l2) = self.energy_squares();
        let k2 = self.system.config.k().powi(2);
        let volume = grad - k2 * l2;
        GreenIdentity {
            boundary,
            volume,
            relative_residual: (boundary - volume).norm() / (grad + k2 * l2),
        }
    }

    /// Fourier coefficients of level `p` on the exponentials `exp(i alpha_n y1)`.
    fn level_trace(&self, data: &[Complex64]) -> BoundaryTrace {
        let m = self.system.grid.m;
        let mut c = data.to_vec();
        self.system.transform.forward(&mut c);
        let modes = &self.system.modes;
        let coeffs = modes.indices().map(|n| c[mode_bin(n, m)]).collect();
        BoundaryTrace::from_coeffs(modes, coeffs).expect("length matches the mode set")
    }

    /// Dirichlet and Neumann traces on `x2 = b`.
    pub fn boundary_traces(&self) -> (BoundaryTrace, BoundaryTrace) {
        let pt = self.system.grid.p;
        let dirichlet = self.level_trace(self.level_row(pt));
        let neumann = self.level_trace(&self.vertical_derivative(pt));
        (dirichlet, neumann)
    }

    /// CSV dump `y1,y2,re,im` at every node, level by level.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "y1,y2,re,im")?;
        for p in 0..=self.system.grid.p {
            for j in 0..self.system.grid.m {
                let (y1, y2) = self.node(j, p);
                let u = self.value(j, p);
                writeln!(out, "{},{},{},{}", y1, y2, u.re, u.im)?;
            }
        }
        Ok(())
    }
}

/// Dirichlet and Neumann traces of a solved field.
pub fn boundary_traces(field: &SolutionField) -> (BoundaryTrace, BoundaryTrace) {
    field.boundary_traces()
}

/// File name for a field snapshot, `field_k{k}_seed{seed}.csv`.
pub fn field_filename(k: f64, seed: u64) -> String {
    format!("field_k{k}_seed{seed}.csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::make_modes;
    use crate::trace::{apply_dtn, check_lemma_sqrtk};

    const TWO_PI: f64 = 2.0 * PI;

    fn setup(k: f64, theta: f64, b: f64, profile: &GratingProfile, m: usize, p: usize) -> LinearSystem {
        let c = PlaneWaveConfig::new(k, theta, TWO_PI, b).unwrap();
        let modes = Arc::new(make_modes(c, c.default_truncation()).unwrap());
        assemble(&c, profile, SolverGrid::new(m, p).unwrap(), &modes).unwrap()
    }

    fn flat_error(field: &SolutionField) -> f64 {
        let c = field.config();
        let (mut num, mut den) = (0.0, 0.0);
        let g = field.grid();
        for p in 0..=g.p {
            for j in 0..g.m {
                let (x1, x2) = field.node(j, p);
                let exact = Complex64::from_polar(1.0, c.alpha() * x1)
                    * (Complex64::from_polar(1.0, -c.beta() * x2) - Complex64::from_polar(1.0, c.beta() * x2));
                num += (field.value(j, p) - exact).norm_sqr();
                den += exact.norm_sqr();
            }
        }
        (num / den).sqrt()
    }

    #[test]
    fn flat_grating_matches_images_solution() {
        let flat = GratingProfile::flat(TWO_PI);
        let sys = setup(2.5, 0.3, 1.0, &flat, 64, 200);
        let field = solve(&sys).unwrap();
        assert!(field.residual() <= RESIDUAL_TOLERANCE);
        assert!(flat_error(&field) <= 1e-4, "error {}", flat_error(&field));
        for j in 0..64 {
            assert_eq!(field.value(j, 0), ZERO);
        }
    }

    #[test]
    fn flat_grating_converges_at_second_order() {
        let flat = GratingProfile::flat(TWO_PI);
        let e: Vec<f64> = [50, 100, 200]
            .iter()
            .map(|&p| flat_error(&solve(&setup(2.5, 0.3, 1.0, &flat, 64, p)).unwrap()))
            .collect();
        for w in e.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 2.0).abs() < 0.3, "slope {slope}");
        }
    }

    #[test]
    fn interior_symbol_for_flat_map() {
        let sys = setup(2.5, 0.2, 1.0, &GratingProfile::flat(TWO_PI), 64, 40);
        let (m, h) = (64, sys.h);
        // apply the operator to a single Fourier mode on one level, compare
        // with h^2 (k^2 - alpha_n^2) - 2 on the diagonal
        for n in [-5i64, 0, 3, 10] {
            let mut w = vec![ZERO; sys.unknowns()];
            let level = 7;
            for j in 0..m {
                w[level * m + j] = Complex64::from_polar(1.0, 2.0 * PI * (n * j as i64) as f64 / m as f64);
            }
            let out = sys.apply(&w);
            let expect = h * h * sys.interior_symbol(n) - 2.0;
            let a = sys.config().alpha() + n as f64;
            assert!((sys.interior_symbol(n) - (6.25 - a * a)).abs() < 1e-12);
            for j in 0..m {
                let got = out[level * m + j] / w[level * m + j];
                assert!((got - expect).norm() < 1e-10, "n={n}: {got} vs {expect}");
                let off = out[(level + 1) * m + j] / w[level * m + j];
                assert!((off - 1.0).norm() < 1e-12);
            }
        }
        assert_eq!(sys.unknowns(), 64 * 41);
        assert!(sys.bandwidth() <= 3 * 64);
    }

    #[test]
    fn zero_source_gives_zero_field() {
        let p = GratingProfile::sinusoid(TWO_PI, 0.05);
        let mut sys = setup(2.5, 0.0, 1.0, &p, 64, 60);
        sys.zero_source();
        let field = solve(&sys).unwrap();
        assert!(field.values().iter().all(|v| v.norm() == 0.0));
        let (d, n) = field.boundary_traces();
        assert!(d.coeffs().iter().chain(n.coeffs()).all(|c| c.norm() == 0.0));
        let e = energy_norms(&field);
        assert_eq!((e.grad, e.l2), (0.0, 0.0));
    }

    #[test]
    fn flat_energy_matches_closed_form() {
        let sys = setup(2.5, 0.0, 1.0, &GratingProfile::flat(TWO_PI), 64, 200);
        let e = energy_norms(&solve(&sys).unwrap());
        let exact = 2.0 * TWO_PI - TWO_PI * (5.0f64).sin() / 2.5;
        assert!((exact - 14.977).abs() < 1e-3);
        assert!((e.l2.powi(2) - exact).abs() < 1e-3 * exact);
    }

    #[test]
    fn flat_traces_match_images_solution() {
        let sys = setup(2.5, 0.3, 1.0, &GratingProfile::flat(TWO_PI), 64, 400);
        let field = solve(&sys).unwrap();
        let (d, _) = field.boundary_traces();
        let beta = field.config().beta();
        let expect = Complex64::new(0.0, -2.0 * beta.sin());
        assert!((d.coeff(0) - expect).norm() < 1e-4);
        assert!(d.iter().filter(|(n, _)| *n != 0).all(|(_, c)| c.norm() < 1e-12));
    }

    #[test]
    fn discrete_boundary_condition_holds() {
        let p = GratingProfile::trig(TWO_PI, 0.0, vec![0.03], vec![0.05]).unwrap();
        let sys = setup(3.6, 0.1, 1.0, &p, 64, 80);
        let field = solve(&sys).unwrap();
        let (d, n) = field.boundary_traces();
        let g = boundary_source(d.modes());
        let res = n.sub(&apply_dtn(&d)).unwrap().sub(&g).unwrap();
        assert!(res.l2_norm() <= 1e-8 * g.l2_norm(), "{}", res.l2_norm());
        let eps = d.modes().epsilon();
        assert!(check_lemma_sqrtk(&d, eps) >= -1e-10 * d.l2_norm().powi(2));
    }

    #[test]
    fn coupled_rows_match_matrix_free_operator() {
        let p = GratingProfile::trig(TWO_PI, 0.01, vec![0.02, 0.01], vec![0.04]).unwrap();
        let sys = setup(2.5, 0.2, 1.0, &p, 64, 40);
        assert!(sys.first_identity_row() > 1);
        let field = solve(&sys).unwrap();
        assert!(field.residual() < 1e-12, "{}", field.residual());
    }

    #[test]
    fn rejects_coarse_grids() {
        let c = PlaneWaveConfig::new(2.5, 0.0, TWO_PI, 1.0).unwrap();
        let modes = Arc::new(make_modes(c, 11).unwrap());
        let flat = GratingProfile::flat(TWO_PI);
        assert!(matches!(
            assemble(&c, &flat, SolverGrid::new(32, 100).unwrap(), &modes),
            Err(GratingError::GridTooCoarse(_))
        ));
        assert!(matches!(
            assemble(&c, &flat, SolverGrid::new(64, 5).unwrap(), &modes),
            Err(GratingError::GridTooCoarse(_))
        ));
        assert!(SolverGrid::new(48, 10).is_err());
    }

    #[test]
    fn field_csv_layout() {
        let sys = setup(2.5, 0.0, 1.0, &GratingProfile::flat(TWO_PI), 64, 16);
        let field = solve(&sys).unwrap();
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("y1,y2,re,im"));
        assert_eq!(text.lines().count(), 1 + 64 * 17);
        assert_eq!(field_filename(2.5, 7), "field_k2.5_seed7.csv");
    }
}
