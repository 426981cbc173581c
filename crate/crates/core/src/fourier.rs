//! Thin wrappers over `rustfft` with the coefficient convention used
//! throughout: `c_n = (1/M) sum_j w_j exp(-2 pi i n j / M)` and
//! `w_j = sum_n c_n exp(2 pi i n j / M)`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub(crate) struct Transform {
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Transform {
    pub fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            m,
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
        }
    }

    /// Values to normalized Fourier coefficients, in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.forward.process(data);
        let scale = 1.0 / self.m as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Coefficients back to values, in place.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.inverse.process(data);
    }

    /// Apply the Fourier multiplier `symbol` (FFT ordering) to `data`.
    pub fn multiply(&self, symbol: &[Complex64], data: &mut [Complex64]) {
        self.forward(data);
        for (v, s) in data.iter_mut().zip(symbol) {
            *v *= s;
        }
        self.inverse(data);
    }

    /// First column of the circulant matrix with the given symbol:
    /// entry `(j, l)` of the matrix is `column[(j - l) mod M]`.
    pub fn circulant_column(&self, symbol: &[Complex64]) -> Vec<Complex64> {
        let mut col = symbol.to_vec();
        self.inverse(&mut col);
        let scale = 1.0 / self.m as f64;
        for v in col.iter_mut() {
            *v *= scale;
        }
        col
    }
}

/// Signed mode number held in FFT bin `j` of an `m`-point transform.
pub(crate) fn bin_mode(j: usize, m: usize) -> i64 {
    if j < m / 2 {
        j as i64
    } else {
        j as i64 - m as i64
    }
}

/// FFT bin holding mode `n`.
pub(crate) fn mode_bin(n: i64, m: usize) -> usize {
    n.rem_euclid(m as i64) as usize
}
