//! Fourier differentiation along periodic lines.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Angular wavenumbers in FFT layout for `n` points over a period `length`.
/// For even `n` the Nyquist entry is `-n/2`.
pub fn wavenumbers(n: usize, length: f64) -> Vec<f64> {
    let base = 2.0 * PI / length;
    (0..n)
        .map(|j| {
            let m = if j < n.div_ceil(2) {
                j as isize
            } else {
                j as isize - n as isize
            };
            base * m as f64
        })
        .collect()
}

/// `(i k)^q` for one wavenumber, with the odd-order Nyquist mode zeroed.
pub fn derivative_symbol(k: f64, order: usize, nyquist: bool) -> Complex64 {
    if nyquist && order % 2 == 1 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, k).powu(order as u32)
}

/// Cached FFT plans and wavenumbers for one periodic line.
#[derive(Clone)]
pub struct SpectralLine {
    n: usize,
    k: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralLine").field("n", &self.n).finish()
    }
}

impl SpectralLine {
    pub fn new(n: usize, length: f64) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            k: wavenumbers(n, length),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    fn is_nyquist(&self, j: usize) -> bool {
        self.n % 2 == 0 && j == self.n / 2
    }

    pub fn forward(&self, line: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = line.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    pub fn forward_complex(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// Inverse transform including the `1/n` normalisation; returns real parts.
    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut spec);
        let scale = 1.0 / self.n as f64;
        spec.into_iter().map(|c| c.re * scale).collect()
    }

    pub fn inverse_complex(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let scale = 1.0 / self.n as f64;
        for c in buf.iter_mut() {
            *c *= scale;
        }
    }

    /// Multiply a spectrum by `(i k)^order`.
    pub fn apply_symbol(&self, spec: &mut [Complex64], order: usize) {
        for (j, c) in spec.iter_mut().enumerate() {
            *c *= derivative_symbol(self.k[j], order, self.is_nyquist(j));
        }
    }

    pub fn derivative(&self, line: &[f64], order: usize) -> Vec<f64> {
        let mut spec = self.forward(line);
        self.apply_symbol(&mut spec, order);
        self.inverse_real(spec)
    }

    /// Several derivative orders from a single forward transform.
    pub fn derivatives(&self, line: &[f64], orders: &[usize]) -> Vec<Vec<f64>> {
        let spec = self.forward(line);
        orders
            .iter()
            .map(|&q| {
                let mut s = spec.clone();
                self.apply_symbol(&mut s, q);
                self.inverse_real(s)
            })
            .collect()
    }

    /// Zero every mode with `|m| > n/3` (two-thirds rule).
    pub fn dealias(&self, spec: &mut [Complex64]) {
        dealias_in_place(spec);
    }
}

pub(crate) fn dealias_in_place(spec: &mut [Complex64]) {
    let n = spec.len();
    let cutoff = n / 3;
    for (j, c) in spec.iter_mut().enumerate() {
        let m = if j <= n / 2 { j } else { n - j };
        if m > cutoff {
            *c = Complex64::new(0.0, 0.0);
        }
    }
}
