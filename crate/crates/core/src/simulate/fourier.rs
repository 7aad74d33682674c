//! Two-dimensional FFTs over row-major `(x, y)` grids.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::diff::spectral::wavenumbers;

/// Cached plans for an `nx x ny` periodic grid, stored with `y` fastest.
#[derive(Clone)]
pub struct Spectral2d {
    nx: usize,
    ny: usize,
    kx: Vec<f64>,
    ky: Vec<f64>,
    fx: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral2d")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .finish()
    }
}

impl Spectral2d {
    pub fn new(nx: usize, lx: f64, ny: usize, ly: f64) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            kx: wavenumbers(nx, lx),
            ky: wavenumbers(ny, ly),
            fx: planner.plan_fft_forward(nx),
            fy: planner.plan_fft_forward(ny),
            ix: planner.plan_fft_inverse(nx),
            iy: planner.plan_fft_inverse(ny),
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kx(&self) -> &[f64] {
        &self.kx
    }

    pub fn ky(&self) -> &[f64] {
        &self.ky
    }

    /// `true` at the Nyquist index of an even-length axis.
    pub fn nyquist(&self) -> (Option<usize>, Option<usize>) {
        let f = |n: usize| (n % 2 == 0).then_some(n / 2);
        (f(self.nx), f(self.ny))
    }

    fn transform(&self, buf: &mut [Complex64], along_y: &Arc<dyn Fft<f64>>, along_x: &Arc<dyn Fft<f64>>) {
        let (nx, ny) = (self.nx, self.ny);
        buf.par_chunks_mut(ny).for_each(|row| along_y.process(row));
        let mut t = vec![Complex64::new(0.0, 0.0); nx * ny];
        transpose(buf, &mut t, nx, ny);
        t.par_chunks_mut(nx).for_each(|col| along_x.process(col));
        transpose(&t, buf, ny, nx);
    }

    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_in_place(&mut buf);
        buf
    }

    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.fy, &self.fx);
    }

    /// Normalised inverse transform.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.iy, &self.ix);
        let scale = 1.0 / self.len() as f64;
        for c in buf.iter_mut() {
            *c *= scale;
        }
    }

    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse_in_place(&mut spec);
        spec.into_iter().map(|c| c.re).collect()
    }

    /// Zero modes outside the two-thirds band along either axis.
    pub fn dealias(&self, spec: &mut [Complex64]) {
        let (cx, cy) = (self.nx / 3, self.ny / 3);
        let fold = |j: usize, n: usize| if j <= n / 2 { j } else { n - j };
        for ix in 0..self.nx {
            let mx = fold(ix, self.nx);
            for iy in 0..self.ny {
                if mx > cx || fold(iy, self.ny) > cy {
                    spec[ix * self.ny + iy] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    #[test]
    fn round_trip_and_laplacian() {
        let (nx, ny) = (16, 12);
        let (lx, ly) = (2.0 * PI, 4.0 * PI);
        let s = Spectral2d::new(nx, lx, ny, ly);
        let mut f = vec![0.0; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                let (x, y) = (lx * i as f64 / nx as f64, ly * j as f64 / ny as f64);
                f[i * ny + j] = (2.0 * x).sin() * (1.5 * y).cos();
            }
        }
        let back = s.inverse_real(s.forward(&f));
        for (a, b) in back.iter().zip(&f) {
            assert!((a - b).abs() < 1e-13);
        }
        let mut spec = s.forward(&f);
        for i in 0..nx {
            for j in 0..ny {
                spec[i * ny + j] *= -(s.kx()[i].powi(2) + s.ky()[j].powi(2));
            }
        }
        let lap = s.inverse_real(spec);
        for (a, b) in lap.iter().zip(&f) {
            assert!((a + 6.25 * b).abs() < 1e-11);
        }
    }
}
