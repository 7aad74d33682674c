//! Moving local least-squares polynomial smoothing (Savitzky–Golay) and an
//! optional spectral low-pass in space.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::for_each_line;
use super::spectral::SpectralLine;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Per-axis smoothing windows; a window of 1 (or `None`) leaves that axis alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub space_window: Option<usize>,
    pub time_window: Option<usize>,
    pub degree: usize,
    /// Spectral low-pass along every space axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_filter: Option<LowPass>,
}

/// Cutoff rule for the spatial low-pass `exp(-(m / m_c)^8)` over mode
/// numbers `m`. Homogeneous Dirichlet lines are filtered through their odd
/// extension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LowPass {
    /// `m_c` as a fraction of the Nyquist mode.
    Fixed { cutoff: f64 },
    /// `m_c` is the first mode whose line-averaged power drops below `ratio`
    /// times the noise floor, estimated as the mean power over the top
    /// quarter of modes. Clean, resolved data has a floor near round-off
    /// and is left almost untouched.
    NoiseFloor { ratio: f64 },
}

impl SmoothingSpec {
    pub fn uniform(window: usize, degree: usize) -> Self {
        Self {
            space_window: Some(window),
            time_window: Some(window),
            degree,
            space_filter: None,
        }
    }
}

/// Order of the super-Gaussian roll-off `exp(-(m / m_c)^8)`.
const LOW_PASS_ORDER: i32 = 8;

/// Weights reproducing the least-squares polynomial fit of `degree` over
/// `window` consecutive points, evaluated at position `at` within the window.
pub fn savitzky_golay_weights(window: usize, degree: usize, at: usize) -> Vec<f64> {
    let half = (window as f64 - 1.0) / 2.0;
    let scale = half.max(1.0);
    let vander = DMatrix::from_fn(window, degree + 1, |r, c| {
        ((r as f64 - at as f64) / scale).powi(c as i32)
    });
    let pinv = vander
        .svd(true, true)
        .pseudo_inverse(1e-14)
        .expect("SVD with both factors");
    pinv.row(0).iter().copied().collect()
}

/// Smooth one field along every axis with the same window.
pub fn smooth_field(dataset: &Dataset, field: &str, window: usize, degree: usize) -> Result<Vec<f64>> {
    smooth_field_axes(dataset, field, &SmoothingSpec::uniform(window, degree))
}

/// Separable smoothing passes, space axes first, then time, then the
/// spectral low-pass so that its noise floor is measured after the
/// polynomial passes. Near non-periodic ends the window is shifted to stay
/// inside the line and the fit is evaluated off-centre.
pub fn smooth_field_axes(dataset: &Dataset, field: &str, spec: &SmoothingSpec) -> Result<Vec<f64>> {
    let f = dataset.field(field)?;
    let shape = dataset.shape();
    let dims = dataset.space_dims();
    let mut cur = f.values.clone();
    for axis in 0..=dims {
        let window = if axis < dims {
            spec.space_window
        } else {
            spec.time_window
        };
        let Some(window) = window else { continue };
        if window % 2 == 0 {
            return Err(Error::invalid(format!("smoothing window {window} must be odd")));
        }
        if spec.degree >= window && window > 1 {
            return Err(Error::invalid(format!(
                "smoothing degree {} must be below window {window}",
                spec.degree
            )));
        }
        let n = shape[axis];
        if window > n {
            return Err(Error::AxisTooShort {
                needed: window,
                available: n,
            });
        }
        if window == 1 {
            continue;
        }
        let periodic = axis < dims && f.boundary.is_periodic();
        let half = window / 2;
        let centre = savitzky_golay_weights(window, spec.degree, half);
        let edges: Vec<Vec<f64>> = (0..half)
            .map(|at| savitzky_golay_weights(window, spec.degree, at))
            .collect();
        let mut next = vec![0.0; cur.len()];
        for_each_line(&shape, axis, |start, stride| {
            let at = |k: usize| cur[start + k * stride];
            for i in 0..n {
                let v = if periodic || (i >= half && i + half < n) {
                    centre
                        .iter()
                        .enumerate()
                        .map(|(k, w)| w * at((i + n + k - half) % n))
                        .sum()
                } else if i < half {
                    edges[i].iter().enumerate().map(|(k, w)| w * at(k)).sum()
                } else {
                    // mirror of the left-edge weights
                    let from_end = n - 1 - i;
                    edges[from_end].iter().enumerate().map(|(k, w)| w * at(n - 1 - k)).sum()
                };
                next[start + i * stride] = v;
            }
        });
        cur = next;
    }
    if let Some(filter) = spec.space_filter {
        let (LowPass::Fixed { cutoff: p } | LowPass::NoiseFloor { ratio: p }) = filter;
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::invalid(format!("low-pass parameter must be positive, got {p}")));
        }
        for axis in 0..dims {
            cur = low_pass_axis(&cur, &shape, axis, filter, f.boundary.is_periodic());
        }
    }
    Ok(cur)
}

fn low_pass_axis(values: &[f64], shape: &[usize], axis: usize, filter: LowPass, periodic: bool) -> Vec<f64> {
    let n = shape[axis];
    let m = if periodic { n } else { 2 * (n - 1) };
    let line = SpectralLine::new(m, 1.0);
    let mode = |j: usize| j.min(m - j);
    let nyquist = m / 2;
    let load = |buf: &mut [Complex64], start: usize, stride: usize| {
        for i in 0..n {
            buf[i] = Complex64::new(values[start + i * stride], 0.0);
        }
        if !periodic {
            for i in 1..n - 1 {
                buf[m - i] = -buf[i];
            }
        }
        line.forward_complex(buf);
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    let cutoff = match filter {
        LowPass::Fixed { cutoff } => cutoff * nyquist as f64,
        LowPass::NoiseFloor { ratio } => {
            let mut power = vec![0.0; nyquist + 1];
            for_each_line(shape, axis, |start, stride| {
                load(&mut buf, start, stride);
                for (j, c) in buf.iter().enumerate() {
                    power[mode(j)] += c.norm_sqr();
                }
            });
            let mut tail = power[nyquist / 2..].to_vec();
            tail.sort_by(f64::total_cmp);
            let floor = tail[tail.len() / 2];
            let first = (1..=nyquist).find(|&k| power[k] <= ratio * floor).unwrap_or(nyquist);
            log::debug!("noise-floor low-pass: cutoff mode {first} of {nyquist}");
            first as f64
        }
    };
    let gain: Vec<f64> = (0..m)
        .map(|j| (-(mode(j) as f64 / cutoff).powi(LOW_PASS_ORDER)).exp())
        .collect();
    let mut out = vec![0.0; values.len()];
    for_each_line(shape, axis, |start, stride| {
        load(&mut buf, start, stride);
        for (c, g) in buf.iter_mut().zip(&gain) {
            *c *= g;
        }
        line.inverse_complex(&mut buf);
        for i in 0..n {
            out[start + i * stride] = buf[i].re;
        }
    });
    out
}
