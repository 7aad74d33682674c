//! Explicit Runge–Kutta steppers on flat real state vectors.

use crate::error::{Error, Result};

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Classical fourth-order step.
pub fn rk4_step<F>(y: &mut [f64], h: f64, mut f: F) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let k1 = f(y)?;
    let k2 = f(&axpy(y, h / 2.0, &k1))?;
    let k3 = f(&axpy(y, h / 2.0, &k2))?;
    let k4 = f(&axpy(y, h, &k3))?;
    for i in 0..y.len() {
        y[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    }
    Ok(())
}

/// Error control settings for [`Dopri5`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights minus the embedded fourth-order ones.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince 5(4) integrator, first-same-as-last.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub tol: Tolerances,
    /// Current step-size proposal.
    pub h: f64,
    pub min_h: f64,
    pub accepted: usize,
    pub rejected: usize,
    fsal: Option<Vec<f64>>,
}

impl Dopri5 {
    pub fn new(tol: Tolerances, h0: f64) -> Self {
        Self {
            tol,
            h: h0,
            min_h: 1e-12,
            accepted: 0,
            rejected: 0,
            fsal: None,
        }
    }

    /// Integrate from `t` to exactly `t_end`, clamping the last step.
    pub fn advance<F>(&mut self, y: &mut Vec<f64>, t: f64, t_end: f64, mut f: F) -> Result<()>
    where
        F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    {
        let mut t = t;
        while t_end - t > 1e-12 * t_end.abs().max(1.0) {
            let h = self.h.min(t_end - t);
            let k1 = match self.fsal.take() {
                Some(k) => k,
                None => f(t, y)?,
            };
            let mut ks: Vec<Vec<f64>> = vec![k1];
            for s in 1..7 {
                let mut ys = y.clone();
                for (j, k) in ks.iter().enumerate() {
                    let a = A[s][j];
                    if a != 0.0 {
                        for i in 0..ys.len() {
                            ys[i] += h * a * k[i];
                        }
                    }
                }
                if s == 6 {
                    // stage 7 is evaluated at the proposed solution
                    let k7 = f(t + h, &ys)?;
                    ks.push(k7);
                    let mut err_sq = 0.0;
                    for i in 0..y.len() {
                        let e: f64 = (0..7).map(|j| E[j] * ks[j][i]).sum::<f64>() * h;
                        let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(ys[i].abs());
                        err_sq += (e / sc).powi(2);
                    }
                    let err = (err_sq / y.len() as f64).sqrt();
                    if !err.is_finite() {
                        return Err(Error::instability(format!("non-finite error estimate at t = {t}")));
                    }
                    let factor = if err == 0.0 {
                        10.0
                    } else {
                        (0.9 * err.powf(-0.2)).clamp(0.2, 10.0)
                    };
                    if err <= 1.0 {
                        *y = ys;
                        t += h;
                        self.accepted += 1;
                        self.fsal = ks.pop();
                        // a clamped final step should not shrink the next proposal
                        if h == self.h {
                            self.h = h * factor;
                        } else {
                            self.h = self.h.max(h * factor);
                        }
                    } else {
                        self.rejected += 1;
                        self.h = h * factor.min(1.0);
                        self.fsal = Some(ks.swap_remove(0));
                        if self.h < self.min_h {
                            return Err(Error::instability(format!(
                                "step size fell below {} at t = {t}",
                                self.min_h
                            )));
                        }
                    }
                } else {
                    ks.push(f(t + C[s] * h, &ys)?);
                }
            }
        }
        Ok(())
    }
}
