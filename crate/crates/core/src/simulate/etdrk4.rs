//! Fourth-order exponential time differencing for `v' = L v + N(v)` with a
//! diagonal linear operator, coefficients evaluated by contour integrals.

use num_complex::Complex64;

use crate::error::Result;

/// Number of contour points used for the phi-function averages.
pub const CONTOUR_POINTS: usize = 32;

/// Per-mode coefficients for one step size.
#[derive(Debug, Clone)]
pub struct Etdrk4 {
    pub h: f64,
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl Etdrk4 {
    /// `linear` holds the symbol of `L` for every mode.
    pub fn new(linear: &[Complex64], h: f64) -> Self {
        let roots: Vec<Complex64> = (0..CONTOUR_POINTS)
            .map(|j| {
                let theta = std::f64::consts::PI * (2.0 * j as f64 + 1.0) / CONTOUR_POINTS as f64;
                Complex64::from_polar(1.0, theta)
            })
            .collect();
        let m = CONTOUR_POINTS as f64;
        let n = linear.len();
        let mut out = Self {
            h,
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
        };
        for &l in linear {
            let z = l * h;
            out.e.push(z.exp());
            out.e2.push((z / 2.0).exp());
            let (mut q, mut f1, mut f2, mut f3) = Default::default();
            for &r in &roots {
                let lr: Complex64 = z + r;
                let ex = lr.exp();
                let lr2 = lr * lr;
                let lr3 = lr2 * lr;
                q += ((lr / 2.0).exp() - 1.0) / lr;
                f1 += (-4.0 - lr + ex * (4.0 - 3.0 * lr + lr2)) / lr3;
                f2 += (2.0 + lr + ex * (lr - 2.0)) / lr3;
                f3 += (-4.0 - 3.0 * lr - lr2 + ex * (4.0 - lr)) / lr3;
            }
            let (q, f1, f2, f3): (Complex64, Complex64, Complex64, Complex64) = (q, f1, f2, f3);
            out.q.push(q * (h / m));
            out.f1.push(f1 * (h / m));
            out.f2.push(f2 * (h / m));
            out.f3.push(f3 * (h / m));
        }
        out
    }

    /// Advance the blocks in `v` (one per field, all laid out like `linear`
    /// concatenated) by one step.
    pub fn step<F>(&self, v: &mut [Complex64], mut nonlinear: F) -> Result<()>
    where
        F: FnMut(&[Complex64]) -> Result<Vec<Complex64>>,
    {
        let nv = nonlinear(v)?;
        let a: Vec<Complex64> = (0..v.len()).map(|i| self.e2[i] * v[i] + self.q[i] * nv[i]).collect();
        let na = nonlinear(&a)?;
        let b: Vec<Complex64> = (0..v.len()).map(|i| self.e2[i] * v[i] + self.q[i] * na[i]).collect();
        let nb = nonlinear(&b)?;
        let c: Vec<Complex64> = (0..v.len())
            .map(|i| self.e2[i] * a[i] + self.q[i] * (2.0 * nb[i] - nv[i]))
            .collect();
        let nc = nonlinear(&c)?;
        for i in 0..v.len() {
            v[i] = self.e[i] * v[i] + nv[i] * self.f1[i] + 2.0 * (na[i] + nb[i]) * self.f2[i] + nc[i] * self.f3[i];
        }
        Ok(())
    }
}
