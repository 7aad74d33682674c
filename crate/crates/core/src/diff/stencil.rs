//! Finite-difference stencils on uniform grids.

use crate::error::{Error, Result};

/// Highest derivative order supported anywhere in the crate.
pub const MAX_ORDER: usize = 10;
/// Largest supported `order + accuracy`.
pub const MAX_STENCIL_SUM: usize = 24;

/// Weights of the `order`-th derivative at `z` from values at `nodes`.
///
/// Fornberg's recursion; exact in rational arithmetic, so integer node
/// offsets give weights accurate to a few ulps for moderate widths.
pub fn fornberg_weights(z: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    assert!(n > order, "need more than {order} nodes");
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// How a stencil is closed near the ends of a non-periodic line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// Wrap around.
    Periodic,
    /// Shifted stencils of `order + accuracy` points kept inside the line.
    OneSided,
    /// Ghost values `u[-k] = -u[k]` about both end nodes, for fields that
    /// vanish there (homogeneous Dirichlet).
    OddReflection,
    /// Odd ghosts at the left end, even ghosts at the right end. With both
    /// end values pinned at zero this adds `u_x = 0` on the right, which
    /// keeps `u_t = -eps u_xxx` (eps > 0) well posed on a bounded interval.
    OddEvenReflection,
}

impl Closure {
    fn right_sign(self) -> f64 {
        if self == Closure::OddEvenReflection {
            1.0
        } else {
            -1.0
        }
    }
}

/// Number of points in the central stencil of the given order and accuracy.
pub fn central_width(order: usize, accuracy: usize) -> usize {
    2 * ((order + 1) / 2) - 1 + accuracy
}

#[derive(Debug, Clone)]
struct Row {
    start: usize,
    weights: Vec<f64>,
}

/// A derivative operator along one line of `n` uniformly spaced points.
#[derive(Debug, Clone)]
pub struct LineStencil {
    n: usize,
    closure: Closure,
    half_width: usize,
    central: Vec<f64>,
    left: Vec<Row>,
    right: Vec<Row>,
}

impl LineStencil {
    pub fn new(n: usize, spacing: f64, order: usize, accuracy: usize, closure: Closure) -> Result<Self> {
        validate(order, accuracy)?;
        let width = central_width(order, accuracy);
        let half_width = (width - 1) / 2;
        let needed = match closure {
            Closure::OneSided => order + accuracy,
            Closure::Periodic => width,
            Closure::OddReflection | Closure::OddEvenReflection => width.max(half_width + 2),
        };
        if n < needed {
            return Err(Error::AxisTooShort { needed, available: n });
        }
        let scale = spacing.powi(order as i32);
        let offsets: Vec<f64> = (0..width).map(|k| k as f64 - half_width as f64).collect();
        let central: Vec<f64> = fornberg_weights(0.0, &offsets, order)
            .into_iter()
            .map(|w| w / scale)
            .collect();

        let (mut left, mut right) = (Vec::new(), Vec::new());
        if closure == Closure::OneSided {
            let w1 = order + accuracy;
            let nodes: Vec<f64> = (0..w1).map(|k| k as f64).collect();
            for i in 0..half_width {
                let weights = fornberg_weights(i as f64, &nodes, order)
                    .into_iter()
                    .map(|w| w / scale)
                    .collect();
                left.push(Row { start: 0, weights });
            }
            for i in n - half_width..n {
                let start = n - w1;
                let weights = fornberg_weights((i - start) as f64, &nodes, order)
                    .into_iter()
                    .map(|w| w / scale)
                    .collect();
                right.push(Row { start, weights });
            }
        }
        Ok(Self {
            n,
            closure,
            half_width,
            central,
            left,
            right,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn central_weights(&self) -> &[f64] {
        &self.central
    }

    /// Sum of absolute central weights; bounds the operator's spectral radius.
    pub fn abs_weight_sum(&self) -> f64 {
        self.central.iter().map(|w| w.abs()).sum()
    }

    /// Apply to a strided line: `data[start + k * stride]` for `k < n`.
    pub fn apply_strided(&self, data: &[f64], start: usize, stride: usize, out: &mut [f64]) {
        let n = self.n;
        let hw = self.half_width;
        let at = |k: usize| data[start + k * stride];
        for i in hw.min(n)..n.saturating_sub(hw) {
            let mut acc = 0.0;
            for (k, w) in self.central.iter().enumerate() {
                acc += w * at(i + k - hw);
            }
            out[start + i * stride] = acc;
        }
        let edge: Vec<usize> = (0..hw).chain(n - hw..n).collect();
        for i in edge {
            let acc = match self.closure {
                Closure::Periodic => self
                    .central
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * at((i + n + k - hw) % n))
                    .sum(),
                Closure::OddReflection | Closure::OddEvenReflection => self
                    .central
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        let j = i as isize + k as isize - hw as isize;
                        w * reflected(j, n, self.closure.right_sign(), &at)
                    })
                    .sum(),
                Closure::OneSided => {
                    let row = if i < hw {
                        &self.left[i]
                    } else {
                        &self.right[i - (n - hw)]
                    };
                    row.weights.iter().enumerate().map(|(k, w)| w * at(row.start + k)).sum()
                }
            };
            out[start + i * stride] = acc;
        }
    }

    pub fn apply(&self, line: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; line.len()];
        self.apply_strided(line, 0, 1, &mut out);
        out
    }

    /// Weights and node indices used at position `i` (for pointwise evaluation).
    pub fn weights_at(&self, i: usize) -> Vec<(usize, f64)> {
        let n = self.n;
        let hw = self.half_width;
        if i >= hw && i + hw < n {
            return self.central.iter().enumerate().map(|(k, &w)| (i + k - hw, w)).collect();
        }
        match self.closure {
            Closure::Periodic => self
                .central
                .iter()
                .enumerate()
                .map(|(k, &w)| ((i + n + k - hw) % n, w))
                .collect(),
            Closure::OneSided => {
                let row = if i < hw {
                    &self.left[i]
                } else {
                    &self.right[i - (n - hw)]
                };
                row.weights
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| (row.start + k, w))
                    .collect()
            }
            Closure::OddReflection | Closure::OddEvenReflection => {
                let mut acc = vec![0.0; n];
                for (k, &w) in self.central.iter().enumerate() {
                    let j = i as isize + k as isize - hw as isize;
                    if let Some((idx, sign)) = reflect_index(j, n, self.closure.right_sign()) {
                        acc[idx] += sign * w;
                    }
                }
                acc.into_iter().enumerate().filter(|(_, w)| *w != 0.0).collect()
            }
        }
    }
}

fn reflect_index(j: isize, n: usize, right_sign: f64) -> Option<(usize, f64)> {
    let last = n as isize - 1;
    if j < 0 {
        Some(((-j) as usize, -1.0))
    } else if j > last {
        Some(((2 * last - j) as usize, right_sign))
    } else {
        Some((j as usize, 1.0))
    }
}

fn reflected(j: isize, n: usize, right_sign: f64, at: &impl Fn(usize) -> f64) -> f64 {
    match reflect_index(j, n, right_sign) {
        Some((idx, sign)) => sign * at(idx),
        None => 0.0,
    }
}

pub(crate) fn validate(order: usize, accuracy: usize) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::UnsupportedDerivative(format!(
            "derivative order {order} outside 1..={MAX_ORDER}"
        )));
    }
    if accuracy < 2 || accuracy % 2 != 0 {
        return Err(Error::UnsupportedDerivative(format!(
            "accuracy {accuracy} must be even and >= 2"
        )));
    }
    if order + accuracy > MAX_STENCIL_SUM {
        return Err(Error::UnsupportedDerivative(format!(
            "order {order} + accuracy {accuracy} exceeds {MAX_STENCIL_SUM}"
        )));
    }
    Ok(())
}
