//! Dense kernels shared by the regression and library code.

use nalgebra::{DMatrix, DVector};

pub fn column_norms(a: &DMatrix<f64>) -> Vec<f64> {
    a.column_iter().map(|c| c.norm()).collect()
}

/// Per-column scale factors `1 / ||a_j||` (1 for zero columns).
pub fn equilibration(a: &DMatrix<f64>) -> Vec<f64> {
    column_norms(a)
        .into_iter()
        .map(|n| if n > 0.0 { 1.0 / n } else { 1.0 })
        .collect()
}

pub fn scale_columns(a: &DMatrix<f64>, scale: &[f64]) -> DMatrix<f64> {
    let mut out = a.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    out
}

/// `Q^T [A | b]` reduced to its leading square block: `A = Q R`,
/// `qtb = (Q^T b)[..k]`.
#[derive(Debug, Clone)]
pub struct Triangular {
    pub r: DMatrix<f64>,
    pub qtb: DVector<f64>,
}

/// Householder QR of a tall matrix, keeping only `R` and `Q^T b`.
pub fn triangularize(a: DMatrix<f64>, b: Option<&DVector<f64>>) -> Triangular {
    let (m, k) = a.shape();
    debug_assert!(m >= k);
    let qr = a.qr();
    let r = qr.r();
    let qtb = match b {
        Some(b) => {
            let mut qb = b.clone();
            qr.q_tr_mul(&mut qb);
            qb.rows(0, k).into_owned()
        }
        None => DVector::zeros(k),
    };
    Triangular { r, qtb }
}

/// Minimum-norm solution of `min ||a x - b||` through the SVD, discarding
/// singular values below `rel_cutoff * sigma_max`. Returns `(x, rank)`.
pub fn svd_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_cutoff: f64) -> (DVector<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = rel_cutoff * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps && s > 0.0).count();
    if rank == 0 {
        return (DVector::zeros(a.ncols()), 0);
    }
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let utb = u.tr_mul(b);
    let mut x = DVector::zeros(a.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > eps && s > 0.0 {
            x += vt.row(i).transpose() * (utb[i] / s);
        }
    }
    (x, rank)
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Householder QR with column-norm pivoting (Businger–Golub).
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// `perm[i]` is the original index of the `i`-th pivoted column.
    pub perm: Vec<usize>,
    /// `|R_ii|` in pivot order.
    pub diag: Vec<f64>,
}

pub fn pivoted_qr(mut a: DMatrix<f64>) -> PivotedQr {
    let (m, n) = a.shape();
    let steps = m.min(n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut norms: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).collect();
    let mut diag = Vec::with_capacity(steps);
    let mut v = vec![0.0; m];
    for i in 0..steps {
        let p = (i..n).fold(i, |best, j| if norms[j] > norms[best] { j } else { best });
        if p != i {
            a.swap_columns(i, p);
            perm.swap(i, p);
            norms.swap(i, p);
        }
        let x = a.view((i, i), (m - i, 1));
        let xnorm = x.norm();
        diag.push(xnorm);
        if xnorm == 0.0 {
            continue;
        }
        let alpha = if a[(i, i)] >= 0.0 { -xnorm } else { xnorm };
        for r in i..m {
            v[r] = a[(r, i)];
        }
        v[i] -= alpha;
        let vtv: f64 = v[i..m].iter().map(|x| x * x).sum();
        a[(i, i)] = alpha;
        for r in i + 1..m {
            a[(r, i)] = 0.0;
        }
        if vtv == 0.0 {
            continue;
        }
        for j in i + 1..n {
            let mut col = a.column_mut(j);
            let dot: f64 = (i..m).map(|r| v[r] * col[r]).sum();
            let f = 2.0 * dot / vtv;
            let mut tail = 0.0;
            for r in i..m {
                col[r] -= f * v[r];
                if r > i {
                    tail += col[r] * col[r];
                }
            }
            norms[j] = tail;
        }
    }
    PivotedQr { perm, diag }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoted_qr_reveals_rank() {
        let a = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 2.0, 3.0, //
                0.0, 1.0, 1.0, //
                1.0, 0.0, 1.0, //
                2.0, 1.0, 3.0,
            ],
        );
        let qr = pivoted_qr(a);
        // third column = first + second
        assert!(qr.diag[2] < 1e-12 * qr.diag[0]);
        assert!(qr.diag[1] > 0.1);
        let mut sorted = qr.perm.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
        // largest-norm column first
        assert_eq!(qr.perm[0], 2);
    }

    #[test]
    fn pivoted_diag_matches_singular_product() {
        let a = DMatrix::from_fn(20, 5, |i, j| {
            ((i * j) as f64 * 0.7 + 0.3 * i as f64 + j as f64 + 1.0).sin()
        });
        let qr = pivoted_qr(a.clone());
        let det_r: f64 = qr.diag.iter().product();
        let det_s: f64 = singular_values(&a).iter().product();
        assert!((det_r / det_s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn svd_solve_min_norm() {
        // duplicated column: minimum-norm solution splits evenly
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let b = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let (x, rank) = svd_solve(&a, &b, 1e-12);
        assert_eq!(rank, 1);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
