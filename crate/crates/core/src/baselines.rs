//! Coefficient-thresholding sparsifiers used for comparison: sequential
//! thresholded least squares and ridge-regression thresholding with a
//! validation-scored tolerance search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::Library;
use crate::linalg::{singular_values, svd_solve, triangularize};
use crate::model::DiscoveredModel;
use crate::regression::{residual_of_columns, LeastSquaresSystem};
use crate::sampling::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StlsqConfig {
    pub threshold: f64,
    #[serde(default = "default_stlsq_iter")]
    pub max_iter: usize,
}

fn default_stlsq_iter() -> usize {
    25
}

impl StlsqConfig {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            max_iter: default_stlsq_iter(),
        }
    }
}

impl Default for StlsqConfig {
    fn default() -> Self {
        Self::new(0.1)
    }
}

fn build_model(library: &Library, active: &[usize], coefficients: Vec<f64>, method: &str) -> Result<DiscoveredModel> {
    let residual = residual_of_columns(&library.matrix, Some(active), &coefficients, &library.target);
    DiscoveredModel::new(
        library.variables.clone(),
        library.target_field.clone(),
        active.iter().map(|&j| library.terms[j].clone()).collect(),
        coefficients,
        residual,
        method,
    )
}

/// Active sets visited by [`stlsq_path`], first is the full library.
pub type ActivePath = Vec<Vec<usize>>;

/// Sequential thresholded least squares on raw (unnormalised) coefficients.
pub fn stlsq(library: &Library, config: &StlsqConfig) -> Result<DiscoveredModel> {
    stlsq_path(library, config).map(|(m, _)| m)
}

/// As [`stlsq`], also returning the active set after every iteration.
pub fn stlsq_path(library: &Library, config: &StlsqConfig) -> Result<(DiscoveredModel, ActivePath)> {
    if !(config.threshold >= 0.0) {
        return Err(Error::Config(format!(
            "threshold must be non-negative, got {}",
            config.threshold
        )));
    }
    let system = LeastSquaresSystem::new(&library.matrix, &library.target)?;
    let mut active: Vec<usize> = (0..library.n_terms()).collect();
    let mut path = vec![active.clone()];
    let mut fit = system.solve(&active)?;
    for _ in 0..config.max_iter {
        let keep: Vec<usize> = active
            .iter()
            .zip(&fit.coefficients)
            .filter(|(_, c)| c.abs() >= config.threshold)
            .map(|(&j, _)| j)
            .collect();
        if keep.len() == active.len() {
            break;
        }
        active = keep;
        path.push(active.clone());
        if active.is_empty() {
            break;
        }
        fit = system.solve(&active)?;
    }
    if active.is_empty() {
        log::info!("stlsq threshold {} removed every term", config.threshold);
        return Ok((build_model(library, &[], vec![], "stlsq")?, path));
    }
    Ok((build_model(library, &active, fit.coefficients, "stlsq")?, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StRidgeConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Initial tolerance step of the search.
    #[serde(default = "default_d_tol")]
    pub d_tol: f64,
    #[serde(default = "default_tol_iters")]
    pub tol_iters: usize,
    #[serde(default = "default_str_iters")]
    pub str_iters: usize,
    /// Validation penalty per nonzero; `0.001 * cond(Phi)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0_penalty: Option<f64>,
    #[serde(default = "default_split")]
    pub split: f64,
    /// Scale columns to unit 2-norm inside the ridge fits.
    #[serde(default = "default_normalize")]
    pub normalize: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_lambda() -> f64 {
    1e-5
}
fn default_d_tol() -> f64 {
    1.0
}
fn default_tol_iters() -> usize {
    10
}
fn default_str_iters() -> usize {
    10
}
fn default_split() -> f64 {
    0.8
}
fn default_normalize() -> bool {
    true
}

impl Default for StRidgeConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            d_tol: default_d_tol(),
            tol_iters: default_tol_iters(),
            str_iters: default_str_iters(),
            l0_penalty: None,
            split: default_split(),
            normalize: default_normalize(),
            seed: 0,
        }
    }
}

/// Ridge regression restricted to a column subset, from a precomputed Gram
/// matrix `X^T X` and `X^T y`.
struct RidgeProblem {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
}

impl RidgeProblem {
    fn solve(&self, cols: &[usize], lambda: f64) -> DVector<f64> {
        let k = cols.len();
        let mut g = DMatrix::from_fn(k, k, |a, b| self.gram[(cols[a], cols[b])]);
        for d in 0..k {
            g[(d, d)] += lambda;
        }
        let rhs = DVector::from_fn(k, |a, _| self.xty[cols[a]]);
        svd_solve(&g, &rhs, f64::EPSILON * k as f64).0
    }
}

struct StRidge<'a> {
    ridge: RidgeProblem,
    ls: LeastSquaresSystem<'a>,
    /// Column scale applied inside the fits.
    scale: Vec<f64>,
    lambda: f64,
    str_iters: usize,
}

impl StRidge<'_> {
    /// Coefficients in the original column scaling, zero outside the support.
    fn run(&self, tol: f64) -> Result<Vec<f64>> {
        let d = self.scale.len();
        let all: Vec<usize> = (0..d).collect();
        let mut w: Vec<f64> = if self.lambda != 0.0 {
            self.ridge.solve(&all, self.lambda).iter().copied().collect()
        } else {
            self.ls.solve(&all)?.coefficients
        };
        let mut num_relevant = d;
        let mut big: Vec<usize> = (0..d).filter(|&j| w[j].abs() > tol).collect();
        for j in 0..self.str_iters {
            let new_big: Vec<usize> = (0..d).filter(|&i| w[i].abs() >= tol).collect();
            if new_big.len() == num_relevant {
                break;
            }
            num_relevant = new_big.len();
            if new_big.is_empty() {
                if j == 0 {
                    return Ok(self.unscale(w));
                }
                break;
            }
            big = new_big;
            for (i, wi) in w.iter_mut().enumerate() {
                if !big.contains(&i) {
                    *wi = 0.0;
                }
            }
            let sub: Vec<f64> = if self.lambda != 0.0 {
                self.ridge.solve(&big, self.lambda).iter().copied().collect()
            } else {
                self.ls.solve(&big)?.coefficients
            };
            for (&i, v) in big.iter().zip(sub) {
                w[i] = v;
            }
        }
        if !big.is_empty() {
            let sub = self.ls.solve(&big)?.coefficients;
            for (&i, v) in big.iter().zip(sub) {
                w[i] = v;
            }
        }
        Ok(self.unscale(w))
    }

    fn unscale(&self, w: Vec<f64>) -> Vec<f64> {
        w.into_iter().zip(&self.scale).map(|(v, s)| v * s).collect()
    }
}

/// 2-norm condition number of a tall matrix.
fn condition_number(a: &DMatrix<f64>) -> f64 {
    let r = if a.nrows() > a.ncols() {
        triangularize(a.clone(), None).r
    } else {
        a.clone()
    };
    let s = singular_values(&r);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Ridge thresholding with the tolerance chosen on a held-out split; the
/// winning support is refit by least squares on all samples.
pub fn train_stridge(library: &Library, config: &StRidgeConfig) -> Result<DiscoveredModel> {
    if !(config.split > 0.0 && config.split < 1.0) {
        return Err(Error::Config(format!("split must lie in (0, 1), got {}", config.split)));
    }
    if !(config.lambda >= 0.0) || !(config.d_tol > 0.0) {
        return Err(Error::Config("lambda must be >= 0 and d_tol > 0".into()));
    }
    let n = library.n_samples();
    let d = library.n_terms();
    let n_train = (n as f64 * config.split) as usize;
    if n_train < d || n_train == n {
        return Err(Error::invalid(format!(
            "split leaves {n_train} training rows of {n} for {d} terms"
        )));
    }
    let mut train = rand::seq::index::sample(&mut rng(config.seed), n, n_train).into_vec();
    train.sort_unstable();
    let mut is_train = vec![false; n];
    for &i in &train {
        is_train[i] = true;
    }
    let test: Vec<usize> = (0..n).filter(|&i| !is_train[i]).collect();
    let phi = &library.matrix;
    let train_x = phi.select_rows(&train);
    let train_y = library.target.select_rows(&train);
    let test_x = phi.select_rows(&test);
    let test_y = library.target.select_rows(&test);

    let scale: Vec<f64> = if config.normalize {
        train_x
            .column_iter()
            .map(|c| {
                let nrm = c.norm();
                if nrm > 0.0 {
                    1.0 / nrm
                } else {
                    1.0
                }
            })
            .collect()
    } else {
        vec![1.0; d]
    };
    let mut xs = train_x.clone();
    for (j, mut c) in xs.column_iter_mut().enumerate() {
        c *= scale[j];
    }
    let ridge = RidgeProblem {
        gram: xs.tr_mul(&xs),
        xty: xs.tr_mul(&train_y),
    };
    let l0 = config.l0_penalty.unwrap_or_else(|| 0.001 * condition_number(phi));
    let solver = StRidge {
        ridge,
        ls: LeastSquaresSystem::new(&xs, &train_y)?,
        scale,
        lambda: config.lambda,
        str_iters: config.str_iters,
    };
    let score = |w: &[f64]| -> f64 {
        let pred = &test_x * DVector::from_column_slice(w);
        (&test_y - pred).norm() + l0 * w.iter().filter(|v| **v != 0.0).count() as f64
    };

    let all: Vec<usize> = (0..d).collect();
    let mut w_best = LeastSquaresSystem::new(&train_x, &train_y)?.solve(&all)?.coefficients;
    let mut err_best = score(&w_best);
    let mut d_tol = config.d_tol;
    let mut tol = d_tol;
    for iter in 0..config.tol_iters {
        let w = solver.run(tol)?;
        let err = score(&w);
        if err <= err_best {
            err_best = err;
            w_best = w;
            tol += d_tol;
        } else {
            tol = (tol - 2.0 * d_tol).max(0.0);
            d_tol = 2.0 * d_tol / (config.tol_iters - iter) as f64;
            tol += d_tol;
        }
    }

    let support: Vec<usize> = (0..d).filter(|&j| w_best[j] != 0.0).collect();
    if support.is_empty() {
        return build_model(library, &[], vec![], "train-stridge");
    }
    let fit = LeastSquaresSystem::new(phi, &library.target)?.solve(&support)?;
    build_model(library, &support, fit.coefficients, "train-stridge")
}
