//! Balance-guided progressive pruning with residual-ratio model selection.
//!
//! Each step scores the active terms by how often they take part in the
//! dominant balance of the fitted equation, removes the weakest one and refits.
//! The model kept is the last one before the residual jumps by more than `tau`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::Library;
use crate::model::DiscoveredModel;
use crate::regression::{FitResult, LeastSquaresSystem};

pub const DEFAULT_TAU: f64 = 3.0;
/// Default stabiliser as a fraction of the largest product `|Phi_ij xi_j|`.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 1e-12;
/// Residuals below this are treated as exact fits by the stopping rule.
pub const RESIDUAL_FLOOR: f64 = 1e-30;

const ROW_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunerConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Absolute stabiliser; relative to the largest product when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Stabiliser as a fraction of the largest product, used when `epsilon`
    /// is absent.
    #[serde(default = "default_relative_epsilon")]
    pub relative_epsilon: f64,
    #[serde(default = "default_min_terms")]
    pub min_terms: usize,
    /// Keep pruning down to `min_terms` after the stopping rule fires.
    #[serde(default)]
    pub record_full_trace: bool,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_relative_epsilon() -> f64 {
    DEFAULT_RELATIVE_EPSILON
}

fn default_min_terms() -> usize {
    1
}

impl Default for PrunerConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            epsilon: None,
            relative_epsilon: DEFAULT_RELATIVE_EPSILON,
            min_terms: 1,
            record_full_trace: false,
        }
    }
}

/// How the importance stabiliser is chosen at each refit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stabiliser {
    Absolute(f64),
    /// Fraction of the largest product over the active columns.
    Relative(f64),
}

impl Stabiliser {
    fn resolve(self, phi: &DMatrix<f64>, columns: &[usize], xi: &[f64]) -> f64 {
        match self {
            Stabiliser::Absolute(e) => e,
            Stabiliser::Relative(f) => relative_epsilon(phi, columns, xi, f),
        }
    }
}

impl PrunerConfig {
    pub fn stabiliser(&self) -> Stabiliser {
        match self.epsilon {
            Some(e) => Stabiliser::Absolute(e),
            None => Stabiliser::Relative(self.relative_epsilon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must exceed 1, got {}", self.tau)));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Config(format!("epsilon must be positive, got {e}")));
            }
        }
        if !(self.relative_epsilon > 0.0) || !self.relative_epsilon.is_finite() {
            return Err(Error::Config(format!(
                "relative_epsilon must be positive, got {}",
                self.relative_epsilon
            )));
        }
        if self.min_terms == 0 {
            return Err(Error::Config("min_terms must be at least 1".into()));
        }
        Ok(())
    }
}

/// `factor * max_ij |Phi_ij xi_j|` over the given columns, or the smallest
/// positive normal when every product vanishes.
pub fn relative_epsilon(phi: &DMatrix<f64>, columns: &[usize], xi: &[f64], factor: f64) -> f64 {
    let max = columns
        .iter()
        .zip(xi)
        .map(|(&j, &c)| phi.column(j).amax() * c.abs())
        .fold(0.0, f64::max);
    let eps = factor * max;
    if eps > 0.0 {
        eps
    } else {
        f64::MIN_POSITIVE
    }
}

/// Local importances `w_ij` (N x K) and their column means `W_j`.
pub fn importance(phi: &DMatrix<f64>, xi: &[f64], epsilon: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let k = phi.ncols();
    check_importance_args(k, xi.len(), epsilon)?;
    let n = phi.nrows();
    let mut local = DMatrix::zeros(n, k);
    let mut row = vec![0.0; k];
    for i in 0..n {
        local_row(phi, None, xi, i, epsilon, &mut row);
        for (j, &w) in row.iter().enumerate() {
            local[(i, j)] = w;
        }
    }
    let global = local
        .column_iter()
        .map(|c| if n == 0 { 0.0 } else { c.sum() / n as f64 })
        .collect();
    Ok((local, global))
}

/// `W_j` for the given active columns without materialising `w_ij`.
///
/// Rows are reduced in fixed-size chunks whose partial sums are added in a
/// fixed order, so the result does not depend on the thread count.
pub fn global_importance(phi: &DMatrix<f64>, columns: &[usize], xi: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    let k = columns.len();
    check_importance_args(k, xi.len(), epsilon)?;
    let n = phi.nrows();
    if n == 0 {
        return Ok(vec![0.0; k]);
    }
    let starts: Vec<usize> = (0..n).step_by(ROW_CHUNK).collect();
    let partials: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| {
            let mut acc = vec![0.0; k];
            let mut row = vec![0.0; k];
            for i in start..(start + ROW_CHUNK).min(n) {
                local_row(phi, Some(columns), xi, i, epsilon, &mut row);
                for (a, w) in acc.iter_mut().zip(&row) {
                    *a += w;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; k];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|s| s / n as f64).collect())
}

fn check_importance_args(k: usize, nxi: usize, epsilon: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("importance of an empty active set"));
    }
    if nxi != k {
        return Err(Error::invalid(format!("{nxi} coefficients for {k} columns")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

fn local_row(phi: &DMatrix<f64>, columns: Option<&[usize]>, xi: &[f64], i: usize, epsilon: f64, out: &mut [f64]) {
    let mut max = 0.0f64;
    for (j, (o, c)) in out.iter_mut().zip(xi).enumerate() {
        let col = columns.map_or(j, |cs| cs[j]);
        *o = (phi[(i, col)] * c).abs();
        max = max.max(*o);
    }
    let denom = max + epsilon;
    for o in out.iter_mut() {
        *o /= denom;
    }
}

/// Position in `importance` of the term to remove: the smallest `W_j`, the
/// later one on ties.
pub fn argmin_importance(importance: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &w) in importance.iter().enumerate() {
        if best.is_none_or(|b| w <= importance[b]) {
            best = Some(j);
        }
    }
    best
}

/// One pruning iteration: the fit on an active set and what was removed next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneIteration {
    /// Library column indices, canonical order.
    pub active: Vec<usize>,
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    /// `W_j` aligned with `active`.
    pub importance: Vec<f64>,
    pub residual: f64,
    /// `Res_k / Res_{k-1}`; absent for the first iteration or a jump from an
    /// exact fit.
    pub residual_ratio: Option<f64>,
    /// Library column removed to reach the next iteration.
    pub removed: Option<usize>,
    pub removed_term: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneTrace {
    pub library_terms: Vec<String>,
    pub tau: f64,
    pub iterations: Vec<PruneIteration>,
    pub selected_iteration: usize,
    /// Whether the ratio rule fired; otherwise the elbow fallback chose.
    pub triggered: bool,
}

impl PruneTrace {
    pub fn selected(&self) -> &PruneIteration {
        &self.iterations[self.selected_iteration]
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.iterations.iter().map(|it| it.residual).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Long-format CSV: one row per (iteration, active term).
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "iteration",
            "n_active",
            "residual",
            "residual_ratio",
            "term",
            "coefficient",
            "importance",
            "removed_next",
            "selected",
        ])?;
        for (k, it) in self.iterations.iter().enumerate() {
            for (pos, name) in it.terms.iter().enumerate() {
                w.write_record([
                    k.to_string(),
                    it.active.len().to_string(),
                    it.residual.to_string(),
                    it.residual_ratio.map_or(String::new(), |r| r.to_string()),
                    name.clone(),
                    it.coefficients[pos].to_string(),
                    it.importance[pos].to_string(),
                    (it.removed == Some(it.active[pos])).to_string(),
                    (k == self.selected_iteration).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Working state of the pruning loop.
#[derive(Debug, Clone)]
pub struct PruneState {
    pub active: Vec<usize>,
    pub fit: FitResult,
    pub importance: Vec<f64>,
}

impl PruneState {
    pub fn initial(system: &LeastSquaresSystem<'_>, epsilon: Stabiliser) -> Result<Self> {
        let active: Vec<usize> = (0..system.phi().ncols()).collect();
        Self::fit(system, active, epsilon)
    }

    fn fit(system: &LeastSquaresSystem<'_>, active: Vec<usize>, epsilon: Stabiliser) -> Result<Self> {
        let fit = system.solve(&active)?;
        let eps = epsilon.resolve(system.phi(), &active, &fit.coefficients);
        let importance = global_importance(system.phi(), &active, &fit.coefficients, eps)?;
        Ok(Self {
            active,
            fit,
            importance,
        })
    }

    /// Library column that the next step removes.
    pub fn weakest(&self) -> usize {
        self.active[argmin_importance(&self.importance).expect("active set is nonempty")]
    }
}

/// Remove the least important term and refit.
pub fn prune_step(system: &LeastSquaresSystem<'_>, state: &PruneState, epsilon: Stabiliser) -> Result<PruneState> {
    if state.active.len() < 2 {
        return Err(Error::invalid("cannot prune an active set of one term"));
    }
    let drop = state.weakest();
    let active: Vec<usize> = state.active.iter().copied().filter(|&j| j != drop).collect();
    PruneState::fit(system, active, epsilon)
}

/// Ratio used by the stopping rule; infinite for a jump off an exact fit.
fn residual_ratio(prev: f64, next: f64) -> f64 {
    if prev < RESIDUAL_FLOOR {
        if next > RESIDUAL_FLOOR {
            f64::INFINITY
        } else {
            1.0
        }
    } else {
        next / prev
    }
}

/// Run the full prune-and-select loop on an (independence-reduced) library.
pub fn discover(library: &Library, config: &PrunerConfig) -> Result<(DiscoveredModel, PruneTrace)> {
    config.validate()?;
    if library.n_terms() == 0 {
        return Err(Error::DegenerateLibrary("library has no terms".into()));
    }
    let names = library.term_names();
    let system = LeastSquaresSystem::new(&library.matrix, &library.target)?;
    let mut states = vec![PruneState::initial(&system, config.stabiliser())?];
    let mut ratios: Vec<f64> = Vec::new();
    let mut trigger: Option<usize> = None;
    loop {
        let cur = states.last().unwrap();
        if cur.active.len() <= config.min_terms {
            break;
        }
        let next = prune_step(&system, cur, config.stabiliser())?;
        let ratio = residual_ratio(cur.fit.residual, next.fit.residual);
        ratios.push(ratio);
        states.push(next);
        if trigger.is_none() && ratio > config.tau {
            trigger = Some(states.len() - 2);
            if !config.record_full_trace {
                break;
            }
        }
    }

    let selected = trigger.unwrap_or_else(|| {
        // elbow: the model just before the largest jump
        let mut best = 0;
        for (k, &r) in ratios.iter().enumerate() {
            if r > ratios[best] {
                best = k;
            }
        }
        if ratios.is_empty() {
            0
        } else {
            best
        }
    });
    if trigger.is_none() && !ratios.is_empty() {
        log::warn!(
            "residual ratio never exceeded tau = {}; falling back to the largest jump",
            config.tau
        );
    }

    let iterations: Vec<PruneIteration> = states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let removed = states.get(k + 1).map(|_| s.weakest());
            let ratio = if k == 0 {
                None
            } else {
                Some(ratios[k - 1]).filter(|r| r.is_finite())
            };
            PruneIteration {
                active: s.active.clone(),
                terms: s.active.iter().map(|&j| names[j].clone()).collect(),
                coefficients: s.fit.coefficients.clone(),
                importance: s.importance.clone(),
                residual: s.fit.residual,
                residual_ratio: ratio,
                removed,
                removed_term: removed.map(|j| names[j].clone()),
            }
        })
        .collect();
    let chosen = &states[selected];
    let model = DiscoveredModel::new(
        library.variables.clone(),
        library.target_field.clone(),
        chosen.active.iter().map(|&j| library.terms[j].clone()).collect(),
        chosen.fit.coefficients.clone(),
        chosen.fit.residual,
        "bg-sindy",
    )?;
    let trace = PruneTrace {
        library_terms: names,
        tau: config.tau,
        iterations,
        selected_iteration: selected,
        triggered: trigger.is_some(),
    };
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;

    use super::*;
    use crate::library::TermDescriptor;
    use crate::sampling::{SampleSet, SampleStrategy};

    fn toy(matrix: DMatrix<f64>, target: DVector<f64>) -> Library {
        let n = matrix.nrows();
        let terms = (0..matrix.ncols() as u32)
            .map(|p| TermDescriptor::poly_deriv_1d(p, 0))
            .collect();
        Library::from_parts(
            vec!["u".into()],
            terms,
            matrix,
            target,
            "u",
            SampleSet {
                indices: (0..n).collect(),
                seed: 0,
                strategy: SampleStrategy::All,
            },
        )
        .unwrap()
    }

    #[test]
    fn local_importance_formula() {
        let phi = DMatrix::from_row_slice(1, 3, &[3.0, -1.0, 0.5]);
        let (w, g) = importance(&phi, &[1.0, 1.0, 1.0], 1e-300).unwrap();
        let expect = [1.0, 1.0 / 3.0, 1.0 / 6.0];
        for j in 0..3 {
            assert!((w[(0, j)] - expect[j]).abs() < 1e-15);
            assert!((g[j] - expect[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_row_gives_zero_importance() {
        let phi = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 2.0]);
        let (w, _) = importance(&phi, &[1.0, 1.0], 1e-12).unwrap();
        assert_eq!(w[(0, 0)], 0.0);
        assert_eq!(w[(0, 1)], 0.0);
    }

    #[test]
    fn single_term_is_nearly_one() {
        let phi = DMatrix::from_element(5, 1, 2.0);
        let eps = 1e-9;
        let (_, g) = importance(&phi, &[1.5], eps).unwrap();
        assert!((g[0] - 3.0 / (3.0 + eps)).abs() < 1e-15);
    }

    #[test]
    fn streaming_matches_dense() {
        let phi = DMatrix::from_fn(9000, 4, |i, j| ((i * (j + 1)) as f64 * 0.001).sin());
        let xi = [1.0, -0.3, 2.0, 0.01];
        let (_, dense) = importance(&phi, &xi, 1e-12).unwrap();
        let stream = global_importance(&phi, &[0, 1, 2, 3], &xi, 1e-12).unwrap();
        for (a, b) in dense.iter().zip(&stream) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_remove_later_term() {
        assert_eq!(argmin_importance(&[0.5, 0.2, 0.2, 0.9]), Some(2));
        assert_eq!(argmin_importance(&[0.1]), Some(0));
        assert_eq!(argmin_importance(&[]), None);
    }

    #[test]
    fn zero_coefficient_column_removed_first() {
        let a = DVector::from_fn(20, |i, _| (i as f64 * 0.4).sin() + 1.0);
        let b = DVector::from_fn(20, |i, _| (i as f64 * 0.9).cos());
        let c = DVector::from_fn(20, |i, _| (i as f64 * 0.23).cos() * (i as f64 * 0.05));
        let mut phi = DMatrix::zeros(20, 3);
        phi.set_column(0, &a);
        phi.set_column(1, &b);
        phi.set_column(2, &c);
        // noise orthogonal to every column, so the fitted coefficient of b is zero
        let mut off_span = DVector::from_fn(20, |i, _| 0.01 * (i as f64 * 2.7).sin());
        let q = phi.clone().qr().q();
        off_span -= &q * q.tr_mul(&off_span);
        let lib = toy(phi, a.clone() * 2.0 + c.clone() * 0.5 + off_span);
        let (model, trace) = discover(&lib, &PrunerConfig::default()).unwrap();
        assert_eq!(trace.iterations[0].removed, Some(1));
        assert!(trace.triggered);
        assert_eq!(model.len(), 2);
        assert!(model.coefficient(&TermDescriptor::poly_deriv_1d(1, 0)).is_none());
        assert!((model.coefficients[0] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn exact_generating_library_is_kept_whole() {
        let phi = DMatrix::from_fn(50, 3, |i, j| ((i + 1) as f64 * 0.1).powi(j as i32 + 1));
        let u = &phi * DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let (model, trace) = discover(&toy(phi, u), &PrunerConfig::default()).unwrap();
        assert_eq!(model.len(), 3);
        assert_eq!(trace.selected_iteration, 0);
        assert!(trace.triggered);
    }

    #[test]
    fn residuals_non_decreasing_and_sizes_shrink() {
        let phi = DMatrix::from_fn(80, 7, |i, j| {
            ((i * j) as f64 * 0.37 + 0.3 * i as f64 + j as f64 + 1.0).sin()
        });
        let u = DVector::from_fn(80, |i, _| (i as f64 * 0.21).cos());
        let config = PrunerConfig {
            record_full_trace: true,
            ..Default::default()
        };
        let (_, trace) = discover(&toy(phi, u), &config).unwrap();
        assert_eq!(trace.iterations.len(), 7);
        for w in trace.iterations.windows(2) {
            assert_eq!(w[1].active.len() + 1, w[0].active.len());
            assert!(w[1].residual >= w[0].residual * (1.0 - 1e-12));
        }
        assert!(trace.iterations.last().unwrap().removed.is_none());
    }

    #[test]
    fn rejects_bad_config() {
        let lib = toy(DMatrix::identity(3, 3), DVector::zeros(3));
        for config in [
            PrunerConfig {
                tau: 1.0,
                ..Default::default()
            },
            PrunerConfig {
                epsilon: Some(0.0),
                ..Default::default()
            },
            PrunerConfig {
                min_terms: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(discover(&lib, &config), Err(Error::Config(_))));
        }
    }

    #[test]
    fn trace_exports() {
        let phi = DMatrix::from_fn(30, 3, |i, j| ((i + j) as f64 * 0.3).sin());
        let u = DVector::from_fn(30, |i, _| i as f64 * 0.01);
        let (_, trace) = discover(&toy(phi, u), &PrunerConfig::default()).unwrap();
        let json = trace.to_json().unwrap();
        let back: PruneTrace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, trace);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,n_active,residual"));
    }
}
