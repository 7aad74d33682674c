//! Candidate terms and the evaluated regression system `U_t = Phi xi`.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{axis_name, Dataset};
use crate::diff::{Closure, DiffMethod, LineStencil, SpatialOperator, DEFAULT_FD_ACCURACY, DEFAULT_TIME_ACCURACY};
use crate::error::{Error, Result};
use crate::linalg::{equilibration, pivoted_qr, scale_columns, singular_values, triangularize};
use crate::sampling::SampleSet;

/// Default relative tolerance of the independence reduction.
pub const DEFAULT_INDEPENDENCE_TOL: f64 = 1e-10;

/// `∂^{orders[0]}_x ∂^{orders[1]}_y` applied to one variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DerivativeFactor {
    pub field: usize,
    pub orders: Vec<u32>,
}

impl DerivativeFactor {
    pub fn total_order(&self) -> u32 {
        self.orders.iter().sum()
    }
}

/// A monomial in the library variables, optionally times one derivative.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermDescriptor {
    /// Exponent of each library variable.
    pub powers: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivative: Option<DerivativeFactor>,
}

impl TermDescriptor {
    pub fn monomial(powers: Vec<u32>) -> Self {
        Self {
            powers,
            derivative: None,
        }
    }

    pub fn with_derivative(powers: Vec<u32>, field: usize, orders: Vec<u32>) -> Self {
        Self {
            powers,
            derivative: Some(DerivativeFactor { field, orders }),
        }
    }

    /// `u^p ∂^q_x u` for a single-variable 1D library.
    pub fn poly_deriv_1d(p: u32, q: u32) -> Self {
        if q == 0 {
            Self::monomial(vec![p])
        } else {
            Self::with_derivative(vec![p], 0, vec![q])
        }
    }

    pub fn degree(&self) -> u32 {
        self.powers.iter().sum()
    }

    fn derivative_key(&self) -> Option<(usize, u32, Vec<std::cmp::Reverse<u32>>)> {
        self.derivative.as_ref().map(|d| {
            (
                d.field,
                d.total_order(),
                d.orders.iter().map(|&o| std::cmp::Reverse(o)).collect(),
            )
        })
    }
}

impl Ord for TermDescriptor {
    /// Plain monomials first, then derivative terms grouped by variable and
    /// derivative order (x before y); within a group by degree, earlier
    /// variables first (`u^2 < u v < v^2`).
    fn cmp(&self, other: &Self) -> Ordering {
        self.derivative_key()
            .cmp(&other.derivative_key())
            .then(self.degree().cmp(&other.degree()))
            .then_with(|| other.powers.cmp(&self.powers))
    }
}

impl PartialOrd for TermDescriptor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Canonical display form, e.g. `u u_x`, `u^2 u_{xxx}`, `v_yy`, `1`.
pub fn render_term(term: &TermDescriptor, variables: &[String]) -> String {
    let mut parts: Vec<String> = Vec::new();
    for (name, &p) in variables.iter().zip(&term.powers) {
        match p {
            0 => {}
            1 => parts.push(name.clone()),
            _ => parts.push(format!("{name}^{p}")),
        }
    }
    if let Some(d) = &term.derivative {
        let sub: String = d
            .orders
            .iter()
            .enumerate()
            .map(|(axis, &o)| axis_name(axis).repeat(o as usize))
            .collect();
        let name = &variables[d.field];
        if sub.len() > 2 {
            parts.push(format!("{name}_{{{sub}}}"));
        } else {
            parts.push(format!("{name}_{sub}"));
        }
    }
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LibraryKind {
    /// `{u^p} ∪ {u^p ∂^q_x u}` with `p <= max_power`, `1 <= q <= max_order`.
    Polynomial1d { max_power: u32, max_order: u32 },
    /// All monomials of total degree `<= max_degree` in every field, plus every
    /// pure spatial derivative of each field with total order in `1..=max_order`.
    Polynomial2d { max_degree: u32, max_order: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibrarySpec {
    #[serde(flatten)]
    pub kind: LibraryKind,
    /// Derivative method; spectral for periodic fields when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<DiffMethod>,
    #[serde(default = "default_fd_accuracy")]
    pub fd_accuracy: usize,
    #[serde(default = "default_time_accuracy")]
    pub time_accuracy: usize,
}

fn default_fd_accuracy() -> usize {
    DEFAULT_FD_ACCURACY
}

fn default_time_accuracy() -> usize {
    DEFAULT_TIME_ACCURACY
}

impl LibrarySpec {
    pub fn polynomial_1d(max_power: u32, max_order: u32) -> Self {
        Self::new(LibraryKind::Polynomial1d { max_power, max_order })
    }

    /// Cubic monomials plus first and second derivatives of every field.
    pub fn reaction_diffusion_2d() -> Self {
        Self::new(LibraryKind::Polynomial2d {
            max_degree: 3,
            max_order: 2,
        })
    }

    fn new(kind: LibraryKind) -> Self {
        Self {
            kind,
            method: None,
            fd_accuracy: DEFAULT_FD_ACCURACY,
            time_accuracy: DEFAULT_TIME_ACCURACY,
        }
    }

    pub fn with_time_accuracy(mut self, accuracy: usize) -> Self {
        self.time_accuracy = accuracy;
        self
    }

    pub fn with_method(mut self, method: DiffMethod) -> Self {
        self.method = Some(method);
        self
    }

    pub fn max_order(&self) -> u32 {
        match self.kind {
            LibraryKind::Polynomial1d { max_order, .. } | LibraryKind::Polynomial2d { max_order, .. } => max_order,
        }
    }

    /// Nodes next to a non-periodic end whose finite-difference derivatives
    /// fall back to one-sided stencils.
    pub fn boundary_margin(&self) -> usize {
        match self.max_order() {
            0 => 0,
            q => (crate::diff::stencil::central_width(q as usize, self.fd_accuracy) - 1) / 2,
        }
    }

    /// Variables and sorted term descriptors for this spec.
    pub fn terms(&self, dataset: &Dataset, target_field: &str) -> Result<(Vec<String>, Vec<TermDescriptor>)> {
        let mut terms = Vec::new();
        let variables = match &self.kind {
            LibraryKind::Polynomial1d { max_power, max_order } => {
                dataset.field_index(target_field)?;
                for q in 0..=*max_order {
                    for p in 0..=*max_power {
                        terms.push(TermDescriptor::poly_deriv_1d(p, q));
                    }
                }
                vec![target_field.to_string()]
            }
            LibraryKind::Polynomial2d { max_degree, max_order } => {
                let variables = dataset.field_names();
                let nvar = variables.len();
                let dims = dataset.space_dims();
                for powers in monomials(nvar, *max_degree) {
                    terms.push(TermDescriptor::monomial(powers));
                }
                for field in 0..nvar {
                    for q in 1..=*max_order {
                        for orders in derivative_orders(dims, q) {
                            terms.push(TermDescriptor::with_derivative(vec![0; nvar], field, orders));
                        }
                    }
                }
                variables
            }
        };
        terms.sort();
        Ok((variables, terms))
    }
}

fn monomials(nvar: usize, max_degree: u32) -> Vec<Vec<u32>> {
    fn rec(prefix: &mut Vec<u32>, nvar: usize, left: u32, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == nvar {
            out.push(prefix.clone());
            return;
        }
        for p in 0..=left {
            prefix.push(p);
            rec(prefix, nvar, left - p, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), nvar, max_degree, &mut out);
    out
}

fn derivative_orders(dims: usize, total: u32) -> Vec<Vec<u32>> {
    match dims {
        1 => vec![vec![total]],
        _ => (0..=total).rev().map(|ox| vec![ox, total - ox]).collect(),
    }
}

/// Evaluated candidate library on a sample set.
#[derive(Debug, Clone)]
pub struct Library {
    pub variables: Vec<String>,
    pub terms: Vec<TermDescriptor>,
    /// `N x M`, column `j` is term `j` at every sample.
    pub matrix: DMatrix<f64>,
    pub target: DVector<f64>,
    pub target_field: String,
    pub samples: SampleSet,
    /// Terms removed by [`reduce_independent`].
    pub dropped: Vec<TermDescriptor>,
}

impl Library {
    /// Assemble a library from precomputed columns, sorting terms canonically.
    pub fn from_parts(
        variables: Vec<String>,
        terms: Vec<TermDescriptor>,
        matrix: DMatrix<f64>,
        target: DVector<f64>,
        target_field: impl Into<String>,
        samples: SampleSet,
    ) -> Result<Self> {
        if terms.len() != matrix.ncols() {
            return Err(Error::invalid(format!(
                "{} terms for {} columns",
                terms.len(),
                matrix.ncols()
            )));
        }
        if target.len() != matrix.nrows() {
            return Err(Error::invalid("target length differs from row count"));
        }
        if matrix.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("library".into()));
        }
        let mut order: Vec<usize> = (0..terms.len()).collect();
        order.sort_by(|&a, &b| terms[a].cmp(&terms[b]));
        if order.windows(2).any(|w| terms[w[0]] == terms[w[1]]) {
            return Err(Error::invalid("duplicate term descriptors"));
        }
        Ok(Self {
            variables,
            terms: order.iter().map(|&j| terms[j].clone()).collect(),
            matrix: matrix.select_columns(&order),
            target,
            target_field: target_field.into(),
            samples,
            dropped: Vec::new(),
        })
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn n_samples(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| render_term(t, &self.variables)).collect()
    }

    pub fn term_index(&self, term: &TermDescriptor) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    /// Singular values of the column-normalised library, largest first.
    pub fn singular_values(&self) -> Vec<f64> {
        if self.matrix.ncols() == 0 || self.matrix.nrows() < self.matrix.ncols() {
            return singular_values(&self.matrix);
        }
        let scale = equilibration(&self.matrix);
        let tri = triangularize(scale_columns(&self.matrix, &scale), None);
        singular_values(&tri.r)
    }

    pub fn condition_number(&self) -> f64 {
        let s = self.singular_values();
        match (s.first(), s.last()) {
            (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
            _ => f64::INFINITY,
        }
    }

    /// Keep only the given columns (in the given order, which must be canonical).
    pub fn select(&self, columns: &[usize]) -> Self {
        Self {
            variables: self.variables.clone(),
            terms: columns.iter().map(|&j| self.terms[j].clone()).collect(),
            matrix: self.matrix.select_columns(columns),
            target: self.target.clone(),
            target_field: self.target_field.clone(),
            samples: self.samples.clone(),
            dropped: self.dropped.clone(),
        }
    }

    /// CSV with canonical term names as header and one row per sample.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.term_names();
        header.push(format!("{}_t", self.target_field));
        w.write_record(&header)?;
        for i in 0..self.n_samples() {
            let row: Vec<String> = self
                .matrix
                .row(i)
                .iter()
                .chain(std::iter::once(&self.target[i]))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Evaluate the library described by `spec` at the sampled points.
pub fn build_library(
    dataset: &Dataset,
    samples: &SampleSet,
    spec: &LibrarySpec,
    target_field: &str,
) -> Result<Library> {
    if samples.is_empty() {
        return Err(Error::invalid("empty sample set"));
    }
    if let Some(&bad) = samples.indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::invalid(format!("sample index {bad} out of range")));
    }
    let target_idx = dataset.field_index(target_field)?;
    let (variables, terms) = spec.terms(dataset, target_field)?;
    let var_idx: Vec<usize> = variables
        .iter()
        .map(|v| dataset.field_index(v))
        .collect::<Result<_>>()?;

    // one spatial operator per variable
    let max_order = terms
        .iter()
        .filter_map(|t| t.derivative.as_ref().map(|d| d.total_order()))
        .max()
        .unwrap_or(0) as usize;
    let operators: Vec<SpatialOperator> = var_idx
        .iter()
        .map(|&f| {
            let boundary = dataset.fields()[f].boundary;
            let method = spec.method.unwrap_or(if boundary.is_periodic() {
                DiffMethod::Spectral
            } else {
                DiffMethod::FiniteDifference
            });
            let op = SpatialOperator::new(dataset, boundary, method, spec.fd_accuracy)?;
            op.check_orders(max_order)?;
            Ok(op)
        })
        .collect::<Result<_>>()?;

    // distinct derivative factors needed
    let factors: Vec<DerivativeFactor> = terms
        .iter()
        .filter_map(|t| t.derivative.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let factor_of: Vec<Option<usize>> = terms
        .iter()
        .map(|t| {
            t.derivative
                .as_ref()
                .map(|d| factors.iter().position(|f| f == d).unwrap())
        })
        .collect();

    let nt = dataset.nt();
    let mut by_slice: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nt];
    for (row, &flat) in samples.indices.iter().enumerate() {
        let (s, t) = dataset.split_index(flat);
        by_slice[t].push((row, s));
    }

    let m = terms.len();
    let slices: Vec<usize> = (0..nt).filter(|&t| !by_slice[t].is_empty()).collect();
    let rows: Vec<Vec<(usize, Vec<f64>)>> = slices
        .par_iter()
        .map(|&t| -> Result<Vec<(usize, Vec<f64>)>> {
            let snaps: Vec<Vec<f64>> = var_idx.iter().map(|&f| dataset.time_slice(f, t)).collect();
            let derivs: Vec<Vec<f64>> = factors
                .iter()
                .map(|d| {
                    let orders: Vec<usize> = d.orders.iter().map(|&o| o as usize).collect();
                    operators[d.field].mixed(&snaps[d.field], &orders)
                })
                .collect::<Result<_>>()?;
            Ok(by_slice[t]
                .iter()
                .map(|&(row, s)| {
                    let vals: Vec<f64> = terms
                        .iter()
                        .zip(&factor_of)
                        .map(|(term, fac)| {
                            let mono: f64 = term
                                .powers
                                .iter()
                                .zip(&snaps)
                                .map(|(&p, snap)| snap[s].powi(p as i32))
                                .product();
                            match fac {
                                Some(k) => mono * derivs[*k][s],
                                None => mono,
                            }
                        })
                        .collect();
                    (row, vals)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let n = samples.len();
    let mut matrix = DMatrix::zeros(n, m);
    for (row, vals) in rows.into_iter().flatten() {
        for (j, v) in vals.into_iter().enumerate() {
            matrix[(row, j)] = v;
        }
    }

    let time = LineStencil::new(
        nt,
        dataset.time_axis().spacing,
        1,
        spec.time_accuracy,
        Closure::OneSided,
    )?;
    let u = &dataset.fields()[target_idx].values;
    let target = DVector::from_iterator(
        n,
        samples.indices.iter().map(|&flat| {
            let (s, t) = dataset.split_index(flat);
            time.weights_at(t)
                .into_iter()
                .map(|(j, w)| w * u[dataset.flat_index(s, j)])
                .sum::<f64>()
        }),
    );

    let lib = Library::from_parts(variables, terms, matrix, target, target_field, samples.clone())?;
    Ok(lib)
}

/// Result of [`reduce_independent`]: the reduced library and its diagnostics.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub library: Library,
    pub rank: usize,
    pub svd_rank: usize,
    pub singular_values: Vec<f64>,
}

/// Drop columns that are numerically dependent on the rest.
///
/// Columns are normalised to unit norm, factorised by column-pivoted QR, and
/// any column whose `|R_ii|` falls below `tol * |R_11|` is dropped. The kept
/// columns keep their canonical order.
pub fn reduce_independent(library: &Library, tol: f64) -> Result<Reduction> {
    if library.n_terms() == 0 {
        return Err(Error::DegenerateLibrary("library has no terms".into()));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::invalid(format!("independence tolerance {tol} outside (0, 1)")));
    }
    let norms: Vec<f64> = library.matrix.column_iter().map(|c| c.norm()).collect();
    let nonzero: Vec<usize> = (0..norms.len()).filter(|&j| norms[j] > 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::DegenerateLibrary("every library column is zero".into()));
    }
    let sub = library.matrix.select_columns(&nonzero);
    let scale = equilibration(&sub);
    let normalised = scale_columns(&sub, &scale);
    let small = if normalised.nrows() > normalised.ncols() {
        triangularize(normalised, None).r
    } else {
        normalised
    };
    let qr = pivoted_qr(small.clone());
    let top = qr.diag.first().copied().unwrap_or(0.0);
    let mut keep: Vec<usize> = qr
        .perm
        .iter()
        .zip(&qr.diag)
        .filter(|(_, &d)| d >= tol * top && d > 0.0)
        .map(|(&p, _)| nonzero[p])
        .collect();
    if keep.is_empty() {
        return Err(Error::DegenerateLibrary(format!("no column above tolerance {tol}")));
    }
    keep.sort_unstable();
    let sv = singular_values(&small);
    let smax = sv.first().copied().unwrap_or(0.0);
    let svd_rank = sv.iter().filter(|&&s| s > tol * smax).count();
    if svd_rank != keep.len() {
        log::warn!(
            "pivoted QR keeps {} columns but SVD rank at tol {tol:e} is {svd_rank}",
            keep.len()
        );
    }

    let mut reduced = library.select(&keep);
    let dropped: Vec<TermDescriptor> = (0..library.n_terms())
        .filter(|j| !keep.contains(j))
        .map(|j| library.terms[j].clone())
        .collect();
    for t in &dropped {
        log::info!(
            "dropping dependent library term `{}`",
            render_term(t, &library.variables)
        );
    }
    reduced.dropped.extend(dropped);
    Ok(Reduction {
        rank: keep.len(),
        library: reduced,
        svd_rank,
        singular_values: sv,
    })
}
