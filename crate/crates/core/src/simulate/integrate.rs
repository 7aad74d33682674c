//! Forward integration of identified models on a reference dataset's grid.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde_json::{json, Value};

use super::etdrk4::Etdrk4;
use super::fourier::Spectral2d;
use super::rk::rk4_step;
use super::{abort_with_partial, blowup, snapshots_to_dataset, Integrator};
use crate::dataset::{BoundaryKind, Dataset, UniformAxis};
use crate::diff::for_each_line;
use crate::diff::spectral::{derivative_symbol, SpectralLine};
use crate::diff::stencil::{Closure, LineStencil};
use crate::error::{Error, Result};
use crate::model::DiscoveredModel;

/// Safety margin inside the RK4 stability region.
const RK4_STABLE_RADIUS: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrateOptions {
    /// Upper bound on the solver step. Defaults to the `solver.dt` recorded
    /// in the reference metadata, else the output spacing.
    pub max_dt: Option<f64>,
    /// Finite-difference accuracy on non-periodic grids.
    pub fd_accuracy: usize,
    /// Force a scheme; by default ETDRK4 on periodic grids, RK4 otherwise.
    pub integrator: Option<Integrator>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            max_dt: None,
            fd_accuracy: 4,
            integrator: None,
        }
    }
}

/// A model term with variables resolved to dataset field indices.
#[derive(Debug, Clone)]
struct Term {
    coefficient: f64,
    powers: Vec<(usize, u32)>,
    derivative: Option<(usize, Vec<usize>)>,
}

impl Term {
    fn is_pure_derivative_of(&self, field: usize) -> bool {
        self.powers.is_empty() && self.derivative.as_ref().is_some_and(|d| d.0 == field)
    }

    fn is_linear_in(&self, field: usize) -> bool {
        self.derivative.is_none() && self.powers == [(field, 1)]
    }

    fn product(&self, fields: &[Vec<f64>], i: usize) -> f64 {
        self.powers
            .iter()
            .fold(self.coefficient, |acc, &(f, p)| acc * fields[f][i].powi(p as i32))
    }
}

/// Resolve one model per dataset field, in dataset field order.
fn compile(models: &[DiscoveredModel], reference: &Dataset) -> Result<Vec<Vec<Term>>> {
    let names = reference.field_names();
    let dims = reference.space_dims();
    if models.len() != names.len() {
        return Err(Error::invalid(format!(
            "{} models given for {} dataset fields",
            models.len(),
            names.len()
        )));
    }
    names
        .iter()
        .map(|name| {
            let mut matching = models.iter().filter(|m| &m.target_field == name);
            let model = matching
                .next()
                .ok_or_else(|| Error::UnknownField(format!("no model targets `{name}`")))?;
            if matching.next().is_some() {
                return Err(Error::invalid(format!("several models target `{name}`")));
            }
            let var_index = model
                .variables
                .iter()
                .map(|v| reference.field_index(v))
                .collect::<Result<Vec<_>>>()?;
            model
                .terms
                .iter()
                .zip(&model.coefficients)
                .map(|(t, &c)| {
                    let derivative = match &t.derivative {
                        None => None,
                        Some(d) => {
                            if d.orders.len() != dims {
                                return Err(Error::UnsupportedDerivative(format!(
                                    "term has {} derivative axes on a {dims}-d grid",
                                    d.orders.len()
                                )));
                            }
                            Some((var_index[d.field], d.orders.iter().map(|&q| q as usize).collect()))
                        }
                    };
                    Ok(Term {
                        coefficient: c,
                        powers: t
                            .powers
                            .iter()
                            .enumerate()
                            .filter(|(_, &p)| p > 0)
                            .map(|(v, &p)| (var_index[v], p))
                            .collect(),
                        derivative,
                    })
                })
                .collect()
        })
        .collect()
}

fn reference_dt(reference: &Dataset) -> Option<f64> {
    reference
        .metadata()
        .get("solver")
        .and_then(|s| s.get("dt"))
        .and_then(Value::as_f64)
        .filter(|dt| *dt > 0.0)
}

/// Step count per output interval so that each step is at most `max_dt`.
fn substeps(interval: f64, max_dt: f64) -> usize {
    ((interval / max_dt) * (1.0 - 1e-9)).ceil().max(1.0) as usize
}

/// Integrate `models` from the first slice of `reference` and sample on its
/// time axis. Fields are matched to models by `target_field`.
pub fn integrate_model(models: &[DiscoveredModel], reference: &Dataset, options: &IntegrateOptions) -> Result<Dataset> {
    let terms = compile(models, reference)?;
    let periodic = reference.fields().iter().all(|f| f.boundary.is_periodic());
    let integrator = options
        .integrator
        .unwrap_or(if periodic { Integrator::Etdrk4 } else { Integrator::Rk4 });
    let nf = terms.len();
    let ic: Vec<Vec<f64>> = (0..nf).map(|f| reference.time_slice(f, 0)).collect();
    let time = *reference.time_axis();
    let max_dt = options
        .max_dt
        .or_else(|| reference_dt(reference))
        .unwrap_or(time.spacing);
    let mut meta = BTreeMap::new();
    meta.insert(
        "integrated_models".into(),
        json!(models.iter().map(|m| m.equation()).collect::<Vec<_>>()),
    );
    let names = reference.field_names();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let boundary = reference.fields()[0].boundary;
    let space = reference.space_axes().to_vec();
    let run = Run {
        space: &space,
        time,
        names: &names,
        boundary,
    };
    match integrator {
        Integrator::Etdrk4 => {
            if !periodic {
                return Err(Error::NonPeriodicAxis("ETDRK4 model integration".into()));
            }
            integrate_etdrk4(&terms, ic, &run, max_dt, meta)
        }
        Integrator::Rk4 => integrate_rk4(&terms, ic, &run, max_dt, options.fd_accuracy, periodic, meta),
        Integrator::Rk45 => Err(Error::Config(
            "adaptive stepping is not offered for model integration".into(),
        )),
    }
}

struct Run<'a> {
    space: &'a [UniformAxis],
    time: UniformAxis,
    names: &'a [&'a str],
    boundary: BoundaryKind,
}

impl Run<'_> {
    fn dataset(&self, snaps: Vec<Vec<Vec<f64>>>, meta: BTreeMap<String, Value>) -> Result<Dataset> {
        snapshots_to_dataset(self.space.to_vec(), self.time, self.names, self.boundary, snaps, meta)
    }

    /// Drive `advance` over the output times, checking for blow-up at each.
    fn sample(
        &self,
        ic: Vec<Vec<f64>>,
        meta: BTreeMap<String, Value>,
        mut advance: impl FnMut() -> Result<Vec<Vec<f64>>>,
    ) -> Result<Dataset> {
        let mut snaps: Vec<Vec<Vec<f64>>> = ic.into_iter().map(|u| vec![u]).collect();
        for out in 1..self.time.count {
            let t = self.time.coord(out);
            let state = match advance() {
                Ok(s) => s,
                Err(Error::Instability { message, .. }) => {
                    return Err(abort_with_partial(message, || {
                        self.dataset(snaps.clone(), meta.clone())
                    }))
                }
                Err(e) => return Err(e),
            };
            if let Some(msg) = state.iter().find_map(|u| blowup(u, t)) {
                return Err(abort_with_partial(msg, || self.dataset(snaps.clone(), meta.clone())));
            }
            for (s, u) in snaps.iter_mut().zip(state) {
                s.push(u);
            }
        }
        self.dataset(snaps, meta)
    }
}

/// Cached finite-difference stencils for every (axis, order) in use.
struct FdOperator {
    counts: Vec<usize>,
    stencils: BTreeMap<(usize, usize), LineStencil>,
}

impl FdOperator {
    fn new(space: &[UniformAxis], terms: &[Vec<Term>], accuracy: usize, closure: Closure) -> Result<Self> {
        let mut stencils = BTreeMap::new();
        for t in terms.iter().flatten() {
            if let Some((_, orders)) = &t.derivative {
                for (axis, &q) in orders.iter().enumerate() {
                    if q > 0 && !stencils.contains_key(&(axis, q)) {
                        let a = space[axis];
                        stencils.insert((axis, q), LineStencil::new(a.count, a.spacing, q, accuracy, closure)?);
                    }
                }
            }
        }
        Ok(Self {
            counts: space.iter().map(|a| a.count).collect(),
            stencils,
        })
    }

    fn apply(&self, snapshot: &[f64], orders: &[usize]) -> Vec<f64> {
        let mut cur = snapshot.to_vec();
        for (axis, &q) in orders.iter().enumerate() {
            if q == 0 {
                continue;
            }
            let s = &self.stencils[&(axis, q)];
            let mut out = vec![0.0; cur.len()];
            for_each_line(&self.counts, axis, |start, stride| {
                s.apply_strided(&cur, start, stride, &mut out)
            });
            cur = out;
        }
        cur
    }

    /// Product of per-axis absolute weight sums, a bound on the spectral radius.
    fn radius(&self, orders: &[usize]) -> f64 {
        orders
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > 0)
            .map(|(axis, &q)| self.stencils[&(axis, q)].abs_weight_sum())
            .product()
    }
}

fn boundary_nodes(counts: &[usize]) -> Vec<usize> {
    let total: usize = counts.iter().product();
    (0..total)
        .filter(|&flat| {
            let mut rem = flat;
            let mut on_edge = false;
            for d in (0..counts.len()).rev() {
                let i = rem % counts[d];
                rem /= counts[d];
                on_edge |= i == 0 || i + 1 == counts[d];
            }
            on_edge
        })
        .collect()
}

fn integrate_rk4(
    terms: &[Vec<Term>],
    ic: Vec<Vec<f64>>,
    run: &Run<'_>,
    max_dt: f64,
    accuracy: usize,
    periodic: bool,
    mut meta: BTreeMap<String, Value>,
) -> Result<Dataset> {
    let closure = if periodic {
        Closure::Periodic
    } else {
        Closure::OddEvenReflection
    };
    let op = FdOperator::new(run.space, terms, accuracy, closure)?;
    let npts = ic[0].len();
    let frozen = if periodic {
        Vec::new()
    } else {
        boundary_nodes(&op.counts)
    };

    let amp: Vec<f64> = ic
        .iter()
        .map(|u| u.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    let stiffness = terms
        .iter()
        .flatten()
        .map(|t| {
            let prod: f64 = t.powers.iter().map(|&(f, p)| amp[f].powi(p as i32)).product();
            match &t.derivative {
                Some((_, orders)) => t.coefficient.abs() * prod * op.radius(orders),
                None => {
                    let degree: u32 = t.powers.iter().map(|p| p.1).sum();
                    let lower: f64 = t.powers.iter().map(|&(f, p)| amp[f].powi(p as i32 - 1)).product();
                    t.coefficient.abs() * degree as f64 * lower.max(if degree == 1 { 1.0 } else { 0.0 })
                }
            }
        })
        .sum::<f64>();
    let stable_dt = if stiffness > 0.0 {
        RK4_STABLE_RADIUS / stiffness
    } else {
        f64::INFINITY
    };
    let n_sub = substeps(run.time.spacing, max_dt.min(stable_dt));
    let h = run.time.spacing / n_sub as f64;
    meta.insert(
        "solver".into(),
        json!({
            "scheme": "rk4 + finite differences",
            "closure": if periodic { "periodic" } else { "odd/even reflection" },
            "dt": h,
            "stability_number": stiffness * h,
        }),
    );

    let rhs = |y: &[f64]| -> Result<Vec<f64>> {
        let fields: Vec<Vec<f64>> = y.chunks(npts).map(<[f64]>::to_vec).collect();
        let mut cache: BTreeMap<(usize, &[usize]), Vec<f64>> = BTreeMap::new();
        let mut out = vec![0.0; y.len()];
        for (f, model) in terms.iter().enumerate() {
            let du = &mut out[f * npts..(f + 1) * npts];
            for t in model {
                match &t.derivative {
                    Some((g, orders)) => {
                        let d = cache
                            .entry((*g, orders.as_slice()))
                            .or_insert_with(|| op.apply(&fields[*g], orders));
                        for (i, v) in du.iter_mut().enumerate() {
                            *v += t.product(&fields, i) * d[i];
                        }
                    }
                    None => {
                        for (i, v) in du.iter_mut().enumerate() {
                            *v += t.product(&fields, i);
                        }
                    }
                }
            }
            for &i in &frozen {
                du[i] = 0.0;
            }
        }
        Ok(out)
    };

    let mut y: Vec<f64> = ic.concat();
    run.sample(ic, meta, || {
        for _ in 0..n_sub {
            rk4_step(&mut y, h, rhs)?;
        }
        Ok(y.chunks(npts).map(<[f64]>::to_vec).collect())
    })
}

/// Fourier transforms on a 1-d or 2-d periodic grid.
enum Fourier {
    Line(SpectralLine),
    Plane(Spectral2d),
}

impl Fourier {
    fn new(space: &[UniformAxis]) -> Result<Self> {
        match space {
            [a] => Ok(Fourier::Line(SpectralLine::new(a.count, a.period()))),
            [a, b] => Ok(Fourier::Plane(Spectral2d::new(
                a.count,
                a.period(),
                b.count,
                b.period(),
            ))),
            _ => Err(Error::invalid("model integration supports 1-d and 2-d grids")),
        }
    }

    fn forward(&self, u: &[f64]) -> Vec<Complex64> {
        match self {
            Fourier::Line(l) => l.forward(u),
            Fourier::Plane(p) => p.forward(u),
        }
    }

    fn inverse_real(&self, s: Vec<Complex64>) -> Vec<f64> {
        match self {
            Fourier::Line(l) => l.inverse_real(s),
            Fourier::Plane(p) => p.inverse_real(s),
        }
    }

    fn dealias(&self, s: &mut [Complex64]) {
        match self {
            Fourier::Line(l) => l.dealias(s),
            Fourier::Plane(p) => p.dealias(s),
        }
    }

    /// Symbol of `prod_d (d/dx_d)^{orders[d]}` for every mode.
    fn symbol(&self, orders: &[usize]) -> Vec<Complex64> {
        match self {
            Fourier::Line(l) => {
                let n = l.len();
                l.wavenumbers()
                    .iter()
                    .enumerate()
                    .map(|(j, &k)| derivative_symbol(k, orders[0], n % 2 == 0 && j == n / 2))
                    .collect()
            }
            Fourier::Plane(p) => {
                let (nqx, nqy) = p.nyquist();
                let mut out = Vec::with_capacity(p.len());
                for (ix, &kx) in p.kx().iter().enumerate() {
                    let sx = derivative_symbol(kx, orders[0], nqx == Some(ix));
                    for (iy, &ky) in p.ky().iter().enumerate() {
                        out.push(sx * derivative_symbol(ky, orders[1], nqy == Some(iy)));
                    }
                }
                out
            }
        }
    }
}

fn integrate_etdrk4(
    terms: &[Vec<Term>],
    ic: Vec<Vec<f64>>,
    run: &Run<'_>,
    max_dt: f64,
    mut meta: BTreeMap<String, Value>,
) -> Result<Dataset> {
    let fourier = Fourier::new(run.space)?;
    let npts = ic[0].len();
    let nf = terms.len();

    // stiff part: the field's own pure derivatives and linear term
    let mut linear = vec![Complex64::new(0.0, 0.0); nf * npts];
    let mut rest: Vec<Vec<&Term>> = vec![Vec::new(); nf];
    let mut symbols: BTreeMap<Vec<usize>, Vec<Complex64>> = BTreeMap::new();
    for (f, model) in terms.iter().enumerate() {
        let block = &mut linear[f * npts..(f + 1) * npts];
        for t in model {
            if t.is_pure_derivative_of(f) {
                let orders = &t.derivative.as_ref().map(|d| d.1.clone()).unwrap_or_default();
                let s = symbols.entry(orders.clone()).or_insert_with(|| fourier.symbol(orders));
                for (l, s) in block.iter_mut().zip(s.iter()) {
                    *l += t.coefficient * s;
                }
            } else if t.is_linear_in(f) {
                for l in block.iter_mut() {
                    *l += t.coefficient;
                }
            } else {
                if let Some((_, orders)) = &t.derivative {
                    symbols.entry(orders.clone()).or_insert_with(|| fourier.symbol(orders));
                }
                rest[f].push(t);
            }
        }
    }

    let n_sub = substeps(run.time.spacing, max_dt);
    let h = run.time.spacing / n_sub as f64;
    let stepper = Etdrk4::new(&linear, h);
    meta.insert(
        "solver".into(),
        json!({
            "scheme": "etdrk4 + fourier pseudo-spectral",
            "dt": h,
            "dealias": "2/3 on derivative products",
        }),
    );

    let nonlinear = |v: &[Complex64]| -> Result<Vec<Complex64>> {
        let fields: Vec<Vec<f64>> = v.chunks(npts).map(|b| fourier.inverse_real(b.to_vec())).collect();
        let mut cache: BTreeMap<(usize, &[usize]), Vec<f64>> = BTreeMap::new();
        let mut out = Vec::with_capacity(v.len());
        for model in &rest {
            let mut products = vec![0.0; npts];
            let mut plain = vec![0.0; npts];
            let mut any_products = false;
            for t in model {
                match &t.derivative {
                    Some((g, orders)) => {
                        let d = cache.entry((*g, orders.as_slice())).or_insert_with(|| {
                            let s = &symbols[orders];
                            let spec: Vec<Complex64> =
                                v[g * npts..(g + 1) * npts].iter().zip(s).map(|(a, b)| a * b).collect();
                            fourier.inverse_real(spec)
                        });
                        let target = if t.powers.is_empty() {
                            &mut plain
                        } else {
                            any_products = true;
                            &mut products
                        };
                        for (i, x) in target.iter_mut().enumerate() {
                            *x += t.product(&fields, i) * d[i];
                        }
                    }
                    None => {
                        for (i, x) in plain.iter_mut().enumerate() {
                            *x += t.product(&fields, i);
                        }
                    }
                }
            }
            let mut spec = fourier.forward(&plain);
            if any_products {
                let mut p = fourier.forward(&products);
                fourier.dealias(&mut p);
                for (a, b) in spec.iter_mut().zip(p) {
                    *a += b;
                }
            }
            out.extend(spec);
        }
        Ok(out)
    };

    let mut v: Vec<Complex64> = ic.iter().flat_map(|u| fourier.forward(u)).collect();
    run.sample(ic, meta, || {
        for _ in 0..n_sub {
            stepper.step(&mut v, nonlinear)?;
        }
        Ok(v.chunks(npts).map(|b| fourier.inverse_real(b.to_vec())).collect())
    })
}
