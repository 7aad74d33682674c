//! Numerical derivatives of gridded fields: finite differences, Fourier
//! differentiation, low-order time differences and local polynomial smoothing.

mod smooth;
pub mod spectral;
pub mod stencil;

use serde::{Deserialize, Serialize};

use crate::dataset::{axis_name, BoundaryKind, Dataset};
use crate::error::{Error, Result};
pub use smooth::{savitzky_golay_weights, smooth_field, smooth_field_axes, LowPass, SmoothingSpec};
pub use spectral::SpectralLine;
pub use stencil::{fornberg_weights, Closure, LineStencil, MAX_ORDER};

pub const DEFAULT_FD_ACCURACY: usize = 4;
pub const DEFAULT_TIME_ACCURACY: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivAxis {
    X,
    Y,
    T,
}

impl DerivAxis {
    pub fn space(d: usize) -> Self {
        match d {
            0 => DerivAxis::X,
            _ => DerivAxis::Y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffMethod {
    FiniteDifference,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivativeSpec {
    pub field: String,
    pub axis: DerivAxis,
    pub order: usize,
    pub method: DiffMethod,
    #[serde(default = "default_accuracy")]
    pub fd_accuracy: usize,
}

fn default_accuracy() -> usize {
    DEFAULT_FD_ACCURACY
}

impl DerivativeSpec {
    pub fn fd(field: &str, axis: DerivAxis, order: usize) -> Self {
        Self {
            field: field.into(),
            axis,
            order,
            method: DiffMethod::FiniteDifference,
            fd_accuracy: DEFAULT_FD_ACCURACY,
        }
    }

    pub fn spectral(field: &str, axis: DerivAxis, order: usize) -> Self {
        Self {
            method: DiffMethod::Spectral,
            ..Self::fd(field, axis, order)
        }
    }

    pub fn with_accuracy(mut self, accuracy: usize) -> Self {
        self.fd_accuracy = accuracy;
        self
    }
}

/// Position of an axis within the `(space..., time)` array shape.
fn array_axis(dataset: &Dataset, axis: DerivAxis) -> Result<usize> {
    let dims = dataset.space_dims();
    match axis {
        DerivAxis::X => Ok(0),
        DerivAxis::Y if dims >= 2 => Ok(1),
        DerivAxis::Y => Err(Error::invalid("dataset has no y axis")),
        DerivAxis::T => Ok(dims),
    }
}

/// Calls `f(start, stride)` for every line of `shape` running along `axis`.
pub(crate) fn for_each_line(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize)) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let count = shape[axis];
    for o in 0..outer {
        for i in 0..inner {
            f(o * count * inner + i, inner);
        }
    }
}

fn line_geometry(dataset: &Dataset, axis: DerivAxis) -> Result<(usize, f64, f64)> {
    let a = match axis {
        DerivAxis::T => dataset.time_axis(),
        _ => dataset.space_axis(array_axis(dataset, axis)?),
    };
    Ok((a.count, a.spacing, a.period()))
}

fn closure_for(boundary: BoundaryKind, axis: DerivAxis) -> Closure {
    if axis != DerivAxis::T && boundary.is_periodic() {
        Closure::Periodic
    } else {
        Closure::OneSided
    }
}

pub fn fd_derivative(dataset: &Dataset, spec: &DerivativeSpec) -> Result<Vec<f64>> {
    let field = dataset.field(&spec.field)?;
    let (n, h, _) = line_geometry(dataset, spec.axis)?;
    let stencil = LineStencil::new(
        n,
        h,
        spec.order,
        spec.fd_accuracy,
        closure_for(field.boundary, spec.axis),
    )?;
    let mut out = vec![0.0; field.values.len()];
    let axis = array_axis(dataset, spec.axis)?;
    for_each_line(&dataset.shape(), axis, |start, stride| {
        stencil.apply_strided(&field.values, start, stride, &mut out);
    });
    Ok(out)
}

pub fn spectral_derivative(dataset: &Dataset, spec: &DerivativeSpec) -> Result<Vec<f64>> {
    stencil::validate(spec.order, 2)?;
    let field = dataset.field(&spec.field)?;
    if spec.axis == DerivAxis::T || !field.boundary.is_periodic() {
        return Err(Error::NonPeriodicAxis(format!(
            "field `{}` along {:?}",
            spec.field, spec.axis
        )));
    }
    let (n, _, period) = line_geometry(dataset, spec.axis)?;
    let line = SpectralLine::new(n, period);
    let mut out = vec![0.0; field.values.len()];
    let axis = array_axis(dataset, spec.axis)?;
    let mut buf = vec![0.0; n];
    for_each_line(&dataset.shape(), axis, |start, stride| {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = field.values[start + k * stride];
        }
        let d = line.derivative(&buf, spec.order);
        for (k, v) in d.into_iter().enumerate() {
            out[start + k * stride] = v;
        }
    });
    Ok(out)
}

pub fn derivative(dataset: &Dataset, spec: &DerivativeSpec) -> Result<Vec<f64>> {
    match spec.method {
        DiffMethod::FiniteDifference => fd_derivative(dataset, spec),
        DiffMethod::Spectral => spectral_derivative(dataset, spec),
    }
}

/// Second-order time derivative: central inside, one-sided at the first and
/// last slices.
pub fn time_derivative(dataset: &Dataset, field: &str) -> Result<Vec<f64>> {
    time_derivative_with_accuracy(dataset, field, DEFAULT_TIME_ACCURACY)
}

pub fn time_derivative_with_accuracy(dataset: &Dataset, field: &str, accuracy: usize) -> Result<Vec<f64>> {
    fd_derivative(
        dataset,
        &DerivativeSpec::fd(field, DerivAxis::T, 1).with_accuracy(accuracy),
    )
}

/// Spatial derivative operator applied one snapshot at a time.
#[derive(Debug, Clone)]
pub struct SpatialOperator {
    counts: Vec<usize>,
    kind: OperatorKind,
}

#[derive(Debug, Clone)]
enum OperatorKind {
    Spectral(Vec<SpectralLine>),
    Fd {
        spacings: Vec<f64>,
        accuracy: usize,
        closure: Closure,
    },
}

impl SpatialOperator {
    pub fn new(dataset: &Dataset, boundary: BoundaryKind, method: DiffMethod, fd_accuracy: usize) -> Result<Self> {
        let counts: Vec<usize> = dataset.space_axes().iter().map(|a| a.count).collect();
        let kind = match method {
            DiffMethod::Spectral => {
                if !boundary.is_periodic() {
                    return Err(Error::NonPeriodicAxis(
                        "spectral library derivatives need periodic fields".into(),
                    ));
                }
                OperatorKind::Spectral(
                    dataset
                        .space_axes()
                        .iter()
                        .map(|a| SpectralLine::new(a.count, a.period()))
                        .collect(),
                )
            }
            DiffMethod::FiniteDifference => OperatorKind::Fd {
                spacings: dataset.space_axes().iter().map(|a| a.spacing).collect(),
                accuracy: fd_accuracy,
                closure: if boundary.is_periodic() {
                    Closure::Periodic
                } else {
                    Closure::OneSided
                },
            },
        };
        Ok(Self { counts, kind })
    }

    /// Check that every order up to `max_order` can be applied.
    pub fn check_orders(&self, max_order: usize) -> Result<()> {
        for q in 1..=max_order {
            match &self.kind {
                OperatorKind::Spectral(_) => stencil::validate(q, 2)?,
                OperatorKind::Fd {
                    spacings,
                    accuracy,
                    closure,
                } => {
                    for (d, h) in spacings.iter().enumerate() {
                        LineStencil::new(self.counts[d], *h, q, *accuracy, *closure).map_err(|e| match e {
                            Error::AxisTooShort { .. } => Error::UnsupportedDerivative(format!(
                                "order {q} along {} needs more points: {e}",
                                axis_name(d)
                            )),
                            other => other,
                        })?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Derivative of a row-major snapshot along one space axis.
    pub fn along(&self, snapshot: &[f64], axis: usize, order: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; snapshot.len()];
        match &self.kind {
            OperatorKind::Fd {
                spacings,
                accuracy,
                closure,
            } => {
                let s = LineStencil::new(self.counts[axis], spacings[axis], order, *accuracy, *closure)?;
                for_each_line(&self.counts, axis, |start, stride| {
                    s.apply_strided(snapshot, start, stride, &mut out);
                });
            }
            OperatorKind::Spectral(lines) => {
                let line = &lines[axis];
                let n = self.counts[axis];
                let mut buf = vec![0.0; n];
                for_each_line(&self.counts, axis, |start, stride| {
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b = snapshot[start + k * stride];
                    }
                    for (k, v) in line.derivative(&buf, order).into_iter().enumerate() {
                        out[start + k * stride] = v;
                    }
                });
            }
        }
        Ok(out)
    }

    /// Mixed derivative `∂^{orders[0]}_x ∂^{orders[1]}_y` of a snapshot.
    pub fn mixed(&self, snapshot: &[f64], orders: &[usize]) -> Result<Vec<f64>> {
        let mut cur: Option<Vec<f64>> = None;
        for (axis, &q) in orders.iter().enumerate() {
            if q == 0 {
                continue;
            }
            let src = cur.as_deref().unwrap_or(snapshot);
            cur = Some(self.along(src, axis, q)?);
        }
        Ok(cur.unwrap_or_else(|| snapshot.to_vec()))
    }
}
