//! Benchmark PDE solvers and forward integration of identified models.

mod benchmarks;
pub mod etdrk4;
pub mod fourier;
mod integrate;
pub mod rk;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use benchmarks::{generate, solve_burgers_hyper, solve_kdv, solve_modified_ks, solve_rd2d};
pub use integrate::{integrate_model, IntegrateOptions};

use crate::dataset::{Dataset, Field, UniformAxis};
use crate::error::{Error, Result};
use crate::library::TermDescriptor;
use crate::model::DiscoveredModel;

/// Any `|u|` above this aborts a run as unstable.
pub const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkId {
    Kdv,
    BurgersHyper,
    ModifiedKs,
    Rd2d,
    CustomModel,
}

impl BenchmarkId {
    pub fn name(self) -> &'static str {
        match self {
            BenchmarkId::Kdv => "kdv",
            BenchmarkId::BurgersHyper => "burgers-hyper",
            BenchmarkId::ModifiedKs => "modified-ks",
            BenchmarkId::Rd2d => "rd2d",
            BenchmarkId::CustomModel => "custom-model",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown benchmark `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Rk4,
    Etdrk4,
    Rk45,
}

/// Full parameterisation of one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub benchmark: BenchmarkId,
    /// `[start, end]` per space axis; periodic axes exclude `end`.
    pub domain: Vec<[f64; 2]>,
    /// Grid points per space axis.
    pub grid: Vec<usize>,
    /// Solver step (initial step for adaptive integrators).
    pub dt: f64,
    /// Time between stored slices; a multiple of `dt` for fixed-step schemes.
    pub output_interval: f64,
    pub t_end: f64,
    pub epsilon: f64,
    pub integrator: Integrator,
    pub initial_condition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
}

impl BenchmarkConfig {
    /// Defaults used for the published benchmarks. Burgers uses the
    /// half-resolution grid; see [`BenchmarkConfig::full_resolution`].
    pub fn default_for(id: BenchmarkId) -> Result<Self> {
        Ok(match id {
            BenchmarkId::Kdv => Self {
                benchmark: id,
                domain: vec![[0.0, 2.0]],
                grid: vec![260],
                // 1e-3 is outside the RK4 stability region for the
                // 4th-order u_xxx stencil on this grid, so substep 4x
                dt: 2.5e-4,
                output_interval: 1e-3,
                t_end: 3.0,
                epsilon: 4.84e-4,
                integrator: Integrator::Rk4,
                initial_condition: "double-sech2".into(),
                atol: None,
                rtol: None,
            },
            BenchmarkId::BurgersHyper => Self {
                benchmark: id,
                domain: vec![[0.0, 32.0 * PI]],
                grid: vec![2048],
                dt: 0.1,
                output_interval: 0.1,
                t_end: 100.0,
                epsilon: 1e-3,
                integrator: Integrator::Etdrk4,
                initial_condition: "cos-x-over-16".into(),
                atol: None,
                rtol: None,
            },
            BenchmarkId::ModifiedKs => Self {
                benchmark: id,
                domain: vec![[0.0, 22.0]],
                grid: vec![128],
                dt: 0.004,
                output_interval: 0.004,
                t_end: 200.0,
                epsilon: 1e-6,
                integrator: Integrator::Etdrk4,
                initial_condition: "cos3-minus-half-sin".into(),
                atol: None,
                rtol: None,
            },
            BenchmarkId::Rd2d => Self {
                benchmark: id,
                domain: vec![[-1.5, 1.5], [-1.5, 1.5]],
                grid: vec![256, 256],
                dt: 1e-3,
                output_interval: 0.05,
                t_end: 5.0,
                epsilon: 1e-3,
                integrator: Integrator::Rk45,
                initial_condition: "spiral".into(),
                atol: Some(1e-8),
                rtol: Some(1e-6),
            },
            BenchmarkId::CustomModel => {
                return Err(Error::Config(
                    "custom-model runs take their grid from a reference dataset".into(),
                ))
            }
        })
    }

    /// The 4048-point Burgers grid.
    pub fn full_resolution(mut self) -> Self {
        if self.benchmark == BenchmarkId::BurgersHyper {
            self.grid = vec![4048];
        }
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.domain.len() != self.grid.len() || self.domain.is_empty() || self.domain.len() > 2 {
            return bad("domain and grid must both list one entry per space axis (1 or 2)".into());
        }
        for (d, g) in self.domain.iter().zip(&self.grid) {
            if !(d[1] > d[0]) {
                return bad(format!("empty domain {d:?}"));
            }
            if *g < 4 {
                return bad(format!("grid count {g} below 4"));
            }
        }
        for (name, v) in [
            ("dt", self.dt),
            ("output_interval", self.output_interval),
            ("t_end", self.t_end),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if self.integrator != Integrator::Rk45 {
            self.steps_per_output()?;
        }
        self.output_count()?;
        for v in [self.atol, self.rtol].into_iter().flatten() {
            if !(v > 0.0) {
                return bad("tolerances must be positive".into());
            }
        }
        let expected_dims = match self.benchmark {
            BenchmarkId::Rd2d => 2,
            BenchmarkId::CustomModel => self.grid.len(),
            _ => 1,
        };
        if self.grid.len() != expected_dims {
            return bad(format!("{} needs {expected_dims} space axes", self.benchmark.name()));
        }
        Ok(())
    }

    /// Solver steps between stored slices.
    pub fn steps_per_output(&self) -> Result<usize> {
        integer_ratio(self.output_interval, self.dt, "output_interval / dt")
    }

    /// Number of stored slices including `t = 0`.
    pub fn output_count(&self) -> Result<usize> {
        Ok(integer_ratio(self.t_end, self.output_interval, "t_end / output_interval")? + 1)
    }

    pub fn space_axes(&self) -> Vec<UniformAxis> {
        let periodic = self.benchmark != BenchmarkId::Kdv;
        self.domain
            .iter()
            .zip(&self.grid)
            .map(|(d, &n)| {
                if periodic {
                    UniformAxis::periodic(d[0], d[1], n)
                } else {
                    UniformAxis::closed(d[0], d[1], n)
                }
            })
            .collect()
    }

    pub fn time_axis(&self) -> Result<UniformAxis> {
        Ok(UniformAxis::new(0.0, self.output_interval, self.output_count()?))
    }

    /// The generating equation(s) in library form, one model per field.
    pub fn reference_models(&self) -> Result<Vec<DiscoveredModel>> {
        reference_models(self.benchmark, self.epsilon)
    }
}

fn integer_ratio(a: f64, b: f64, what: &str) -> Result<usize> {
    let r = a / b;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-9 * n {
        return Err(Error::Config(format!("{what} = {r} is not a positive integer")));
    }
    Ok(n as usize)
}

fn t1(p: u32, q: u32) -> TermDescriptor {
    TermDescriptor::poly_deriv_1d(p, q)
}

fn model_1d(terms: Vec<(TermDescriptor, f64)>) -> Result<DiscoveredModel> {
    let (t, c) = terms.into_iter().unzip();
    DiscoveredModel::new(vec!["u".into()], "u", t, c, 0.0, "reference")
}

/// Reference equations in the expanded library form.
pub fn reference_models(id: BenchmarkId, eps: f64) -> Result<Vec<DiscoveredModel>> {
    Ok(match id {
        BenchmarkId::Kdv => vec![model_1d(vec![(t1(1, 1), -1.0), (t1(0, 3), -eps)])?],
        BenchmarkId::BurgersHyper => vec![model_1d(vec![(t1(1, 1), -1.0), (t1(0, 2), 0.5), (t1(0, 4), -eps)])?],
        BenchmarkId::ModifiedKs => {
            // d/dx(u^k) = k u^{k-1} u_x
            let mut terms = vec![(t1(1, 1), -1.0), (t1(0, 2), -1.0), (t1(0, 4), -1.0)];
            for k in 3..=6u32 {
                terms.push((t1(k - 1, 1), -(k as f64) * eps));
            }
            vec![model_1d(terms)?]
        }
        BenchmarkId::Rd2d => {
            let vars = vec!["u".to_string(), "v".to_string()];
            let mono = |i: u32, j: u32| TermDescriptor::monomial(vec![i, j]);
            let lap = |f: usize| {
                [
                    TermDescriptor::with_derivative(vec![0, 0], f, vec![2, 0]),
                    TermDescriptor::with_derivative(vec![0, 0], f, vec![0, 2]),
                ]
            };
            let [uxx, uyy] = lap(0);
            let [vxx, vyy] = lap(1);
            let u = vec![
                (mono(1, 0), 1.0),
                (mono(0, 3), 0.5),
                (mono(1, 2), -1.0),
                (mono(2, 1), 0.5),
                (mono(3, 0), -1.0),
                (uxx, eps),
                (uyy, eps),
            ];
            let v = vec![
                (mono(0, 1), 1.0),
                (mono(0, 3), -1.0),
                (mono(1, 2), -0.5),
                (mono(2, 1), -1.0),
                (mono(3, 0), -0.5),
                (vxx, eps),
                (vyy, eps),
            ];
            let build = |field: &str, terms: Vec<(TermDescriptor, f64)>| {
                let (t, c) = terms.into_iter().unzip();
                DiscoveredModel::new(vars.clone(), field, t, c, 0.0, "reference")
            };
            vec![build("u", u)?, build("v", v)?]
        }
        BenchmarkId::CustomModel => return Err(Error::Config("custom-model has no built-in reference".into())),
    })
}

/// Evaluate an initial condition by id on the configured grid.
pub fn initial_condition(config: &BenchmarkConfig) -> Result<Vec<Vec<f64>>> {
    let axes = config.space_axes();
    let x = axes[0].coords();
    let sech2 = |z: f64| 1.0 / z.cosh().powi(2);
    let l = config.domain[0][1] - config.domain[0][0];
    match (config.benchmark, config.initial_condition.as_str()) {
        (BenchmarkId::Kdv, "double-sech2") => Ok(vec![x
            .iter()
            .map(|&x| 0.9 * sech2(12.45 * (x - 0.5)) + 0.3 * sech2(7.1875 * (x - 0.85)))
            .collect()]),
        (BenchmarkId::BurgersHyper, "cos-x-over-16") => Ok(vec![x.iter().map(|&x| (x / 16.0).cos()).collect()]),
        (BenchmarkId::ModifiedKs, "cos3-minus-half-sin") => {
            // wavenumbers rescaled so the profile is periodic on the domain
            let w = 2.0 * PI / l;
            Ok(vec![x
                .iter()
                .map(|&x| (3.0 * w * x).cos() - 0.5 * (w * x).sin())
                .collect()])
        }
        (BenchmarkId::Rd2d, "spiral") => {
            let y = axes[1].coords();
            let mut u = Vec::with_capacity(x.len() * y.len());
            let mut v = Vec::with_capacity(x.len() * y.len());
            for &xi in &x {
                for &yj in &y {
                    let r = xi.hypot(yj);
                    let phase = 2.0 * yj.atan2(xi) - r;
                    u.push(r.tanh() * phase.cos());
                    v.push(r.tanh() * phase.sin());
                }
            }
            Ok(vec![u, v])
        }
        (BenchmarkId::Rd2d, s) if s.starts_with("uniform:") => {
            let vals: Vec<f64> = s["uniform:".len()..]
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad uniform initial condition `{s}`: {e}")))?;
            if vals.len() != 2 {
                return Err(Error::Config("uniform initial condition needs `uniform:u,v`".into()));
            }
            let n = x.len() * axes[1].count;
            Ok(vec![vec![vals[0]; n], vec![vals[1]; n]])
        }
        (id, ic) => Err(Error::Config(format!(
            "initial condition `{ic}` is not defined for {}",
            id.name()
        ))),
    }
}

/// Transpose per-time snapshots into the time-fastest field layout.
pub(crate) fn assemble_field(snapshots: &[Vec<f64>]) -> Vec<f64> {
    let nt = snapshots.len();
    let ns = snapshots.first().map_or(0, |s| s.len());
    let mut out = vec![0.0; ns * nt];
    for (t, snap) in snapshots.iter().enumerate() {
        for (s, &v) in snap.iter().enumerate() {
            out[s * nt + t] = v;
        }
    }
    out
}

/// Check a state for blow-up; `Some(message)` when the run must stop.
pub(crate) fn blowup(state: &[f64], t: f64) -> Option<String> {
    let bad = state.iter().position(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT)?;
    Some(format!(
        "|u| exceeded {BLOWUP_LIMIT:e} (value {}) at t = {t:.6}",
        state[bad]
    ))
}

/// Build a dataset from per-field snapshot lists, truncating the time axis to
/// the number of stored slices.
pub(crate) fn snapshots_to_dataset(
    space: Vec<UniformAxis>,
    time: UniformAxis,
    names: &[&str],
    boundary: crate::dataset::BoundaryKind,
    snapshots: Vec<Vec<Vec<f64>>>,
    metadata: BTreeMap<String, Value>,
) -> Result<Dataset> {
    let nt = snapshots[0].len();
    let time = UniformAxis::new(time.origin, time.spacing, nt);
    let fields = names
        .iter()
        .zip(&snapshots)
        .map(|(name, snaps)| Field {
            name: name.to_string(),
            boundary,
            values: assemble_field(snaps),
        })
        .collect();
    Dataset::new(space, time, fields, metadata)
}

/// Abort with the trajectory computed so far attached, when it is long
/// enough to form a dataset.
pub(crate) fn abort_with_partial(message: String, build: impl FnOnce() -> Result<Dataset>) -> Error {
    Error::Instability {
        message,
        partial: build().ok().map(Box::new),
    }
}

pub(crate) fn provenance(config: &BenchmarkConfig, solver: Value) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    m.insert("benchmark".into(), json!(config.benchmark.name()));
    m.insert(
        "benchmark_config".into(),
        serde_json::to_value(config).unwrap_or(Value::Null),
    );
    m.insert("solver".into(), solver);
    m
}
