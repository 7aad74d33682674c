//! Reference solvers for the four benchmark equations.

use num_complex::Complex64;
use serde_json::json;

use super::etdrk4::Etdrk4;
use super::fourier::Spectral2d;
use super::rk::{rk4_step, Dopri5, Tolerances};
use super::{
    abort_with_partial, blowup, initial_condition, provenance, snapshots_to_dataset, BenchmarkConfig, BenchmarkId,
    Integrator,
};
use crate::dataset::{BoundaryKind, Dataset};
use crate::diff::spectral::SpectralLine;
use crate::diff::stencil::{Closure, LineStencil};
use crate::error::{Error, Result};

/// Spatial accuracy of the KdV finite differences.
const KDV_FD_ACCURACY: usize = 4;
/// RK4 stability limit along the imaginary axis is `2 sqrt 2`.
const RK4_IMAG_LIMIT: f64 = 2.828;

/// Run the benchmark named in `config`.
pub fn generate(config: &BenchmarkConfig) -> Result<Dataset> {
    config.validate()?;
    match config.benchmark {
        BenchmarkId::Kdv => solve_kdv(config),
        BenchmarkId::BurgersHyper => solve_burgers_hyper(config),
        BenchmarkId::ModifiedKs => solve_modified_ks(config),
        BenchmarkId::Rd2d => solve_rd2d(config),
        BenchmarkId::CustomModel => Err(Error::Config("custom-model runs go through integrate_model".into())),
    }
}

fn expect(config: &BenchmarkConfig, id: BenchmarkId, integrator: Integrator) -> Result<()> {
    config.validate()?;
    if config.benchmark != id {
        return Err(Error::Config(format!(
            "config is for {}, not {}",
            config.benchmark.name(),
            id.name()
        )));
    }
    if config.integrator != integrator {
        return Err(Error::Config(format!(
            "{} supports only the {:?} integrator",
            id.name(),
            integrator
        )));
    }
    Ok(())
}

/// `u_t = -u u_x - eps u_xxx` with RK4 and fourth-order differences. End
/// values are held fixed; ghost nodes follow [`Closure::OddEvenReflection`].
pub fn solve_kdv(config: &BenchmarkConfig) -> Result<Dataset> {
    expect(config, BenchmarkId::Kdv, Integrator::Rk4)?;
    let axis = config.space_axes()[0];
    let n = axis.count;
    let d1 = LineStencil::new(n, axis.spacing, 1, KDV_FD_ACCURACY, Closure::OddEvenReflection)?;
    let d3 = LineStencil::new(n, axis.spacing, 3, KDV_FD_ACCURACY, Closure::OddEvenReflection)?;
    let eps = config.epsilon;
    let mut u = initial_condition(config)?.remove(0);
    let amp = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let stiffness = eps * d3.abs_weight_sum() + amp * d1.abs_weight_sum();
    let stability_number = stiffness * config.dt;
    if stability_number > RK4_IMAG_LIMIT {
        log::warn!(
            "kdv: dt = {} gives |lambda dt| ~ {stability_number:.2}, above the RK4 limit {RK4_IMAG_LIMIT}",
            config.dt
        );
    }

    let rhs = |u: &[f64]| -> Result<Vec<f64>> {
        let ux = d1.apply(u);
        let uxxx = d3.apply(u);
        let mut du: Vec<f64> = (0..n).map(|i| -u[i] * ux[i] - eps * uxxx[i]).collect();
        du[0] = 0.0;
        du[n - 1] = 0.0;
        Ok(du)
    };

    let steps = config.steps_per_output()?;
    let n_out = config.output_count()?;
    let meta = provenance(
        config,
        json!({
            "scheme": "rk4 + fourth-order finite differences (odd/even reflection)",
            "dt": config.dt,
            "stability_number": stability_number,
        }),
    );
    let mut snaps = vec![u.clone()];
    for out in 1..n_out {
        for _ in 0..steps {
            rk4_step(&mut u, config.dt, rhs)?;
        }
        if let Some(msg) = blowup(&u, out as f64 * config.output_interval) {
            return Err(abort_with_partial(msg, || {
                snapshots_to_dataset(
                    config.space_axes(),
                    config.time_axis()?,
                    &["u"],
                    BoundaryKind::DirichletHomogeneous,
                    vec![snaps.clone()],
                    meta.clone(),
                )
            }));
        }
        snaps.push(u.clone());
    }
    snapshots_to_dataset(
        config.space_axes(),
        config.time_axis()?,
        &["u"],
        BoundaryKind::DirichletHomogeneous,
        vec![snaps],
        meta,
    )
}

/// Shared ETDRK4 driver for `u_t = L u - (f(u))_x` on a periodic line.
fn etdrk4_flux_solver(
    config: &BenchmarkConfig,
    symbol: impl Fn(f64) -> f64,
    flux: impl Fn(f64) -> f64,
    scheme: &str,
) -> Result<Dataset> {
    let axis = config.space_axes()[0];
    let n = axis.count;
    let line = SpectralLine::new(n, axis.period());
    let linear: Vec<Complex64> = line
        .wavenumbers()
        .iter()
        .map(|&k| Complex64::new(symbol(k), 0.0))
        .collect();
    let stepper = Etdrk4::new(&linear, config.dt);
    let nonlinear = |v: &[Complex64]| -> Result<Vec<Complex64>> {
        let mut buf = v.to_vec();
        line.inverse_complex(&mut buf);
        let mut f: Vec<Complex64> = buf.iter().map(|c| Complex64::new(flux(c.re), 0.0)).collect();
        line.forward_complex(&mut f);
        line.dealias(&mut f);
        line.apply_symbol(&mut f, 1);
        for c in f.iter_mut() {
            *c = -*c;
        }
        Ok(f)
    };

    let u0 = initial_condition(config)?.remove(0);
    let mut v = line.forward(&u0);
    let steps = config.steps_per_output()?;
    let n_out = config.output_count()?;
    let meta = provenance(
        config,
        json!({
            "scheme": scheme,
            "dt": config.dt,
            "contour_points": super::etdrk4::CONTOUR_POINTS,
            "dealias": "2/3",
        }),
    );
    let mut snaps = vec![u0];
    for out in 1..n_out {
        for _ in 0..steps {
            stepper.step(&mut v, nonlinear)?;
        }
        let u = line.inverse_real(v.clone());
        if let Some(msg) = blowup(&u, out as f64 * config.output_interval) {
            return Err(abort_with_partial(msg, || {
                snapshots_to_dataset(
                    config.space_axes(),
                    config.time_axis()?,
                    &["u"],
                    BoundaryKind::Periodic,
                    vec![snaps.clone()],
                    meta.clone(),
                )
            }));
        }
        snaps.push(u);
    }
    snapshots_to_dataset(
        config.space_axes(),
        config.time_axis()?,
        &["u"],
        BoundaryKind::Periodic,
        vec![snaps],
        meta,
    )
}

/// `u_t = -u u_x + 0.5 u_xx - eps u_xxxx`, pseudo-spectral with ETDRK4.
pub fn solve_burgers_hyper(config: &BenchmarkConfig) -> Result<Dataset> {
    expect(config, BenchmarkId::BurgersHyper, Integrator::Etdrk4)?;
    let eps = config.epsilon;
    etdrk4_flux_solver(
        config,
        |k| -0.5 * k * k - eps * k.powi(4),
        |u| 0.5 * u * u,
        "etdrk4 + fourier pseudo-spectral",
    )
}

/// `u_t = -u u_x - u_xx - u_xxxx - eps sum_{k=3..6} (u^k)_x`.
pub fn solve_modified_ks(config: &BenchmarkConfig) -> Result<Dataset> {
    expect(config, BenchmarkId::ModifiedKs, Integrator::Etdrk4)?;
    let eps = config.epsilon;
    etdrk4_flux_solver(
        config,
        |k| k * k - k.powi(4),
        |u| {
            let u2 = u * u;
            let u3 = u2 * u;
            0.5 * u2 + eps * (u3 + u3 * u + u3 * u2 + u3 * u3)
        },
        "etdrk4 + fourier pseudo-spectral",
    )
}

/// Cubic reaction terms of the two-species system.
pub(crate) fn rd_reaction(u: f64, v: f64) -> (f64, f64) {
    let (u2, v2) = (u * u, v * v);
    (
        u + 0.5 * v2 * v - u * v2 + 0.5 * u2 * v - u2 * u,
        v - v2 * v - 0.5 * u * v2 - u2 * v - 0.5 * u2 * u,
    )
}

/// Two-species reaction-diffusion on a periodic square; spectral Laplacian,
/// pointwise reactions, adaptive Dormand–Prince stepping.
pub fn solve_rd2d(config: &BenchmarkConfig) -> Result<Dataset> {
    expect(config, BenchmarkId::Rd2d, Integrator::Rk45)?;
    let axes = config.space_axes();
    let (nx, ny) = (axes[0].count, axes[1].count);
    let fft = Spectral2d::new(nx, axes[0].period(), ny, axes[1].period());
    let npts = nx * ny;
    let eps = config.epsilon;
    let lap: Vec<f64> = fft
        .kx()
        .iter()
        .flat_map(|&kx| fft.ky().iter().map(move |&ky| -eps * (kx * kx + ky * ky)))
        .collect();
    let diffuse = |f: &[f64]| -> Vec<f64> {
        let mut s = fft.forward(f);
        for (c, l) in s.iter_mut().zip(&lap) {
            *c *= *l;
        }
        fft.inverse_real(s)
    };
    let rhs = |_t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (u, v) = y.split_at(npts);
        let mut out = diffuse(u);
        out.extend(diffuse(v));
        for i in 0..npts {
            let (ru, rv) = rd_reaction(u[i], v[i]);
            out[i] += ru;
            out[npts + i] += rv;
        }
        Ok(out)
    };

    let tol = Tolerances {
        atol: config.atol.unwrap_or(1e-8),
        rtol: config.rtol.unwrap_or(1e-6),
    };
    let mut ic = initial_condition(config)?;
    let mut y = std::mem::take(&mut ic[0]);
    y.extend(std::mem::take(&mut ic[1]));
    let mut solver = Dopri5::new(tol, config.dt);
    let n_out = config.output_count()?;
    let mut snaps_u = vec![y[..npts].to_vec()];
    let mut snaps_v = vec![y[npts..].to_vec()];
    let mut meta = provenance(config, json!({ "scheme": "dopri5 + fourier diffusion" }));
    for out in 1..n_out {
        let (t0, t1) = (
            (out - 1) as f64 * config.output_interval,
            out as f64 * config.output_interval,
        );
        let stepped = solver.advance(&mut y, t0, t1, rhs);
        let failure = match stepped {
            Err(Error::Instability { message, .. }) => Some(message),
            Err(e) => return Err(e),
            Ok(()) => blowup(&y, t1),
        };
        if let Some(msg) = failure {
            return Err(abort_with_partial(msg, || {
                snapshots_to_dataset(
                    axes.clone(),
                    config.time_axis()?,
                    &["u", "v"],
                    BoundaryKind::Periodic,
                    vec![snaps_u.clone(), snaps_v.clone()],
                    meta.clone(),
                )
            }));
        }
        snaps_u.push(y[..npts].to_vec());
        snaps_v.push(y[npts..].to_vec());
    }
    let mean_dt = config.t_end / solver.accepted.max(1) as f64;
    meta.insert(
        "solver".into(),
        json!({
            "scheme": "dopri5 + fourier diffusion",
            "atol": tol.atol,
            "rtol": tol.rtol,
            "accepted_steps": solver.accepted,
            "rejected_steps": solver.rejected,
            "dt": mean_dt,
        }),
    );
    snapshots_to_dataset(
        axes,
        config.time_axis()?,
        &["u", "v"],
        BoundaryKind::Periodic,
        vec![snaps_u, snaps_v],
        meta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::relative_l2;

    fn final_slice(ds: &Dataset, field: usize) -> Vec<f64> {
        ds.time_slice(field, ds.nt() - 1)
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    fn short_kdv(t_end: f64, dt: f64) -> BenchmarkConfig {
        let mut c = BenchmarkConfig::default_for(BenchmarkId::Kdv).unwrap();
        c.t_end = t_end;
        c.dt = dt;
        c.output_interval = 0.01;
        c
    }

    #[test]
    fn kdv_initial_slice_mass_and_convergence() {
        let c = short_kdv(0.5, 2.5e-4);
        let ds = solve_kdv(&c).unwrap();
        let ic = initial_condition(&c).unwrap().remove(0);
        assert_eq!(ds.time_slice(0, 0), ic);
        let mass = |s: &[f64]| s.iter().sum::<f64>();
        let drift = (mass(&final_slice(&ds, 0)) - mass(&ic)).abs() / mass(&ic);
        assert!(drift < 1e-3, "mass drift {drift}");

        let fine = solve_kdv(&short_kdv(0.5, 1.25e-4)).unwrap();
        let err = rel(&final_slice(&ds, 0), &final_slice(&fine, 0));
        assert!(err < 1e-5, "self-convergence {err}");
        assert!(ds.metadata().contains_key("benchmark_config"));
    }

    #[test]
    fn kdv_unstable_step_aborts_with_partial() {
        let c = short_kdv(0.5, 2e-3);
        match solve_kdv(&c) {
            Err(Error::Instability { partial, .. }) => {
                if let Some(p) = partial {
                    assert!(p.nt() >= 4);
                }
            }
            other => panic!("expected instability, got {:?}", other.map(|d| d.nt())),
        }
    }

    fn burgers(n: usize, dt: f64, t_end: f64) -> BenchmarkConfig {
        let mut c = BenchmarkConfig::default_for(BenchmarkId::BurgersHyper).unwrap();
        c.grid = vec![n];
        c.dt = dt;
        c.output_interval = 1.0;
        c.t_end = t_end;
        c
    }

    #[test]
    fn burgers_self_convergence_and_mean() {
        let a = solve_burgers_hyper(&burgers(256, 0.1, 10.0)).unwrap();
        let b = solve_burgers_hyper(&burgers(256, 0.05, 10.0)).unwrap();
        let err = rel(&final_slice(&a, 0), &final_slice(&b, 0));
        assert!(err < 1e-6, "self-convergence {err}");
        let m0: f64 = a.time_slice(0, 0).iter().sum();
        let m1: f64 = final_slice(&a, 0).iter().sum();
        assert!((m1 - m0).abs() < 1e-10 * 256.0);
        assert!(final_slice(&a, 0).iter().all(|v| v.abs() < 10.0));
    }

    #[test]
    fn ks_flux_identity() {
        // (u^k)_x spectrally equals k u^{k-1} u_x for band-limited u once the
        // product is resolved on the grid
        let n = 128;
        let line = SpectralLine::new(n, 22.0);
        let x: Vec<f64> = (0..n).map(|i| 22.0 * i as f64 / n as f64).collect();
        let w = 2.0 * std::f64::consts::PI / 22.0;
        let u: Vec<f64> = x
            .iter()
            .map(|&x| 0.3 * (w * x).cos() + 0.2 * (2.0 * w * x).sin())
            .collect();
        let ux = line.derivative(&u, 1);
        for k in 3..=6i32 {
            let uk: Vec<f64> = u.iter().map(|v| v.powi(k)).collect();
            let lhs = line.derivative(&uk, 1);
            for i in 0..n {
                let rhs = k as f64 * u[i].powi(k - 1) * ux[i];
                assert!((lhs[i] - rhs).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ks_initial_slice_and_boundedness() {
        let mut c = BenchmarkConfig::default_for(BenchmarkId::ModifiedKs).unwrap();
        c.t_end = 20.0;
        c.output_interval = 0.4;
        let ds = solve_modified_ks(&c).unwrap();
        assert_eq!(ds.time_slice(0, 0), initial_condition(&c).unwrap()[0]);
        assert!(ds.fields()[0].values.iter().all(|v| v.abs() < 10.0));
    }

    fn rd(n: usize, ic: &str, t_end: f64) -> BenchmarkConfig {
        let mut c = BenchmarkConfig::default_for(BenchmarkId::Rd2d).unwrap();
        c.grid = vec![n, n];
        c.initial_condition = ic.into();
        c.t_end = t_end;
        c
    }

    #[test]
    fn rd_fixed_point_and_reaction_ode() {
        let zero = solve_rd2d(&rd(8, "uniform:0,0", 0.5)).unwrap();
        assert!(zero.fields().iter().all(|f| f.values.iter().all(|&v| v == 0.0)));

        let ds = solve_rd2d(&rd(8, "uniform:0.3,-0.2", 1.0)).unwrap();
        // independent oracle: fine fixed-step RK4 on the reaction ODE
        let (mut u, mut v) = (0.3f64, -0.2f64);
        let h = 1e-4;
        let f = |u: f64, v: f64| rd_reaction(u, v);
        for _ in 0..10_000 {
            let k1 = f(u, v);
            let k2 = f(u + h / 2.0 * k1.0, v + h / 2.0 * k1.1);
            let k3 = f(u + h / 2.0 * k2.0, v + h / 2.0 * k2.1);
            let k4 = f(u + h * k3.0, v + h * k3.1);
            u += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        let last = ds.nt() - 1;
        for s in ds.time_slice(0, last) {
            assert!((s - u).abs() < 1e-6, "{s} vs {u}");
        }
        for s in ds.time_slice(1, last) {
            assert!((s - v).abs() < 1e-6, "{s} vs {v}");
        }
    }

    #[test]
    fn rd_spiral_short_run_bounded() {
        let ds = solve_rd2d(&rd(32, "spiral", 0.5)).unwrap();
        assert_eq!(ds.nt(), 11);
        assert!(ds.fields()[0].values.iter().all(|v| v.abs() <= 1.05));
        let again = solve_rd2d(&rd(32, "spiral", 0.5)).unwrap();
        assert_eq!(relative_l2(&ds, &again, "u").unwrap(), 0.0);
    }
}
