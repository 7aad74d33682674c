//! Temporal self-convergence of the benchmark solvers and mean conservation
//! on the periodic ones. Shared by the solver tests and the acceptance runner.

use bgsindy::simulate::rk::{Dopri5, Tolerances};
use bgsindy::simulate::{generate, BenchmarkConfig, BenchmarkId};
use bgsindy::Dataset;

pub type Outcome = Result<(), String>;

fn final_state(ds: &Dataset) -> Vec<f64> {
    let last = ds.nt() - 1;
    (0..ds.fields().len()).flat_map(|f| ds.time_slice(f, last)).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn run(c: &BenchmarkConfig) -> Result<Dataset, String> {
    generate(c).map_err(|e| e.to_string())
}

/// Runs at `dt`, `dt/2` and `dt/4` and requires the ratio of successive
/// differences of the final state to reach `min_ratio` (`2^p` for order p).
fn refinement(base: &BenchmarkConfig, min_ratio: f64) -> Outcome {
    let at = |div: f64| {
        let mut c = base.clone();
        c.dt = base.dt / div;
        run(&c).map(|d| final_state(&d))
    };
    let (a, b, c) = (at(1.0)?, at(2.0)?, at(4.0)?);
    let (coarse, fine) = (distance(&a, &b), distance(&b, &c));
    let ratio = coarse / fine;
    if fine > 0.0 && ratio >= min_ratio {
        Ok(())
    } else {
        Err(format!(
            "{}: differences {coarse:e} -> {fine:e}, ratio {ratio:.2}",
            base.benchmark.name()
        ))
    }
}

pub fn kdv_rk4() -> Outcome {
    let mut c = BenchmarkConfig::default_for(BenchmarkId::Kdv).unwrap();
    c.t_end = 0.2;
    c.output_interval = 0.02;
    // the default step sits near the RK4 stability edge where the error is
    // not yet asymptotic, so refine from 1e-4
    c.dt = 1e-4;
    refinement(&c, 8.0)
}

pub fn burgers_etdrk4() -> Outcome {
    let mut c = BenchmarkConfig::default_for(BenchmarkId::BurgersHyper).unwrap();
    c.grid = vec![256];
    c.dt = 0.4;
    c.output_interval = 0.8;
    c.t_end = 8.0;
    refinement(&c, 8.0)
}

pub fn modified_ks_etdrk4() -> Outcome {
    let mut c = BenchmarkConfig::default_for(BenchmarkId::ModifiedKs).unwrap();
    c.dt = 0.04;
    c.output_interval = 0.08;
    c.t_end = 4.0;
    refinement(&c, 8.0)
}

/// Fixed-step Dormand-Prince on the reaction-diffusion system discretised
/// with a second-order Laplacian on a small periodic grid.
pub fn dopri_fixed_step() -> Outcome {
    let n = 12;
    let h = 3.0 / n as f64;
    let eps = 1e-3 / (h * h);
    let rhs = |_t: f64, y: &[f64]| -> bgsindy::Result<Vec<f64>> {
        let (u, v) = y.split_at(n * n);
        let mut out = vec![0.0; 2 * n * n];
        for i in 0..n {
            for j in 0..n {
                let at = |f: &[f64], di: usize, dj: usize| f[((i + di) % n) * n + (j + dj) % n];
                let k = i * n + j;
                let a2 = u[k] * u[k] + v[k] * v[k];
                let (lam, om) = (1.0 - a2, -a2);
                let lap = |f: &[f64]| at(f, 1, 0) + at(f, n - 1, 0) + at(f, 0, 1) + at(f, 0, n - 1) - 4.0 * f[k];
                out[k] = eps * lap(u) + lam * u[k] - om * v[k];
                out[n * n + k] = eps * lap(v) + om * u[k] + lam * v[k];
            }
        }
        Ok(out)
    };
    let y0: Vec<f64> = (0..2 * n * n).map(|k| 0.8 * ((k as f64) * 0.37).sin()).collect();
    let loose = Tolerances { atol: 1e10, rtol: 1e10 };
    let run = |steps: usize| -> Result<Vec<f64>, String> {
        let mut y = y0.clone();
        let mut solver = Dopri5::new(loose, 1.0 / steps as f64);
        for s in 0..steps {
            // each call takes exactly one step: the proposal only grows and is clamped
            let (t0, t1) = (s as f64 / steps as f64, (s + 1) as f64 / steps as f64);
            solver.advance(&mut y, t0, t1, rhs).map_err(|e| e.to_string())?;
        }
        if solver.accepted != steps {
            return Err(format!("{} steps taken, {steps} intended", solver.accepted));
        }
        Ok(y)
    };
    let (a, b, c) = (run(10)?, run(20)?, run(40)?);
    let ratio = distance(&a, &b) / distance(&b, &c);
    if ratio >= 16.0 {
        Ok(())
    } else {
        Err(format!("dopri5 fixed-step ratio {ratio:.2}"))
    }
}

/// The adaptive RD solver: error against a tight run shrinks with the
/// tolerance once the error control binds.
pub fn rd_tolerance() -> Outcome {
    let mut base = BenchmarkConfig::default_for(BenchmarkId::Rd2d).unwrap();
    base.grid = vec![32, 32];
    base.t_end = 1.0;
    base.output_interval = 0.1;
    let at = |tol: f64| {
        let mut c = base.clone();
        c.atol = Some(tol);
        c.rtol = Some(tol);
        run(&c).map(|d| final_state(&d))
    };
    let reference = at(1e-12)?;
    let norm = distance(&reference, &vec![0.0; reference.len()]);
    // looser tolerances are capped by the output spacing instead
    let mut previous = f64::INFINITY;
    for tol in [1e-8, 1e-9, 1e-10] {
        let err = distance(&at(tol)?, &reference) / norm;
        if err > 10.0 * tol || err >= previous {
            return Err(format!("rd tol {tol:e}: relative error {err:e}"));
        }
        previous = err;
    }
    Ok(())
}

pub fn periodic_mean_conservation() -> Outcome {
    for id in [BenchmarkId::BurgersHyper, BenchmarkId::ModifiedKs] {
        let mut c = BenchmarkConfig::default_for(id).unwrap();
        c.t_end = 10.0 * c.output_interval.max(0.4);
        if id == BenchmarkId::BurgersHyper {
            c.grid = vec![512];
        }
        let ds = run(&c)?;
        let n = ds.n_space() as f64;
        let first: f64 = ds.time_slice(0, 0).iter().sum::<f64>() / n;
        let scale = ds.time_slice(0, 0).iter().map(|v| v.abs()).fold(0.0, f64::max);
        for t in 0..ds.nt() {
            let mean: f64 = ds.time_slice(0, t).iter().sum::<f64>() / n;
            if (mean - first).abs() > 1e-12 * scale {
                return Err(format!("{}: mean drift {:e}", id.name(), mean - first));
            }
        }
        if !ds.metadata().contains_key("benchmark_config") {
            return Err(format!("{}: dataset lacks its config", id.name()));
        }
    }
    Ok(())
}

/// Every check, named, for reporting.
pub fn all() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        ("kdv rk4 self-convergence", kdv_rk4),
        ("burgers etdrk4 self-convergence", burgers_etdrk4),
        ("modified-ks etdrk4 self-convergence", modified_ks_etdrk4),
        ("dopri5 fixed-step order", dopri_fixed_step),
        ("rd adaptive tolerance", rd_tolerance),
        ("periodic mean conservation", periodic_mean_conservation),
    ]
}
