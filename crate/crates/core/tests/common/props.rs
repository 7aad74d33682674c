//! Randomised invariant checks shared by the property tests and the
//! acceptance runner. Each returns the first counterexample it finds.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use bgsindy::baselines::{stlsq, StlsqConfig};
use bgsindy::diff::{derivative, fd_derivative, DerivAxis, DerivativeSpec};
use bgsindy::library::{reduce_independent, Library, TermDescriptor};
use bgsindy::metrics::{coefficient_error, relative_l2};
use bgsindy::model::DiscoveredModel;
use bgsindy::noise::add_noise;
use bgsindy::pruner::{discover, importance, PruneTrace, PrunerConfig};
use bgsindy::regression::{least_squares, LeastSquaresSystem};
use bgsindy::sampling::{SampleSet, SampleStrategy};
use bgsindy::{BoundaryKind, Dataset, Field, UniformAxis};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Outcome = Result<(), String>;

/// Runs `test` on `cases` inputs drawn from a fixed-seed generator.
fn check<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal))
}

/// Full-rank library with coefficients spread over five decades and a small
/// misfit so every refit has a nonzero residual.
fn random_library(seed: u64, n: usize, k: usize) -> Library {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = gaussian(&mut rng, n, k);
    let xi = DVector::from_fn(k, |_, _| {
        let mag = 10f64.powf(rng.random_range(-4.0..1.0));
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    });
    let noise = DVector::from_fn(n, |_, _| 1e-3 * rng.sample::<f64, _>(StandardNormal));
    let target = &phi * xi + noise;
    let terms = (0..k as u32).map(|p| TermDescriptor::monomial(vec![p])).collect();
    let samples = SampleSet {
        indices: (0..n).collect(),
        seed,
        strategy: SampleStrategy::All,
    };
    Library::from_parts(vec!["u".into()], terms, phi, target, "u", samples).unwrap()
}

fn full_trace(lib: &Library) -> PruneTrace {
    let cfg = PrunerConfig {
        record_full_trace: true,
        ..PrunerConfig::default()
    };
    discover(lib, &cfg).unwrap().1
}

fn residuals_non_decreasing(trace: &PruneTrace) -> Result<(), TestCaseError> {
    for w in trace.residuals().windows(2) {
        // nested fits: equal up to round-off when a zero column is dropped
        prop_assert!(w[1] >= w[0] * (1.0 - 1e-12), "residual fell from {} to {}", w[0], w[1]);
    }
    Ok(())
}

pub fn importance_is_bounded(cases: u32) -> Outcome {
    check(
        cases,
        (1usize..40, 1usize..8, any::<u64>(), -14.0f64..1.0),
        |(n, k, seed, log_eps)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = DMatrix::from_fn(n, k, |_, _| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(-10.0..10.0)
                }
            });
            let xi: Vec<f64> = (0..k)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        0.0
                    } else {
                        rng.random_range(-5.0..5.0)
                    }
                })
                .collect();
            let eps = 10f64.powf(log_eps);
            let (local, global) = importance(&phi, &xi, eps).unwrap();
            for i in 0..n {
                let products: Vec<f64> = (0..k).map(|j| (phi[(i, j)] * xi[j]).abs()).collect();
                let max = products.iter().cloned().fold(0.0, f64::max);
                let mut row_max = 0.0f64;
                for j in 0..k {
                    let w = local[(i, j)];
                    prop_assert!((0.0..=1.0).contains(&w));
                    prop_assert!((w - products[j] / (max + eps)).abs() <= 1e-15);
                    row_max = row_max.max(w);
                }
                if max > 0.0 {
                    prop_assert!(row_max >= max / (max + eps) * (1.0 - 1e-15));
                }
            }
            for w in global {
                prop_assert!((0.0..=1.0).contains(&w));
            }

            Ok(())
        },
    )
}

pub fn rescaling_a_column_leaves_pruning_unchanged(cases: u32) -> Outcome {
    check(
        cases,
        (any::<u64>(), 2usize..8, 0usize..8, -2.0f64..2.0, any::<bool>()),
        |(seed, k, column, log_c, negative)| {
            let lib = random_library(seed, 80, k);
            let j = column % k;
            let c = if negative {
                -10f64.powf(log_c)
            } else {
                10f64.powf(log_c)
            };
            let mut scaled = lib.clone();
            scaled.matrix.column_mut(j).scale_mut(c);

            let a = full_trace(&lib);
            let b = full_trace(&scaled);
            residuals_non_decreasing(&a)?;
            residuals_non_decreasing(&b)?;
            prop_assert_eq!(a.selected_iteration, b.selected_iteration);
            prop_assert_eq!(a.iterations.len(), b.iterations.len());
            for (x, y) in a.iterations.iter().zip(&b.iterations) {
                prop_assert_eq!(&x.active, &y.active);
                prop_assert_eq!(x.removed, y.removed);
                for (wx, wy) in x.importance.iter().zip(&y.importance) {
                    prop_assert!((wx - wy).abs() <= 1e-9, "W {} vs {}", wx, wy);
                }
            }

            Ok(())
        },
    )
}

pub fn least_squares_matches_normal_equations(cases: u32) -> Outcome {
    check(cases, (10usize..60, 1usize..8, any::<u64>()), |(n, k, seed)| {
        prop_assume!(n >= 2 * k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = gaussian(&mut rng, n, k);
        let b = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fit = least_squares(&phi, &b).unwrap();

        let gram = phi.transpose() * &phi;
        let oracle = gram
            .cholesky()
            .expect("gaussian matrix with n >= 2k is full rank")
            .solve(&(phi.transpose() * &b));
        for (x, y) in fit.coefficients.iter().zip(oracle.iter()) {
            prop_assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0), "{} vs {}", x, y);
        }
        let r = &phi * &oracle - &b;
        let res = r.norm_squared() / n as f64;
        prop_assert!((fit.residual - res).abs() <= 1e-10 * res.max(1e-300));

        Ok(())
    })
}

pub fn dropping_a_column_never_lowers_the_residual(cases: u32) -> Outcome {
    check(cases, (any::<u64>(), 2usize..8, 0usize..8), |(seed, k, column)| {
        let lib = random_library(seed, 50, k);
        let system = LeastSquaresSystem::new(&lib.matrix, &lib.target).unwrap();
        let all: Vec<usize> = (0..k).collect();
        let full = system.solve(&all).unwrap();
        let drop = column % k;
        let rest: Vec<usize> = all.iter().copied().filter(|&j| j != drop).collect();
        let reduced = system.solve(&rest).unwrap();
        prop_assert!(reduced.residual >= full.residual * (1.0 - 1e-12));

        Ok(())
    })
}

pub fn scaling_a_column_scales_its_coefficient(cases: u32) -> Outcome {
    check(
        cases,
        (any::<u64>(), 1usize..8, 0usize..8, -3.0f64..3.0),
        |(seed, k, column, log_c)| {
            let lib = random_library(seed, 50, k);
            let j = column % k;
            let c = 10f64.powf(log_c);
            let mut scaled = lib.matrix.clone();
            scaled.column_mut(j).scale_mut(c);
            let a = least_squares(&lib.matrix, &lib.target).unwrap();
            let b = least_squares(&scaled, &lib.target).unwrap();
            // compare contributions: a tiny coefficient on a unit column is
            // only determined to round-off relative to the target
            let size = lib.target.norm();
            for i in 0..k {
                let expect = if i == j {
                    a.coefficients[i] / c
                } else {
                    a.coefficients[i]
                };
                let gap = (b.coefficients[i] - expect).abs() * scaled.column(i).norm();
                prop_assert!(gap <= 1e-9 * size, "term {}: {} vs {}", i, b.coefficients[i], expect);
            }
            prop_assert!((a.residual - b.residual).abs() <= 1e-9 * a.residual);

            Ok(())
        },
    )
}

pub fn zero_threshold_stlsq_is_least_squares(cases: u32) -> Outcome {
    check(cases, (any::<u64>(), 1usize..8), |(seed, k)| {
        let lib = random_library(seed, 40, k);
        let model = stlsq(&lib, &StlsqConfig::new(0.0)).unwrap();
        let fit = least_squares(&lib.matrix, &lib.target).unwrap();
        prop_assert_eq!(&model.coefficients, &fit.coefficients);

        Ok(())
    })
}

pub fn independence_reduction_is_idempotent(cases: u32) -> Outcome {
    check(cases, (any::<u64>(), 2usize..7), |(seed, k)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let mut phi = gaussian(&mut rng, n, k + 2);
        // two dependent columns: a copy and a combination
        let copy = phi.column(0).clone_owned();
        phi.set_column(k, &copy);
        let combo = phi.column(1) * 2.0 - phi.column(k - 1) * 0.5;
        phi.set_column(k + 1, &combo);
        let target = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let terms = (0..(k + 2) as u32).map(|p| TermDescriptor::monomial(vec![p])).collect();
        let samples = SampleSet {
            indices: (0..n).collect(),
            seed,
            strategy: SampleStrategy::All,
        };
        let lib = Library::from_parts(vec!["u".into()], terms, phi, target, "u", samples).unwrap();
        let once = reduce_independent(&lib, 1e-8).unwrap();
        prop_assert_eq!(once.library.n_terms(), k);
        let twice = reduce_independent(&once.library, 1e-8).unwrap();
        prop_assert_eq!(&once.library.terms, &twice.library.terms);
        prop_assert_eq!(&once.library.matrix, &twice.library.matrix);

        Ok(())
    })
}

fn line_dataset(axis: UniformAxis, boundary: BoundaryKind, values: &[f64]) -> Dataset {
    // four identical time slices, row-major (x, t)
    let nt = 4;
    let data: Vec<f64> = values.iter().flat_map(|&v| std::iter::repeat_n(v, nt)).collect();
    Dataset::new(
        vec![axis],
        UniformAxis::new(0.0, 0.1, nt),
        vec![Field {
            name: "u".into(),
            boundary,
            values: data,
        }],
        BTreeMap::new(),
    )
    .unwrap()
}

fn first_slice(values: &[f64]) -> Vec<f64> {
    values.iter().step_by(4).copied().collect()
}

/// Coefficients of the `order`-th derivative of a power series.
fn differentiate(coeffs: &[f64], order: usize) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    for _ in 0..order {
        c = c.iter().enumerate().skip(1).map(|(p, v)| p as f64 * v).collect();
    }
    c
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

pub fn finite_differences_are_exact_on_polynomials(cases: u32) -> Outcome {
    check(
        cases,
        (
            1usize..=4,
            prop::sample::select(vec![2usize, 4, 6]),
            prop::collection::vec(-1.0f64..1.0, 10),
        ),
        |(order, accuracy, coeffs)| {
            let degree = order + accuracy - 1;
            let coeffs = &coeffs[..=degree];
            let axis = UniformAxis::closed(-1.0, 1.0, 41);
            let x = axis.coords();
            let u: Vec<f64> = x.iter().map(|&x| horner(coeffs, x)).collect();
            let ds = line_dataset(axis, BoundaryKind::DirichletHomogeneous, &u);
            let spec = DerivativeSpec::fd("u", DerivAxis::X, order).with_accuracy(accuracy);
            let d = first_slice(&fd_derivative(&ds, &spec).unwrap());
            let exact = differentiate(coeffs, order);
            let scale = 1.0 + x.iter().map(|&x| horner(&exact, x).abs()).fold(0.0, f64::max);
            for (i, &xi) in x.iter().enumerate() {
                prop_assert!(
                    (d[i] - horner(&exact, xi)).abs() <= 1e-6 * scale,
                    "order {} accuracy {} at {}: {} vs {}",
                    order,
                    accuracy,
                    xi,
                    d[i],
                    horner(&exact, xi)
                );
            }

            Ok(())
        },
    )
}

pub fn derivatives_are_linear(cases: u32) -> Outcome {
    check(
        cases,
        (1usize..=4, any::<bool>(), -3.0f64..3.0, -3.0f64..3.0, 0.0f64..6.0),
        |(order, spectral, a, b, phase)| {
            let n = 64;
            let axis = UniformAxis::periodic(0.0, 2.0 * PI, n);
            let x = axis.coords();
            let f: Vec<f64> = x.iter().map(|&x| (x + phase).sin().exp()).collect();
            let g: Vec<f64> = x.iter().map(|&x| (3.0 * x).cos() + 0.5 * (x - phase).sin()).collect();
            let h: Vec<f64> = f.iter().zip(&g).map(|(f, g)| a * f + b * g).collect();
            let spec = if spectral {
                DerivativeSpec::spectral("u", DerivAxis::X, order)
            } else {
                DerivativeSpec::fd("u", DerivAxis::X, order)
            };
            let d =
                |v: &[f64]| first_slice(&derivative(&line_dataset(axis, BoundaryKind::Periodic, v), &spec).unwrap());
            let (df, dg, dh) = (d(&f), d(&g), d(&h));
            let scale = 1.0 + dh.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for i in 0..n {
                prop_assert!((dh[i] - (a * df[i] + b * dg[i])).abs() <= 1e-10 * scale);
            }

            Ok(())
        },
    )
}

pub fn spectral_derivative_of_a_fourier_mode(cases: u32) -> Outcome {
    check(
        cases,
        (1usize..20, 1usize..=4, 1.0f64..50.0),
        |(mode, order, length)| {
            let n = 64;
            let axis = UniformAxis::periodic(0.0, length, n);
            let k = 2.0 * PI * mode as f64 / length;
            let x = axis.coords();
            let u: Vec<f64> = x.iter().map(|&x| (k * x).sin()).collect();
            let spec = DerivativeSpec::spectral("u", DerivAxis::X, order);
            let d = first_slice(&derivative(&line_dataset(axis, BoundaryKind::Periodic, &u), &spec).unwrap());
            let amp = k.powi(order as i32);
            // transform round-off is amplified by the largest resolved wavenumber
            let floor = 64.0 * f64::EPSILON * (PI * n as f64 / length).powi(order as i32);
            for (i, &xi) in x.iter().enumerate() {
                let exact = amp * (k * xi + order as f64 * PI / 2.0).sin();
                prop_assert!((d[i] - exact).abs() <= 1e-10 * amp + floor, "{} vs {}", d[i], exact);
            }

            Ok(())
        },
    )
}

/// Convergence rate of the gap between 4th-order differences and spectral
/// derivatives on a smooth periodic field.
pub fn spectral_and_finite_differences_agree_to_fourth_order() -> Outcome {
    let f = |x: f64| x.sin().exp();
    for order in 1..=2 {
        let gap = |n: usize| {
            let axis = UniformAxis::periodic(0.0, 2.0 * PI, n);
            let u: Vec<f64> = axis.coords().into_iter().map(f).collect();
            let ds = line_dataset(axis, BoundaryKind::Periodic, &u);
            let fd = fd_derivative(&ds, &DerivativeSpec::fd("u", DerivAxis::X, order).with_accuracy(4)).unwrap();
            let sp = derivative(&ds, &DerivativeSpec::spectral("u", DerivAxis::X, order)).unwrap();
            fd.iter().zip(&sp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (gap(32), gap(64));
        let rate = (coarse / fine).log2();
        if !(rate > 3.7) {
            return Err(format!("order {order}: gaps {coarse:e} -> {fine:e}, rate {rate}"));
        }
    }
    Ok(())
}

fn random_dataset(seed: u64, two_d: bool) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = if two_d {
        vec![UniformAxis::periodic(-1.0, 1.0, 6), UniformAxis::periodic(0.0, 3.0, 5)]
    } else {
        vec![UniformAxis::closed(0.0, 2.0, 9)]
    };
    let len: usize = space.iter().map(|a| a.count).product::<usize>() * 7;
    let boundary = if two_d {
        BoundaryKind::Periodic
    } else {
        BoundaryKind::DirichletHomogeneous
    };
    let fields = ["u", "v"]
        .iter()
        .map(|name| Field {
            name: (*name).into(),
            boundary,
            values: (0..len).map(|_| rng.sample::<f64, _>(StandardNormal) * 1e3).collect(),
        })
        .collect();
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), serde_json::json!(seed));
    Dataset::new(space, UniformAxis::new(0.5, 0.013, 7), fields, meta).unwrap()
}

pub fn persistence_round_trip_is_identity(cases: u32) -> Outcome {
    check(cases, (any::<u64>(), any::<bool>()), |(seed, two_d)| {
        let ds = random_dataset(seed, two_d);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        prop_assert_eq!(ds, back);

        Ok(())
    })
}

pub fn noise_touches_one_field_and_is_seeded(cases: u32) -> Outcome {
    check(cases, (any::<u64>(), 0.01f64..0.5), |(seed, gamma)| {
        let ds = random_dataset(seed, false);
        let a = add_noise(&ds, "u", gamma, seed).unwrap();
        let b = add_noise(&ds, "u", gamma, seed).unwrap();
        let c = add_noise(&ds, "u", gamma, seed.wrapping_add(1)).unwrap();
        prop_assert_eq!(a.shape(), ds.shape());
        prop_assert_eq!(&a.field("v").unwrap().values, &ds.field("v").unwrap().values);
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a.field("u").unwrap().values, &c.field("u").unwrap().values);

        Ok(())
    })
}

pub fn relative_l2_is_absolutely_homogeneous(cases: u32) -> Outcome {
    check(cases, (any::<u64>(), -10.0f64..10.0), |(seed, c)| {
        let reference = random_dataset(seed, true);
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        let error: Vec<f64> = (0..reference.len()).map(|_| rng.sample(StandardNormal)).collect();
        let shifted = |s: f64| {
            let values = reference
                .field("u")
                .unwrap()
                .values
                .iter()
                .zip(&error)
                .map(|(r, e)| r + s * e)
                .collect();
            reference.with_field_values("u", values).unwrap()
        };
        let base = relative_l2(&shifted(1.0), &reference, "u").unwrap();
        let scaled = relative_l2(&shifted(c), &reference, "u").unwrap();
        prop_assert!((scaled - c.abs() * base).abs() <= 1e-12 * base.max(1e-300) + 1e-15);

        Ok(())
    })
}

pub fn coefficient_error_vanishes_only_on_equal_coefficients(cases: u32) -> Outcome {
    check(
        cases,
        (
            prop::collection::vec(prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], 2..6),
            0usize..6,
            prop_oneof![-1.0f64..-1e-9, 1e-9f64..1.0],
            0usize..6,
        ),
        |(coeffs, perturb, delta, rotate)| {
            let k = coeffs.len();
            let terms: Vec<TermDescriptor> = (0..k as u32).map(|p| TermDescriptor::monomial(vec![p])).collect();
            let model = |ts: Vec<TermDescriptor>, cs: Vec<f64>| {
                DiscoveredModel::new(vec!["u".into()], "u", ts, cs, 0.0, "test").unwrap()
            };
            let reference = model(terms.clone(), coeffs.clone());
            prop_assert_eq!(coefficient_error(&reference, &reference).unwrap(), 0.0);

            let mut ts = terms.clone();
            let mut cs = coeffs.clone();
            ts.rotate_left(rotate % k);
            cs.rotate_left(rotate % k);
            let reordered = model(ts, cs);
            prop_assert_eq!(coefficient_error(&reordered, &reference).unwrap(), 0.0);

            let mut off = coeffs.clone();
            off[perturb % k] += delta;
            let wrong = model(terms, off);
            prop_assert!(coefficient_error(&wrong, &reference).unwrap() > 0.0);

            Ok(())
        },
    )
}
