//! Selection of the spatiotemporal points that feed the regression.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleStrategy {
    All,
    UniformRandom,
    LatinHypercube,
}

/// Flat indices into a dataset, sorted ascending and unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    pub indices: Vec<usize>,
    pub seed: u64,
    pub strategy: SampleStrategy,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn all(dataset: &Dataset) -> Self {
        Self {
            indices: (0..dataset.len()).collect(),
            seed: 0,
            strategy: SampleStrategy::All,
        }
    }
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn subsample(dataset: &Dataset, n: usize, strategy: SampleStrategy, seed: u64) -> Result<SampleSet> {
    subsample_window(dataset, Some(n), strategy, seed, &SampleWindow::default())
}

/// Region of the grid eligible for sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleWindow {
    /// Nodes dropped next to each non-periodic end of every space axis.
    #[serde(default)]
    pub space_margin: usize,
    /// Leading time slices dropped, e.g. an initial transient that the time
    /// step does not resolve.
    #[serde(default)]
    pub skip_initial: usize,
}

/// Per-axis index ranges `[lo, hi)` admitted by `window`.
fn window_ranges(dataset: &Dataset, window: &SampleWindow) -> Vec<(usize, usize)> {
    let margin = window.space_margin;
    let periodic = dataset.fields().iter().all(|f| f.boundary.is_periodic());
    let shape = dataset.shape();
    let dims = dataset.space_dims();
    shape
        .iter()
        .enumerate()
        .map(|(d, &n)| {
            if d < dims && !periodic {
                (margin.min(n), n.saturating_sub(margin).max(margin.min(n)))
            } else if d == dims {
                (window.skip_initial.min(n), n)
            } else {
                (0, n)
            }
        })
        .collect()
}

fn in_ranges(dataset: &Dataset, ranges: &[(usize, usize)], flat: usize) -> bool {
    let shape = dataset.shape();
    let mut rem = flat;
    for d in (0..shape.len()).rev() {
        let i = rem % shape[d];
        rem /= shape[d];
        if i < ranges[d].0 || i >= ranges[d].1 {
            return false;
        }
    }
    true
}

/// Like [`subsample`], restricted to `window`. Boundary margins keep away
/// from nodes where one-sided stencils amplify error. `n = None` takes every
/// admissible point.
pub fn subsample_window(
    dataset: &Dataset,
    n: Option<usize>,
    strategy: SampleStrategy,
    seed: u64,
    window: &SampleWindow,
) -> Result<SampleSet> {
    let ranges = window_ranges(dataset, window);
    let candidates: Vec<usize> = if *window == SampleWindow::default() {
        (0..dataset.len()).collect()
    } else {
        (0..dataset.len()).filter(|&i| in_ranges(dataset, &ranges, i)).collect()
    };
    let total = candidates.len();
    let n = n.unwrap_or(total);
    if n == 0 || n > total {
        return Err(Error::invalid(format!(
            "sample count {n} outside 1..={total} for this grid"
        )));
    }
    let mut indices = match strategy {
        SampleStrategy::All => {
            if n != total {
                return Err(Error::invalid(format!(
                    "strategy `all` takes every point ({total}), got n = {n}"
                )));
            }
            candidates
        }
        SampleStrategy::UniformRandom => rand::seq::index::sample(&mut rng(seed), total, n)
            .into_iter()
            .map(|k| candidates[k])
            .collect(),
        SampleStrategy::LatinHypercube => latin_hypercube(dataset, n, seed, &ranges),
    };
    indices.sort_unstable();
    Ok(SampleSet {
        indices,
        seed,
        strategy,
    })
}

/// Latin-hypercube design on the unit box over `(space..., time)`, snapped to
/// grid cells. A point at unit coordinate `c` lands in cell `floor(c * count)`,
/// so one-stratum-per-sample carries over to indices whenever `n <= count`.
/// Collisions move to the nearest unused flat index, searching `+d` before `-d`.
fn latin_hypercube(dataset: &Dataset, n: usize, seed: u64, ranges: &[(usize, usize)]) -> Vec<usize> {
    let mut rng = rng(seed);
    let counts = dataset.shape();
    let dims = counts.len();

    let perms: Vec<Vec<usize>> = (0..dims)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();

    let total = dataset.len();
    // points outside the admissible box count as taken
    let mut used: Vec<bool> = (0..total).map(|i| !in_ranges(dataset, ranges, i)).collect();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut flat = 0usize;
        for d in 0..dims {
            let u: f64 = rng.random();
            let c = (perms[d][k] as f64 + u) / n as f64;
            let (lo, hi) = ranges[d];
            let cell = lo + ((c * (hi - lo) as f64).floor() as usize).min(hi - lo - 1);
            flat = flat * counts[d] + cell;
        }
        let chosen = nearest_unused(&used, flat);
        used[chosen] = true;
        out.push(chosen);
    }
    out
}

fn nearest_unused(used: &[bool], flat: usize) -> usize {
    if !used[flat] {
        return flat;
    }
    for d in 1..used.len() {
        if flat + d < used.len() && !used[flat + d] {
            return flat + d;
        }
        if d <= flat && !used[flat - d] {
            return flat - d;
        }
    }
    unreachable!("caller guarantees n <= total")
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::dataset::{BoundaryKind, Field, UniformAxis};

    fn grid(nx: usize, nt: usize) -> Dataset {
        Dataset::new(
            vec![UniformAxis::periodic(0.0, 1.0, nx)],
            UniformAxis::new(0.0, 0.1, nt),
            vec![Field {
                name: "u".into(),
                boundary: BoundaryKind::Periodic,
                values: vec![0.0; nx * nt],
            }],
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn window_skips_dirichlet_edges_and_transient() {
        let mut ds = grid(20, 10);
        ds = Dataset::new(
            ds.space_axes().to_vec(),
            *ds.time_axis(),
            vec![Field {
                name: "u".into(),
                boundary: BoundaryKind::DirichletHomogeneous,
                values: vec![0.0; 200],
            }],
            BTreeMap::new(),
        )
        .unwrap();
        let w = SampleWindow {
            space_margin: 3,
            skip_initial: 2,
        };
        let all = subsample_window(&ds, None, SampleStrategy::All, 0, &w).unwrap();
        assert_eq!(all.len(), 14 * 8);
        for strategy in [SampleStrategy::UniformRandom, SampleStrategy::LatinHypercube] {
            let s = subsample_window(&ds, Some(50), strategy, 5, &w).unwrap();
            assert_eq!(s.len(), 50);
            for &i in &s.indices {
                let (x, t) = ds.split_index(i);
                assert!((3..17).contains(&x) && t >= 2);
            }
        }
        assert!(subsample_window(&ds, Some(113), SampleStrategy::UniformRandom, 0, &w).is_err());
        // periodic space axes are never trimmed
        let p = subsample_window(&grid(20, 10), None, SampleStrategy::All, 0, &w).unwrap();
        assert_eq!(p.len(), 160);
    }

    #[test]
    fn all_is_identity() {
        let ds = grid(8, 5);
        let s = subsample(&ds, 40, SampleStrategy::All, 0).unwrap();
        assert_eq!(s.indices, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn too_many_points_rejected() {
        let ds = grid(8, 5);
        assert!(subsample(&ds, 41, SampleStrategy::UniformRandom, 0).is_err());
        assert!(subsample(&ds, 0, SampleStrategy::UniformRandom, 0).is_err());
    }

    #[test]
    fn lhs_stratifies_each_axis() {
        let ds = grid(100, 100);
        for seed in 0..20 {
            let s = subsample(&ds, 10, SampleStrategy::LatinHypercube, seed).unwrap();
            let mut x_strata = [0usize; 10];
            let mut t_strata = [0usize; 10];
            for &i in &s.indices {
                let (x, t) = ds.split_index(i);
                x_strata[x / 10] += 1;
                t_strata[t / 10] += 1;
            }
            assert_eq!(x_strata, [1; 10], "seed {seed}");
            assert_eq!(t_strata, [1; 10], "seed {seed}");
        }
    }

    #[test]
    fn lhs_resolves_collisions() {
        // More samples than spatial points forces shared cells.
        let ds = grid(4, 6);
        let s = subsample(&ds, 24, SampleStrategy::LatinHypercube, 3).unwrap();
        assert_eq!(s.indices, (0..24).collect::<Vec<_>>());
    }

    #[test]
    fn seeded_regeneration_is_identical() {
        let ds = grid(50, 40);
        for strategy in [SampleStrategy::UniformRandom, SampleStrategy::LatinHypercube] {
            let a = subsample(&ds, 300, strategy, 11).unwrap();
            let b = subsample(&ds, 300, strategy, 11).unwrap();
            let c = subsample(&ds, 300, strategy, 12).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.indices, c.indices);
            assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
