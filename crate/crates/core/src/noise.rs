//! Additive Gaussian measurement noise scaled by the field's spread.

use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::sampling::rng;

/// Population standard deviation (1/N convention).
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Returns a copy with `field` replaced by `u + gamma * std(u) * N(0, 1)`.
pub fn add_noise(dataset: &Dataset, field: &str, gamma: f64, seed: u64) -> Result<Dataset> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("noise amplitude must be >= 0, got {gamma}")));
    }
    let values = &dataset.field(field)?.values;
    if gamma == 0.0 {
        return Ok(dataset.clone());
    }
    let scale = gamma * population_std(values);
    let mut rng = rng(seed);
    let noisy = values
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + scale * z
        })
        .collect();
    Ok(dataset.with_field_values(field, noisy)?.with_metadata(
        format!("noise.{field}"),
        json!({ "gamma": gamma, "seed": seed, "std_convention": "population" }),
    ))
}
