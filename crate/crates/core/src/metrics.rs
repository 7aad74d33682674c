//! Coefficient error, relative L2 error and structural comparison of models.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::DiscoveredModel;

/// Mean of `|xi - xi_true| / |xi_true|` over terms present in both models.
pub fn coefficient_error(discovered: &DiscoveredModel, reference: &DiscoveredModel) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (term, &truth) in reference.terms.iter().zip(&reference.coefficients) {
        if let Some(c) = discovered.coefficient(term) {
            if truth == 0.0 {
                return Err(Error::invalid("reference coefficient is zero"));
            }
            sum += (c - truth).abs() / truth.abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoCommonTerms);
    }
    Ok(sum / count as f64)
}

/// `||pred - ref|| / ||ref||` over every grid point of one field.
pub fn relative_l2(predicted: &Dataset, reference: &Dataset, field: &str) -> Result<f64> {
    if predicted.space_axes() != reference.space_axes() || predicted.time_axis() != reference.time_axis() {
        return Err(Error::ShapeMismatch("predicted and reference grids differ".into()));
    }
    let p = &predicted.field(field)?.values;
    let r = &reference.field(field)?.values;
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in p.iter().zip(r) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    if den == 0.0 {
        return Err(Error::invalid("reference field has zero norm"));
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDiff {
    pub term: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub matches: bool,
    /// Reference terms absent from the discovered model.
    pub missing: Vec<TermDiff>,
    /// Discovered terms absent from the reference.
    pub spurious: Vec<TermDiff>,
}

/// Compare term sets by descriptor, never by display string.
pub fn structure_match(discovered: &DiscoveredModel, reference: &DiscoveredModel) -> StructureReport {
    let diff = |a: &DiscoveredModel, b: &DiscoveredModel| -> Vec<TermDiff> {
        a.terms
            .iter()
            .enumerate()
            .filter(|(_, t)| !b.terms.contains(t))
            .map(|(i, _)| TermDiff {
                term: a.term_names[i].clone(),
                coefficient: a.coefficients[i],
            })
            .collect()
    };
    let missing = diff(reference, discovered);
    let spurious = diff(discovered, reference);
    StructureReport {
        matches: missing.is_empty() && spurious.is_empty(),
        missing,
        spurious,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::dataset::{BoundaryKind, Field, UniformAxis};
    use crate::library::TermDescriptor;

    fn model(terms: &[(u32, u32, f64)]) -> DiscoveredModel {
        DiscoveredModel::new(
            vec!["u".into()],
            "u",
            terms
                .iter()
                .map(|&(p, q, _)| TermDescriptor::poly_deriv_1d(p, q))
                .collect(),
            terms.iter().map(|t| t.2).collect(),
            0.0,
            "test",
        )
        .unwrap()
    }

    #[test]
    fn coefficient_error_cases() {
        let r = model(&[(1, 1, -1.0), (0, 3, -4.84e-4)]);
        assert_eq!(coefficient_error(&r, &r).unwrap(), 0.0);
        let a = model(&[(0, 0, 2.1)]);
        let b = model(&[(0, 0, 2.0)]);
        assert!((coefficient_error(&a, &b).unwrap() - 0.05).abs() < 1e-14);
        assert!(matches!(
            coefficient_error(&model(&[(2, 2, 1.0)]), &r),
            Err(Error::NoCommonTerms)
        ));
    }

    #[test]
    fn structure_cases() {
        let r = model(&[(1, 1, -1.0), (0, 3, -4.84e-4)]);
        assert!(structure_match(&r, &r).matches);
        let s = structure_match(&model(&[(1, 1, -0.9)]), &r);
        assert!(!s.matches);
        assert_eq!(s.missing.len(), 1);
        assert_eq!(s.missing[0].term, "u_{xxx}");
        let extra = model(&[(1, 1, -1.0), (0, 3, -4.84e-4), (2, 0, 0.1)]);
        let s = structure_match(&extra, &r);
        assert_eq!(s.spurious.len(), 1);
        assert!(s.missing.is_empty());
    }

    fn ds(values: Vec<f64>) -> Dataset {
        Dataset::new(
            vec![UniformAxis::periodic(0.0, 1.0, 4)],
            UniformAxis::new(0.0, 0.1, values.len() / 4),
            vec![Field {
                name: "u".into(),
                boundary: BoundaryKind::Periodic,
                values,
            }],
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn relative_l2_cases() {
        let v: Vec<f64> = (0..20).map(|i| (i as f64).sin() + 2.0).collect();
        let r = ds(v.clone());
        assert_eq!(relative_l2(&r, &r, "u").unwrap(), 0.0);
        let p = ds(v.iter().map(|x| 1.01 * x).collect());
        assert!((relative_l2(&p, &r, "u").unwrap() - 0.01).abs() < 1e-14);
        let short = ds(v[..16].to_vec());
        assert!(relative_l2(&short, &r, "u").is_err());
        assert!(relative_l2(&r, &ds(vec![0.0; 20]), "u").is_err());
    }
}
