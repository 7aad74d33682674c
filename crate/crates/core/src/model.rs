//! Identified equations: active terms with their fitted coefficients.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{render_term, TermDescriptor};

/// `target_t = sum_j coefficients[j] * terms[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredModel {
    /// Variable names indexed by [`TermDescriptor::powers`].
    pub variables: Vec<String>,
    pub target_field: String,
    pub terms: Vec<TermDescriptor>,
    /// Display names, kept in the JSON for readability only.
    pub term_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub residual: f64,
    /// Producing method, e.g. `bg-sindy`, `stlsq`.
    pub method: String,
    /// Set when a thresholding method eliminated every term.
    #[serde(default)]
    pub empty: bool,
}

impl DiscoveredModel {
    /// Validate and sort terms into canonical order.
    pub fn new(
        variables: Vec<String>,
        target_field: impl Into<String>,
        terms: Vec<TermDescriptor>,
        coefficients: Vec<f64>,
        residual: f64,
        method: impl Into<String>,
    ) -> Result<Self> {
        if terms.len() != coefficients.len() {
            return Err(Error::invalid(format!(
                "{} terms but {} coefficients",
                terms.len(),
                coefficients.len()
            )));
        }
        if !(residual >= 0.0) {
            return Err(Error::invalid(format!("residual {residual} is negative or NaN")));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("model coefficients".into()));
        }
        let mut pairs: Vec<(TermDescriptor, f64)> = terms.into_iter().zip(coefficients).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate terms in model"));
        }
        for (t, _) in &pairs {
            if t.powers.len() != variables.len() || t.derivative.as_ref().is_some_and(|d| d.field >= variables.len()) {
                return Err(Error::invalid("term refers to an unknown variable"));
            }
        }
        let (terms, coefficients): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let term_names = terms.iter().map(|t| render_term(t, &variables)).collect();
        Ok(Self {
            empty: terms.is_empty(),
            variables,
            target_field: target_field.into(),
            terms,
            term_names,
            coefficients,
            residual,
            method: method.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, term: &TermDescriptor) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.coefficients[i])
    }

    /// Human-readable right-hand side, e.g. `u_t = -1.000000 u u_x - 4.840000e-4 u_{xxx}`.
    pub fn equation(&self) -> String {
        let mut s = format!("{}_t =", self.target_field);
        if self.terms.is_empty() {
            s.push_str(" 0");
        }
        for (i, (name, &c)) in self.term_names.iter().zip(&self.coefficients).enumerate() {
            let sign = if c < 0.0 {
                "-"
            } else if i == 0 {
                ""
            } else {
                "+"
            };
            let mag = c.abs();
            let num = if mag != 0.0 && !(1e-3..1e4).contains(&mag) {
                format!("{mag:.6e}")
            } else {
                format!("{mag:.6}")
            };
            let sep = if i == 0 { "" } else { " " };
            if name == "1" {
                s.push_str(&format!(" {sign}{sep}{num}"));
            } else {
                s.push_str(&format!(" {sign}{sep}{num} {name}"));
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parse and re-validate a model.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: DiscoveredModel = serde_json::from_str(text)?;
        let mut m = Self::new(
            raw.variables,
            raw.target_field,
            raw.terms,
            raw.coefficients,
            raw.residual,
            raw.method,
        )?;
        m.empty |= raw.empty;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kdv() -> DiscoveredModel {
        DiscoveredModel::new(
            vec!["u".into()],
            "u",
            vec![TermDescriptor::poly_deriv_1d(0, 3), TermDescriptor::poly_deriv_1d(1, 1)],
            vec![-4.84e-4, -1.0],
            0.0,
            "reference",
        )
        .unwrap()
    }

    #[test]
    fn sorted_and_rendered() {
        let m = kdv();
        assert_eq!(m.term_names, ["u u_x", "u_{xxx}"]);
        assert_eq!(m.coefficients, [-1.0, -4.84e-4]);
        assert_eq!(m.equation(), "u_t = -1.000000 u u_x - 4.840000e-4 u_{xxx}");
    }

    #[test]
    fn json_round_trip() {
        let m = kdv();
        assert_eq!(DiscoveredModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn rejects_invalid() {
        let t = TermDescriptor::poly_deriv_1d(1, 1);
        let vars = vec!["u".to_string()];
        assert!(DiscoveredModel::new(vars.clone(), "u", vec![t.clone()], vec![], 0.0, "x").is_err());
        assert!(DiscoveredModel::new(vars.clone(), "u", vec![t.clone(), t.clone()], vec![1.0, 2.0], 0.0, "x").is_err());
        assert!(DiscoveredModel::new(vars, "u", vec![t], vec![1.0], -1.0, "x").is_err());
    }

    #[test]
    fn empty_model() {
        let m = DiscoveredModel::new(vec!["u".into()], "u", vec![], vec![], 1.0, "stlsq").unwrap();
        assert!(m.empty);
        assert_eq!(m.equation(), "u_t = 0");
    }
}
