use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::LossModel;
use crate::error::{Error, Result};
use crate::participation::SensitivityVector;

/// Column pairs more correlated than this cannot be told apart.
pub const CORRELATION_LIMIT: f64 = 0.98;
/// Condition numbers above this mark the fit as ill-conditioned.
pub const CONDITION_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnresolvablePair {
    pub first: String,
    pub second: String,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    /// Channel names in model order, then `bulk` when fitted.
    pub columns: Vec<String>,
    /// Cosine similarity between design-matrix columns.
    pub correlations: Vec<Vec<f64>>,
    /// Condition number of the weighted, column-equilibrated design matrix;
    /// infinite when rank deficient.
    #[serde(with = "infinite_as_null")]
    pub condition_number: f64,
    pub ill_conditioned: bool,
    pub unresolvable: Vec<UnresolvablePair>,
}

impl IdentifiabilityReport {
    pub fn is_flagged(&self, first: &str, second: &str) -> bool {
        self.unresolvable.iter().any(|p| {
            (p.first == first && p.second == second) || (p.first == second && p.second == first)
        })
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn column_names(model: &LossModel) -> Vec<String> {
    let mut names: Vec<String> = model.channels.iter().map(|c| c.to_string()).collect();
    if model.include_bulk {
        names.push("bulk".into());
    }
    names
}

/// Diagnostics for design-matrix `rows` (one per observation) with weights.
pub(super) fn from_rows(
    rows: &[Vec<f64>],
    weights: &[f64],
    model: &LossModel,
) -> IdentifiabilityReport {
    let columns = column_names(model);
    let p = columns.len();
    let m = rows.len();
    let raw = DMatrix::from_fn(m, p, |i, j| rows[i][j]);
    let norms: Vec<f64> = (0..p).map(|j| raw.column(j).norm()).collect();

    let mut correlations = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in 0..p {
            correlations[a][b] = if a == b {
                1.0
            } else if norms[a] > 0.0 && norms[b] > 0.0 {
                (raw.column(a).dot(&raw.column(b)) / (norms[a] * norms[b])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
    }
    let mut unresolvable = Vec::new();
    for a in 0..p {
        for b in a + 1..p {
            if correlations[a][b].abs() > CORRELATION_LIMIT {
                unresolvable.push(UnresolvablePair {
                    first: columns[a].clone(),
                    second: columns[b].clone(),
                    correlation: correlations[a][b],
                });
            }
        }
    }

    let mut weighted = DMatrix::from_fn(m, p, |i, j| weights[i].sqrt() * rows[i][j]);
    let mut condition_number = f64::INFINITY;
    if m >= p && p > 0 {
        let mut degenerate = false;
        for j in 0..p {
            let n = weighted.column(j).norm();
            if n > 0.0 {
                weighted.column_mut(j).unscale_mut(n);
            } else {
                degenerate = true;
            }
        }
        if !degenerate {
            let sv = weighted.singular_values();
            let (max, min) = (sv.max(), sv.min());
            if min > 0.0 {
                condition_number = (max / min).max(1.0);
            }
        }
    }
    IdentifiabilityReport {
        columns,
        correlations,
        condition_number,
        ill_conditioned: !(condition_number <= CONDITION_LIMIT),
        unresolvable,
    }
}

/// Column correlations and conditioning of the unweighted design matrix
/// built from one row per design.
pub fn identifiability(
    sensitivities: &[SensitivityVector],
    model: &LossModel,
) -> Result<IdentifiabilityReport> {
    let mut names: Vec<&str> = sensitivities.iter().map(|s| s.design.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "identifiability needs at least 2 designs, got {}",
            names.len()
        )));
    }
    let rows: Vec<Vec<f64>> = sensitivities.iter().map(|s| model.row(&s.r)).collect();
    Ok(from_rows(&rows, &vec![1.0; rows.len()], model))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(name: &str, sm: f64, sv: f64, mv: f64) -> SensitivityVector {
        SensitivityVector::new(name, sm, sv, mv)
    }

    #[test]
    fn proportional_columns_are_flagged() {
        let set = vec![
            sv("a", 2.0, 1.0, 0.0),
            sv("b", 6.0, 3.0, 1.0),
            sv("c", 1.0, 0.5, 2.0),
        ];
        let model = LossModel::parse("SM,SV", false).unwrap();
        let r = identifiability(&set, &model).unwrap();
        assert!((r.correlations[0][1] - 1.0).abs() < 1e-12);
        assert!(r.is_flagged("SV", "SM"));
        assert!(r.ill_conditioned);
    }

    #[test]
    fn orthogonal_columns_are_clean() {
        let set = vec![sv("a", 1.0, 0.0, 0.0), sv("b", 0.0, 1.0, 0.0)];
        let model = LossModel::parse("SM,SV", false).unwrap();
        let r = identifiability(&set, &model).unwrap();
        assert_eq!(r.correlations[0][1], 0.0);
        assert!(r.unresolvable.is_empty());
        assert!((r.condition_number - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_design_rejected() {
        let model = LossModel::parse("SV", true).unwrap();
        assert!(identifiability(&[sv("a", 1.0, 1.0, 1.0)], &model).is_err());
        assert!(
            identifiability(&[sv("a", 1.0, 1.0, 1.0), sv("a", 1.0, 2.0, 1.0)], &model).is_err()
        );
    }

    #[test]
    fn bounds_hold_and_infinity_serialises_as_null() {
        let set = vec![sv("a", 1.0, 2.0, 3.0), sv("b", 2.0, 4.0, 6.0)];
        let model = LossModel::parse("SM,SV,MV", true).unwrap();
        let r = identifiability(&set, &model).unwrap();
        assert!(r.condition_number.is_infinite());
        for row in &r.correlations {
            assert!(row.iter().all(|c| (-1.0..=1.0).contains(c)));
        }
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"condition_number\":null"));
        let back: IdentifiabilityReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }
}
