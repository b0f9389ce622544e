use serde::{Deserialize, Serialize};

use super::FieldSolution;
use crate::error::{Error, Result};

/// Richardson estimate from three successive refinements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub value: f64,
    /// `|value - finest|`.
    pub error: f64,
    /// Observed convergence order, when it could be estimated.
    pub order: Option<f64>,
    /// False when the sequence oscillates or does not contract.
    pub reliable: bool,
}

/// Extrapolates `values` (coarse to fine, refinement `ratio` between
/// levels) assuming the error behaves like `C h^p`.
pub fn richardson(values: [f64; 3], ratio: f64) -> Extrapolation {
    let [f0, f1, f2] = values;
    let d1 = f1 - f0;
    let d2 = f2 - f1;
    let scale = f0.abs().max(f1.abs()).max(f2.abs());
    let noise = 64.0 * f64::EPSILON * scale;
    if d1.abs() <= noise && d2.abs() <= noise {
        return Extrapolation {
            value: f2,
            error: (f2 - f1).abs(),
            order: None,
            reliable: true,
        };
    }
    if d1 * d2 <= 0.0 || d2.abs() >= d1.abs() {
        return Extrapolation {
            value: f2,
            error: d1.abs().max(d2.abs()),
            order: None,
            reliable: false,
        };
    }
    let p = (d1 / d2).ln() / ratio.ln();
    let value = f2 + d2 / (ratio.powf(p) - 1.0);
    Extrapolation {
        value,
        error: (value - f2).abs(),
        order: Some(p),
        reliable: true,
    }
}

/// Extrapolated energy per unit length from solutions at levels
/// `L, L+1, L+2` of the same geometry.
pub fn extrapolate_energy(solutions: &[FieldSolution]) -> Result<Extrapolation> {
    let [a, b, c] = solutions else {
        return Err(Error::InvalidArgument(format!(
            "extrapolation needs exactly three levels, got {}",
            solutions.len()
        )));
    };
    if b.mesh.level != a.mesh.level + 1 || c.mesh.level != b.mesh.level + 1 {
        return Err(Error::InvalidArgument(
            "solutions must come from successive refinement levels".into(),
        ));
    }
    Ok(richardson([a.energy_pul, b.energy_pul, c.energy_pul], 2.0))
}
