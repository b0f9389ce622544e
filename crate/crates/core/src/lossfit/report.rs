use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{IdentifiabilityReport, LossFit, LossModel, Weighting};
use crate::error::{Error, Result};

/// Lower end of the emitted `1/r` axis (m).
pub const PLOT_INV_R_MIN: f64 = 1e-8;
/// Upper end of the emitted `1/r` axis (m).
pub const PLOT_INV_R_MAX: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParameter {
    pub name: String,
    /// `m` for loss products, `1` for the dimensionless background.
    pub unit: String,
    pub value: f64,
    pub std_error: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResidual {
    pub design: String,
    pub q_measured: f64,
    pub q_predicted: Option<f64>,
    pub inverse_q_residual: f64,
}

/// Serialised form of a fit, written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: LossModel,
    pub weighting: Weighting,
    pub n_devices: usize,
    pub parameters: Vec<ReportParameter>,
    /// `1/b`, absent when the background is zero or not fitted.
    pub q_bulk: Option<f64>,
    pub ci_level: Option<f64>,
    pub bootstrap_resamples: Option<usize>,
    pub seed: Option<u64>,
    pub weighted_rss: f64,
    pub identifiability: IdentifiabilityReport,
    pub residuals: Vec<ReportResidual>,
}

impl FitReport {
    pub fn from_fit(
        fit: &LossFit,
        weighting: Weighting,
        bootstrap_resamples: Option<usize>,
        seed: Option<u64>,
    ) -> Self {
        let values = fit.values();
        let parameters = fit
            .model
            .parameter_names()
            .into_iter()
            .enumerate()
            .map(|(j, name)| {
                let ci = fit.intervals.iter().find(|ci| ci.parameter == name);
                ReportParameter {
                    unit: if name == "b" { "1" } else { "m" }.into(),
                    value: values[j],
                    std_error: fit.covariance[j][j].max(0.0).sqrt(),
                    ci_lower: ci.map(|c| c.lower),
                    ci_upper: ci.map(|c| c.upper),
                    name,
                }
            })
            .collect();
        FitReport {
            model: fit.model.clone(),
            weighting,
            n_devices: fit.residuals.len(),
            parameters,
            q_bulk: fit.q_bulk(),
            ci_level: fit.intervals.first().map(|c| c.level),
            bootstrap_resamples,
            seed,
            weighted_rss: fit.rss,
            identifiability: fit.identifiability.clone(),
            residuals: fit
                .residuals
                .iter()
                .map(|r| ReportResidual {
                    design: r.design.clone(),
                    q_measured: r.q_measured,
                    q_predicted: r.q_predicted,
                    inverse_q_residual: r.inverse_q,
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn parameter(&self, name: &str) -> Option<&ReportParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// One sample of the `Q` versus `1/r` curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub inv_r_m: f64,
    /// `1 / (r x + b)`.
    pub q_model: f64,
    /// `1 / (r x)`: the surface line through the origin.
    pub q_surface_only: f64,
    /// `1 / b`.
    pub q_background: f64,
}

/// Model curve for one channel loss product `x` (m) and background `b`,
/// log-spaced over `1/r` from 1e-8 m to 1e-2 m.
pub fn plot_curve(x: f64, b: f64, points: usize) -> Result<Vec<PlotPoint>> {
    if points < 2 {
        return Err(Error::InvalidArgument(
            "a curve needs at least 2 points".into(),
        ));
    }
    if !(x >= 0.0 && b >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "negative loss parameters x = {x}, b = {b}"
        )));
    }
    let (lo, hi) = (PLOT_INV_R_MIN.log10(), PLOT_INV_R_MAX.log10());
    Ok((0..points)
        .map(|k| {
            let inv_r = if k == 0 {
                PLOT_INV_R_MIN
            } else if k == points - 1 {
                PLOT_INV_R_MAX
            } else {
                10f64.powf(lo + (hi - lo) * k as f64 / (points - 1) as f64)
            };
            let surface = x / inv_r;
            PlotPoint {
                inv_r_m: inv_r,
                q_model: 1.0 / (surface + b),
                q_surface_only: 1.0 / surface,
                q_background: 1.0 / b,
            }
        })
        .collect())
}

pub fn write_plot_csv<W: Write>(out: W, curve: &[PlotPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["inv_r_m", "Q_model", "Q_surface_only", "Q_background"])?;
    for p in curve {
        w.write_record(
            [p.inv_r_m, p.q_model, p.q_surface_only, p.q_background].map(|v| format!("{v:e}")),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_limits() {
        let (x, b) = (1.6e-11, 1.0 / 3e6);
        let c = plot_curve(x, b, 121).unwrap();
        assert_eq!(c.len(), 121);
        assert_eq!(c[0].inv_r_m, 1e-8);
        assert_eq!(c[120].inv_r_m, 1e-2);
        assert!((c[120].q_model / c[120].q_background - 1.0).abs() < 0.01);
        assert!((c[0].q_model / c[0].q_surface_only - 1.0).abs() < 0.01);
        assert!(c.windows(2).all(|w| w[1].q_model > w[0].q_model));
    }

    #[test]
    fn csv_header_and_infinities() {
        let c = plot_curve(0.0, 1e-6, 3).unwrap();
        let mut buf = Vec::new();
        write_plot_csv(&mut buf, &c).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "inv_r_m,Q_model,Q_surface_only,Q_background"
        );
        assert!(lines.next().unwrap().contains("inf"));
    }
}
