//! Multi-channel loss model `1/Q = sum_i r_i x_i + b`.
//!
//! `x_i = t_i tan(delta_i)` (m) is the loss product of interface channel `i`
//! and `b = 1/Q_bulk` the design-independent background. Fits are weighted
//! nonnegative least squares on `1/Q`; the default weight `Q^2` makes the
//! residuals relative errors in `Q`.
//!
//! A background offset of `b = 3e-7` alone limits every design to
//! `Q = 1/b`, about 3.3e6, close to the usual quoted `Q_bulk = 3e6`:
//!
//! ```
//! use surfloss::lossfit::{predict, LossParameters};
//! use surfloss::PerInterface;
//!
//! let background = LossParameters { x: PerInterface::default(), b: 3e-7 };
//! let r = PerInterface { sm: 7.5e3, sv: 2.9e3, mv: 75.0 };
//! let q = predict(&background, &r, 2.0 * std::f64::consts::PI * 5e9)
//!     .unwrap()
//!     .q()
//!     .unwrap();
//! assert!((q - 3.333e6).abs() < 1e3);
//! assert!((q / 3e6 - 1.0).abs() < 0.15);
//! ```

mod bootstrap;
mod identifiability;
mod nnls;
mod report;
mod select;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Interface;
use crate::participation::{PerInterface, SensitivityVector};

pub use bootstrap::{bootstrap, BootstrapOptions, ConfidenceInterval, MIN_BOOTSTRAP_DEVICES};
pub use identifiability::{
    identifiability, IdentifiabilityReport, UnresolvablePair, CONDITION_LIMIT, CORRELATION_LIMIT,
};
pub use nnls::{nnls, NnlsSolution};
pub use report::{plot_curve, write_plot_csv, FitReport, PlotPoint, ReportResidual};
pub use select::{select_designs, Selection, EXHAUSTIVE_LIMIT};

/// One fitted surface channel: a single interface or several merged ones
/// sharing a loss product.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Channel {
    members: Vec<Interface>,
}

impl Channel {
    pub fn single(interface: Interface) -> Self {
        Self {
            members: vec![interface],
        }
    }

    pub fn merged(interfaces: &[Interface]) -> Result<Self> {
        let mut members = interfaces.to_vec();
        members.sort();
        members.dedup();
        if members.is_empty() || members.len() != interfaces.len() {
            return Err(Error::InvalidArgument(format!(
                "a channel needs distinct interfaces, got {interfaces:?}"
            )));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Interface] {
        &self.members
    }

    /// Combined sensitivity of this channel for one design (1/m).
    pub fn sensitivity(&self, r: &PerInterface<f64>) -> f64 {
        self.members.iter().map(|&i| r.get(i)).sum()
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes: Vec<&str> = self.members.iter().map(|i| i.code()).collect();
        f.write_str(&codes.join("+"))
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split('+')
            .map(|p| p.trim().parse::<Interface>())
            .collect::<Result<Vec<_>>>()?;
        Channel::merged(&parts)
    }
}

impl TryFrom<String> for Channel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Channel> for String {
    fn from(c: Channel) -> String {
        c.to_string()
    }
}

/// Which parameters are fitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossModel {
    pub channels: Vec<Channel>,
    pub include_bulk: bool,
}

impl LossModel {
    pub fn new(channels: Vec<Channel>, include_bulk: bool) -> Result<Self> {
        if channels.is_empty() && !include_bulk {
            return Err(Error::InvalidArgument(
                "model needs at least one channel or the bulk term".into(),
            ));
        }
        for (k, a) in channels.iter().enumerate() {
            for b in &channels[..k] {
                if a.members.iter().any(|i| b.members.contains(i)) {
                    return Err(Error::InvalidArgument(format!(
                        "channels {b} and {a} share an interface"
                    )));
                }
            }
        }
        Ok(Self {
            channels,
            include_bulk,
        })
    }

    /// Parses a comma-separated channel list such as `SV` or `SM+SV,MV`.
    pub fn parse(channels: &str, include_bulk: bool) -> Result<Self> {
        let list = channels
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Channel>>>()?;
        Self::new(list, include_bulk)
    }

    pub fn parameter_count(&self) -> usize {
        self.channels.len() + usize::from(self.include_bulk)
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.channels.iter().map(|c| format!("x_{c}")).collect();
        if self.include_bulk {
            names.push("b".into());
        }
        names
    }

    /// Design-matrix row for one design: channel sensitivities then 1.
    fn row(&self, r: &PerInterface<f64>) -> Vec<f64> {
        let mut row: Vec<f64> = self.channels.iter().map(|c| c.sensitivity(r)).collect();
        if self.include_bulk {
            row.push(1.0);
        }
        row
    }

    /// Per-interface loss products and background from a parameter vector.
    pub fn parameters(&self, values: &[f64]) -> LossParameters {
        let mut x = PerInterface::default();
        for (c, &v) in self.channels.iter().zip(values) {
            for &i in &c.members {
                match i {
                    Interface::SubstrateMetal => x.sm = v,
                    Interface::SubstrateVacuum => x.sv = v,
                    Interface::MetalVacuum => x.mv = v,
                }
            }
        }
        let b = if self.include_bulk {
            values[self.channels.len()]
        } else {
            0.0
        };
        LossParameters { x, b }
    }
}

/// Physical loss parameters: loss product per interface (m) and `1/Q_bulk`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParameters {
    pub x: PerInterface<f64>,
    pub b: f64,
}

impl LossParameters {
    pub fn inverse_q(&self, r: &PerInterface<f64>) -> f64 {
        Interface::ALL
            .iter()
            .map(|&i| r.get(i) * self.x.get(i))
            .sum::<f64>()
            + self.b
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x.sm, self.x.sv, self.x.mv, self.b];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "loss parameters must be finite and nonnegative, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Predicted quality factor of one design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Finite {
        q: f64,
        t1: f64,
    },
    /// The model has no loss for this design.
    Unbounded,
}

impl Prediction {
    pub fn q(&self) -> Option<f64> {
        match self {
            Prediction::Finite { q, .. } => Some(*q),
            Prediction::Unbounded => None,
        }
    }
}

/// `Q = 1 / (sum r_i x_i + b)` and `T1 = Q / omega`.
pub fn predict(params: &LossParameters, r: &PerInterface<f64>, omega: f64) -> Result<Prediction> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "angular frequency must be positive, got {omega}"
        )));
    }
    let loss = params.inverse_q(r);
    if !(loss >= 0.0 && loss.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid total loss {loss}")));
    }
    if loss == 0.0 {
        return Ok(Prediction::Unbounded);
    }
    let q = 1.0 / loss;
    Ok(Prediction::Finite { q, t1: q / omega })
}

/// One device: its design sensitivities and measured quality factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub design: String,
    pub r: PerInterface<f64>,
    pub q: f64,
    pub weight: f64,
    /// Optional grouping label (wafer) for group-balanced weights.
    pub group: Option<String>,
}

impl Observation {
    /// Observation with the default weight `Q^2`.
    pub fn new(design: &SensitivityVector, q: f64) -> Self {
        Self {
            design: design.design.clone(),
            r: design.r,
            q,
            weight: q * q,
            group: None,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

/// Rescales weights so every group carries the same total weight while
/// keeping relative weights inside a group. Observations without a group
/// form one group of their own.
pub fn balance_groups(observations: &mut [Observation]) {
    let mut totals: Vec<(Option<String>, f64)> = Vec::new();
    for o in observations.iter() {
        match totals.iter_mut().find(|(g, _)| *g == o.group) {
            Some((_, t)) => *t += o.weight,
            None => totals.push((o.group.clone(), o.weight)),
        }
    }
    let mean = totals.iter().map(|(_, t)| t).sum::<f64>() / totals.len().max(1) as f64;
    for o in observations.iter_mut() {
        let total = totals
            .iter()
            .find(|(g, _)| *g == o.group)
            .expect("collected above")
            .1;
        if total > 0.0 {
            o.weight *= mean / total;
        }
    }
}

/// Per-device fit residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub design: String,
    pub q_measured: f64,
    /// `None` when the model predicts no loss.
    pub q_predicted: Option<f64>,
    /// `1/Q_measured - 1/Q_model`.
    pub inverse_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossFit {
    pub model: LossModel,
    /// Loss product per model channel (m), nonnegative.
    pub x: Vec<f64>,
    /// `1/Q_bulk`, zero when the bulk term is excluded.
    pub b: f64,
    /// Parameter covariance in model order; rows and columns of parameters
    /// at the zero bound are zero.
    pub covariance: Vec<Vec<f64>>,
    /// Weighted residual sum of squares.
    pub rss: f64,
    pub residuals: Vec<Residual>,
    pub intervals: Vec<ConfidenceInterval>,
    pub identifiability: IdentifiabilityReport,
}

impl LossFit {
    pub fn values(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        if self.model.include_bulk {
            v.push(self.b);
        }
        v
    }

    pub fn parameters(&self) -> LossParameters {
        self.model.parameters(&self.values())
    }

    pub fn q_bulk(&self) -> Option<f64> {
        (self.b > 0.0).then(|| 1.0 / self.b)
    }

    pub fn predict(&self, design: &SensitivityVector, omega: f64) -> Result<Prediction> {
        predict(&self.parameters(), &design.r, omega)
    }

    /// Root of the weighted residual sum of squares.
    pub fn residual_norm(&self) -> f64 {
        self.rss.sqrt()
    }
}

/// Weighted design matrix and target: rows `sqrt(w) [r..., 1]`, `sqrt(w)/Q`.
fn weighted_system(
    observations: &[Observation],
    model: &LossModel,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = observations.len();
    let p = model.parameter_count();
    for (k, o) in observations.iter().enumerate() {
        if !(o.q > 0.0 && o.q.is_finite()) {
            return Err(Error::Data(format!(
                "device {k} ({}): Q must be positive, got {}",
                o.design, o.q
            )));
        }
        if !(o.weight >= 0.0 && o.weight.is_finite()) {
            return Err(Error::Data(format!(
                "device {k} ({}): invalid weight {}",
                o.design, o.weight
            )));
        }
    }
    let mut a = DMatrix::zeros(m, p);
    let mut y = DVector::zeros(m);
    for (k, o) in observations.iter().enumerate() {
        let s = o.weight.sqrt();
        for (j, v) in model.row(&o.r).into_iter().enumerate() {
            a[(k, j)] = s * v;
        }
        y[k] = s / o.q;
    }
    Ok((a, y))
}

/// NNLS parameters only; shared by `fit` and the bootstrap.
fn solve_parameters(observations: &[Observation], model: &LossModel) -> Result<Vec<f64>> {
    let (a, y) = weighted_system(observations, model)?;
    Ok(nnls(&a, &y)?.x.iter().copied().collect())
}

/// Weighted NNLS fit of `1/Q` to the model.
pub fn fit(observations: &[Observation], model: &LossModel) -> Result<LossFit> {
    let m = observations.len();
    let p = model.parameter_count();
    if m < p {
        return Err(Error::Underdetermined {
            observations: m,
            parameters: p,
        });
    }
    for (j, c) in model.channels.iter().enumerate() {
        if observations.iter().all(|o| model.row(&o.r)[j] == 0.0) {
            return Err(Error::ZeroColumn(c.to_string()));
        }
    }
    let (a, y) = weighted_system(observations, model)?;
    let sol = nnls(&a, &y)?;
    let values: Vec<f64> = sol.x.iter().copied().collect();

    // Covariance of the unconstrained problem restricted to the active set.
    let active: Vec<usize> = (0..p).filter(|&j| values[j] > 0.0).collect();
    let rss = sol.residual_norm.powi(2);
    let mut covariance = vec![vec![0.0; p]; p];
    if !active.is_empty() {
        let dof = m.saturating_sub(active.len()).max(1) as f64;
        let s2 = rss / dof;
        let j = a.select_columns(&active);
        let info = j.tr_mul(&j);
        let tol = f64::EPSILON * info.norm();
        let inv = info
            .clone()
            .try_inverse()
            .or_else(|| info.pseudo_inverse(tol).ok());
        if let Some(inv) = inv {
            for (ka, &ia) in active.iter().enumerate() {
                for (kb, &ib) in active.iter().enumerate() {
                    covariance[ia][ib] = s2 * inv[(ka, kb)];
                }
            }
        }
    }

    let params = model.parameters(&values);
    let residuals = observations
        .iter()
        .map(|o| {
            let model_loss = params.inverse_q(&o.r);
            Residual {
                design: o.design.clone(),
                q_measured: o.q,
                q_predicted: (model_loss > 0.0).then(|| 1.0 / model_loss),
                inverse_q: 1.0 / o.q - model_loss,
            }
        })
        .collect();
    let weights: Vec<f64> = observations.iter().map(|o| o.weight).collect();
    let rows: Vec<Vec<f64>> = observations.iter().map(|o| model.row(&o.r)).collect();
    let identifiability = identifiability::from_rows(&rows, &weights, model);

    let (x, b) = if model.include_bulk {
        (values[..p - 1].to_vec(), values[p - 1])
    } else {
        (values, 0.0)
    };
    Ok(LossFit {
        model: model.clone(),
        x,
        b,
        covariance,
        rss,
        residuals,
        intervals: Vec::new(),
        identifiability,
    })
}

/// How the `Q^2` fit weights are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Measured `Q^2`, used as given.
    Measured,
    /// `Q^2` of the fitted model, by iterative reweighting. Avoids the
    /// downward bias measured weights give under multiplicative scatter.
    #[default]
    Model,
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "measured" => Ok(Weighting::Measured),
            "model" => Ok(Weighting::Model),
            _ => Err(Error::InvalidArgument(format!(
                "unknown weighting {s:?} (expected measured or model)"
            ))),
        }
    }
}

/// Reweighting passes for [`Weighting::Model`].
pub const REWEIGHT_ITERATIONS: usize = 3;

/// Fits with the chosen weighting. Returns the fit and the observations
/// carrying the final weights, which the bootstrap should reuse.
pub fn fit_weighted(
    observations: &[Observation],
    model: &LossModel,
    weighting: Weighting,
) -> Result<(LossFit, Vec<Observation>)> {
    let mut obs = observations.to_vec();
    let mut result = fit(&obs, model)?;
    if weighting == Weighting::Model {
        for _ in 0..REWEIGHT_ITERATIONS {
            let p = result.parameters();
            for (o, base) in obs.iter_mut().zip(observations) {
                let loss = p.inverse_q(&o.r);
                if loss > 0.0 {
                    // Replace measured Q^2 by model Q^2, keeping any
                    // group balancing already folded into the weight.
                    o.weight = base.weight / (base.q * loss).powi(2);
                }
            }
            result = fit(&obs, model)?;
        }
    }
    Ok((result, obs))
}
