//! Surface-loss participation ratios for planar capacitor geometries and
//! multi-channel loss fitting of measured qubit quality factors.
//!
//! The pipeline runs geometry -> field solve -> participation -> fit:
//!
//! * [`geometry`] describes designs as length-weighted 2D cross-sections.
//! * [`fieldsolver`] solves the electrostatic problem on a graded grid,
//!   including floating conductors.
//! * [`participation`] turns a solution into thin-layer participation
//!   ratios `R` and sensitivities `r = R / t` per interface.
//! * [`lossfit`] regresses `1/Q` on the sensitivities with nonnegative
//!   least squares, bootstrap intervals and identifiability diagnostics.
//! * [`measurements`] loads and aggregates T1 data into quality factors.

// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fieldsolver;
pub mod geometry;
pub mod lossfit;
pub mod measurements;
pub mod participation;
mod units;

pub use error::{Error, Result};
pub use fieldsolver::{Drive, FieldSolution, Mesh};
pub use geometry::{Conductor, CrossSection, DesignSpec, Interface, LayerSpec, Terminal};
pub use lossfit::{Channel, LossFit, LossModel, Observation};
pub use measurements::{Ensemble, QubitMeasurement};
pub use participation::{ParticipationReport, PerInterface, SensitivityVector};
pub use units::EPS0;
