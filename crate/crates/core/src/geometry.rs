//! Planar device geometry: conductors on a substrate surface, grouped into
//! length-weighted cross-sections.
//!
//! Every conductor is a zero-thickness strip lying on the line `y = 0`.
//! The substrate fills `y < 0`, vacuum fills `y > 0`, and the whole problem
//! sits in a grounded box `[-halfwidth, halfwidth] x [-height, height]`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Box half-width as a multiple of the lateral pattern extent in reference
/// designs. `validate` only requires 5x.
pub const DEFAULT_BOX_FACTOR: f64 = 10.0;
/// Minimum box half-width relative to the pattern extent.
pub const MIN_BOX_FACTOR: f64 = 5.0;
/// Isotropic average relative permittivity of sapphire.
pub const DEFAULT_SUBSTRATE_EPS: f64 = 10.0;
/// Relative permittivity assumed for the imputed lossy layer.
pub const DEFAULT_LAYER_EPS: f64 = 6.2;
/// Conventional layer thickness (m). Only `t * tan(delta)` is observable.
pub const DEFAULT_LAYER_THICKNESS: f64 = 3e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Terminal {
    Plus,
    Minus,
    Ground,
    Floating,
}

impl Terminal {
    pub fn is_driven(self) -> bool {
        !matches!(self, Terminal::Floating)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conductor {
    pub x_min: f64,
    pub x_max: f64,
    pub terminal: Terminal,
}

impl Conductor {
    pub fn new(x_min: f64, x_max: f64, terminal: Terminal) -> Self {
        Self {
            x_min,
            x_max,
            terminal,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
}

/// A 2D electrostatic problem: strips on the substrate surface inside a
/// grounded box.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub name: String,
    pub conductors: Vec<Conductor>,
    pub substrate_eps: f64,
    pub box_halfwidth: f64,
    pub box_height: f64,
}

impl CrossSection {
    /// Lateral extent `(min, max)` of the conductor pattern.
    pub fn pattern_span(&self) -> Option<(f64, f64)> {
        let lo = self.conductors.iter().map(|c| c.x_min).reduce(f64::min)?;
        let hi = self.conductors.iter().map(|c| c.x_max).reduce(f64::max)?;
        Some((lo, hi))
    }

    pub fn pattern_extent(&self) -> f64 {
        self.pattern_span().map_or(0.0, |(lo, hi)| hi - lo)
    }

    /// Conductors sorted by position, with their original indices.
    pub(crate) fn sorted_conductors(&self) -> Vec<(usize, &Conductor)> {
        let mut v: Vec<_> = self.conductors.iter().enumerate().collect();
        v.sort_by(|a, b| a.1.x_min.total_cmp(&b.1.x_min));
        v
    }

    /// Smallest conductor width or inter-conductor gap.
    pub fn smallest_feature(&self) -> f64 {
        let sorted = self.sorted_conductors();
        let widths = sorted.iter().map(|(_, c)| c.width());
        let gaps = sorted.windows(2).map(|w| w[1].1.x_min - w[0].1.x_max);
        widths.chain(gaps).fold(f64::INFINITY, f64::min)
    }

    /// Local length scale at each conductor edge: the smaller of the
    /// conductor's own width and the gap to its nearest neighbour.
    pub(crate) fn edge_scales(&self) -> Vec<(f64, f64)> {
        let sorted = self.sorted_conductors();
        let mut out = Vec::with_capacity(2 * sorted.len());
        for (k, (_, c)) in sorted.iter().enumerate() {
            let left_gap = (k > 0).then(|| c.x_min - sorted[k - 1].1.x_max);
            let right_gap = sorted.get(k + 1).map(|(_, n)| n.x_min - c.x_max);
            let w = c.width();
            out.push((c.x_min, left_gap.map_or(w, |g| g.min(w))));
            out.push((c.x_max, right_gap.map_or(w, |g| g.min(w))));
        }
        out
    }

    /// Returns a copy with every length multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            name: self.name.clone(),
            conductors: self
                .conductors
                .iter()
                .map(|c| Conductor::new(c.x_min * s, c.x_max * s, c.terminal))
                .collect(),
            substrate_eps: self.substrate_eps,
            box_halfwidth: self.box_halfwidth * s,
            box_height: self.box_height * s,
        }
    }

    pub fn with_box(mut self, halfwidth: f64, height: f64) -> Self {
        self.box_halfwidth = halfwidth;
        self.box_height = height;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite,
    EmptyConductor { index: usize },
    Overlap { first: usize, second: usize },
    SubstratePermittivity(f64),
    NonPositiveBox,
    BoxTooSmall { halfwidth: f64, required: f64 },
    ConductorOutsideBox { index: usize },
    NoDrivenConductor,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite => write!(f, "non-finite coordinate or parameter"),
            Violation::EmptyConductor { index } => {
                write!(f, "conductor {index} has x_min >= x_max")
            }
            Violation::Overlap { first, second } => {
                write!(f, "conductors {first} and {second} overlap")
            }
            Violation::SubstratePermittivity(e) => {
                write!(f, "substrate permittivity {e} is below 1")
            }
            Violation::NonPositiveBox => write!(f, "box dimensions must be positive"),
            Violation::BoxTooSmall { halfwidth, required } => write!(
                f,
                "box half-width {halfwidth:.3e} m is below {MIN_BOX_FACTOR}x pattern extent ({required:.3e} m)"
            ),
            Violation::ConductorOutsideBox { index } => {
                write!(f, "conductor {index} extends outside the box")
            }
            Violation::NoDrivenConductor => write!(f, "no driven (non-floating) conductor"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self, name: &str) -> Result<()> {
        if self.is_ok() {
            return Ok(());
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        Err(Error::Geometry(format!("{name}: {}", msgs.join("; "))))
    }
}

pub fn validate(section: &CrossSection) -> ValidationReport {
    let mut violations = Vec::new();
    let finite = section.substrate_eps.is_finite()
        && section.box_halfwidth.is_finite()
        && section.box_height.is_finite()
        && section
            .conductors
            .iter()
            .all(|c| c.x_min.is_finite() && c.x_max.is_finite());
    if !finite {
        return ValidationReport {
            violations: vec![Violation::NonFinite],
        };
    }
    for (i, c) in section.conductors.iter().enumerate() {
        if c.x_min >= c.x_max {
            violations.push(Violation::EmptyConductor { index: i });
        }
    }
    let sorted = section.sorted_conductors();
    for w in sorted.windows(2) {
        if w[1].1.x_min <= w[0].1.x_max {
            violations.push(Violation::Overlap {
                first: w[0].0.min(w[1].0),
                second: w[0].0.max(w[1].0),
            });
        }
    }
    if section.substrate_eps < 1.0 {
        violations.push(Violation::SubstratePermittivity(section.substrate_eps));
    }
    if section.box_halfwidth <= 0.0 || section.box_height <= 0.0 {
        violations.push(Violation::NonPositiveBox);
    } else if let Some((lo, hi)) = section.pattern_span() {
        let required = MIN_BOX_FACTOR * (hi - lo);
        if section.box_halfwidth < required {
            violations.push(Violation::BoxTooSmall {
                halfwidth: section.box_halfwidth,
                required,
            });
        }
        for (i, c) in section.conductors.iter().enumerate() {
            if c.x_min <= -section.box_halfwidth || c.x_max >= section.box_halfwidth {
                violations.push(Violation::ConductorOutsideBox { index: i });
            }
        }
    }
    if !section.conductors.iter().any(|c| c.terminal.is_driven()) {
        violations.push(Violation::NoDrivenConductor);
    }
    ValidationReport { violations }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSection {
    pub section: CrossSection,
    /// Out-of-plane length (m) represented by this cross-section.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub name: String,
    pub sections: Vec<WeightedSection>,
}

impl DesignSpec {
    pub fn check(&self) -> Result<()> {
        if self.sections.is_empty() {
            return Err(Error::Geometry(format!("{}: no sections", self.name)));
        }
        for ws in &self.sections {
            if !(ws.weight > 0.0 && ws.weight.is_finite()) {
                return Err(Error::Geometry(format!(
                    "{}: section weight {} must be positive",
                    self.name, ws.weight
                )));
            }
            validate(&ws.section).into_result(&ws.section.name)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GeometryFile = serde_json::from_str(text)?;
        file.into_design()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Serialises to the geometry file format. All sections must share the
    /// substrate permittivity and box.
    pub fn to_json(&self) -> Result<String> {
        let first = &self
            .sections
            .first()
            .ok_or_else(|| Error::Geometry(format!("{}: no sections", self.name)))?
            .section;
        for ws in &self.sections {
            let s = &ws.section;
            if s.substrate_eps != first.substrate_eps
                || s.box_halfwidth != first.box_halfwidth
                || s.box_height != first.box_height
            {
                return Err(Error::Geometry(
                    "sections with differing substrate or box cannot share one file".into(),
                ));
            }
        }
        let file = GeometryFile {
            name: self.name.clone(),
            substrate_eps: first.substrate_eps,
            r#box: [first.box_halfwidth, first.box_height],
            sections: self
                .sections
                .iter()
                .map(|ws| SectionFile {
                    weight_m: ws.weight,
                    conductors: ws
                        .section
                        .conductors
                        .iter()
                        .map(|c| ConductorFile {
                            x_min_m: c.x_min,
                            x_max_m: c.x_max,
                            terminal: c.terminal,
                        })
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryFile {
    name: String,
    substrate_eps: f64,
    r#box: [f64; 2],
    sections: Vec<SectionFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionFile {
    weight_m: f64,
    conductors: Vec<ConductorFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConductorFile {
    x_min_m: f64,
    x_max_m: f64,
    terminal: Terminal,
}

impl GeometryFile {
    fn into_design(self) -> Result<DesignSpec> {
        let n = self.sections.len();
        let sections = self
            .sections
            .into_iter()
            .enumerate()
            .map(|(k, s)| WeightedSection {
                section: CrossSection {
                    name: if n == 1 {
                        self.name.clone()
                    } else {
                        format!("{}#{k}", self.name)
                    },
                    conductors: s
                        .conductors
                        .into_iter()
                        .map(|c| Conductor::new(c.x_min_m, c.x_max_m, c.terminal))
                        .collect(),
                    substrate_eps: self.substrate_eps,
                    box_halfwidth: self.r#box[0],
                    box_height: self.r#box[1],
                },
                weight: s.weight_m,
            })
            .collect();
        let design = DesignSpec {
            name: self.name,
            sections,
        };
        design.check()?;
        Ok(design)
    }
}

/// The four benchmark transmon capacitor layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReferenceDesign {
    Hero,
    ExtendedHero,
    Guard,
    Skeleton,
}

impl ReferenceDesign {
    pub const ALL: [ReferenceDesign; 4] = [
        ReferenceDesign::Hero,
        ReferenceDesign::ExtendedHero,
        ReferenceDesign::Guard,
        ReferenceDesign::Skeleton,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReferenceDesign::Hero => "Hero",
            ReferenceDesign::ExtendedHero => "ExtendedHero",
            ReferenceDesign::Guard => "Guard",
            ReferenceDesign::Skeleton => "Skeleton",
        }
    }
}

impl fmt::Display for ReferenceDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReferenceDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown reference design {s:?}")))
    }
}

const UM: f64 = 1e-6;

/// Default dimensions in micrometres: (pad width, gap, out-of-plane length).
fn reference_dims(design: ReferenceDesign) -> (f64, f64, f64) {
    match design {
        ReferenceDesign::Hero | ReferenceDesign::Skeleton => (350.0, 350.0, 350.0),
        ReferenceDesign::ExtendedHero => (700.0, 700.0, 700.0),
        ReferenceDesign::Guard => (350.0, 20.0, 350.0),
    }
}

const BONE_COUNT: usize = 7;
const BONE_WIDTH_UM: f64 = 10.0;
const BONE_PITCH_UM: f64 = 20.0;

/// Builds one of the reference designs scaled uniformly by `scale`.
///
/// The two pads are driven MINUS (left) and PLUS (right). Skeleton adds
/// floating bones centred in the gap.
pub fn reference_design(design: ReferenceDesign, scale: f64) -> Result<DesignSpec> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let (pad, gap, length) = reference_dims(design);
    let half_gap = gap / 2.0;
    // Coordinates are formed in micrometres and scaled once at the end, so
    // designs at different scales differ by exactly one multiplication.
    let mut strips = vec![
        (-half_gap - pad, -half_gap, Terminal::Minus),
        (half_gap, half_gap + pad, Terminal::Plus),
    ];
    if design == ReferenceDesign::Skeleton {
        let mid = (BONE_COUNT as f64 - 1.0) / 2.0;
        for k in 0..BONE_COUNT {
            let centre = (k as f64 - mid) * BONE_PITCH_UM;
            strips.push((
                centre - BONE_WIDTH_UM / 2.0,
                centre + BONE_WIDTH_UM / 2.0,
                Terminal::Floating,
            ));
        }
        strips.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let extent = 2.0 * (half_gap + pad);
    let halfwidth = DEFAULT_BOX_FACTOR * extent;
    let s = UM * scale;
    let section = CrossSection {
        name: design.as_str().to_string(),
        conductors: strips
            .into_iter()
            .map(|(a, b, t)| Conductor::new(a * s, b * s, t))
            .collect(),
        substrate_eps: DEFAULT_SUBSTRATE_EPS,
        box_halfwidth: halfwidth * s,
        box_height: halfwidth * s,
    };
    Ok(DesignSpec {
        name: design.as_str().to_string(),
        sections: vec![WeightedSection {
            section,
            weight: length * s,
        }],
    })
}

/// The three thin lossy interfaces of a planar device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Interface {
    #[serde(rename = "SM")]
    SubstrateMetal,
    #[serde(rename = "SV")]
    SubstrateVacuum,
    #[serde(rename = "MV")]
    MetalVacuum,
}

impl Interface {
    pub const ALL: [Interface; 3] = [
        Interface::SubstrateMetal,
        Interface::SubstrateVacuum,
        Interface::MetalVacuum,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Interface::SubstrateMetal => "SM",
            Interface::SubstrateVacuum => "SV",
            Interface::MetalVacuum => "MV",
        }
    }
}

impl fmt::Display for Interface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Interface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|i| i.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown interface {s:?} (use SM, SV or MV)"))
            })
    }
}

/// A hypothetical uniform lossy film on one interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub interface: Interface,
    pub thickness: f64,
    pub eps_layer: f64,
}

impl LayerSpec {
    pub fn new(interface: Interface, thickness: f64, eps_layer: f64) -> Result<Self> {
        if !(thickness > 0.0 && thickness.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "layer thickness must be positive, got {thickness}"
            )));
        }
        if !(eps_layer >= 1.0 && eps_layer.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "layer permittivity must be >= 1, got {eps_layer}"
            )));
        }
        Ok(Self {
            interface,
            thickness,
            eps_layer,
        })
    }
}

/// Vacuum gap of width `d - t` in series with a film of thickness `t`
/// between two plates. Used as an analytic reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallelPlateFixture {
    pub gap: f64,
    pub vacuum_thickness: f64,
    pub layer_thickness: f64,
    pub eps_layer: f64,
}

pub fn parallel_plate_fixture(gap: f64, layer: &LayerSpec) -> Result<ParallelPlateFixture> {
    if !(gap > 0.0 && gap.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gap must be positive, got {gap}"
        )));
    }
    if layer.thickness >= gap {
        return Err(Error::InvalidArgument(format!(
            "layer thickness {} must be smaller than the gap {gap}",
            layer.thickness
        )));
    }
    Ok(ParallelPlateFixture {
        gap,
        vacuum_thickness: gap - layer.thickness,
        layer_thickness: layer.thickness,
        eps_layer: layer.eps_layer,
    })
}

impl ParallelPlateFixture {
    /// Exact fraction of the energy stored in the film (series capacitors).
    pub fn exact_participation(&self) -> f64 {
        let film = self.layer_thickness / self.eps_layer;
        film / (self.vacuum_thickness + film)
    }

    /// Capacitance per unit area (F/m^2) of the stack.
    pub fn capacitance_per_area(&self) -> f64 {
        crate::EPS0 / (self.vacuum_thickness + self.layer_thickness / self.eps_layer)
    }
}
