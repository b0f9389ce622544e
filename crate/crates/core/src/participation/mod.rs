//! Thin-layer participation ratios and per-design surface loss
//! sensitivities.
//!
//! A film of thickness `t` on an interface stores, per unit length,
//! `U_s = t/2 * integral (E_film . D_film) dx` along the surface. The film
//! fields follow from the clean solve through the continuity conditions:
//!
//! * SV (film on exposed substrate): `E_par` continuous, `D_perp = eps0 E_perp,vac`.
//! * SM (film under the metal): `D_perp = eps0 eps_sub E_perp,sub`.
//! * MV (film on top of the metal): `D_perp = eps0 E_perp,vac`.
//!
//! so the energy density is `eps0 eps_L E_par^2 + D_perp^2 / (eps0 eps_L)`.
//! `R = U_s / U_total` and `r = R / t`.
//!
//! The integrands diverge at conductor edges. Each edge is excluded over
//! its level-0 edge cell width; the excluded part is estimated from the
//! integrand at the border of the excluded zone and reported as error.

pub mod oracles;

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldsolver::{
    build_mesh, richardson, solve, surface_fields, Drive, Extrapolation, FieldSolution,
    SegmentKind, SurfaceSegment,
};
use crate::geometry::{DesignSpec, Interface, LayerSpec};
use crate::EPS0;

/// Layers must be at most this fraction of the smallest feature.
pub const THIN_LAYER_LIMIT: f64 = 0.01;

/// One value per lossy interface.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerInterface<T> {
    pub sm: T,
    pub sv: T,
    pub mv: T,
}

impl<T: Copy> PerInterface<T> {
    pub fn get(&self, i: Interface) -> T {
        match i {
            Interface::SubstrateMetal => self.sm,
            Interface::SubstrateVacuum => self.sv,
            Interface::MetalVacuum => self.mv,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Interface) -> T) -> Self {
        Self {
            sm: f(Interface::SubstrateMetal),
            sv: f(Interface::SubstrateVacuum),
            mv: f(Interface::MetalVacuum),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> PerInterface<U> {
        PerInterface {
            sm: f(self.sm),
            sv: f(self.sv),
            mv: f(self.mv),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceParticipation {
    pub interface: Interface,
    /// Participation ratio `R` (dimensionless).
    pub ratio: f64,
    /// Sensitivity `r = R / t` (1/m).
    pub sensitivity: f64,
    /// Film energy per unit length (J/m), excluding the edge zones.
    pub surface_energy_pul: f64,
    /// Estimated film energy inside the excluded edge zones (J/m).
    pub clipped_energy_pul: f64,
    /// False when the geometry has no such interface.
    pub present: bool,
}

impl InterfaceParticipation {
    /// Sensitivity uncertainty from the edge exclusion (1/m).
    pub fn clip_error(&self, energy_pul: f64, thickness: f64) -> f64 {
        if energy_pul > 0.0 {
            self.clipped_energy_pul / energy_pul / thickness
        } else {
            0.0
        }
    }
}

/// Participation of all three interfaces for one solved cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipationReport {
    pub thickness: f64,
    pub eps_layer: f64,
    pub energy_pul: f64,
    pub entries: PerInterface<InterfaceParticipation>,
}

impl ParticipationReport {
    pub fn ratios(&self) -> PerInterface<f64> {
        self.entries.map(|e| e.ratio)
    }

    pub fn sensitivities(&self) -> PerInterface<f64> {
        self.entries.map(|e| e.sensitivity)
    }

    pub fn clip_errors(&self) -> PerInterface<f64> {
        self.entries
            .map(|e| e.clip_error(self.energy_pul, self.thickness))
    }
}

/// Energy density of the film per unit volume, before the factor 1/2.
fn film_density(
    seg: &SurfaceSegment,
    interface: Interface,
    eps_layer: f64,
    eps_sub: f64,
) -> Option<f64> {
    match (interface, seg.kind) {
        (Interface::SubstrateVacuum, SegmentKind::Gap) => {
            let d = EPS0 * seg.e_perp_vacuum;
            Some(EPS0 * eps_layer * seg.e_parallel.powi(2) + d * d / (EPS0 * eps_layer))
        }
        (Interface::SubstrateMetal, SegmentKind::Conductor(_)) => {
            let d = EPS0 * eps_sub * seg.e_perp_substrate;
            Some(d * d / (EPS0 * eps_layer))
        }
        (Interface::MetalVacuum, SegmentKind::Conductor(_)) => {
            let d = EPS0 * seg.e_perp_vacuum;
            Some(d * d / (EPS0 * eps_layer))
        }
        _ => None,
    }
}

/// Thin-film participation of `layer` in `solution`.
pub fn participation(
    solution: &FieldSolution,
    layer: &LayerSpec,
) -> Result<InterfaceParticipation> {
    let surface = solution
        .surface
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("solution has no surface row".into()))?;
    if layer.thickness > THIN_LAYER_LIMIT * surface.smallest_feature {
        return Err(Error::LayerTooThick {
            thickness: layer.thickness,
            feature: surface.smallest_feature,
        });
    }
    let segments = surface_fields(solution);
    Ok(integrate(solution, &segments, layer))
}

fn integrate(
    solution: &FieldSolution,
    segments: &[SurfaceSegment],
    layer: &LayerSpec,
) -> InterfaceParticipation {
    let surface = solution.surface.as_ref().expect("checked by caller");
    let interface = layer.interface;
    let eps_sub = surface.substrate_eps.unwrap_or(1.0);
    let absent = |why: &str| {
        warn!("{interface} interface absent: {why}; participation set to zero");
        InterfaceParticipation {
            interface,
            ratio: 0.0,
            sensitivity: 0.0,
            surface_energy_pul: 0.0,
            clipped_energy_pul: 0.0,
            present: false,
        }
    };
    let has_gap = segments.iter().any(|s| s.kind == SegmentKind::Gap);
    let has_metal = segments
        .iter()
        .any(|s| matches!(s.kind, SegmentKind::Conductor(_)));
    match interface {
        Interface::SubstrateVacuum if !has_gap => return absent("no exposed substrate"),
        Interface::SubstrateMetal | Interface::MetalVacuum if !has_metal => {
            return absent("no conductors")
        }
        Interface::SubstrateMetal if surface.substrate_eps.is_none() => {
            return absent("no substrate below the surface")
        }
        _ => {}
    }

    let zones: Vec<(f64, f64)> = surface
        .edges
        .iter()
        .map(|e| (e.x - e.base_cell, e.x + e.base_cell))
        .collect();
    let excluded = |a: f64, b: f64| -> f64 {
        zones
            .iter()
            .map(|&(lo, hi)| (b.min(hi) - a.max(lo)).max(0.0))
            .sum()
    };

    let mut integral = 0.0;
    for seg in segments {
        if let Some(rho) = film_density(seg, interface, layer.eps_layer, eps_sub) {
            let len = (seg.length() - excluded(seg.x0, seg.x1)).max(0.0);
            integral += rho * len;
        }
    }

    // Excluded zones: integrand at the first segment outside each half-zone.
    let mut clipped = 0.0;
    for e in &surface.edges {
        let right = segments
            .iter()
            .find(|s| s.x0 >= e.x + e.base_cell * (1.0 - 1e-9));
        let left = segments
            .iter()
            .rev()
            .find(|s| s.x1 <= e.x - e.base_cell * (1.0 - 1e-9));
        for seg in [left, right].into_iter().flatten() {
            if let Some(rho) = film_density(seg, interface, layer.eps_layer, eps_sub) {
                clipped += rho * e.base_cell;
            }
        }
    }

    let t = layer.thickness;
    let surface_energy_pul = 0.5 * t * integral;
    let clipped_energy_pul = 0.5 * t * clipped;
    let ratio = if solution.energy_pul > 0.0 {
        surface_energy_pul / solution.energy_pul
    } else {
        0.0
    };
    InterfaceParticipation {
        interface,
        ratio,
        sensitivity: ratio / t,
        surface_energy_pul,
        clipped_energy_pul,
        present: true,
    }
}

/// All three interfaces for one solution and one film model.
pub fn participation_report(
    solution: &FieldSolution,
    thickness: f64,
    eps_layer: f64,
) -> Result<ParticipationReport> {
    let layers = Interface::ALL.map(|i| LayerSpec::new(i, thickness, eps_layer));
    let mut out = Vec::with_capacity(3);
    for layer in layers {
        out.push(participation(solution, &layer?)?);
    }
    Ok(ParticipationReport {
        thickness,
        eps_layer,
        energy_pul: solution.energy_pul,
        entries: PerInterface {
            sm: out[0],
            sv: out[1],
            mv: out[2],
        },
    })
}

/// Surface loss sensitivities of one design (1/m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityVector {
    pub design: String,
    pub r: PerInterface<f64>,
    /// Absolute uncertainty of each entry, when a convergence study was run.
    pub error: Option<PerInterface<f64>>,
}

impl SensitivityVector {
    pub fn new(design: impl Into<String>, sm: f64, sv: f64, mv: f64) -> Self {
        Self {
            design: design.into(),
            r: PerInterface { sm, sv, mv },
            error: None,
        }
    }

    pub fn get(&self, i: Interface) -> f64 {
        self.r.get(i)
    }
}

/// Energy-weighted combination of per-section reports into one vector:
/// `R = sum_k w_k U_s,k / sum_k w_k U_k`.
pub fn combine(design: &DesignSpec, reports: &[ParticipationReport]) -> Result<SensitivityVector> {
    if reports.len() != design.sections.len() {
        return Err(Error::InvalidArgument(format!(
            "{}: {} reports for {} sections",
            design.name,
            reports.len(),
            design.sections.len()
        )));
    }
    let t = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: no sections", design.name)))?
        .thickness;
    if reports.iter().any(|r| r.thickness != t) {
        return Err(Error::InvalidArgument(
            "reports were computed with different layer thicknesses".into(),
        ));
    }
    let total: f64 = design
        .sections
        .iter()
        .zip(reports)
        .map(|(s, r)| s.weight * r.energy_pul)
        .sum();
    let r = PerInterface::from_fn(|i| {
        let surf: f64 = design
            .sections
            .iter()
            .zip(reports)
            .map(|(s, r)| s.weight * r.entries.get(i).surface_energy_pul)
            .sum();
        if total > 0.0 {
            surf / total / t
        } else {
            0.0
        }
    });
    Ok(SensitivityVector {
        design: design.name.clone(),
        r,
        error: None,
    })
}

/// Same weighting applied to the edge-exclusion estimates (1/m).
fn combine_clip(design: &DesignSpec, reports: &[ParticipationReport]) -> PerInterface<f64> {
    let t = reports[0].thickness;
    let total: f64 = design
        .sections
        .iter()
        .zip(reports)
        .map(|(s, r)| s.weight * r.energy_pul)
        .sum();
    PerInterface::from_fn(|i| {
        let clip: f64 = design
            .sections
            .iter()
            .zip(reports)
            .map(|(s, r)| s.weight * r.entries.get(i).clipped_energy_pul)
            .sum();
        if total > 0.0 {
            clip / total / t
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: u32,
    pub r: PerInterface<f64>,
    /// Weighted total energy, `sum_k w_k U_k` (J).
    pub energy: f64,
    /// Largest relative gap between charge-sum and field-integral energy.
    pub energy_mismatch: f64,
    pub nodes: usize,
}

/// Sensitivities of a design over successive mesh levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityStudy {
    pub vector: SensitivityVector,
    pub thickness: f64,
    pub eps_layer: f64,
    pub levels: Vec<LevelResult>,
    /// Per-interface Richardson estimates when at least three levels ran.
    pub extrapolation: Option<PerInterface<Extrapolation>>,
    /// Edge-exclusion estimate at the finest level (1/m).
    pub clip_error: PerInterface<f64>,
}

impl SensitivityStudy {
    /// False when any present interface failed to extrapolate cleanly.
    pub fn reliable(&self) -> bool {
        match &self.extrapolation {
            None => true,
            Some(e) => Interface::ALL
                .iter()
                .all(|&i| e.get(i).reliable || self.vector.get(i) == 0.0),
        }
    }
}

/// Solves `design` at `count` successive levels starting at `base_level`
/// and, with three or more levels, extrapolates the last three.
pub fn sensitivity_study(
    design: &DesignSpec,
    thickness: f64,
    eps_layer: f64,
    base_level: u32,
    count: u32,
) -> Result<SensitivityStudy> {
    design.check()?;
    if count == 0 {
        return Err(Error::InvalidArgument(
            "at least one mesh level is required".into(),
        ));
    }
    let mut levels = Vec::with_capacity(count as usize);
    let mut last_reports = Vec::new();
    for level in base_level..base_level + count {
        let mut reports = Vec::with_capacity(design.sections.len());
        let mut mismatch: f64 = 0.0;
        let mut nodes = 0;
        for ws in &design.sections {
            let mesh = build_mesh(&ws.section, level)?;
            nodes += mesh.node_count();
            let sol = solve(&ws.section, &mesh, &Drive::default())?;
            mismatch = mismatch.max(sol.energy_mismatch());
            reports.push(participation_report(&sol, thickness, eps_layer)?);
        }
        let v = combine(design, &reports)?;
        let energy = design
            .sections
            .iter()
            .zip(&reports)
            .map(|(s, r)| s.weight * r.energy_pul)
            .sum();
        levels.push(LevelResult {
            level,
            r: v.r,
            energy,
            energy_mismatch: mismatch,
            nodes,
        });
        last_reports = reports;
    }
    let clip_error = combine_clip(design, &last_reports);
    let finest = levels.last().expect("count >= 1").r;

    let extrapolation = (levels.len() >= 3).then(|| {
        let tail = &levels[levels.len() - 3..];
        PerInterface::from_fn(|i| {
            richardson([tail[0].r.get(i), tail[1].r.get(i), tail[2].r.get(i)], 2.0)
        })
    });
    let (r, error) = match &extrapolation {
        Some(e) => (
            PerInterface::from_fn(|i| e.get(i).value),
            Some(PerInterface::from_fn(|i| {
                e.get(i).error + clip_error.get(i)
            })),
        ),
        None => (finest, None),
    };
    Ok(SensitivityStudy {
        vector: SensitivityVector {
            design: design.name.clone(),
            r,
            error,
        },
        thickness,
        eps_layer,
        levels,
        extrapolation,
        clip_error,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct SensitivityRow {
    design: String,
    r_SM_per_m: f64,
    r_SV_per_m: f64,
    r_MV_per_m: f64,
    err_SM: Option<f64>,
    err_SV: Option<f64>,
    err_MV: Option<f64>,
}

/// Writes sensitivity vectors as CSV
/// (`design,r_SM_per_m,r_SV_per_m,r_MV_per_m,err_SM,err_SV,err_MV`).
pub fn write_sensitivities<W: std::io::Write>(out: W, vectors: &[SensitivityVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for v in vectors {
        w.serialize(SensitivityRow {
            design: v.design.clone(),
            r_SM_per_m: v.r.sm,
            r_SV_per_m: v.r.sv,
            r_MV_per_m: v.r.mv,
            err_SM: v.error.map(|e| e.sm),
            err_SV: v.error.map(|e| e.sv),
            err_MV: v.error.map(|e| e.mv),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sensitivities<R: std::io::Read>(
    input: R,
    origin: &str,
) -> Result<Vec<SensitivityVector>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out: Vec<SensitivityVector> = Vec::new();
    for (k, row) in rdr.deserialize::<SensitivityRow>().enumerate() {
        let line = k as u64 + 2;
        let row = row.map_err(|e| Error::Parse {
            path: origin.to_string(),
            line,
            message: e.to_string(),
        })?;
        let r = PerInterface {
            sm: row.r_SM_per_m,
            sv: row.r_SV_per_m,
            mv: row.r_MV_per_m,
        };
        if Interface::ALL
            .iter()
            .any(|&i| !(r.get(i) >= 0.0 && r.get(i).is_finite()))
        {
            return Err(Error::Parse {
                path: origin.to_string(),
                line,
                message: "sensitivities must be finite and nonnegative".into(),
            });
        }
        if out.iter().any(|v| v.design == row.design) {
            return Err(Error::Parse {
                path: origin.to_string(),
                line,
                message: format!("duplicate design {:?}", row.design),
            });
        }
        let error = match (row.err_SM, row.err_SV, row.err_MV) {
            (Some(sm), Some(sv), Some(mv)) => Some(PerInterface { sm, sv, mv }),
            _ => None,
        };
        out.push(SensitivityVector {
            design: row.design,
            r,
            error,
        });
    }
    Ok(out)
}

pub fn load_sensitivities(path: impl AsRef<Path>) -> Result<Vec<SensitivityVector>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_sensitivities(file, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldsolver::{fixtures, solve_at_level};
    use crate::geometry::{reference_design, ReferenceDesign, WeightedSection};

    fn plate_ratio(d: f64, t: f64, eps: f64) -> f64 {
        let sol = fixtures::parallel_plate(d, d, 8, &Drive::default()).unwrap();
        let layer = LayerSpec::new(Interface::MetalVacuum, t, eps).unwrap();
        participation(&sol, &layer).unwrap().ratio
    }

    #[test]
    fn parallel_plate_matches_series_formula() {
        let d = 1e-6;
        let t = 3e-9;
        let exact = oracles::parallel_plate_participation(d, t, 6.2).unwrap();
        let got = plate_ratio(d, t, 6.2);
        assert!((got / exact - 1.0).abs() < 0.01, "{got} vs {exact}");
        assert!((got / t - 1.62e5).abs() < 0.01e5);
    }

    #[test]
    fn vacuum_film_gives_t_over_d() {
        let d = 1e-6;
        let t = 3e-9;
        assert!((plate_ratio(d, t, 1.0) - t / d).abs() < 1e-12 * t / d);
    }

    #[test]
    fn plate_ratio_decreases_with_layer_permittivity() {
        let d = 1e-6;
        let eps = [1.0, 2.0, 4.0, 6.2, 10.0];
        let r: Vec<f64> = eps.iter().map(|&e| plate_ratio(d, 3e-9, e)).collect();
        assert!(r.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn substrate_metal_absent_on_plate() {
        let sol = fixtures::parallel_plate(1e-6, 1e-6, 4, &Drive::default()).unwrap();
        let layer = LayerSpec::new(Interface::SubstrateMetal, 3e-9, 6.2).unwrap();
        let p = participation(&sol, &layer).unwrap();
        assert!(!p.present);
        assert_eq!(p.ratio, 0.0);
    }

    #[test]
    fn thick_layer_is_rejected() {
        let sol = fixtures::parallel_plate(1e-6, 1e-6, 4, &Drive::default()).unwrap();
        let layer = LayerSpec::new(Interface::MetalVacuum, 2e-8, 6.2).unwrap();
        assert!(matches!(
            participation(&sol, &layer),
            Err(Error::LayerTooThick { .. })
        ));
    }

    fn hero_solution() -> (DesignSpec, FieldSolution) {
        let d = reference_design(ReferenceDesign::Hero, 1.0).unwrap();
        let sol = solve_at_level(&d.sections[0].section, 0).unwrap();
        (d, sol)
    }

    #[test]
    fn sensitivity_independent_of_thickness_and_drive() {
        let (d, sol) = hero_solution();
        let a = participation_report(&sol, 1e-9, 6.2).unwrap();
        let b = participation_report(&sol, 5e-9, 6.2).unwrap();
        let mesh = build_mesh(&d.sections[0].section, 0).unwrap();
        let sol3 = solve(&d.sections[0].section, &mesh, &Drive::default().scaled(3.0)).unwrap();
        let c = participation_report(&sol3, 1e-9, 6.2).unwrap();
        for i in Interface::ALL {
            let (ra, rb, rc) = (
                a.entries.get(i).sensitivity,
                b.entries.get(i).sensitivity,
                c.entries.get(i).sensitivity,
            );
            assert!(ra > 0.0);
            assert!((ra / rb - 1.0).abs() < 1e-12);
            assert!((ra / rc - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn surface_energy_is_small_fraction() {
        let (_, sol) = hero_solution();
        let rep = participation_report(&sol, 3e-9, 6.2).unwrap();
        let total: f64 = Interface::ALL
            .iter()
            .map(|&i| rep.entries.get(i).ratio)
            .sum();
        assert!(total > 0.0 && total < 1e-3);
    }

    #[test]
    fn substrate_side_evaluation_gives_same_sv_energy() {
        let (_, sol) = hero_solution();
        let eps_sub = 10.0;
        let eps_l = 6.2;
        let segs = surface_fields(&sol);
        let (mut from_vac, mut from_sub) = (0.0, 0.0);
        for s in segs.iter().filter(|s| s.kind == SegmentKind::Gap) {
            let dv = EPS0 * s.e_perp_vacuum;
            let ds = EPS0 * eps_sub * s.e_perp_substrate;
            let tangential = EPS0 * eps_l * s.e_parallel.powi(2);
            from_vac += (tangential + dv * dv / (EPS0 * eps_l)) * s.length();
            from_sub += (tangential + ds * ds / (EPS0 * eps_l)) * s.length();
        }
        assert!((from_vac / from_sub - 1.0).abs() < 1e-12);
    }

    #[test]
    fn combine_single_and_duplicated_sections() {
        let (d, sol) = hero_solution();
        let rep = participation_report(&sol, 3e-9, 6.2).unwrap();
        let single = combine(&d, std::slice::from_ref(&rep)).unwrap();
        for i in Interface::ALL {
            assert!((single.get(i) / rep.entries.get(i).sensitivity - 1.0).abs() < 1e-12);
        }
        let sec = d.sections[0].section.clone();
        let doubled = DesignSpec {
            name: "twice".into(),
            sections: vec![
                WeightedSection {
                    section: sec.clone(),
                    weight: 1.0,
                },
                WeightedSection {
                    section: sec,
                    weight: 2.0,
                },
            ],
        };
        let both = combine(&doubled, &[rep.clone(), rep.clone()]).unwrap();
        for i in Interface::ALL {
            assert!((both.get(i) / single.get(i) - 1.0).abs() < 1e-12);
        }
        assert!(combine(&doubled, &[rep]).is_err());
    }

    #[test]
    fn sensitivity_csv_round_trip() {
        let mut a = SensitivityVector::new("Hero", 1.5e3, 2.5e3, 3.5e2);
        a.error = Some(PerInterface {
            sm: 1.0,
            sv: 2.0,
            mv: 3.0,
        });
        let b = SensitivityVector::new("Guard", 4.0e4, 5.0e4, 1.0e3);
        let mut buf = Vec::new();
        write_sensitivities(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("design,r_SM_per_m,r_SV_per_m,r_MV_per_m,err_SM,err_SV,err_MV\n"));
        let back = read_sensitivities(&buf[..], "mem").unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn sensitivity_csv_rejects_negative() {
        let text = "design,r_SM_per_m,r_SV_per_m,r_MV_per_m,err_SM,err_SV,err_MV\nX,-1,2,3,,,\n";
        assert!(matches!(
            read_sensitivities(text.as_bytes(), "mem"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
