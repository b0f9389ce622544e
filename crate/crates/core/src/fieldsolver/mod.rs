//! Finite-volume solver for `div(eps grad V) = 0` on a tensor grid.
//!
//! Nodes on conductors are fixed to the conductor potential. A floating
//! conductor collapses to one unknown whose row is the sum of the fluxes
//! leaving it, which pins its net charge to zero and keeps the system
//! symmetric positive definite.

mod extrapolate;
mod fields;
mod linear;
pub mod mesh;

pub use extrapolate::{extrapolate_energy, richardson, Extrapolation};
pub use fields::{surface_fields, SegmentKind, SurfaceSegment};
pub use mesh::{build_mesh, EdgeCell, Mesh};

use crate::error::{Error, Result};
use crate::geometry::{validate, CrossSection, Terminal};
use crate::EPS0;

/// Relative residual required of every linear solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

pub(crate) const FREE: u32 = u32::MAX;

/// Terminal voltages applied to a cross-section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    pub plus: f64,
    pub minus: f64,
    pub ground: f64,
}

impl Default for Drive {
    fn default() -> Self {
        Self {
            plus: 0.5,
            minus: -0.5,
            ground: 0.0,
        }
    }
}

impl Drive {
    pub fn scaled(self, k: f64) -> Self {
        Self {
            plus: self.plus * k,
            minus: self.minus * k,
            ground: self.ground * k,
        }
    }

    pub fn grounded() -> Self {
        Self {
            plus: 0.0,
            minus: 0.0,
            ground: 0.0,
        }
    }

    pub fn potential(&self, terminal: Terminal) -> Option<f64> {
        match terminal {
            Terminal::Plus => Some(self.plus),
            Terminal::Minus => Some(self.minus),
            Terminal::Ground => Some(self.ground),
            Terminal::Floating => None,
        }
    }
}

/// Where the participation integrals live: one grid row, usually `y = 0`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SurfaceInfo {
    pub row: usize,
    /// Relative permittivity below the row, `None` when the row is the
    /// bottom of the domain.
    pub substrate_eps: Option<f64>,
    pub edges: Vec<EdgeCell>,
    pub smallest_feature: f64,
}

/// Potential, charges and energy of one solve. Charges and energies are per
/// unit length along the out-of-plane direction.
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub mesh: Mesh,
    /// Node potentials (V), indexed by `mesh.node(i, j)`.
    pub potential: Vec<f64>,
    pub conductor_potentials: Vec<f64>,
    /// Charge per unit length (C/m) on each conductor.
    pub conductor_charges: Vec<f64>,
    /// Charge induced on the grounded outer boundary (C/m).
    pub boundary_charge: f64,
    /// Electrical energy per unit length `1/2 sum Q_i V_i` (J/m).
    pub energy_pul: f64,
    /// The same energy from `1/2 integral eps |grad V|^2` with bilinear
    /// interpolation on every cell (J/m).
    pub field_energy_pul: f64,
    /// Relative residual of the linear solve.
    pub residual: f64,
    pub(crate) owner: Vec<u32>,
    pub(crate) surface: Option<SurfaceInfo>,
}

impl FieldSolution {
    /// Both energy routes: (charge sum, field integral).
    pub fn energy(&self) -> (f64, f64) {
        (self.energy_pul, self.field_energy_pul)
    }

    /// Relative disagreement between the two energy routes.
    pub fn energy_mismatch(&self) -> f64 {
        let scale = self.energy_pul.abs().max(self.field_energy_pul.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.energy_pul - self.field_energy_pul).abs() / scale
        }
    }

    /// Total charge on conductors plus boundary; zero up to solver tolerance.
    pub fn net_charge(&self) -> f64 {
        self.conductor_charges.iter().sum::<f64>() + self.boundary_charge
    }

    pub fn potential_at(&self, i: usize, j: usize) -> f64 {
        self.potential[self.mesh.node(i, j)]
    }

    /// Capacitance per unit length between conductors `a` and `b`, from the
    /// charge on `a`, assuming they carry opposite charge.
    pub fn capacitance(&self, a: usize, b: usize) -> f64 {
        let dv = self.conductor_potentials[a] - self.conductor_potentials[b];
        self.conductor_charges[a] / dv
    }

    /// Node coordinates and potentials as CSV (`x_m,y_m,V`).
    pub fn write_field_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_m", "y_m", "V"])?;
        for (j, y) in self.mesh.y_nodes.iter().enumerate() {
            for (i, x) in self.mesh.x_nodes.iter().enumerate() {
                w.write_record([
                    x.to_string(),
                    y.to_string(),
                    self.potential[self.mesh.node(i, j)].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// A curved conductor boundary crossing grid links, used to shorten links
/// that end inside a conductor.
pub(crate) trait CurvedBoundary: Sync {
    /// Fraction of the link from `free` toward `inside` at which the boundary
    /// of `conductor` is crossed.
    fn crossing(&self, conductor: u32, free: [f64; 2], inside: [f64; 2]) -> f64;
}

/// A discretised problem ready for assembly.
pub(crate) struct Problem<'a> {
    pub mesh: Mesh,
    /// Relative permittivity per cell, `(nx - 1) * (ny - 1)`.
    pub cell_eps: Vec<f64>,
    pub owner: Vec<u32>,
    /// Fixed potential per conductor, `None` for floating.
    pub potentials: Vec<Option<f64>>,
    /// Conductor index of the grounded outer boundary, if any.
    pub boundary: Option<u32>,
    pub curved: Option<&'a dyn CurvedBoundary>,
    pub surface: Option<SurfaceInfo>,
}

impl Problem<'_> {
    #[inline]
    fn cell(&self, i: usize, j: usize) -> f64 {
        self.cell_eps[j * (self.mesh.nx() - 1) + i]
    }

    /// Visits every grid link with its conductance per unit length (F/m).
    pub fn for_each_link(&self, mut f: impl FnMut(usize, usize, f64)) {
        let m = &self.mesh;
        let (nx, ny) = (m.nx(), m.ny());
        let xs = &m.x_nodes;
        let ys = &m.y_nodes;
        for j in 0..ny {
            for i in 0..nx - 1 {
                let dx = xs[i + 1] - xs[i];
                let mut face = 0.0;
                if j > 0 {
                    face += self.cell(i, j - 1) * 0.5 * (ys[j] - ys[j - 1]);
                }
                if j + 1 < ny {
                    face += self.cell(i, j) * 0.5 * (ys[j + 1] - ys[j]);
                }
                let (p, q) = (m.node(i, j), m.node(i + 1, j));
                f(p, q, self.adjust(p, q, EPS0 * face / dx));
            }
        }
        for j in 0..ny - 1 {
            let dy = ys[j + 1] - ys[j];
            for i in 0..nx {
                let mut face = 0.0;
                if i > 0 {
                    face += self.cell(i - 1, j) * 0.5 * (xs[i] - xs[i - 1]);
                }
                if i + 1 < nx {
                    face += self.cell(i, j) * 0.5 * (xs[i + 1] - xs[i]);
                }
                let (p, q) = (m.node(i, j), m.node(i, j + 1));
                f(p, q, self.adjust(p, q, EPS0 * face / dy));
            }
        }
    }

    #[inline]
    fn adjust(&self, p: usize, q: usize, g: f64) -> f64 {
        let Some(curved) = self.curved else {
            return g;
        };
        let (op, oq) = (self.owner[p], self.owner[q]);
        let (free, inside, c) = match (op == FREE, oq == FREE) {
            (true, false) => (p, q, oq),
            (false, true) => (q, p, op),
            _ => return g,
        };
        let theta = curved
            .crossing(c, self.point(free), self.point(inside))
            .clamp(1e-3, 1.0);
        g / theta
    }

    fn point(&self, node: usize) -> [f64; 2] {
        let nx = self.mesh.nx();
        [self.mesh.x_nodes[node % nx], self.mesh.y_nodes[node / nx]]
    }

    pub fn solve(self) -> Result<FieldSolution> {
        let n_cond = self.potentials.len();
        let sol = linear::solve(&self)?;
        let mut potential = vec![0.0; self.owner.len()];
        for (node, &o) in self.owner.iter().enumerate() {
            potential[node] = if o == FREE {
                sol.free[node]
            } else {
                sol.conductor_potentials[o as usize]
            };
        }

        let mut charges = vec![0.0; n_cond];
        self.for_each_link(|p, q, g| {
            let (op, oq) = (self.owner[p], self.owner[q]);
            if op == oq {
                return;
            }
            let dv = potential[p] - potential[q];
            if op != FREE {
                charges[op as usize] += g * dv;
            }
            if oq != FREE {
                charges[oq as usize] -= g * dv;
            }
        });
        let energy_pul = 0.5
            * charges
                .iter()
                .zip(&sol.conductor_potentials)
                .map(|(q, v)| q * v)
                .sum::<f64>();
        let field_energy_pul = self.field_energy(&potential);

        let boundary_charge = self.boundary.map_or(0.0, |b| charges[b as usize]);
        let named: Vec<usize> = (0..n_cond)
            .filter(|&c| Some(c as u32) != self.boundary)
            .collect();
        Ok(FieldSolution {
            conductor_potentials: named.iter().map(|&c| sol.conductor_potentials[c]).collect(),
            conductor_charges: named.iter().map(|&c| charges[c]).collect(),
            boundary_charge,
            energy_pul,
            field_energy_pul,
            residual: sol.residual,
            potential,
            owner: self.owner,
            surface: self.surface,
            mesh: self.mesh,
        })
    }

    /// `1/2 integral eps |grad V|^2` with the bilinear interpolant per cell.
    fn field_energy(&self, v: &[f64]) -> f64 {
        let m = &self.mesh;
        let mut total = 0.0;
        for j in 0..m.ny() - 1 {
            let dy = m.y_nodes[j + 1] - m.y_nodes[j];
            for i in 0..m.nx() - 1 {
                let dx = m.x_nodes[i + 1] - m.x_nodes[i];
                let v00 = v[m.node(i, j)];
                let v10 = v[m.node(i + 1, j)];
                let v01 = v[m.node(i, j + 1)];
                let v11 = v[m.node(i + 1, j + 1)];
                let (a, b) = (v10 - v00, v11 - v01);
                let (c, d) = (v01 - v00, v11 - v10);
                let grad2 = dy / dx * (a * a + a * b + b * b) / 3.0
                    + dx / dy * (c * c + c * d + d * d) / 3.0;
                total += self.cell(i, j) * grad2;
            }
        }
        0.5 * EPS0 * total
    }
}

/// Solves a cross-section on `mesh`. Floating conductors come back as
/// equipotentials with zero net charge.
pub fn solve(section: &CrossSection, mesh: &Mesh, drive: &Drive) -> Result<FieldSolution> {
    let report = validate(section);
    if report
        .violations
        .contains(&crate::geometry::Violation::NoDrivenConductor)
    {
        return Err(Error::Singular(format!(
            "{}: no driven conductor fixes the potential",
            section.name
        )));
    }
    report.into_result(&section.name)?;

    let (nx, ny) = (mesh.nx(), mesh.ny());
    let row = mesh
        .surface_row()
        .ok_or_else(|| Error::Mesh("mesh has no grid line at y = 0".into()))?;
    let n_sec = section.conductors.len();
    let boundary = n_sec as u32;

    let mut owner = vec![FREE; nx * ny];
    for (c, cond) in section.conductors.iter().enumerate() {
        let lo = mesh.x_nodes.partition_point(|&x| x < cond.x_min);
        let hi = mesh.x_nodes.partition_point(|&x| x <= cond.x_max);
        if lo >= hi || mesh.x_nodes[lo] != cond.x_min || mesh.x_nodes[hi - 1] != cond.x_max {
            return Err(Error::Mesh(format!(
                "conductor {c} edges are not grid lines of the mesh"
            )));
        }
        for i in lo..hi {
            owner[mesh.node(i, row)] = c as u32;
        }
    }
    for i in 0..nx {
        owner[mesh.node(i, 0)] = boundary;
        owner[mesh.node(i, ny - 1)] = boundary;
    }
    for j in 0..ny {
        owner[mesh.node(0, j)] = boundary;
        owner[mesh.node(nx - 1, j)] = boundary;
    }

    let mut cell_eps = Vec::with_capacity((nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        let eps = if mesh.y_nodes[j + 1] <= 0.0 {
            section.substrate_eps
        } else {
            1.0
        };
        cell_eps.extend(std::iter::repeat_n(eps, nx - 1));
    }

    let mut potentials: Vec<Option<f64>> = section
        .conductors
        .iter()
        .map(|c| drive.potential(c.terminal))
        .collect();
    potentials.push(Some(0.0));

    Problem {
        mesh: mesh.clone(),
        cell_eps,
        owner,
        potentials,
        boundary: Some(boundary),
        curved: None,
        surface: Some(SurfaceInfo {
            row,
            substrate_eps: Some(section.substrate_eps),
            edges: mesh.edges.clone(),
            smallest_feature: section.smallest_feature(),
        }),
    }
    .solve()
}

/// Builds the mesh at `level` and solves with the default drive.
pub fn solve_at_level(section: &CrossSection, level: u32) -> Result<FieldSolution> {
    let mesh = build_mesh(section, level)?;
    solve(section, &mesh, &Drive::default())
}

/// Closed-geometry test problems with known answers.
pub mod fixtures {
    use super::*;

    /// Vacuum between a plate at `y = 0` (MINUS) and one at `y = gap`
    /// (PLUS), with insulating side walls. The bottom plate is the surface
    /// row for participation integrals. Conductor 0 is the bottom plate.
    pub fn parallel_plate(
        gap: f64,
        width: f64,
        cells: usize,
        drive: &Drive,
    ) -> Result<FieldSolution> {
        if !(gap > 0.0 && width > 0.0) || cells < 2 {
            return Err(Error::InvalidArgument(
                "parallel plate needs positive gap, width and at least 2 cells".into(),
            ));
        }
        let nx_cells = ((cells as f64) * width / gap).ceil().max(2.0) as usize;
        let mesh = Mesh::uniform((0.0, width), (0.0, gap), nx_cells, cells);
        let (nx, ny) = (mesh.nx(), mesh.ny());
        let mut owner = vec![FREE; nx * ny];
        for i in 0..nx {
            owner[mesh.node(i, 0)] = 0;
            owner[mesh.node(i, ny - 1)] = 1;
        }
        Problem {
            cell_eps: vec![1.0; (nx - 1) * (ny - 1)],
            owner,
            potentials: vec![Some(drive.minus), Some(drive.plus)],
            boundary: None,
            curved: None,
            surface: Some(SurfaceInfo {
                row: 0,
                substrate_eps: None,
                edges: Vec::new(),
                smallest_feature: gap,
            }),
            mesh,
        }
        .solve()
    }

    struct Annulus {
        inner: f64,
        outer: f64,
    }

    impl CurvedBoundary for Annulus {
        fn crossing(&self, conductor: u32, p: [f64; 2], q: [f64; 2]) -> f64 {
            let radius = if conductor == 0 {
                self.inner
            } else {
                self.outer
            };
            // |p + t (q - p)| = radius
            let d = [q[0] - p[0], q[1] - p[1]];
            let a = d[0] * d[0] + d[1] * d[1];
            let b = 2.0 * (p[0] * d[0] + p[1] * d[1]);
            let c = p[0] * p[0] + p[1] * p[1] - radius * radius;
            let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
            let roots = [(-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a)];
            roots
                .into_iter()
                .filter(|t| (0.0..=1.0).contains(t))
                .fold(1.0, f64::min)
        }
    }

    /// Coaxial conductors: inner radius `a` at 1 V (conductor 0), outer
    /// radius `b` grounded (conductor 1), vacuum between. The grid is
    /// uniform with `a / cells_per_radius` spacing at level 0, and links cut
    /// by the circles are shortened to the crossing point.
    pub fn coax(a: f64, b: f64, cells_per_radius: usize, level: u32) -> Result<FieldSolution> {
        if !(a > 0.0 && b > a) {
            return Err(Error::InvalidArgument(format!(
                "coax needs 0 < a < b, got a = {a}, b = {b}"
            )));
        }
        let h = a / (cells_per_radius as f64 * f64::from(1u32 << level));
        let half_cells = (b / h).ceil() as usize + 2;
        let l = half_cells as f64 * h;
        let mesh = Mesh::uniform((-l, l), (-l, l), 2 * half_cells, 2 * half_cells);
        let (nx, ny) = (mesh.nx(), mesh.ny());
        let mut owner = vec![FREE; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let (x, y) = (mesh.x_nodes[i], mesh.y_nodes[j]);
                let r = x.hypot(y);
                if r <= a {
                    owner[mesh.node(i, j)] = 0;
                } else if r >= b {
                    owner[mesh.node(i, j)] = 1;
                }
            }
        }
        let annulus = Annulus { inner: a, outer: b };
        Problem {
            cell_eps: vec![1.0; (nx - 1) * (ny - 1)],
            owner,
            potentials: vec![Some(1.0), Some(0.0)],
            boundary: None,
            curved: Some(&annulus),
            surface: None,
            mesh,
        }
        .solve()
    }
}
