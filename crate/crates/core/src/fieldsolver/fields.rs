use super::{FieldSolution, FREE};
use crate::EPS0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    /// Exposed substrate between conductors.
    Gap,
    /// Underneath/on top of conductor `k`.
    Conductor(usize),
}

/// Fields at the midpoint of one surface segment.
///
/// `e_perp_*` is the `y` component of E just above (vacuum) and just below
/// (substrate) the surface. On gap segments the two are tied by `D`
/// continuity; on conductor segments they are independent and `e_parallel`
/// is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSegment {
    pub x0: f64,
    pub x1: f64,
    pub kind: SegmentKind,
    pub e_parallel: f64,
    pub e_perp_vacuum: f64,
    pub e_perp_substrate: f64,
    /// Relative mismatch between the one-sided `D_perp` estimates before
    /// they were reconciled (gap segments only).
    pub d_mismatch: f64,
}

impl SurfaceSegment {
    pub fn length(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.x0 + self.x1)
    }
}

/// Second-order one-sided derivative at `y0` from samples at distances
/// `h1` and `h1 + h2` along the same direction.
fn one_sided(f0: f64, f1: f64, f2: Option<(f64, f64)>, h1: f64) -> f64 {
    match f2 {
        Some((f2, h2)) => {
            -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * f0 + (h1 + h2) / (h1 * h2) * f1
                - h1 / (h2 * (h1 + h2)) * f2
        }
        None => (f1 - f0) / h1,
    }
}

/// Surface fields along the participation row of `solution`.
pub fn surface_fields(solution: &FieldSolution) -> Vec<SurfaceSegment> {
    let Some(surface) = &solution.surface else {
        return Vec::new();
    };
    let m = &solution.mesh;
    let v = &solution.potential;
    let j = surface.row;
    let ys = &m.y_nodes;
    let boundary = (solution.conductor_potentials.len()) as u32;

    // E_y above and below each node on the row.
    let nx = m.nx();
    let mut up = vec![0.0; nx];
    let mut down = vec![0.0; nx];
    for i in 0..nx {
        if j + 1 < m.ny() {
            let h1 = ys[j + 1] - ys[j];
            let f2 = (j + 2 < m.ny()).then(|| (v[m.node(i, j + 2)], ys[j + 2] - ys[j + 1]));
            up[i] = -one_sided(v[m.node(i, j)], v[m.node(i, j + 1)], f2, h1);
        }
        if surface.substrate_eps.is_some() && j >= 1 {
            let h1 = ys[j] - ys[j - 1];
            let f2 = (j >= 2).then(|| (v[m.node(i, j - 2)], ys[j - 1] - ys[j - 2]));
            // Derivative toward -y, so dV/dy = -that.
            down[i] = one_sided(v[m.node(i, j)], v[m.node(i, j - 1)], f2, h1);
        }
    }
    let eps_sub = surface.substrate_eps.unwrap_or(1.0);

    let owner_of = |i: usize| -> Option<u32> {
        let o = solution.owner[m.node(i, j)];
        (o != FREE && o != boundary).then_some(o)
    };

    (0..nx - 1)
        .map(|i| {
            let (x0, x1) = (m.x_nodes[i], m.x_nodes[i + 1]);
            match (owner_of(i), owner_of(i + 1)) {
                (Some(a), Some(b)) if a == b => SurfaceSegment {
                    x0,
                    x1,
                    kind: SegmentKind::Conductor(a as usize),
                    e_parallel: 0.0,
                    e_perp_vacuum: 0.5 * (up[i] + up[i + 1]),
                    e_perp_substrate: if surface.substrate_eps.is_some() {
                        0.5 * (down[i] + down[i + 1])
                    } else {
                        0.0
                    },
                    d_mismatch: 0.0,
                },
                _ => {
                    let d_vac = 0.5 * (up[i] + up[i + 1]) * EPS0;
                    let d_sub = 0.5 * (down[i] + down[i + 1]) * EPS0 * eps_sub;
                    let (d, mismatch) = if surface.substrate_eps.is_some() {
                        let scale = d_vac.abs().max(d_sub.abs());
                        let mis = if scale > 0.0 {
                            (d_vac - d_sub).abs() / scale
                        } else {
                            0.0
                        };
                        (0.5 * (d_vac + d_sub), mis)
                    } else {
                        (d_vac, 0.0)
                    };
                    SurfaceSegment {
                        x0,
                        x1,
                        kind: SegmentKind::Gap,
                        e_parallel: -(v[m.node(i + 1, j)] - v[m.node(i, j)]) / (x1 - x0),
                        e_perp_vacuum: d / EPS0,
                        e_perp_substrate: d / (EPS0 * eps_sub),
                        d_mismatch: mismatch,
                    }
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldsolver::{fixtures, solve_at_level, Drive};
    use crate::geometry::{reference_design, ReferenceDesign};

    #[test]
    fn parallel_plate_surface_field() {
        let d = 2e-6;
        let sol = fixtures::parallel_plate(d, d, 6, &Drive::default()).unwrap();
        let segs = surface_fields(&sol);
        assert!(!segs.is_empty());
        for s in &segs {
            assert_eq!(s.kind, SegmentKind::Conductor(0));
            assert_eq!(s.e_parallel, 0.0);
            // Field points from the top plate (+0.5 V) down to the bottom.
            assert!((s.e_perp_vacuum + 1.0 / d).abs() < 1e-9 / d);
        }
    }

    #[test]
    fn gap_segments_satisfy_d_continuity() {
        let s = reference_design(ReferenceDesign::Hero, 1.0)
            .unwrap()
            .sections[0]
            .section
            .clone();
        let sol = solve_at_level(&s, 0).unwrap();
        for seg in surface_fields(&sol)
            .iter()
            .filter(|g| g.kind == SegmentKind::Gap)
        {
            let lhs = s.substrate_eps * seg.e_perp_substrate;
            assert!((lhs - seg.e_perp_vacuum).abs() <= 1e-12 * seg.e_perp_vacuum.abs().max(1e-30));
        }
    }

    #[test]
    fn gap_field_is_mostly_tangential_away_from_edges() {
        let s = reference_design(ReferenceDesign::Hero, 1.0)
            .unwrap()
            .sections[0]
            .section
            .clone();
        let sol = solve_at_level(&s, 0).unwrap();
        // Strips on a dielectric half-space: the gap is a symmetry plane of
        // the homogeneous problem, so D_perp there only comes from the box.
        for seg in surface_fields(&sol)
            .iter()
            .filter(|g| g.kind == SegmentKind::Gap && g.midpoint().abs() < 150e-6)
        {
            assert!(
                seg.e_perp_vacuum.abs() < 0.05 * seg.e_parallel.abs(),
                "{seg:?}"
            );
        }
    }

    #[test]
    fn hero_gap_is_mirror_symmetric() {
        let s = reference_design(ReferenceDesign::Hero, 1.0)
            .unwrap()
            .sections[0]
            .section
            .clone();
        let sol = solve_at_level(&s, 0).unwrap();
        let segs = surface_fields(&sol);
        let k = segs.iter().position(|g| g.x0 >= 0.0).unwrap();
        let (left, right) = (&segs[k - 1], &segs[k]);
        assert_eq!(left.kind, SegmentKind::Gap);
        assert!((left.x1 + right.x0).abs() < 1e-15 && (left.x0 + right.x1).abs() < 1e-12);
        // Odd potential: E_par even, E_perp odd about the centre.
        assert!(left.e_parallel.abs() > 0.0);
        assert!((left.e_parallel - right.e_parallel).abs() < 1e-8 * left.e_parallel.abs());
        assert!((left.e_perp_vacuum + right.e_perp_vacuum).abs() < 1e-8 * left.e_parallel.abs());
    }
}
