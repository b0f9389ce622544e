use crate::error::{Error, Result};
use crate::geometry::{validate, CrossSection};

/// Largest cell-to-neighbour size ratio produced by the grading.
pub const GRADING_RATIO: f64 = 1.2;
/// Level-0 edge cells are at most `local scale / EDGE_RESOLUTION`.
pub const EDGE_RESOLUTION: f64 = 200.0;
/// Far-field cap on the level-0 cell size, as a fraction of the box half-width.
const FAR_CELL_FRACTION: f64 = 1.0 / 16.0;
/// Refuse meshes beyond this many nodes.
pub const MAX_NODES: usize = 4_000_000;

/// Nonuniform tensor-product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub x_nodes: Vec<f64>,
    pub y_nodes: Vec<f64>,
    pub level: u32,
    /// Smallest cell adjacent to any conductor edge.
    pub min_edge_cell: f64,
    /// Conductor edges with their level-0 cell size bound `local / 200`.
    pub edges: Vec<EdgeCell>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCell {
    pub x: f64,
    pub base_cell: f64,
}

impl Mesh {
    pub fn nx(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn ny(&self) -> usize {
        self.y_nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.nx() * self.ny()
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    /// Index of the grid line `y = 0`, if present.
    pub fn surface_row(&self) -> Option<usize> {
        self.y_nodes.iter().position(|&y| y == 0.0)
    }

    /// Largest ratio between adjacent cells along either axis.
    pub fn max_adjacent_ratio(&self) -> f64 {
        fn axis(v: &[f64]) -> f64 {
            v.windows(3)
                .map(|w| {
                    let (a, b) = (w[1] - w[0], w[2] - w[1]);
                    a.max(b) / a.min(b)
                })
                .fold(1.0, f64::max)
        }
        axis(&self.x_nodes).max(axis(&self.y_nodes))
    }

    /// Uniform grid over a rectangle, used by the analytic fixtures.
    pub fn uniform(x: (f64, f64), y: (f64, f64), nx_cells: usize, ny_cells: usize) -> Self {
        let lin = |(a, b): (f64, f64), n: usize| -> Vec<f64> {
            (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
        };
        let x_nodes = lin(x, nx_cells);
        let y_nodes = lin(y, ny_cells);
        let min_edge_cell = ((x.1 - x.0) / nx_cells as f64).min((y.1 - y.0) / ny_cells as f64);
        Self {
            x_nodes,
            y_nodes,
            level: 0,
            min_edge_cell,
            edges: Vec::new(),
        }
    }
}

/// Builds a grid graded geometrically toward every conductor edge and toward
/// the substrate surface. Each level bisects every level-0 cell `level` times.
pub fn build_mesh(section: &CrossSection, level: u32) -> Result<Mesh> {
    validate(section).into_result(&section.name)?;
    let hw = section.box_halfwidth;
    let hh = section.box_height;
    let h_far = hw * FAR_CELL_FRACTION;

    let mut edges: Vec<EdgeCell> = section
        .edge_scales()
        .into_iter()
        .map(|(x, local)| EdgeCell {
            x,
            base_cell: local / EDGE_RESOLUTION,
        })
        .collect();
    edges.sort_by(|a, b| a.x.total_cmp(&b.x));

    // The first graded cell can exceed the key size by (e^g - 1)/g < 1.1.
    let shrink = 1.1;
    let x_keys: Vec<Key> = edges
        .iter()
        .map(|e| Key {
            pos: e.x,
            h: e.base_cell / shrink,
        })
        .collect();
    let h_surface = x_keys.iter().map(|k| k.h).fold(f64::INFINITY, f64::min);
    let y_keys = [Key {
        pos: 0.0,
        h: h_surface,
    }];

    let x0 = graded_axis(-hw, hw, &x_keys, h_far);
    let y0 = graded_axis(-hh, hh, &y_keys, h_far);
    let base_nodes = x0.len() * y0.len();
    let factor = 1usize.checked_shl(2 * level).unwrap_or(usize::MAX);
    if level > 10 || base_nodes.saturating_mul(factor) > MAX_NODES {
        return Err(Error::Mesh(format!(
            "level {level} would need about {} nodes (limit {MAX_NODES}); box too small for the requested refinement",
            base_nodes.saturating_mul(factor)
        )));
    }
    let x_nodes = bisect(&x0, level);
    let y_nodes = bisect(&y0, level);

    let min_edge_cell = edges
        .iter()
        .map(|e| {
            let i = x_nodes
                .binary_search_by(|v| v.total_cmp(&e.x))
                .expect("edges are grid lines");
            let left = if i > 0 {
                e.x - x_nodes[i - 1]
            } else {
                f64::INFINITY
            };
            let right = x_nodes.get(i + 1).map_or(f64::INFINITY, |v| v - e.x);
            left.min(right)
        })
        .fold(f64::INFINITY, f64::min);

    Ok(Mesh {
        x_nodes,
        y_nodes,
        level,
        min_edge_cell,
        edges,
    })
}

#[derive(Debug, Clone, Copy)]
struct Key {
    pos: f64,
    h: f64,
}

/// Growth rate of the size function `h(x) = h_key + g |x - key|`. With unit
/// steps in `integral dx / h`, neighbouring cells differ by `e^g = 1.2`.
fn growth() -> f64 {
    GRADING_RATIO.ln()
}

/// Piece of the size function on `[x0, x1]`: `h(x) = h0 + slope (x - x0)`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    x0: f64,
    x1: f64,
    h0: f64,
    slope: f64,
}

impl Piece {
    /// `integral_{x0}^{x0+s} dx / h`.
    fn phi(&self, s: f64) -> f64 {
        if self.slope == 0.0 {
            s / self.h0
        } else {
            ((self.h0 + self.slope * s) / self.h0).ln() / self.slope
        }
    }

    fn inverse(&self, phi: f64) -> f64 {
        if self.slope == 0.0 {
            self.h0 * phi
        } else {
            self.h0 * (self.slope * phi).exp_m1() / self.slope
        }
    }
}

/// Size function pieces on `[a, b]` with optional keys at either end.
fn pieces(a: f64, b: f64, ha: Option<f64>, hb: Option<f64>, h_max: f64) -> Vec<Piece> {
    let g = growth();
    let size = |x: f64| -> f64 {
        let mut h = h_max;
        if let Some(ha) = ha {
            h = h.min(ha + g * (x - a));
        }
        if let Some(hb) = hb {
            h = h.min(hb + g * (b - x));
        }
        h
    };
    let mut cuts = vec![a, b];
    if let Some(ha) = ha {
        cuts.push(a + (h_max - ha) / g);
    }
    if let Some(hb) = hb {
        cuts.push(b - (h_max - hb) / g);
    }
    if let (Some(ha), Some(hb)) = (ha, hb) {
        cuts.push((hb - ha + g * (a + b)) / (2.0 * g));
    }
    cuts.retain(|&c| c >= a && c <= b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (x0, x1) = (w[0], w[1]);
            let mid = 0.5 * (x0 + x1);
            let h_mid = size(mid);
            let mut slope = 0.0;
            if let Some(ha) = ha {
                if (ha + g * (mid - a) - h_mid).abs() <= 1e-12 * h_mid {
                    slope = g;
                }
            }
            if slope == 0.0 {
                if let Some(hb) = hb {
                    if (hb + g * (b - mid) - h_mid).abs() <= 1e-12 * h_mid {
                        slope = -g;
                    }
                }
            }
            Piece {
                x0,
                x1,
                h0: size(x0),
                slope,
            }
        })
        .collect()
}

/// Nodes on `[lo, hi]` including every key position.
fn graded_axis(lo: f64, hi: f64, keys: &[Key], h_max: f64) -> Vec<f64> {
    let mut stops: Vec<(f64, Option<f64>)> = vec![(lo, None)];
    stops.extend(keys.iter().map(|k| (k.pos, Some(k.h.min(h_max)))));
    stops.push((hi, None));

    let mut nodes = vec![lo];
    for w in stops.windows(2) {
        let ((a, ha), (b, hb)) = (w[0], w[1]);
        let ps = pieces(a, b, ha, hb, h_max);
        let spans: Vec<f64> = ps.iter().map(|p| p.phi(p.x1 - p.x0)).collect();
        let total: f64 = spans.iter().sum();
        let n = total.ceil().max(1.0) as usize;
        let step = total / n as f64;
        let mut piece = 0;
        let mut before = 0.0;
        for k in 1..n {
            let target = step * k as f64;
            while piece + 1 < ps.len() && before + spans[piece] < target {
                before += spans[piece];
                piece += 1;
            }
            let p = &ps[piece];
            let x = (p.x0 + p.inverse(target - before)).clamp(p.x0, p.x1);
            nodes.push(x);
        }
        nodes.push(b);
    }
    nodes
}

fn bisect(nodes: &[f64], times: u32) -> Vec<f64> {
    let mut v = nodes.to_vec();
    for _ in 0..times {
        let mut next = Vec::with_capacity(2 * v.len());
        for w in v.windows(2) {
            next.push(w[0]);
            next.push(0.5 * (w[0] + w[1]));
        }
        next.push(*v.last().expect("non-empty axis"));
        v = next;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{reference_design, ReferenceDesign};

    fn section(d: ReferenceDesign) -> CrossSection {
        reference_design(d, 1.0).unwrap().sections[0]
            .section
            .clone()
    }

    #[test]
    fn hero_level0_min_edge_cell() {
        let m = build_mesh(&section(ReferenceDesign::Hero), 0).unwrap();
        assert!(m.min_edge_cell <= 350e-6 / 200.0, "{}", m.min_edge_cell);
        assert!(m.min_edge_cell > 0.5 * 350e-6 / 200.0);
    }

    #[test]
    fn each_level_halves_min_cell() {
        let s = section(ReferenceDesign::Hero);
        let m0 = build_mesh(&s, 0).unwrap();
        let m1 = build_mesh(&s, 1).unwrap();
        let m2 = build_mesh(&s, 2).unwrap();
        assert!((m1.min_edge_cell / m0.min_edge_cell - 0.5).abs() < 1e-9);
        assert!((m2.min_edge_cell / m1.min_edge_cell - 0.5).abs() < 1e-9);
    }

    #[test]
    fn grid_contains_edges_and_surface() {
        for d in ReferenceDesign::ALL {
            let s = section(d);
            let m = build_mesh(&s, 0).unwrap();
            assert!(m.surface_row().is_some());
            for c in &s.conductors {
                assert!(m.x_nodes.contains(&c.x_min));
                assert!(m.x_nodes.contains(&c.x_max));
            }
            assert!(m.x_nodes.windows(2).all(|w| w[1] > w[0]));
            assert!(m.y_nodes.windows(2).all(|w| w[1] > w[0]));
            assert!(
                m.max_adjacent_ratio() <= GRADING_RATIO + 1e-9,
                "{d}: {}",
                m.max_adjacent_ratio()
            );
            for e in &m.edges {
                let i = m.x_nodes.iter().position(|&x| x == e.x).unwrap();
                let cell = (m.x_nodes[i + 1] - m.x_nodes[i]).min(m.x_nodes[i] - m.x_nodes[i - 1]);
                assert!(cell <= e.base_cell * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn degenerate_section_is_rejected() {
        let mut s = section(ReferenceDesign::Hero);
        s.conductors[0].x_max = s.conductors[0].x_min;
        assert!(build_mesh(&s, 0).is_err());
    }

    #[test]
    fn excessive_level_is_rejected() {
        let s = section(ReferenceDesign::Hero);
        assert!(matches!(build_mesh(&s, 9), Err(Error::Mesh(_))));
    }
}
