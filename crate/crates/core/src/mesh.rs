//! Linear triangular meshes and P1 element geometry.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Material region of a macro-mesh element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    /// Evaluation domain (Ω_E), steel in all bundled scenarios.
    Exterior,
    /// Design sector D_l, zero-based (`Sector(0)` is D_1).
    Sector(usize),
    /// Shielded core (Ω_C).
    Core,
    /// Interior of a unit-cell mesh.
    Cell,
}

impl Region {
    pub fn sector(self) -> Option<usize> {
        match self {
            Region::Sector(l) => Some(l),
            _ => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            Region::Exterior => "exterior".into(),
            Region::Sector(l) => format!("D{}", l + 1),
            Region::Core => "core".into(),
            Region::Cell => "cell".into(),
        }
    }

    /// Integer code used in VTK cell data: 0 exterior, 1..=n sectors, -1 core, -2 cell.
    pub fn code(self) -> i32 {
        match self {
            Region::Exterior => 0,
            Region::Sector(l) => l as i32 + 1,
            Region::Core => -1,
            Region::Cell => -2,
        }
    }
}

/// Tag attached to a boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// Left edge, held at the low temperature (Γ_a).
    Low,
    /// Right edge, held at the high temperature (Γ_b).
    High,
    /// Top edge, adiabatic (Γ_N).
    Top,
    /// Mirror line x2 = 0, adiabatic.
    Symmetry,
    CellLeft,
    CellRight,
    CellBottom,
    CellTop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

/// Area and constant shape-function gradients of a P1 triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(p: [[f64; 2]; 3]) -> Self {
        let [x0, y0] = p[0];
        let [x1, y1] = p[1];
        let [x2, y2] = p[2];
        let det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
        let area = 0.5 * det;
        let inv = 1.0 / det;
        let grads = [
            [(y1 - y2) * inv, (x2 - x1) * inv],
            [(y2 - y0) * inv, (x0 - x2) * inv],
            [(y0 - y1) * inv, (x1 - x0) * inv],
        ];
        ElementGeometry { area, grads }
    }

    /// Gradient of the P1 interpolant of `values` (one value per local node).
    pub fn gradient(&self, values: [f64; 3]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (a, v) in values.iter().enumerate() {
            g[0] += v * self.grads[a][0];
            g[1] += v * self.grads[a][1];
        }
        g
    }

    /// Element stiffness `∫ ∇N_a · (K ∇N_b)` for a symmetric 2×2 tensor.
    pub fn stiffness(&self, k: [[f64; 2]; 2]) -> [[f64; 3]; 3] {
        let mut ke = [[0.0; 3]; 3];
        for a in 0..3 {
            let kga = [
                k[0][0] * self.grads[a][0] + k[0][1] * self.grads[a][1],
                k[1][0] * self.grads[a][0] + k[1][1] * self.grads[a][1],
            ];
            for b in 0..3 {
                ke[b][a] = self.area * (kga[0] * self.grads[b][0] + kga[1] * self.grads[b][1]);
            }
        }
        ke
    }

    /// Consistent P1 mass matrix.
    pub fn mass(&self) -> [[f64; 3]; 3] {
        let d = self.area / 6.0;
        let o = self.area / 12.0;
        [[d, o, o], [o, d, o], [o, o, d]]
    }
}

/// Linear triangular mesh with region and boundary tags.
#[derive(Debug, Clone, Default)]
pub struct TriMesh {
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 3]>,
    pub element_region: Vec<Region>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// `(master, slave)` pairs; empty for macro meshes.
    pub periodic_pairs: Vec<(usize, usize)>,
}

impl TriMesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_points(&self, e: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.elements[e];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn element_geometry(&self, e: usize) -> ElementGeometry {
        ElementGeometry::new(self.element_points(e))
    }

    pub fn geometries(&self) -> Vec<ElementGeometry> {
        (0..self.num_elements()).map(|e| self.element_geometry(e)).collect()
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let p = self.element_points(e);
        [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
    }

    /// Sorted, deduplicated node indices lying on edges with the given tag.
    pub fn boundary_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| e.tag == tag)
            .flat_map(|e| e.nodes)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    pub fn region_area(&self, region: Region) -> f64 {
        (0..self.num_elements())
            .filter(|&e| self.element_region[e] == region)
            .map(|e| self.element_geometry(e).area)
            .sum()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|e| self.element_geometry(e).area).sum()
    }

    /// Checks orientation, boundary-edge ownership and periodic matching.
    pub fn check(&self) -> Result<()> {
        if self.element_region.len() != self.elements.len() {
            return Err(Error::Mesh("element_region length mismatch".into()));
        }
        for (e, tri) in self.elements.iter().enumerate() {
            if tri.iter().any(|&n| n >= self.nodes.len()) {
                return Err(Error::Mesh(format!("element {e} references a missing node")));
            }
            let area = self.element_geometry(e).area;
            if !(area > 0.0) {
                return Err(Error::Mesh(format!("element {e} has non-positive area {area:e}")));
            }
        }
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.elements {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        for edge in &self.boundary_edges {
            let [a, b] = edge.nodes;
            match edge_count.get(&(a.min(b), a.max(b))) {
                Some(1) => {}
                other => {
                    return Err(Error::Mesh(format!(
                        "boundary edge ({a}, {b}) is shared by {} elements",
                        other.copied().unwrap_or(0)
                    )))
                }
            }
        }
        for &(m, s) in &self.periodic_pairs {
            let (pm, ps) = (self.nodes[m], self.nodes[s]);
            let dx = (ps[0] - pm[0]).abs();
            let dy = (ps[1] - pm[1]).abs();
            let tangential_ok = |d: f64| d < 1e-12 || (d - 1.0).abs() < 1e-12;
            if !(tangential_ok(dx) && tangential_ok(dy)) {
                return Err(Error::Mesh(format!("periodic pair ({m}, {s}) does not match")));
            }
        }
        Ok(())
    }
}
