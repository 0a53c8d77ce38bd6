//! Macro-scale cloak geometry and the two mesh generators.
//!
//! The macro domain is the top half `[-Lx/2, Lx/2] × [0, Ly/2]` of the cloak
//! problem, with the origin at the cloak centre. The half annulus
//! `R_c < r < R_D` is split into `n_sectors` equal-angle sectors numbered
//! counter-clockwise from the positive x1 axis, so `D_1` touches the right
//! half of the mirror line and `D_n` the left half.
//!
//! The macro mesh is built from concentric semicircular rings inside `R_D`
//! (every ring carries a node on each sector ray, so sector boundaries and both
//! circles are mesh edges) followed by radially blended layers that morph the
//! circle `r = R_D` into the rectangle boundary. Consecutive rings and layers
//! are stitched with a monotone zipper triangulation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{BoundaryEdge, BoundaryTag, Region, TriMesh};

/// Dimensions of the macro-scale domain (metres).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroGeometry {
    pub lx: f64,
    pub ly: f64,
    /// Outer radius of the design ring.
    pub r_design: f64,
    /// Radius of the shielded core; zero means no core.
    pub r_core: f64,
    pub n_sectors: usize,
}

impl MacroGeometry {
    /// Geometry of the main cloak benchmark.
    pub fn reference() -> Self {
        MacroGeometry { lx: 5.0, ly: 8.0, r_design: 1.35, r_core: 0.4, n_sectors: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lx, self.ly, self.r_design, self.r_core].iter().all(|v| v.is_finite());
        if !finite || self.lx <= 0.0 || self.ly <= 0.0 {
            return Err(Error::Geometry("domain lengths must be positive and finite".into()));
        }
        if self.r_core < 0.0 || self.r_core >= self.r_design {
            return Err(Error::Geometry(format!(
                "need 0 <= r_core < r_design, got r_core={} r_design={}",
                self.r_core, self.r_design
            )));
        }
        if self.r_design >= 0.5 * self.lx || self.r_design >= 0.5 * self.ly {
            return Err(Error::Geometry(format!(
                "design ring radius {} must stay inside the half-domain ({} x {})",
                self.r_design,
                0.5 * self.lx,
                0.5 * self.ly
            )));
        }
        if self.n_sectors == 0 {
            return Err(Error::Geometry("n_sectors must be at least 1".into()));
        }
        Ok(())
    }

    /// Angular width of one sector in the half domain.
    pub fn sector_angle(&self) -> f64 {
        PI / self.n_sectors as f64
    }

    /// Sector index (zero-based) for a polar angle in `[0, π]`.
    pub fn sector_of_angle(&self, angle: f64) -> usize {
        let l = (angle / self.sector_angle()).floor();
        (l.max(0.0) as usize).min(self.n_sectors - 1)
    }

    /// Region containing point `x` (top half plane).
    pub fn region_of_point(&self, x: [f64; 2]) -> Region {
        let r = x[0].hypot(x[1]);
        if r < self.r_core {
            Region::Core
        } else if r < self.r_design {
            Region::Sector(self.sector_of_angle(x[1].atan2(x[0])))
        } else {
            Region::Exterior
        }
    }

    /// Distance from the origin to the domain boundary along the ray at `angle`.
    fn boundary_distance(&self, angle: f64) -> f64 {
        let (s, c) = angle.sin_cos();
        let tx = if c.abs() > 1e-15 { 0.5 * self.lx / c.abs() } else { f64::INFINITY };
        let ty = if s > 1e-15 { 0.5 * self.ly / s } else { f64::INFINITY };
        tx.min(ty)
    }
}

/// Mesh-density controls for [`build_macro_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroMeshParams {
    /// Target element size inside `r <= r_design`.
    pub h_design: f64,
    /// Largest element size in the far field.
    pub h_far: f64,
    /// Geometric growth ratio of the layers outside the design ring.
    #[serde(default = "default_growth")]
    pub growth: f64,
}

fn default_growth() -> f64 {
    1.2
}

impl MacroMeshParams {
    pub fn uniform(h: f64) -> Self {
        MacroMeshParams { h_design: h, h_far: h, growth: 1.0 }
    }

    pub fn graded(h_design: f64, h_far: f64) -> Self {
        MacroMeshParams { h_design, h_far, growth: default_growth() }
    }
}

/// A polyline of nodes ordered by polar angle from 0 to π.
struct Ring {
    nodes: Vec<usize>,
    angles: Vec<f64>,
    /// Angular subdivision count for rings whose nodes sit at `π i / n`.
    exact: Option<usize>,
}

struct MeshBuilder {
    mesh: TriMesh,
}

impl MeshBuilder {
    fn add_node(&mut self, p: [f64; 2]) -> usize {
        self.mesh.nodes.push(p);
        self.mesh.nodes.len() - 1
    }

    fn add_triangle(&mut self, mut tri: [usize; 3], region: Region) -> Result<()> {
        let p = |i: usize| self.mesh.nodes[tri[i]];
        let (a, b, c) = (p(0), p(1), p(2));
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let scale = (b[0] - a[0]).hypot(b[1] - a[1]).max((c[0] - a[0]).hypot(c[1] - a[1]));
        if det.abs() <= 1e-12 * scale * scale {
            return Err(Error::Mesh(format!("degenerate triangle near ({:.4}, {:.4})", a[0], a[1])));
        }
        if det < 0.0 {
            tri.swap(1, 2);
        }
        self.mesh.elements.push(tri);
        self.mesh.element_region.push(region);
        Ok(())
    }

    fn add_edge(&mut self, a: usize, b: usize, tag: BoundaryTag) {
        self.mesh.boundary_edges.push(BoundaryEdge { nodes: [a, b], tag });
    }

    /// Triangulates the strip between two angle-ordered polylines.
    fn zip(&mut self, inner: &Ring, outer: &Ring, region: &dyn Fn([f64; 2]) -> Region) -> Result<()> {
        let (mut i, mut j) = (0usize, 0usize);
        let (ni, nj) = (inner.nodes.len() - 1, outer.nodes.len() - 1);
        while i < ni || j < nj {
            let advance_inner = if i == ni {
                false
            } else if j == nj {
                true
            } else {
                match (inner.exact, outer.exact) {
                    // exact rational comparison keeps sector rays as mesh edges
                    (Some(n_in), Some(n_out)) => (i + 1) * n_out <= (j + 1) * n_in,
                    _ => inner.angles[i + 1] <= outer.angles[j + 1],
                }
            };
            let tri = if advance_inner {
                i += 1;
                [inner.nodes[i - 1], inner.nodes[i], outer.nodes[j]]
            } else {
                j += 1;
                [inner.nodes[i], outer.nodes[j], outer.nodes[j - 1]]
            };
            let c = centroid(&self.mesh, tri);
            self.add_triangle(tri, region(c))?;
        }
        Ok(())
    }
}

fn centroid(mesh: &TriMesh, tri: [usize; 3]) -> [f64; 2] {
    let p = tri.map(|n| mesh.nodes[n]);
    [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
}

/// Reflects a top-half macro mesh across `x2 = 0` into the full domain.
///
/// Nodes on the symmetry line are shared; mirrored elements keep their region,
/// so `D_l` below the axis is the mirror image of `D_l` above it.
pub fn mirror_to_full_domain(half: &TriMesh) -> Result<TriMesh> {
    let on_axis = half.boundary_nodes(BoundaryTag::Symmetry);
    if on_axis.is_empty() {
        return Err(Error::Mesh("mesh has no symmetry edge to mirror across".into()));
    }
    let mut image: Vec<usize> = (0..half.num_nodes()).collect();
    let mut mesh = half.clone();
    let mut shared = vec![false; half.num_nodes()];
    for &n in &on_axis {
        if half.nodes[n][1] != 0.0 {
            return Err(Error::Mesh(format!("symmetry node {n} is off the axis")));
        }
        shared[n] = true;
    }
    for n in 0..half.num_nodes() {
        if !shared[n] {
            let [x, y] = half.nodes[n];
            image[n] = mesh.nodes.len();
            mesh.nodes.push([x, -y]);
        }
    }
    for (tri, region) in half.elements.iter().zip(&half.element_region) {
        mesh.elements.push([image[tri[0]], image[tri[2]], image[tri[1]]]);
        mesh.element_region.push(*region);
    }
    mesh.boundary_edges.retain(|e| e.tag != BoundaryTag::Symmetry);
    let mirrored: Vec<BoundaryEdge> = mesh
        .boundary_edges
        .iter()
        .map(|e| BoundaryEdge { nodes: [image[e.nodes[1]], image[e.nodes[0]]], tag: e.tag })
        .collect();
    mesh.boundary_edges.extend(mirrored);
    mesh.check()?;
    Ok(mesh)
}

/// Builds the conforming top-half macro mesh.
pub fn build_macro_mesh(geom: &MacroGeometry, params: &MacroMeshParams) -> Result<TriMesh> {
    geom.validate()?;
    let h = params.h_design;
    if !(h > 0.0) || !(params.h_far >= h) || !(params.growth >= 1.0) {
        return Err(Error::Mesh(format!(
            "invalid mesh parameters: h_design={} h_far={} growth={}",
            h, params.h_far, params.growth
        )));
    }
    let annulus = geom.r_design - geom.r_core;
    if annulus / h < 2.0 {
        return Err(Error::Mesh(format!(
            "resolution too coarse: {:.2} elements across the design ring (need at least 2)",
            annulus / h
        )));
    }

    let s = geom.n_sectors;
    let mut radii = Vec::new();
    if geom.r_core > 0.0 {
        let m1 = (geom.r_core / h).ceil().max(1.0) as usize;
        radii.extend((1..=m1).map(|k| geom.r_core * k as f64 / m1 as f64));
        let m2 = (annulus / h).ceil() as usize;
        radii.extend((1..=m2).map(|k| geom.r_core + annulus * k as f64 / m2 as f64));
        // pin the interface radii exactly
        radii[m1 - 1] = geom.r_core;
    } else {
        let m = (geom.r_design / h).ceil() as usize;
        radii.extend((1..=m).map(|k| geom.r_design * k as f64 / m as f64));
    }
    *radii.last_mut().expect("at least one ring") = geom.r_design;

    let mut b = MeshBuilder { mesh: TriMesh::default() };
    let origin = b.add_node([0.0, 0.0]);

    let classify_disk = |c: [f64; 2], outer_radius: f64| -> Region {
        if outer_radius <= geom.r_core {
            Region::Core
        } else {
            Region::Sector(geom.sector_of_angle(c[1].atan2(c[0])))
        }
    };

    let mut rings: Vec<Ring> = Vec::with_capacity(radii.len());
    for &r in &radii {
        let n = s * ((PI * r / (s as f64 * h)).ceil().max(1.0) as usize);
        let mut nodes = Vec::with_capacity(n + 1);
        let mut angles = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let a = PI * i as f64 / n as f64;
            let p = if i == n { [-r, 0.0] } else if i == 0 { [r, 0.0] } else { [r * a.cos(), r * a.sin()] };
            nodes.push(b.add_node(p));
            angles.push(a);
        }
        rings.push(Ring { nodes, angles, exact: Some(n) });
    }

    // central fan
    {
        let first = &rings[0];
        let r0 = radii[0];
        for i in 0..first.nodes.len() - 1 {
            let tri = [origin, first.nodes[i], first.nodes[i + 1]];
            let c = centroid(&b.mesh, tri);
            b.add_triangle(tri, classify_disk(c, r0))?;
        }
        b.add_edge(origin, first.nodes[0], BoundaryTag::Symmetry);
        b.add_edge(*first.nodes.last().unwrap(), origin, BoundaryTag::Symmetry);
    }
    for k in 0..rings.len() - 1 {
        let r_out = radii[k + 1];
        b.zip(&rings[k], &rings[k + 1], &|c| classify_disk(c, r_out))?;
        b.add_edge(rings[k].nodes[0], rings[k + 1].nodes[0], BoundaryTag::Symmetry);
        b.add_edge(*rings[k + 1].nodes.last().unwrap(), *rings[k].nodes.last().unwrap(), BoundaryTag::Symmetry);
    }

    // blended layers between r = R_D and the rectangle
    let rd = geom.r_design;
    let extent_min = (0.5 * geom.lx).min(0.5 * geom.ly) - rd;
    let extent_max = (0.5 * geom.lx).hypot(0.5 * geom.ly) - rd;
    let extent_ref = 0.5 * (extent_min + extent_max);
    let mut spacings = Vec::new();
    let mut total = 0.0;
    let mut step = h;
    while total < extent_ref {
        step = (step * params.growth).min(params.h_far);
        spacings.push(step);
        total += step;
    }
    // drop a sliver final layer by merging it into its neighbour
    if spacings.len() > 1 && total - extent_ref > 0.5 * spacings[spacings.len() - 1] {
        let last = spacings.pop().unwrap();
        total -= last;
    }
    let mut s_values = Vec::with_capacity(spacings.len());
    let mut acc = 0.0;
    for sp in &spacings {
        acc += sp;
        s_values.push(acc / total);
    }
    *s_values.last_mut().unwrap() = 1.0;

    let layer_radius = |sv: f64, angle: f64| (1.0 - sv) * rd + sv * geom.boundary_distance(angle);
    let corner_right = (0.5 * geom.ly).atan2(0.5 * geom.lx);
    let corner_left = PI - corner_right;

    let mut inner = rings.pop().unwrap();
    for (idx, &sv) in s_values.iter().enumerate() {
        let target = spacings[idx] * (extent_ref / total);
        let (nodes_xy, angles) = if idx + 1 == s_values.len() {
            rectangle_boundary_nodes(geom, target.min(params.h_far).max(h))
        } else {
            blended_layer_nodes(&|a| layer_radius(sv, a), target, [corner_right, corner_left])
        };
        let nodes: Vec<usize> = nodes_xy.iter().map(|&p| b.add_node(p)).collect();
        let outer = Ring { nodes, angles, exact: None };
        b.zip(&inner, &outer, &|_| Region::Exterior)?;
        b.add_edge(inner.nodes[0], outer.nodes[0], BoundaryTag::Symmetry);
        b.add_edge(*outer.nodes.last().unwrap(), *inner.nodes.last().unwrap(), BoundaryTag::Symmetry);
        inner = outer;
    }

    // outer boundary edges
    let (hx, hy) = (0.5 * geom.lx, 0.5 * geom.ly);
    for w in inner.nodes.windows(2) {
        let (pa, pb) = (b.mesh.nodes[w[0]], b.mesh.nodes[w[1]]);
        let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        let tol = 1e-9 * geom.lx.max(geom.ly);
        let tag = if (mid[0] - hx).abs() < tol {
            BoundaryTag::High
        } else if (mid[0] + hx).abs() < tol {
            BoundaryTag::Low
        } else if (mid[1] - hy).abs() < tol {
            BoundaryTag::Top
        } else {
            return Err(Error::Mesh(format!("outer edge at ({:.4}, {:.4}) is off the boundary", mid[0], mid[1])));
        };
        b.add_edge(w[0], w[1], tag);
    }

    let mesh = b.mesh;
    mesh.check()?;
    Ok(mesh)
}

/// Nodes of the rectangle boundary (right side, top, left side), corners included.
fn rectangle_boundary_nodes(geom: &MacroGeometry, h: f64) -> (Vec<[f64; 2]>, Vec<f64>) {
    let (hx, hy) = (0.5 * geom.lx, 0.5 * geom.ly);
    let n_side = (hy / h).ceil().max(1.0) as usize;
    let n_top = (geom.lx / h).ceil().max(1.0) as usize;
    let mut pts = Vec::new();
    for k in 0..n_side {
        pts.push([hx, hy * k as f64 / n_side as f64]);
    }
    for k in 0..n_top {
        pts.push([hx - geom.lx * k as f64 / n_top as f64, hy]);
    }
    for k in 0..=n_side {
        pts.push([-hx, hy * (n_side - k) as f64 / n_side as f64]);
    }
    let angles = pts
        .iter()
        .enumerate()
        .map(|(i, p)| if i + 1 == pts.len() { PI } else { p[1].atan2(p[0]) })
        .collect();
    (pts, angles)
}

/// Nodes on the star-shaped curve `r = radius(angle)`, evenly spaced in arc length.
fn blended_layer_nodes(radius: &dyn Fn(f64) -> f64, h: f64, kinks: [f64; 2]) -> (Vec<[f64; 2]>, Vec<f64>) {
    const SAMPLES: usize = 4096;
    let mut sample_angles: Vec<f64> = (0..=SAMPLES).map(|i| PI * i as f64 / SAMPLES as f64).collect();
    sample_angles.extend(kinks);
    sample_angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let point = |a: f64| {
        let r = radius(a);
        [r * a.cos(), r * a.sin()]
    };
    let mut cumulative = vec![0.0; sample_angles.len()];
    for i in 1..sample_angles.len() {
        let (p, q) = (point(sample_angles[i - 1]), point(sample_angles[i]));
        cumulative[i] = cumulative[i - 1] + (q[0] - p[0]).hypot(q[1] - p[1]);
    }
    let length = *cumulative.last().unwrap();
    let n = (length / h).ceil().max(2.0) as usize;
    let mut angles = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for k in 0..=n {
        if k == 0 {
            angles.push(0.0);
            continue;
        }
        if k == n {
            angles.push(PI);
            continue;
        }
        let target = length * k as f64 / n as f64;
        while cumulative[seg + 1] < target {
            seg += 1;
        }
        let t = (target - cumulative[seg]) / (cumulative[seg + 1] - cumulative[seg]);
        angles.push(sample_angles[seg] + t * (sample_angles[seg + 1] - sample_angles[seg]));
    }
    let pts = angles
        .iter()
        .map(|&a| {
            let r = radius(a);
            if a == 0.0 {
                [r, 0.0]
            } else if a == PI {
                [-r, 0.0]
            } else {
                [r * a.cos(), r * a.sin()]
            }
        })
        .collect();
    (pts, angles)
}

/// The normalized periodic unit cell `Y = (0,1)²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitCellGeometry {
    /// Elements per side of the structured grid.
    pub resolution: usize,
}

impl UnitCellGeometry {
    pub fn new(resolution: usize) -> Self {
        UnitCellGeometry { resolution }
    }
}

/// Node index of grid point `(i, j)` on a cell mesh of resolution `n`.
pub fn cell_node_index(n: usize, i: usize, j: usize) -> usize {
    j * (n + 1) + i
}

/// Builds a structured union-jack triangulation of the unit cell.
///
/// Squares alternate their diagonal in a checkerboard, which makes 90°
/// rotations and axis mirrors exact mesh symmetries for even resolutions.
/// Right and top boundary nodes are slaves of their left/bottom counterparts;
/// the three non-origin corners are slaves of node `(0, 0)`.
pub fn build_cell_mesh(cell: &UnitCellGeometry) -> Result<TriMesh> {
    let n = cell.resolution;
    if n < 16 || !n.is_multiple_of(2) {
        return Err(Error::Mesh(format!("cell resolution must be even and at least 16, got {n}")));
    }
    let idx = |i: usize, j: usize| cell_node_index(n, i, j);
    let mut mesh = TriMesh::default();
    for j in 0..=n {
        for i in 0..=n {
            mesh.nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    for j in 0..n {
        for i in 0..n {
            let (p00, p10, p01, p11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            if (i + j) % 2 == 0 {
                mesh.elements.push([p00, p10, p11]);
                mesh.elements.push([p00, p11, p01]);
            } else {
                mesh.elements.push([p00, p10, p01]);
                mesh.elements.push([p10, p11, p01]);
            }
        }
    }
    mesh.element_region = vec![Region::Cell; mesh.elements.len()];
    for k in 0..n {
        mesh.boundary_edges.push(BoundaryEdge { nodes: [idx(k, 0), idx(k + 1, 0)], tag: BoundaryTag::CellBottom });
        mesh.boundary_edges.push(BoundaryEdge { nodes: [idx(n, k), idx(n, k + 1)], tag: BoundaryTag::CellRight });
        mesh.boundary_edges.push(BoundaryEdge { nodes: [idx(k + 1, n), idx(k, n)], tag: BoundaryTag::CellTop });
        mesh.boundary_edges.push(BoundaryEdge { nodes: [idx(0, k + 1), idx(0, k)], tag: BoundaryTag::CellLeft });
    }
    for j in 0..n {
        mesh.periodic_pairs.push((idx(0, j), idx(n, j)));
    }
    for i in 0..n {
        mesh.periodic_pairs.push((idx(i, 0), idx(i, n)));
    }
    mesh.periodic_pairs.push((idx(0, 0), idx(n, n)));
    mesh.check()?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_mesh_counts() {
        let mesh = build_cell_mesh(&UnitCellGeometry::new(64)).unwrap();
        assert_eq!(mesh.num_elements(), 64 * 64 * 2);
        assert_eq!(mesh.num_nodes(), 65 * 65);
        assert_eq!(mesh.periodic_pairs.len(), 2 * 64 + 1);
        assert!((mesh.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cell_mesh_pairs_midpoints() {
        let n = 16;
        let mesh = build_cell_mesh(&UnitCellGeometry::new(n)).unwrap();
        let left = cell_node_index(n, 0, n / 2);
        let right = cell_node_index(n, n, n / 2);
        assert_eq!(mesh.nodes[left], [0.0, 0.5]);
        assert_eq!(mesh.nodes[right], [1.0, 0.5]);
        assert!(mesh.periodic_pairs.contains(&(left, right)));
        // every corner folds onto the origin node
        let corners = [cell_node_index(n, n, 0), cell_node_index(n, 0, n), cell_node_index(n, n, n)];
        let mut masters = std::collections::HashMap::new();
        for &(m, s) in &mesh.periodic_pairs {
            masters.insert(s, m);
        }
        for c in corners {
            let mut node = c;
            while let Some(&m) = masters.get(&node) {
                node = m;
            }
            assert_eq!(node, 0);
        }
    }

    #[test]
    fn cell_mesh_rejects_coarse_or_odd() {
        assert!(build_cell_mesh(&UnitCellGeometry::new(8)).is_err());
        assert!(build_cell_mesh(&UnitCellGeometry::new(17)).is_err());
    }

    #[test]
    fn macro_mesh_reference_geometry() {
        let g = MacroGeometry::reference();
        let mesh = build_macro_mesh(&g, &MacroMeshParams::graded(0.08, 0.4)).unwrap();
        for tag in [BoundaryTag::Low, BoundaryTag::High, BoundaryTag::Top, BoundaryTag::Symmetry] {
            assert!(!mesh.boundary_nodes(tag).is_empty(), "{tag:?} missing");
        }
        for l in 0..8 {
            assert!(mesh.region_area(Region::Sector(l)) > 0.0, "sector {l} empty");
        }
        let total = mesh.total_area();
        assert!((total - g.lx * g.ly / 2.0).abs() / total < 1e-6, "total area {total}");
    }

    #[test]
    fn macro_mesh_region_areas_converge() {
        let g = MacroGeometry::reference();
        let core_exact = PI * g.r_core * g.r_core / 2.0;
        let ring_exact = PI * (g.r_design.powi(2) - g.r_core.powi(2)) / 2.0;
        let mut prev = f64::INFINITY;
        for h in [0.1, 0.05, 0.025] {
            let mesh = build_macro_mesh(&g, &MacroMeshParams::graded(h, 0.4)).unwrap();
            let core = mesh.region_area(Region::Core);
            let sectors: Vec<f64> = (0..8).map(|l| mesh.region_area(Region::Sector(l))).collect();
            let ring: f64 = sectors.iter().sum();
            for s in &sectors {
                assert!((s - ring / 8.0).abs() / ring < 1e-10, "unequal sectors");
            }
            let err = ((core - core_exact) / core_exact).abs() + ((ring - ring_exact) / ring_exact).abs();
            assert!(err < prev);
            assert!(err < 0.01);
            prev = err;
        }
    }

    #[test]
    fn macro_mesh_without_core() {
        let g = MacroGeometry { r_core: 0.0, ..MacroGeometry::reference() };
        let mesh = build_macro_mesh(&g, &MacroMeshParams::graded(0.1, 0.4)).unwrap();
        assert_eq!(mesh.region_area(Region::Core), 0.0);
        assert!((0..8).all(|l| mesh.region_area(Region::Sector(l)) > 0.0));
    }

    #[test]
    fn macro_mesh_rejects_coarse_ring() {
        let g = MacroGeometry::reference();
        let err = build_macro_mesh(&g, &MacroMeshParams::uniform(0.6)).unwrap_err();
        assert!(err.to_string().contains("at least 2"));
    }

    #[test]
    fn sector_numbering_rotates() {
        let g = MacroGeometry::reference();
        let r = 0.5 * (g.r_core + g.r_design);
        for l in 0..7 {
            let a = (l as f64 + 0.5) * g.sector_angle();
            let p = [r * a.cos(), r * a.sin()];
            let rot = a + g.sector_angle();
            let q = [r * rot.cos(), r * rot.sin()];
            assert_eq!(g.region_of_point(p), Region::Sector(l));
            assert_eq!(g.region_of_point(q), Region::Sector(l + 1));
        }
    }

    #[test]
    fn appendix_geometry_meshes() {
        let g = MacroGeometry { lx: 20.0, ly: 40.0 / 3.0, r_design: 5.0, r_core: 3.0, n_sectors: 8 };
        let mesh = build_macro_mesh(&g, &MacroMeshParams::graded(0.2, 1.0)).unwrap();
        let total = mesh.total_area();
        assert!((total - g.lx * g.ly / 2.0).abs() / total < 1e-6);
    }
}
