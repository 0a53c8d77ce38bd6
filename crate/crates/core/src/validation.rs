//! Finite-cell checks of homogenized designs: tile the design ring with real
//! cells of size ε₀, solve plain conduction and score the result, optionally
//! with a rotated obstacle inside the core.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem;
use crate::geometry::{self, build_macro_mesh, cell_node_index, MacroGeometry, MacroMeshParams};
use crate::homogenization::element_conductivity;
use crate::levelset::{characteristic, LevelSetField};
use crate::macro_solver::{BoundaryData, MacroProblem};
use crate::mesh::{Region, TriMesh};
use crate::optimizer::Materials;

/// Fewest elements allowed along one cell side.
pub const MIN_ELEMENTS_PER_CELL: f64 = 8.0;

/// A design laid out as a finite periodic array.
#[derive(Debug, Clone)]
pub struct TilingSpec {
    /// Physical cell size in metres.
    pub epsilon0: f64,
    /// One field per sector, on a structured cell mesh.
    pub phis: Vec<LevelSetField>,
    /// Transition width used to turn φ into χ.
    pub d: f64,
    pub geometry: MacroGeometry,
    pub materials: Materials,
    pub bc: BoundaryData,
    /// Lattice origin; cells are aligned to it.
    pub origin: [f64; 2],
    /// Target macro elements along one cell side, at least [`MIN_ELEMENTS_PER_CELL`].
    pub elements_per_cell: f64,
}

impl TilingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon0 > 0.0 && self.epsilon0.is_finite()) {
            return Err(Error::InvalidInput(format!("epsilon0 = {} must be positive", self.epsilon0)));
        }
        if self.phis.len() != self.geometry.n_sectors {
            return Err(Error::InvalidInput(format!(
                "{} level-set fields for {} sectors",
                self.phis.len(),
                self.geometry.n_sectors
            )));
        }
        if !(self.d > 0.0 && self.d < 1.0) {
            return Err(Error::InvalidInput(format!("transition width d = {} is outside (0, 1)", self.d)));
        }
        if !(self.elements_per_cell >= MIN_ELEMENTS_PER_CELL) {
            return Err(Error::InvalidInput(format!(
                "elements_per_cell = {} is below {MIN_ELEMENTS_PER_CELL}",
                self.elements_per_cell
            )));
        }
        self.geometry.validate()?;
        self.materials.validate()?;
        for f in &self.phis {
            CellSampler::new(&f.phi)?;
        }
        Ok(())
    }

    /// Mesh parameters that give `elements_per_cell` elements per cell side.
    pub fn mesh_params(&self) -> MacroMeshParams {
        let h = self.epsilon0 / self.elements_per_cell;
        MacroMeshParams::graded(h, (25.0 * h).max(0.2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleShape {
    /// Half-disk centred at the origin; at ψ = 0 its flat side lies on the
    /// x2 axis and the round side faces +x1.
    HalfDisk { radius: f64 },
}

/// An obstacle placed inside the core.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub shape: ObstacleShape,
    /// Rotation in degrees, counter-clockwise.
    pub psi: f64,
    pub k_obstacle: f64,
}

impl ObstacleSpec {
    /// Half-disk of radius `0.3 R_c`.
    pub fn half_disk(geometry: &MacroGeometry, psi: f64, k_obstacle: f64) -> Self {
        ObstacleSpec { shape: ObstacleShape::HalfDisk { radius: 0.3 * geometry.r_core }, psi, k_obstacle }
    }

    pub fn validate(&self, geometry: &MacroGeometry) -> Result<()> {
        let ObstacleShape::HalfDisk { radius } = self.shape;
        if !(radius > 0.0 && radius <= geometry.r_core) {
            return Err(Error::InvalidInput(format!(
                "obstacle radius {radius} must lie in (0, R_c = {}]",
                geometry.r_core
            )));
        }
        if !(self.k_obstacle > 0.0 && self.psi.is_finite()) {
            return Err(Error::InvalidInput("obstacle needs a positive conductivity and a finite angle".into()));
        }
        Ok(())
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        let ObstacleShape::HalfDisk { radius } = self.shape;
        let (s, c) = self.psi.to_radians().sin_cos();
        x[0] * x[0] + x[1] * x[1] <= radius * radius && x[0] * c + x[1] * s >= 0.0
    }
}

/// P1 evaluation of a nodal field on the structured cell mesh.
pub struct CellSampler<'a> {
    n: usize,
    phi: &'a [f64],
}

impl<'a> CellSampler<'a> {
    pub fn new(phi: &'a [f64]) -> Result<Self> {
        let side = (phi.len() as f64).sqrt().round() as usize;
        if side < 2 || side * side != phi.len() {
            return Err(Error::InvalidInput(format!("{} nodal values do not form a square cell grid", phi.len())));
        }
        Ok(CellSampler { n: side - 1, phi })
    }

    /// Value at `y` in `[0, 1)²`, interpolated in the containing triangle.
    pub fn value(&self, y: [f64; 2]) -> f64 {
        let n = self.n;
        let gx = (y[0] * n as f64).clamp(0.0, n as f64);
        let gy = (y[1] * n as f64).clamp(0.0, n as f64);
        let i = (gx.floor() as usize).min(n - 1);
        let j = (gy.floor() as usize).min(n - 1);
        let (s, t) = (gx - i as f64, gy - j as f64);
        let v = |a: usize, b: usize| self.phi[cell_node_index(n, a, b)];
        let (f00, f10, f01, f11) = (v(i, j), v(i + 1, j), v(i, j + 1), v(i + 1, j + 1));
        // diagonal orientation follows the checkerboard of the cell mesh
        if (i + j).is_multiple_of(2) {
            if s >= t {
                f00 + s * (f10 - f00) + t * (f11 - f10)
            } else {
                f00 + t * (f01 - f00) + s * (f11 - f01)
            }
        } else if s + t <= 1.0 {
            f00 + s * (f10 - f00) + t * (f01 - f00)
        } else {
            f11 + (1.0 - s) * (f01 - f11) + (1.0 - t) * (f10 - f11)
        }
    }
}

/// Largest characteristic size `√(2A)` over the design ring.
fn ring_element_size(mesh: &TriMesh) -> f64 {
    (0..mesh.num_elements())
        .filter(|&e| mesh.element_region[e].sector().is_some())
        .map(|e| (2.0 * mesh.element_geometry(e).area).sqrt())
        .fold(0.0, f64::max)
}

/// Element-wise scalar conductivity of the tiled layout on `mesh`.
///
/// Elements below the axis sample the mirrored lattice, so a full-domain mesh
/// sees the reflection of the top half.
pub fn tile_conductivity(spec: &TilingSpec, mesh: &TriMesh, obstacle: Option<&ObstacleSpec>) -> Result<Vec<f64>> {
    spec.validate()?;
    if let Some(o) = obstacle {
        o.validate(&spec.geometry)?;
    }
    let size = ring_element_size(mesh);
    if size > 1.25 * spec.epsilon0 / MIN_ELEMENTS_PER_CELL {
        return Err(Error::InvalidInput(format!(
            "mesh is too coarse for epsilon0 = {}: element size {size:.4} exceeds epsilon0/{MIN_ELEMENTS_PER_CELL}",
            spec.epsilon0
        )));
    }
    let samplers = spec.phis.iter().map(|f| CellSampler::new(&f.phi)).collect::<Result<Vec<_>>>()?;
    let m = &spec.materials;
    let frac = |v: f64| v - v.floor();
    Ok((0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let c = mesh.centroid(e);
            match mesh.element_region[e] {
                Region::Sector(l) => {
                    let x = [c[0] - spec.origin[0], c[1].abs() - spec.origin[1]];
                    let y = [frac(x[0] / spec.epsilon0), frac(x[1] / spec.epsilon0)];
                    let chi = characteristic(samplers[l].value(y), spec.d);
                    element_conductivity(chi, m.k_cell_a, m.k_cell_b)
                }
                Region::Core => match obstacle {
                    Some(o) if o.contains(c) => o.k_obstacle,
                    _ => m.k_obstacle,
                },
                Region::Exterior | Region::Cell => m.k_exterior,
            }
        })
        .collect())
}

/// Objectives of a tiled layout.
#[derive(Debug, Clone)]
pub struct TiledResult {
    /// Reported per half domain, like the homogenized model.
    pub j1: f64,
    pub j2: f64,
    pub mesh: TriMesh,
    pub conductivity: Vec<f64>,
    pub temperature: Vec<f64>,
}

/// Builds the fine mesh for a tiling: the top half, or the full domain when an
/// obstacle breaks the mirror symmetry.
pub fn tiling_mesh(spec: &TilingSpec, full_domain: bool) -> Result<TriMesh> {
    let half = build_macro_mesh(&spec.geometry, &spec.mesh_params())?;
    if full_domain {
        geometry::mirror_to_full_domain(&half)
    } else {
        Ok(half)
    }
}

/// Solves plain conduction on the tiled layout.
pub fn evaluate_tiled(spec: &TilingSpec, obstacle: Option<&ObstacleSpec>) -> Result<TiledResult> {
    let mesh = tiling_mesh(spec, obstacle.is_some())?;
    evaluate_on_mesh(spec, mesh, obstacle)
}

fn evaluate_on_mesh(spec: &TilingSpec, mesh: TriMesh, obstacle: Option<&ObstacleSpec>) -> Result<TiledResult> {
    let full = mesh.nodes.iter().any(|p| p[1] < 0.0);
    let conductivity = tile_conductivity(spec, &mesh, obstacle)?;
    let m = &spec.materials;
    let problem = MacroProblem::new(mesh, spec.bc, m.k_exterior, m.k_pdms)?;
    let tensors: Vec<_> = conductivity.iter().map(|&k| fem::isotropic(k)).collect();
    let state = problem.solve_tensors(&tensors)?;
    let (mut j1, mut j2) = problem.evaluate_objectives(&state.temperature)?;
    if full {
        j1 *= 0.5;
        j2 *= 0.5;
    }
    Ok(TiledResult { j1, j2, conductivity, temperature: state.temperature.values, mesh: problem.mesh })
}

/// One point of a robustness sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub design: String,
    pub psi: f64,
    pub j1: f64,
    pub j1_ratio: f64,
}

/// A named design with the J1 value its ratios are taken against.
pub struct SweepDesign {
    pub name: String,
    pub spec: TilingSpec,
    pub j1_reference: f64,
}

/// Evaluates every design at every obstacle angle, in parallel.
pub fn robustness_sweep(designs: &[SweepDesign], psi_values: &[f64], obstacle: ObstacleSpec) -> Result<Vec<SweepRow>> {
    if designs.is_empty() || psi_values.is_empty() {
        return Ok(Vec::new());
    }
    for d in designs {
        if !(d.j1_reference > 0.0) {
            return Err(Error::InvalidInput(format!("design {} has a non-positive J1 reference", d.name)));
        }
    }
    // all designs share geometry and ε₀ in practice; build each distinct mesh once
    let meshes = designs.iter().map(|d| tiling_mesh(&d.spec, true)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, f64)> = (0..designs.len()).flat_map(|i| psi_values.iter().map(move |&p| (i, p))).collect();
    jobs.par_iter()
        .map(|&(i, psi)| {
            let d = &designs[i];
            let o = ObstacleSpec { psi, ..obstacle };
            let r = evaluate_on_mesh(&d.spec, meshes[i].clone(), Some(&o))?;
            Ok(SweepRow { design: d.name.clone(), psi, j1: r.j1, j1_ratio: r.j1 / d.j1_reference })
        })
        .collect()
}

/// `design,psi,J1,J1_ratio` table.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("design,psi,J1,J1_ratio\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.10e},{:.10e}\n", r.design, r.psi, r.j1, r.j1_ratio));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cell_mesh, UnitCellGeometry};
    use crate::levelset::InitPattern;
    use crate::optimizer::{COPPER, PDMS, STEEL};

    fn spec(pattern: InitPattern, epsilon0: f64) -> TilingSpec {
        let mesh = build_cell_mesh(&UnitCellGeometry::new(16)).unwrap();
        let phis = (0..8).map(|l| LevelSetField::initialize(&pattern, &mesh, l).unwrap()).collect();
        TilingSpec {
            epsilon0,
            phis,
            d: 0.2,
            geometry: MacroGeometry::reference(),
            materials: Materials { k_cell_a: COPPER, k_cell_b: PDMS, k_exterior: STEEL, k_obstacle: COPPER, k_pdms: PDMS },
            bc: BoundaryData::default(),
            origin: [0.0, 0.0],
            elements_per_cell: MIN_ELEMENTS_PER_CELL,
        }
    }

    #[test]
    fn sampler_reproduces_linear_fields() {
        let n = 16;
        let mesh = build_cell_mesh(&UnitCellGeometry::new(n)).unwrap();
        let phi: Vec<f64> = mesh.nodes.iter().map(|p| 0.3 - 0.7 * p[0] + 0.4 * p[1]).collect();
        let s = CellSampler::new(&phi).unwrap();
        for y in [[0.01, 0.02], [0.5, 0.5], [0.37, 0.91], [0.999, 0.001], [0.26, 0.74]] {
            assert!((s.value(y) - (0.3 - 0.7 * y[0] + 0.4 * y[1])).abs() < 1e-13);
        }
        assert!(CellSampler::new(&phi[..10]).is_err());
    }

    #[test]
    fn uniform_copper_fills_the_ring() {
        let s = spec(InitPattern::Uniform { sign: 1.0 }, 0.25);
        let mesh = tiling_mesh(&s, false).unwrap();
        let k = tile_conductivity(&s, &mesh, None).unwrap();
        for (e, k) in k.iter().enumerate() {
            if mesh.element_region[e].sector().is_some() {
                assert_eq!(*k, COPPER);
            }
        }
    }

    #[test]
    fn tiled_values_stay_within_phase_bounds() {
        let s = spec(InitPattern::PdmsDisk { radius: 0.25 }, 0.25);
        let mesh = tiling_mesh(&s, false).unwrap();
        let k = tile_conductivity(&s, &mesh, None).unwrap();
        assert!(k.iter().all(|&v| (PDMS..=COPPER).contains(&v)));
        assert!(k.contains(&PDMS));
    }

    #[test]
    fn shifting_the_origin_by_one_cell_changes_nothing() {
        let s = spec(InitPattern::PdmsDisk { radius: 0.25 }, 0.25);
        let mesh = tiling_mesh(&s, false).unwrap();
        let a = tile_conductivity(&s, &mesh, None).unwrap();
        let shifted = TilingSpec { origin: [0.25, -0.25], ..s.clone() };
        let b = tile_conductivity(&shifted, &mesh, None).unwrap();
        let differ = a.iter().zip(&b).filter(|(x, y)| (*x - *y).abs() > 1e-9 * COPPER).count();
        // only centroids sitting on a cell boundary up to roundoff may flip
        assert!(differ * 1000 < a.len(), "{differ} of {} elements changed", a.len());
    }

    #[test]
    fn coarse_meshes_are_rejected() {
        let s = spec(InitPattern::PdmsDisk { radius: 0.25 }, 0.1);
        let coarse = build_macro_mesh(&s.geometry, &MacroMeshParams::graded(0.05, 0.2)).unwrap();
        assert!(tile_conductivity(&s, &coarse, None).is_err());
    }

    #[test]
    fn all_steel_layout_matches_the_reference() {
        let mut s = spec(InitPattern::Uniform { sign: 1.0 }, 0.25);
        s.materials = Materials { k_cell_a: STEEL, k_cell_b: STEEL, k_exterior: STEEL, k_obstacle: STEEL, k_pdms: PDMS };
        let r = evaluate_tiled(&s, None).unwrap();
        assert!(r.j1 < 1e-20, "J1 = {:e}", r.j1);
    }

    #[test]
    fn symmetric_full_domain_matches_half_domain() {
        let s = spec(InitPattern::PdmsDisk { radius: 0.25 }, 0.25);
        let half = evaluate_tiled(&s, None).unwrap();
        let full = evaluate_on_mesh(&s, tiling_mesh(&s, true).unwrap(), None).unwrap();
        assert!((half.j1 - full.j1).abs() < 1e-10 * half.j1);
        assert!((half.j2 - full.j2).abs() < 1e-10 * half.j2);
    }

    #[test]
    fn half_disk_orientation() {
        let o = ObstacleSpec::half_disk(&MacroGeometry::reference(), 0.0, PDMS);
        assert!(o.contains([0.05, 0.01]));
        assert!(!o.contains([-0.05, 0.01]));
        let o = ObstacleSpec { psi: 90.0, ..o };
        assert!(o.contains([0.01, 0.05]));
        assert!(!o.contains([0.01, -0.05]));
        let mut bad = o;
        bad.shape = ObstacleShape::HalfDisk { radius: 1.0 };
        assert!(bad.validate(&MacroGeometry::reference()).is_err());
    }

    #[test]
    fn empty_sweep_is_empty() {
        let o = ObstacleSpec::half_disk(&MacroGeometry::reference(), 0.0, PDMS);
        assert!(robustness_sweep(&[], &[0.0], o).unwrap().is_empty());
        let d = SweepDesign { name: "x".into(), spec: spec(InitPattern::default(), 0.25), j1_reference: 1.0 };
        assert!(robustness_sweep(&[d], &[], o).unwrap().is_empty());
    }
}
