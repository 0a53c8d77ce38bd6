//! Homogenized macroscale conduction: state, adjoints and reference fields.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, BoundaryRecord, DofMap, Factorization, NodeDof, ReducedOperator, ScalarField, Tensor2};
use crate::mesh::{BoundaryTag, ElementGeometry, Region, TriMesh};
use crate::objectives;

/// Conductivity per macro region.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroMaterialMap {
    /// One tensor per design sector, D1 first.
    pub sectors: Vec<Tensor2>,
    pub k_exterior: f64,
    pub k_core: f64,
}

impl MacroMaterialMap {
    pub fn uniform_ring(n_sectors: usize, k_ring: f64, k_exterior: f64, k_core: f64) -> Self {
        MacroMaterialMap { sectors: vec![fem::isotropic(k_ring); n_sectors], k_exterior, k_core }
    }

    pub fn element_tensors(&self, mesh: &TriMesh) -> Result<Vec<Tensor2>> {
        mesh.element_region
            .iter()
            .map(|r| match *r {
                Region::Exterior => Ok(fem::isotropic(self.k_exterior)),
                Region::Core => Ok(fem::isotropic(self.k_core)),
                Region::Sector(l) => self
                    .sectors
                    .get(l)
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("no tensor for sector D{}", l + 1))),
                Region::Cell => Err(Error::InvalidInput("cell element in a macro mesh".into())),
            })
            .collect()
    }
}

/// Dirichlet temperatures on the left (low) and right (high) edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryData {
    pub t_low: f64,
    pub t_high: f64,
}

impl Default for BoundaryData {
    fn default() -> Self {
        BoundaryData { t_low: 0.0, t_high: 1.0 }
    }
}

/// Fixed macro mesh and boundary layout with cached reference fields.
pub struct MacroProblem {
    pub mesh: TriMesh,
    pub bc: BoundaryData,
    pub k_steel: f64,
    pub k_pdms: f64,
    geometries: Vec<ElementGeometry>,
    dofs: DofMap,
    operator: ReducedOperator,
    t_steel: OnceLock<ScalarField>,
    t_pdms: OnceLock<ScalarField>,
}

/// A solved state with its factorization, reused by the adjoint solves.
pub struct MacroState {
    pub temperature: ScalarField,
    factor: Factorization,
}

impl MacroProblem {
    pub fn new(mesh: TriMesh, bc: BoundaryData, k_steel: f64, k_pdms: f64) -> Result<Self> {
        if !(bc.t_low.is_finite() && bc.t_high.is_finite()) {
            return Err(Error::InvalidInput("boundary temperatures must be finite".into()));
        }
        if !(k_steel > 0.0 && k_pdms > 0.0) {
            return Err(Error::InvalidInput("reference conductivities must be positive".into()));
        }
        let low = mesh.boundary_nodes(BoundaryTag::Low);
        let high = mesh.boundary_nodes(BoundaryTag::High);
        if low.is_empty() || high.is_empty() {
            return Err(Error::Mesh("macro mesh lacks a Dirichlet edge".into()));
        }
        let n = mesh.num_elements();
        let dofs = fem::assemble_diffusion(&mesh, &vec![fem::isotropic(1.0); n])?
            .apply_dirichlet(&low, &vec![bc.t_low; low.len()])?
            .apply_dirichlet(&high, &vec![bc.t_high; high.len()])?
            .dof_map();
        let operator = ReducedOperator::new(&mesh.elements, dofs.clone());
        let geometries = mesh.geometries();
        Ok(MacroProblem {
            mesh,
            bc,
            k_steel,
            k_pdms,
            geometries,
            dofs,
            operator,
            t_steel: OnceLock::new(),
            t_pdms: OnceLock::new(),
        })
    }

    pub fn geometries(&self) -> &[ElementGeometry] {
        &self.geometries
    }

    fn element_matrices(&self, tensors: &[Tensor2]) -> Result<Vec<[[f64; 3]; 3]>> {
        tensors
            .iter()
            .zip(&self.geometries)
            .enumerate()
            .map(|(e, (k, g))| {
                if !fem::is_spd(k) {
                    return Err(Error::InvalidInput(format!("element {e} tensor {k:?} is not SPD")));
                }
                Ok(g.stiffness(*k))
            })
            .collect()
    }

    fn record(&self) -> BoundaryRecord {
        BoundaryRecord {
            dirichlet_nodes: self.dofs.node_dof.iter().filter(|d| matches!(d, NodeDof::Fixed(_))).count(),
            periodic_pairs: 0,
            gauge: None,
        }
    }

    /// Solves the state problem for element-wise tensors.
    pub fn solve_tensors(&self, tensors: &[Tensor2]) -> Result<MacroState> {
        let ke = self.element_matrices(tensors)?;
        let factor = self.operator.factorize(self.operator.assemble(&ke))?;
        let rhs = self.operator.reduced_rhs(&self.dofs, &ke, &vec![0.0; self.mesh.num_nodes()]);
        let x = factor.solve(&rhs)?;
        let temperature = ScalarField { values: self.dofs.expand(&x), bc: self.record() };
        if !temperature.is_finite() {
            return Err(Error::Solver("state temperature is not finite".into()));
        }
        Ok(MacroState { temperature, factor })
    }

    pub fn solve_state(&self, matmap: &MacroMaterialMap) -> Result<MacroState> {
        self.solve_tensors(&matmap.element_tensors(&self.mesh)?)
    }

    /// Obstacle-free reference: the whole domain is steel.
    pub fn t_steel(&self) -> Result<&ScalarField> {
        if let Some(t) = self.t_steel.get() {
            return Ok(t);
        }
        let tensors = vec![fem::isotropic(self.k_steel); self.mesh.num_elements()];
        let t = self.solve_tensors(&tensors)?.temperature;
        Ok(self.t_steel.get_or_init(|| t))
    }

    /// Reference with the design ring filled with PDMS and the given obstacle.
    pub fn t_pdms(&self, k_core: f64) -> Result<&ScalarField> {
        if let Some(t) = self.t_pdms.get() {
            return Ok(t);
        }
        let n_sectors = self.mesh.element_region.iter().filter_map(|r| r.sector()).max().map_or(0, |l| l + 1);
        let map = MacroMaterialMap::uniform_ring(n_sectors, self.k_pdms, self.k_steel, k_core);
        let t = self.solve_state(&map)?.temperature;
        Ok(self.t_pdms.get_or_init(|| t))
    }

    /// `(J1, J2)` against the cached steel reference.
    pub fn evaluate_objectives(&self, t: &ScalarField) -> Result<(f64, f64)> {
        let ts = self.t_steel()?;
        Ok((objectives::j1(&self.mesh, &t.values, &ts.values), objectives::j2(&self.mesh, &t.values)))
    }

    /// Net heat flow entering through the low and high edges, from nodal reactions.
    pub fn boundary_fluxes(&self, tensors: &[Tensor2], t: &ScalarField) -> Result<(f64, f64)> {
        let ke = self.element_matrices(tensors)?;
        let mut reaction = vec![0.0; self.mesh.num_nodes()];
        for (tri, k) in self.mesh.elements.iter().zip(&ke) {
            for a in 0..3 {
                reaction[tri[a]] += (0..3).map(|b| k[a][b] * t.values[tri[b]]).sum::<f64>();
            }
        }
        let sum = |tag| self.mesh.boundary_nodes(tag).iter().map(|&n| reaction[n]).sum::<f64>();
        Ok((sum(BoundaryTag::Low), sum(BoundaryTag::High)))
    }
}

impl MacroState {
    /// Adjoint with homogeneous Dirichlet data on the low/high edges for a nodal load.
    pub fn solve_adjoint(&self, problem: &MacroProblem, load: &[f64]) -> Result<ScalarField> {
        let dofs = problem.dofs.homogeneous();
        let x = self.factor.solve(&dofs.fold(load))?;
        Ok(ScalarField { values: dofs.expand(&x), bc: problem.record() })
    }

    pub fn adjoint_j1(&self, problem: &MacroProblem) -> Result<ScalarField> {
        let ts = problem.t_steel()?;
        self.solve_adjoint(problem, &objectives::j1_load(&problem.mesh, &self.temperature.values, &ts.values))
    }

    pub fn adjoint_j2(&self, problem: &MacroProblem) -> Result<ScalarField> {
        self.solve_adjoint(problem, &objectives::j2_load(&problem.mesh, &self.temperature.values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_macro_mesh, MacroGeometry, MacroMeshParams};

    fn problem(h: f64) -> MacroProblem {
        let mesh = build_macro_mesh(&MacroGeometry::reference(), &MacroMeshParams::uniform(h)).unwrap();
        MacroProblem::new(mesh, BoundaryData::default(), 67.0, 0.15).unwrap()
    }

    #[test]
    fn steel_reference_is_linear() {
        let p = problem(0.3);
        let t = p.t_steel().unwrap();
        for (x, v) in p.mesh.nodes.iter().zip(&t.values) {
            assert!((v - (x[0] + 2.5) / 5.0).abs() < 1e-10);
        }
        let map = MacroMaterialMap::uniform_ring(8, 67.0, 67.0, 67.0);
        let s = p.solve_state(&map).unwrap();
        for (a, b) in s.temperature.values.iter().zip(&t.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let (j1, j2) = p.evaluate_objectives(&s.temperature).unwrap();
        assert!(j1 < 1e-20);
        assert!((j2 - p.mesh.region_area(Region::Core) / 25.0).abs() < 1e-10);
    }

    #[test]
    fn copper_ring_has_reference_scale_mismatch() {
        let p = problem(0.1);
        let map = MacroMaterialMap::uniform_ring(8, 386.0, 67.0, 386.0);
        let s = p.solve_state(&map).unwrap();
        let (j1, _) = p.evaluate_objectives(&s.temperature).unwrap();
        assert!(j1 > 1e-3 && j1 < 1e-1, "J1 = {j1}");
    }

    #[test]
    fn flux_balance() {
        let p = problem(0.15);
        let mut map = MacroMaterialMap::uniform_ring(8, 10.0, 67.0, 386.0);
        map.sectors[3] = [[200.0, 3.0], [3.0, 1.0]];
        let tensors = map.element_tensors(&p.mesh).unwrap();
        let s = p.solve_tensors(&tensors).unwrap();
        let (qa, qb) = p.boundary_fluxes(&tensors, &s.temperature).unwrap();
        assert!(qb > 0.0);
        assert!((qa + qb).abs() <= 1e-8 * qb.abs());
        let tmin = s.temperature.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let tmax = s.temperature.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(tmin > -1e-6 && tmax < 1.0 + 1e-6);
    }

    #[test]
    fn adjoints_vanish_for_zero_loads() {
        let p = problem(0.3);
        let map = MacroMaterialMap::uniform_ring(8, 67.0, 67.0, 67.0);
        let s = p.solve_state(&map).unwrap();
        let v1 = s.adjoint_j1(&p).unwrap();
        assert!(v1.values.iter().all(|v| v.abs() < 1e-14));
        let mut flat = s.temperature.clone();
        flat.values.iter_mut().for_each(|v| *v = 0.5);
        let v2 = s.solve_adjoint(&p, &objectives::j2_load(&p.mesh, &flat.values)).unwrap();
        assert!(v2.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn adjoint_is_zero_on_dirichlet_edges() {
        let p = problem(0.3);
        let map = MacroMaterialMap::uniform_ring(8, 386.0, 67.0, 386.0);
        let s = p.solve_state(&map).unwrap();
        let v = s.adjoint_j1(&p).unwrap();
        for tag in [BoundaryTag::Low, BoundaryTag::High] {
            for n in p.mesh.boundary_nodes(tag) {
                assert_eq!(v.values[n], 0.0);
            }
        }
        assert!(v.values.iter().any(|x| x.abs() > 0.0));
    }

    #[test]
    fn rejects_non_spd_sector() {
        let p = problem(0.3);
        let mut map = MacroMaterialMap::uniform_ring(8, 1.0, 67.0, 386.0);
        map.sectors[0] = [[1.0, 5.0], [5.0, 1.0]];
        assert!(p.solve_state(&map).is_err());
    }
}
