//! Unit-cell corrector problems, effective conductivity and its principal axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, DofMap, ReducedOperator, ScalarField, Tensor2};
use crate::mesh::{ElementGeometry, TriMesh};

/// Two-phase material layout on a cell mesh.
///
/// `chi[e] = 1` is material `a`, `chi[e] = 0` material `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMaterialField {
    pub chi: Vec<f64>,
    pub k_a: f64,
    pub k_b: f64,
}

impl CellMaterialField {
    pub fn new(chi: Vec<f64>, k_a: f64, k_b: f64) -> Result<Self> {
        if !(k_a > 0.0 && k_b > 0.0 && k_a.is_finite() && k_b.is_finite()) {
            return Err(Error::InvalidInput(format!("phase conductivities must be positive, got {k_a} and {k_b}")));
        }
        if let Some((e, c)) = chi.iter().enumerate().find(|(_, c)| !(0.0..=1.0).contains(*c)) {
            return Err(Error::InvalidInput(format!("chi[{e}] = {c} is outside [0, 1]")));
        }
        Ok(CellMaterialField { chi, k_a, k_b })
    }

    pub fn uniform(n_elements: usize, chi: f64, k_a: f64, k_b: f64) -> Result<Self> {
        Self::new(vec![chi; n_elements], k_a, k_b)
    }

    pub fn conductivity(&self) -> Vec<f64> {
        self.chi.iter().map(|&c| element_conductivity(c, self.k_a, self.k_b)).collect()
    }

    /// Area-weighted fraction of material `a`.
    pub fn volume_fraction(&self, mesh: &TriMesh) -> f64 {
        let total = mesh.total_area();
        (0..mesh.num_elements()).map(|e| mesh.element_geometry(e).area * self.chi[e]).sum::<f64>() / total
    }

    /// Swaps the phases: `chi -> 1 - chi`, `k_a <-> k_b`. Describes the same medium.
    pub fn swapped(&self) -> Self {
        CellMaterialField { chi: self.chi.iter().map(|c| 1.0 - c).collect(), k_a: self.k_b, k_b: self.k_a }
    }

    /// Voigt and Reuss bounds `(lower, upper)` for this layout.
    pub fn bounds(&self, mesh: &TriMesh) -> (f64, f64) {
        let f = self.volume_fraction(mesh);
        let upper = f * self.k_a + (1.0 - f) * self.k_b;
        let lower = 1.0 / (f / self.k_a + (1.0 - f) / self.k_b);
        (lower, upper)
    }
}

/// Linear mixing rule between the two phases.
pub fn element_conductivity(chi: f64, k_a: f64, k_b: f64) -> f64 {
    k_b + (k_a - k_b) * chi
}

/// Homogenized tensor with its principal values and orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensor {
    pub k11: f64,
    pub k12: f64,
    pub k22: f64,
    pub kbar1: f64,
    pub kbar2: f64,
    /// Degrees, in (-45, 45].
    pub theta: f64,
}

impl EffectiveTensor {
    pub fn from_matrix(k: Tensor2) -> Self {
        let (kbar1, kbar2, theta) = diagonalize(k);
        EffectiveTensor { k11: k[0][0], k12: 0.5 * (k[0][1] + k[1][0]), k22: k[1][1], kbar1, kbar2, theta }
    }

    pub fn isotropic(k: f64) -> Self {
        Self::from_matrix(fem::isotropic(k))
    }

    pub fn matrix(&self) -> Tensor2 {
        [[self.k11, self.k12], [self.k12, self.k22]]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        (self.k11 * self.k11 + 2.0 * self.k12 * self.k12 + self.k22 * self.k22).sqrt()
    }
}

/// Principal values `(kbar1, kbar2, theta_degrees)` with `K = R(θ)ᵀ diag(kbar1, kbar2) R(θ)`,
/// `R(θ) = [[cos θ, sin θ], [-sin θ, cos θ]]`. `kbar1` belongs to the eigenvector
/// closest to e_1, so θ lies in (-45°, 45°].
pub fn diagonalize(k: Tensor2) -> (f64, f64, f64) {
    let (a, b, c) = (k[0][0], 0.5 * (k[0][1] + k[1][0]), k[1][1]);
    let mut t = 0.5 * (2.0 * b).atan2(a - c);
    let quarter = std::f64::consts::FRAC_PI_4;
    if t > quarter + 1e-15 {
        t -= 2.0 * quarter;
    } else if t <= -quarter + 1e-15 {
        t += 2.0 * quarter;
    }
    let (s, co) = t.sin_cos();
    let kbar1 = a * co * co + 2.0 * b * s * co + c * s * s;
    let kbar2 = a * s * s - 2.0 * b * s * co + c * co * co;
    (kbar1, kbar2, t.to_degrees())
}

/// Inverse of [`diagonalize`].
pub fn reconstruct(kbar1: f64, kbar2: f64, theta_deg: f64) -> Tensor2 {
    let (s, c) = theta_deg.to_radians().sin_cos();
    [
        [kbar1 * c * c + kbar2 * s * s, (kbar1 - kbar2) * s * c],
        [(kbar1 - kbar2) * s * c, kbar1 * s * s + kbar2 * c * c],
    ]
}

/// Cell mesh with its periodic DOF layout and cached sparsity/symbolic factorization.
#[derive(Debug)]
pub struct CellSolver {
    mesh: TriMesh,
    geometries: Vec<ElementGeometry>,
    unit_stiffness: Vec<[[f64; 3]; 3]>,
    operator: ReducedOperator,
}

/// Both correctors of one cell and the quantities derived from them.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub correctors: [ScalarField; 2],
    /// `e_i + ∇w_i` per element.
    pub strain: Vec<[[f64; 2]; 2]>,
    pub conductivity: Vec<f64>,
    pub tensor: EffectiveTensor,
    /// `K*_12` and `K*_21` evaluated separately from the integral formula.
    pub k12_k21: (f64, f64),
}

pub const GAUGE_NODE: usize = 0;

impl CellSolver {
    pub fn new(mesh: TriMesh) -> Result<Self> {
        if mesh.periodic_pairs.is_empty() {
            return Err(Error::Mesh("cell mesh has no periodic pairs".into()));
        }
        let n = mesh.num_elements();
        let dofs = fem::assemble_diffusion(&mesh, &vec![fem::isotropic(1.0); n])?
            .apply_periodic(&mesh.periodic_pairs, GAUGE_NODE)?
            .dof_map();
        let geometries = mesh.geometries();
        let unit_stiffness = geometries.iter().map(|g| g.stiffness(fem::isotropic(1.0))).collect();
        let operator = ReducedOperator::new(&mesh.elements, dofs);
        Ok(CellSolver { mesh, geometries, unit_stiffness, operator })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn geometries(&self) -> &[ElementGeometry] {
        &self.geometries
    }

    pub fn dofs(&self) -> &DofMap {
        &self.operator.dofs
    }

    /// Solves both corrector problems with one factorization.
    pub fn solve(&self, mat: &CellMaterialField) -> Result<CellSolution> {
        let n = self.mesh.num_elements();
        if mat.chi.len() != n {
            return Err(Error::InvalidInput(format!("{} chi values for {n} cell elements", mat.chi.len())));
        }
        let conductivity = mat.conductivity();
        let element_matrices: Vec<[[f64; 3]; 3]> = self
            .unit_stiffness
            .iter()
            .zip(&conductivity)
            .map(|(ke, &k)| ke.map(|row| row.map(|v| k * v)))
            .collect();
        let fact = self.operator.factorize(self.operator.assemble(&element_matrices))?;
        let dofs = &self.operator.dofs;
        let mut correctors = Vec::with_capacity(2);
        for dir in 0..2 {
            let load = self.corrector_load(&conductivity, dir);
            let rhs = dofs.fold(&load);
            let x = fact.solve(&rhs)?;
            correctors.push(ScalarField {
                values: dofs.expand(&x),
                bc: fem::BoundaryRecord {
                    dirichlet_nodes: 0,
                    periodic_pairs: self.mesh.periodic_pairs.len(),
                    gauge: Some(GAUGE_NODE),
                },
            });
        }
        let correctors: [ScalarField; 2] = correctors.try_into().expect("two correctors");
        let strain = self.strain(&correctors);
        let (k, k12_k21) = self.integrate(&conductivity, &strain);
        Ok(CellSolution { correctors, strain, conductivity, tensor: EffectiveTensor::from_matrix(k), k12_k21 })
    }

    /// Nodal load `-∫ k e_dir · ∇N_a`.
    fn corrector_load(&self, conductivity: &[f64], dir: usize) -> Vec<f64> {
        let mut load = vec![0.0; self.mesh.num_nodes()];
        for (e, tri) in self.mesh.elements.iter().enumerate() {
            let g = &self.geometries[e];
            for a in 0..3 {
                load[tri[a]] -= g.area * conductivity[e] * g.grads[a][dir];
            }
        }
        load
    }

    fn strain(&self, w: &[ScalarField; 2]) -> Vec<[[f64; 2]; 2]> {
        self.mesh
            .elements
            .iter()
            .zip(&self.geometries)
            .map(|(tri, g)| {
                let mut s = [[0.0; 2]; 2];
                for (i, wi) in w.iter().enumerate() {
                    let grad = g.gradient(tri.map(|n| wi.values[n]));
                    s[i] = grad;
                    s[i][i] += 1.0;
                }
                s
            })
            .collect()
    }

    fn integrate(&self, conductivity: &[f64], strain: &[[[f64; 2]; 2]]) -> (Tensor2, (f64, f64)) {
        let mut k = [[0.0; 2]; 2];
        for ((g, &ke), s) in self.geometries.iter().zip(conductivity).zip(strain) {
            for i in 0..2 {
                for j in 0..2 {
                    k[i][j] += g.area * ke * (s[i][0] * s[j][0] + s[i][1] * s[j][1]);
                }
            }
        }
        let pair = (k[0][1], k[1][0]);
        let k12 = 0.5 * (k[0][1] + k[1][0]);
        k[0][1] = k12;
        k[1][0] = k12;
        (k, pair)
    }
}

/// Corrector `w_dir` for one direction (0 or 1).
pub fn solve_cell_problem(mesh: &TriMesh, mat: &CellMaterialField, direction: usize) -> Result<ScalarField> {
    if direction > 1 {
        return Err(Error::InvalidInput(format!("direction {direction} is not 0 or 1")));
    }
    let solver = CellSolver::new(mesh.clone())?;
    let [w1, w2] = solver.solve(mat)?.correctors;
    Ok(if direction == 0 { w1 } else { w2 })
}

/// `K*_ij = ∫ k (e_i + ∇w_i)·(e_j + ∇w_j)` over the unit cell.
pub fn effective_tensor(mesh: &TriMesh, mat: &CellMaterialField, w1: &ScalarField, w2: &ScalarField) -> EffectiveTensor {
    let conductivity = mat.conductivity();
    let mut k = [[0.0; 2]; 2];
    for (e, tri) in mesh.elements.iter().enumerate() {
        let g = mesh.element_geometry(e);
        let mut s = [g.gradient(tri.map(|n| w1.values[n])), g.gradient(tri.map(|n| w2.values[n]))];
        s[0][0] += 1.0;
        s[1][1] += 1.0;
        for i in 0..2 {
            for j in 0..2 {
                k[i][j] += g.area * conductivity[e] * (s[i][0] * s[j][0] + s[i][1] * s[j][1]);
            }
        }
    }
    EffectiveTensor::from_matrix(k)
}
