//! Design sensitivities: tensor gradients from the adjoint, topological
//! derivatives of the homogenized tensor, and the normalized level-set velocity.

use crate::fem::{DofMap, ScalarField, Tensor2};
use crate::homogenization::CellSolution;
use crate::mesh::{ElementGeometry, TriMesh};

/// `∂J/∂K*_l` for every sector, symmetrized:
/// `S_ij = −∫_{D_l} ∂_i T ∂_j v`, then `(S + Sᵀ)/2`.
pub fn tensor_sensitivities(mesh: &TriMesh, t: &ScalarField, v: &ScalarField, n_sectors: usize) -> Vec<Tensor2> {
    let mut out = vec![[[0.0; 2]; 2]; n_sectors];
    for e in 0..mesh.num_elements() {
        let Some(l) = mesh.element_region[e].sector() else { continue };
        let g = mesh.element_geometry(e);
        let tri = mesh.elements[e];
        let gt = g.gradient(tri.map(|n| t.values[n]));
        let gv = g.gradient(tri.map(|n| v.values[n]));
        for i in 0..2 {
            for j in 0..2 {
                out[l][i][j] -= g.area * gt[i] * gv[j];
            }
        }
    }
    for s in &mut out {
        let m = 0.5 * (s[0][1] + s[1][0]);
        s[0][1] = m;
        s[1][0] = m;
    }
    out
}

/// Sensitivity of one sector.
pub fn tensor_sensitivity(mesh: &TriMesh, t: &ScalarField, v: &ScalarField, l: usize) -> Tensor2 {
    let n = mesh.element_region.iter().filter_map(|r| r.sector()).max().map_or(0, |m| m + 1).max(l + 1);
    tensor_sensitivities(mesh, t, v, n)[l]
}

/// Polarization factor of a small disk of conductivity `k_incl` in `k_host`.
pub fn prefactor(k_host: f64, k_incl: f64) -> f64 {
    2.0 * k_host * (k_incl - k_host) / (k_incl + k_host)
}

/// Nodal `(e_i + ∇w_i)·(e_j + ∇w_j)` by area-weighted averaging over the
/// elements sharing each periodic DOF.
pub fn nodal_strain_products(mesh: &TriMesh, geometries: &[ElementGeometry], dofs: &DofMap, sol: &CellSolution) -> Vec<Tensor2> {
    weighted_products(mesh, geometries, dofs, sol, |_| 1.0, None)
}

/// Strain products seen from each host phase.
#[derive(Debug, Clone)]
pub struct PhaseProducts {
    /// Averaged over the χ = 0 phase; used where the inclusion would be copper.
    pub in_b: Vec<Tensor2>,
    /// Averaged over the χ = 1 phase.
    pub in_a: Vec<Tensor2>,
}

/// Like [`nodal_strain_products`], but each element also carries its phase
/// fraction, so a node on an interface sees the field of the host it sits in.
/// A node with no host-phase neighbours falls back to the plain average.
pub fn phase_strain_products(
    mesh: &TriMesh,
    geometries: &[ElementGeometry],
    dofs: &DofMap,
    sol: &CellSolution,
    k_a: f64,
    k_b: f64,
) -> PhaseProducts {
    let chi: Vec<f64> = sol.conductivity.iter().map(|k| ((k - k_b) / (k_a - k_b)).clamp(0.0, 1.0)).collect();
    let plain = nodal_strain_products(mesh, geometries, dofs, sol);
    PhaseProducts {
        in_b: weighted_products(mesh, geometries, dofs, sol, |e| 1.0 - chi[e], Some(&plain)),
        in_a: weighted_products(mesh, geometries, dofs, sol, |e| chi[e], Some(&plain)),
    }
}

fn weighted_products(
    mesh: &TriMesh,
    geometries: &[ElementGeometry],
    dofs: &DofMap,
    sol: &CellSolution,
    weight_of: impl Fn(usize) -> f64,
    fallback: Option<&[Tensor2]>,
) -> Vec<Tensor2> {
    let rep = free_dof_of(dofs);
    let mut acc = vec![[[0.0; 2]; 2]; dofs.n_free];
    let mut weight = vec![0.0; dofs.n_free];
    let mut area = vec![0.0; dofs.n_free];
    for (e, tri) in mesh.elements.iter().enumerate() {
        let a = geometries[e].area;
        let we = a * weight_of(e);
        let s = &sol.strain[e];
        let mut g = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] = s[i][0] * s[j][0] + s[i][1] * s[j][1];
            }
        }
        // gathered onto periodic DOFs so partner nodes see the same average
        for &n in tri {
            let k = rep[n];
            weight[k] += we;
            area[k] += a;
            for i in 0..2 {
                for j in 0..2 {
                    acc[k][i][j] += we * g[i][j];
                }
            }
        }
    }
    (0..mesh.num_nodes())
        .map(|n| {
            let k = rep[n];
            match fallback {
                Some(f) if weight[k] <= 1e-12 * area[k] => f[n],
                _ => acc[k].map(|row| row.map(|v| v / weight[k])),
            }
        })
        .collect()
}

fn free_dof_of(dofs: &DofMap) -> Vec<usize> {
    dofs.node_dof
        .iter()
        .map(|d| match d {
            crate::fem::NodeDof::Free(k) => *k,
            crate::fem::NodeDof::Fixed(_) => panic!("level-set DOF maps have no fixed nodes"),
        })
        .collect()
}

/// Nodal `D_T K*_ij` for a given host/inclusion pair.
pub fn topological_derivative_tensor(products: &[Tensor2], k_host: f64, k_incl: f64) -> Vec<Tensor2> {
    let p = prefactor(k_host, k_incl);
    products.iter().map(|g| g.map(|row| row.map(|v| p * v))).collect()
}

/// Lumped nodal weights on periodic DOFs (area/3 per element vertex).
pub fn lumped_weights(mesh: &TriMesh, geometries: &[ElementGeometry], dofs: &DofMap) -> Vec<f64> {
    let mut nodal = vec![0.0; mesh.num_nodes()];
    for (tri, g) in mesh.elements.iter().zip(geometries) {
        for &n in tri {
            nodal[n] += g.area / 3.0;
        }
    }
    dofs.fold(&nodal)
}

/// Inputs for one cell's level-set velocity.
pub struct CellSensitivityInput<'a> {
    /// Strain products used for a copper inclusion in PDMS.
    pub products_pc: &'a [Tensor2],
    /// Strain products used for a PDMS inclusion in copper.
    pub products_cp: &'a [Tensor2],
    /// Smoothed characteristic per node.
    pub chi: &'a [f64],
    /// `∂J1/∂K*_l`, absent when w = 0.
    pub dj1: Option<Tensor2>,
    /// `∂J2/∂K*_l`, absent when w = 1.
    pub dj2: Option<Tensor2>,
    pub w: f64,
    /// Conductivity of the χ = 1 phase (copper).
    pub k_a: f64,
    /// Conductivity of the χ = 0 phase (PDMS).
    pub k_b: f64,
    /// L¹ norms to normalize by instead of the current ones.
    pub reference_norms: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct CombinedSensitivity {
    /// `J'_l` per node.
    pub jprime: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    /// L¹ norms of the un-normalized J1 and J2 terms.
    pub norms: (f64, f64),
}

/// Phase-selected topological derivative of one objective at every node:
/// `D_T J^{p→c}(1−χ) − D_T J^{c→p} χ`.
pub fn phase_term(input: &CellSensitivityInput, dj: &Tensor2) -> Vec<f64> {
    let p_pc = prefactor(input.k_b, input.k_a);
    let p_cp = prefactor(input.k_a, input.k_b);
    let contract = |g: &Tensor2| dj[0][0] * g[0][0] + dj[0][1] * g[0][1] + dj[1][0] * g[1][0] + dj[1][1] * g[1][1];
    (0..input.chi.len())
        .map(|n| {
            let chi = input.chi[n];
            p_pc * contract(&input.products_pc[n]) * (1.0 - chi) - p_cp * contract(&input.products_cp[n]) * chi
        })
        .collect()
}

/// Normalized velocity `J'_l = C1·term1 + C2·term2` with
/// `C1 = w/∫|term1|`, `C2 = (1−w)/∫|term2|`.
pub fn combined_sensitivity(input: &CellSensitivityInput, weights: &[f64], dofs: &DofMap) -> CombinedSensitivity {
    let n = input.chi.len();
    let l1 = |term: &[f64]| -> f64 {
        let rep = dofs.representatives();
        rep.iter().zip(weights).map(|(&node, w)| w * term[node].abs()).sum()
    };
    let mut jprime = vec![0.0; n];
    let mut add = |dj: Option<Tensor2>, weight: f64, reference: Option<f64>, label: &str| -> (f64, f64) {
        let Some(dj) = dj else { return (0.0, 0.0) };
        if weight == 0.0 {
            return (0.0, 0.0);
        }
        let term = phase_term(input, &dj);
        let norm = l1(&term);
        if norm < 1e-300 {
            log::warn!("{label} sensitivity has vanishing L1 norm; term dropped");
            return (0.0, norm);
        }
        let c = weight / reference.filter(|r| *r >= 1e-300).unwrap_or(norm);
        for (j, t) in jprime.iter_mut().zip(&term) {
            *j += c * t;
        }
        (c, norm)
    };
    let (c1, n1) = add(input.dj1, input.w, input.reference_norms.map(|r| r.0), "J1");
    let (c2, n2) = add(input.dj2, 1.0 - input.w, input.reference_norms.map(|r| r.1), "J2");
    CombinedSensitivity { jprime, c1, c2, norms: (n1, n2) }
}
