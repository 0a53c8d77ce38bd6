//! Cloaking objectives and their derivatives with respect to nodal temperature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Region, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// `∫_ΩE (T − T_steel)²`
    J1,
    /// `∫_ΩC |∇T|²`
    J2,
    /// `w J1 + (1 − w) J2`
    Combined(f64),
    /// `∫_ΩE (T − T_steel)² / ∫_ΩE (T_PDMS − T_steel)²`
    NormalizedB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Steel,
    Pdms,
    None,
}

/// An objective together with the region it is measured on and its reference field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub measure_region: Region,
    pub reference: Reference,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Result<Self> {
        let (measure_region, reference) = match kind {
            ObjectiveKind::J1 | ObjectiveKind::NormalizedB => (Region::Exterior, Reference::Steel),
            ObjectiveKind::J2 => (Region::Core, Reference::None),
            ObjectiveKind::Combined(w) => {
                check_weight(w)?;
                (Region::Exterior, Reference::Steel)
            }
        };
        Ok(ObjectiveSpec { kind, measure_region, reference })
    }
}

/// How the optimizer measures the exterior mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    #[default]
    Standard,
    /// J1 divided by its value for a PDMS-filled design ring.
    NormalizedB,
}

fn check_weight(w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("weight {w} is outside [0, 1]")))
    }
}

pub fn compose(j1: f64, j2: f64, w: f64) -> f64 {
    w * j1 + (1.0 - w) * j2
}

fn element_diff_sq(mesh: &TriMesh, e: usize, t: &[f64], reference: &[f64]) -> f64 {
    let tri = mesh.elements[e];
    let d = tri.map(|n| t[n] - reference[n]);
    let m = mesh.element_geometry(e).mass();
    (0..3).map(|a| d[a] * (0..3).map(|b| m[a][b] * d[b]).sum::<f64>()).sum()
}

/// `∫_ΩE (T − ref)²`, exact for the P1 interpolant.
pub fn j1(mesh: &TriMesh, t: &[f64], reference: &[f64]) -> f64 {
    (0..mesh.num_elements())
        .filter(|&e| mesh.element_region[e] == Region::Exterior)
        .map(|e| element_diff_sq(mesh, e, t, reference))
        .sum()
}

/// `∫_ΩC |∇T|²`.
pub fn j2(mesh: &TriMesh, t: &[f64]) -> f64 {
    (0..mesh.num_elements())
        .filter(|&e| mesh.element_region[e] == Region::Core)
        .map(|e| {
            let g = mesh.element_geometry(e);
            let gr = g.gradient(mesh.elements[e].map(|n| t[n]));
            g.area * (gr[0] * gr[0] + gr[1] * gr[1])
        })
        .sum()
}

pub fn normalized_b(mesh: &TriMesh, t: &[f64], t_steel: &[f64], t_pdms: &[f64]) -> Result<f64> {
    let den = j1(mesh, t_pdms, t_steel);
    if !(den > 0.0) {
        return Err(Error::InvalidInput(
            "normalized objective is undefined: the PDMS-filled reference equals the steel reference".into(),
        ));
    }
    Ok(j1(mesh, t, t_steel) / den)
}

/// Nodal derivative of [`j1`] with respect to `t`: `2 M_E (T − ref)`.
pub fn j1_load(mesh: &TriMesh, t: &[f64], reference: &[f64]) -> Vec<f64> {
    let mut load = vec![0.0; mesh.num_nodes()];
    for e in (0..mesh.num_elements()).filter(|&e| mesh.element_region[e] == Region::Exterior) {
        let tri = mesh.elements[e];
        let d = tri.map(|n| t[n] - reference[n]);
        let m = mesh.element_geometry(e).mass();
        for a in 0..3 {
            load[tri[a]] += 2.0 * (m[a][0] * d[0] + m[a][1] * d[1] + m[a][2] * d[2]);
        }
    }
    load
}

/// Nodal derivative of [`j2`] with respect to `t`: `2 ∫_ΩC ∇T·∇N_a`.
pub fn j2_load(mesh: &TriMesh, t: &[f64]) -> Vec<f64> {
    let mut load = vec![0.0; mesh.num_nodes()];
    for e in (0..mesh.num_elements()).filter(|&e| mesh.element_region[e] == Region::Core) {
        let tri = mesh.elements[e];
        let g = mesh.element_geometry(e);
        let gr = g.gradient(tri.map(|n| t[n]));
        for a in 0..3 {
            load[tri[a]] += 2.0 * g.area * (gr[0] * g.grads[a][0] + gr[1] * g.grads[a][1]);
        }
    }
    load
}
