//! Level-set fields on the unit cell: characteristic function, initial
//! patterns, the reaction-diffusion update and the φ checkpoint format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, DofMap, Factorization, ReducedOperator};
use crate::mesh::{ElementGeometry, TriMesh};

/// Width of the linear ramp of the initial disk profile.
pub const INIT_RAMP: f64 = 0.1;

/// Quintic smoothed Heaviside of `phi` with transition half-width `d`.
pub fn characteristic(phi: f64, d: f64) -> f64 {
    let s = phi / d;
    if s <= -1.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let s2 = s * s;
        (0.5 + s * (15.0 / 16.0 - s2 * (5.0 / 8.0 - 3.0 / 16.0 * s2))).clamp(0.0, 1.0)
    }
}

/// Initial layout of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitPattern {
    /// PDMS disk of the given radius centred in a copper cell.
    PdmsDisk { radius: f64 },
    /// φ ≡ +1 (copper) or −1 (PDMS).
    Uniform { sign: f64 },
    /// φ read from a checkpoint CSV.
    Custom { path: PathBuf },
}

impl Default for InitPattern {
    fn default() -> Self {
        InitPattern::PdmsDisk { radius: 0.25 }
    }
}

/// Nodal level-set values on a cell mesh. Positive is copper (phase `a`).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetField {
    pub phi: Vec<f64>,
    /// Zero-based cell index (`0` feeds sector D1).
    pub cell_index: usize,
}

impl LevelSetField {
    pub fn initialize(pattern: &InitPattern, mesh: &TriMesh, cell_index: usize) -> Result<Self> {
        let phi = match pattern {
            InitPattern::PdmsDisk { radius } => {
                if !(*radius >= 0.0 && *radius <= 0.5) {
                    return Err(Error::InvalidInput(format!("disk radius {radius} is outside [0, 0.5]")));
                }
                mesh.nodes
                    .iter()
                    .map(|p| {
                        let dist = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
                        ((dist - radius) / INIT_RAMP).clamp(-1.0, 1.0)
                    })
                    .collect()
            }
            InitPattern::Uniform { sign } => {
                if *sign == 0.0 || !sign.is_finite() {
                    return Err(Error::InvalidInput("uniform pattern needs a nonzero sign".into()));
                }
                vec![sign.signum(); mesh.num_nodes()]
            }
            InitPattern::Custom { path } => return read_phi_csv(path, mesh, cell_index),
        };
        Ok(LevelSetField { phi, cell_index })
    }

    /// Element χ evaluated at the centroid from the mean nodal φ.
    pub fn element_chi(&self, mesh: &TriMesh, d: f64) -> Vec<f64> {
        mesh.elements
            .iter()
            .map(|tri| characteristic((self.phi[tri[0]] + self.phi[tri[1]] + self.phi[tri[2]]) / 3.0, d))
            .collect()
    }

    pub fn nodal_chi(&self, d: f64) -> Vec<f64> {
        self.phi.iter().map(|&p| characteristic(p, d)).collect()
    }

    /// Largest difference between periodic partners.
    pub fn periodicity_defect(&self, mesh: &TriMesh) -> f64 {
        mesh.periodic_pairs.iter().map(|&(m, s)| (self.phi[m] - self.phi[s]).abs()).fold(0.0, f64::max)
    }

    /// `∫ |∇φ|²` over the cell.
    pub fn gradient_energy(&self, mesh: &TriMesh) -> f64 {
        (0..mesh.num_elements())
            .map(|e| {
                let g = mesh.element_geometry(e);
                let gr = g.gradient(mesh.elements[e].map(|n| self.phi[n]));
                g.area * (gr[0] * gr[0] + gr[1] * gr[1])
            })
            .sum()
    }
}

/// Semi-implicit update `(M + dt·Kφ·τ·A) φⁿ⁺¹ = M (φⁿ − dt·Kφ·J')` on the
/// periodic cell, followed by clamping to [−1, 1]. The operator is fixed for
/// a run, so it is factored once.
pub struct LevelSetStepper {
    elements: Vec<[usize; 3]>,
    mass: Vec<[[f64; 3]; 3]>,
    dofs: DofMap,
    factor: Factorization,
    pub k_phi: f64,
    pub tau: f64,
    pub dt: f64,
}

impl LevelSetStepper {
    pub fn new(mesh: &TriMesh, k_phi: f64, tau: f64, dt: f64) -> Result<Self> {
        if !(k_phi > 0.0 && tau >= 0.0 && dt > 0.0) {
            return Err(Error::InvalidInput(format!("need k_phi > 0, tau >= 0, dt > 0 (got {k_phi}, {tau}, {dt})")));
        }
        let dofs = fem::periodic_dof_map(mesh.num_nodes(), &mesh.periodic_pairs)?;
        let geometries: Vec<ElementGeometry> = mesh.geometries();
        let mass: Vec<[[f64; 3]; 3]> = geometries.iter().map(|g| g.mass()).collect();
        let c = dt * k_phi * tau;
        let op_matrices: Vec<[[f64; 3]; 3]> = geometries
            .iter()
            .zip(&mass)
            .map(|(g, m)| {
                let a = g.stiffness(fem::isotropic(1.0));
                let mut out = *m;
                for i in 0..3 {
                    for j in 0..3 {
                        out[i][j] += c * a[i][j];
                    }
                }
                out
            })
            .collect();
        let operator = ReducedOperator::new(&mesh.elements, dofs.clone());
        let factor = operator.factorize(operator.assemble(&op_matrices))?;
        Ok(LevelSetStepper { elements: mesh.elements.clone(), mass, dofs, factor, k_phi, tau, dt })
    }

    pub fn step(&self, field: &LevelSetField, jprime: &[f64]) -> Result<LevelSetField> {
        let n = field.phi.len();
        if jprime.len() != n {
            return Err(Error::InvalidInput(format!("{} sensitivity values for {n} nodes", jprime.len())));
        }
        let src: Vec<f64> = field.phi.iter().zip(jprime).map(|(p, j)| p - self.dt * self.k_phi * j).collect();
        let mut load = vec![0.0; n];
        for (tri, m) in self.elements.iter().zip(&self.mass) {
            for a in 0..3 {
                load[tri[a]] += m[a][0] * src[tri[0]] + m[a][1] * src[tri[1]] + m[a][2] * src[tri[2]];
            }
        }
        let x = self.factor.solve(&self.dofs.fold(&load))?;
        let phi = self.dofs.expand(&x).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Ok(LevelSetField { phi, cell_index: field.cell_index })
    }
}

/// Writes `node_index,y1,y2,phi` with 17 significant digits.
pub fn write_phi_csv(path: &Path, field: &LevelSetField, mesh: &TriMesh) -> Result<()> {
    let mut s = String::from("node_index,y1,y2,phi\n");
    for (i, (p, v)) in mesh.nodes.iter().zip(&field.phi).enumerate() {
        writeln!(s, "{i},{:.16e},{:.16e},{:.16e}", p[0], p[1], v).expect("write to string");
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_phi_csv(path: &Path, mesh: &TriMesh, cell_index: usize) -> Result<LevelSetField> {
    let bad = |reason: String| Error::Checkpoint { path: path.to_path_buf(), reason };
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("node_index,y1,y2,phi") {
        return Err(bad("missing header `node_index,y1,y2,phi`".into()));
    }
    let mut phi = vec![f64::NAN; mesh.num_nodes()];
    for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(bad(format!("line {}: expected 4 columns", lineno + 2)));
        }
        let idx: usize = cols[0].parse().map_err(|_| bad(format!("line {}: bad node index", lineno + 2)))?;
        let vals: Vec<f64> = cols[1..]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(format!("line {}: bad number", lineno + 2)))?;
        if idx >= phi.len() {
            return Err(bad(format!("node {idx} does not exist in a mesh of {} nodes", phi.len())));
        }
        let p = mesh.nodes[idx];
        if (p[0] - vals[0]).abs() > 1e-9 || (p[1] - vals[1]).abs() > 1e-9 {
            return Err(bad(format!("node {idx} coordinates do not match the cell mesh")));
        }
        if !(-1.0..=1.0).contains(&vals[2]) {
            return Err(bad(format!("node {idx}: phi {} outside [-1, 1]", vals[2])));
        }
        phi[idx] = vals[2];
    }
    if let Some(missing) = phi.iter().position(|v| v.is_nan()) {
        return Err(bad(format!("node {missing} has no value")));
    }
    Ok(LevelSetField { phi, cell_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cell_mesh, UnitCellGeometry};

    fn mesh() -> TriMesh {
        build_cell_mesh(&UnitCellGeometry::new(32)).unwrap()
    }

    #[test]
    fn characteristic_values() {
        assert_eq!(characteristic(0.0, 0.2), 0.5);
        assert_eq!(characteristic(0.2, 0.2), 1.0);
        assert_eq!(characteristic(-0.2, 0.2), 0.0);
        assert!((characteristic(0.1, 0.2) - 0.896484375).abs() < 1e-15);
        let mut prev = 0.0;
        for k in -100..=100 {
            let v = characteristic(k as f64 * 0.003, 0.2);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn characteristic_is_c2_at_the_ends() {
        let d = 0.2;
        let h = 1e-4;
        let f = |x: f64| characteristic(x, d);
        for end in [-d, d] {
            let inner = if end > 0.0 { end - h } else { end + h };
            assert!((f(inner) - f(end)).abs() < 1e-9);
        }
    }

    #[test]
    fn disk_initialization() {
        let m = mesh();
        let f = LevelSetField::initialize(&InitPattern::PdmsDisk { radius: 0.25 }, &m, 0).unwrap();
        let center = m.nodes.iter().position(|p| p[0] == 0.5 && p[1] == 0.5).unwrap();
        assert_eq!(characteristic(f.phi[center], 0.2), 0.0);
        assert_eq!(characteristic(f.phi[0], 0.2), 1.0);
        assert_eq!(f.periodicity_defect(&m), 0.0);
        let u = LevelSetField::initialize(&InitPattern::Uniform { sign: 1.0 }, &m, 0).unwrap();
        assert!(u.element_chi(&m, 0.2).iter().all(|&c| c == 1.0));
    }

    #[test]
    fn zero_sensitivity_without_diffusion_keeps_phi() {
        let m = mesh();
        let f = LevelSetField::initialize(&InitPattern::PdmsDisk { radius: 0.25 }, &m, 0).unwrap();
        let st = LevelSetStepper::new(&m, 1.5, 0.0, 0.1).unwrap();
        let g = st.step(&f, &vec![0.0; m.num_nodes()]).unwrap();
        for (a, b) in f.phi.iter().zip(&g.phi) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn diffusion_decays() {
        let m = mesh();
        let mut f = LevelSetField::initialize(&InitPattern::PdmsDisk { radius: 0.25 }, &m, 0).unwrap();
        let st = LevelSetStepper::new(&m, 1.5, 1e-2, 0.1).unwrap();
        let zero = vec![0.0; m.num_nodes()];
        let mut max = f.phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut energy = f.gradient_energy(&m);
        for _ in 0..5 {
            f = st.step(&f, &zero).unwrap();
            let new_max = f.phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let new_energy = f.gradient_energy(&m);
            assert!(new_max <= max + 1e-12);
            assert!(new_energy <= energy + 1e-12);
            assert!(f.periodicity_defect(&m) == 0.0);
            max = new_max;
            energy = new_energy;
        }
    }

    #[test]
    fn uniform_sensitivity_shifts_and_clamps() {
        let m = mesh();
        let f = LevelSetField { phi: m.nodes.iter().map(|p| 0.5 * (2.0 * std::f64::consts::PI * p[0]).sin()).collect(), cell_index: 0 };
        let st = LevelSetStepper::new(&m, 1.5, 0.0, 0.1).unwrap();
        let g = st.step(&f, &vec![2.0; m.num_nodes()]).unwrap();
        let shift = 0.1 * 1.5 * 2.0;
        for (a, b) in f.phi.iter().zip(&g.phi) {
            assert!((b - (a - shift).clamp(-1.0, 1.0)).abs() < 1e-12);
        }
        let h = st.step(&g, &vec![-100.0; m.num_nodes()]).unwrap();
        assert!(h.phi.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = mesh();
        let phi: Vec<f64> = m.nodes.iter().map(|p| ((p[0] * 7.3).sin() * (p[1] * 3.1).cos() / 3.0).clamp(-1.0, 1.0)).collect();
        let f = LevelSetField { phi, cell_index: 3 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.csv");
        write_phi_csv(&path, &f, &m).unwrap();
        let g = read_phi_csv(&path, &m, 3).unwrap();
        assert_eq!(f, g);
        let via_pattern = LevelSetField::initialize(&InitPattern::Custom { path: path.clone() }, &m, 3).unwrap();
        assert_eq!(f, via_pattern);
    }

    #[test]
    fn csv_rejects_truncated_file() {
        let m = mesh();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.csv");
        std::fs::write(&path, "node_index,y1,y2,phi\n0,0,0,0.5\n").unwrap();
        assert!(matches!(read_phi_csv(&path, &m, 0), Err(Error::Checkpoint { .. })));
        assert!(read_phi_csv(&dir.path().join("missing.csv"), &m, 0).is_err());
    }
}
