//! P1 finite-element core: assembly, constraint elimination and sparse solves.
//!
//! Constraints are applied by elimination. A [`DofMap`] sends every mesh node
//! either to a free degree of freedom (several periodic nodes may share one)
//! or to a fixed value. The reduced operator over the free DOFs stays symmetric
//! positive definite. The sparsity pattern is computed once per mesh and
//! constraint layout ([`ReducedOperator`]) and reused across numeric
//! assemblies, and so is the symbolic Cholesky factorization.

use std::sync::OnceLock;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Relative residual every solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

const REFINEMENT_STEPS: usize = 3;
const NO_SLOT: usize = usize::MAX;

/// Symmetric 2×2 tensor stored as a full matrix.
pub type Tensor2 = [[f64; 2]; 2];

pub fn isotropic(k: f64) -> Tensor2 {
    [[k, 0.0], [0.0, k]]
}

pub fn is_spd(k: &Tensor2) -> bool {
    let sym = (k[0][1] - k[1][0]).abs() <= 1e-12 * (k[0][0].abs() + k[1][1].abs());
    let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
    sym && k[0][0] > 0.0 && det > 0.0 && k.iter().flatten().all(|v| v.is_finite())
}

/// Compressed sparse row matrix. Symmetric operators store both triangles,
/// so the same arrays also describe the transpose in CSC form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

/// What a mesh node maps to after constraint elimination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeDof {
    Free(usize),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub node_dof: Vec<NodeDof>,
    pub n_free: usize,
}

impl DofMap {
    pub fn identity(n_nodes: usize) -> Self {
        DofMap { node_dof: (0..n_nodes).map(NodeDof::Free).collect(), n_free: n_nodes }
    }

    /// Same free layout with every fixed value replaced by zero.
    pub fn homogeneous(&self) -> Self {
        let node_dof = self
            .node_dof
            .iter()
            .map(|d| match d {
                NodeDof::Fixed(_) => NodeDof::Fixed(0.0),
                free => *free,
            })
            .collect();
        DofMap { node_dof, n_free: self.n_free }
    }

    /// Scatters a free-DOF vector back to node values.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        self.node_dof
            .iter()
            .map(|d| match *d {
                NodeDof::Free(k) => free[k],
                NodeDof::Fixed(v) => v,
            })
            .collect()
    }

    /// Sums node contributions onto the free DOFs they map to.
    pub fn fold(&self, nodal: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (node, d) in self.node_dof.iter().enumerate() {
            if let NodeDof::Free(k) = *d {
                out[k] += nodal[node];
            }
        }
        out
    }

    /// One representative node per free DOF (the lowest-numbered one).
    pub fn representatives(&self) -> Vec<usize> {
        let mut rep = vec![usize::MAX; self.n_free];
        for (node, d) in self.node_dof.iter().enumerate() {
            if let NodeDof::Free(k) = *d {
                if rep[k] == usize::MAX {
                    rep[k] = node;
                }
            }
        }
        rep
    }
}

/// Summary of the constraints a field was solved with.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryRecord {
    pub dirichlet_nodes: usize,
    pub periodic_pairs: usize,
    pub gauge: Option<usize>,
}

/// Nodal scalar field (temperature, corrector or adjoint).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
    pub bc: BoundaryRecord,
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField { values: vec![0.0; n], bc: BoundaryRecord::default() }
    }

    pub fn element_gradient(&self, mesh: &TriMesh, e: usize) -> [f64; 2] {
        let [a, b, c] = mesh.elements[e];
        mesh.element_geometry(e).gradient([self.values[a], self.values[b], self.values[c]])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Sparsity pattern of the reduced operator for one mesh/constraint layout.
#[derive(Debug)]
pub struct ReducedOperator {
    pub dofs: DofMap,
    elements: Vec<[usize; 3]>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    slots: Vec<[usize; 9]>,
    symbolic: OnceLock<SymbolicLlt<usize>>,
}

impl ReducedOperator {
    pub fn new(elements: &[[usize; 3]], dofs: DofMap) -> Self {
        let n = dofs.n_free;
        let dof_of = |node: usize| match dofs.node_dof[node] {
            NodeDof::Free(k) => Some(k),
            NodeDof::Fixed(_) => None,
        };
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for tri in elements {
            for &a in tri {
                if let Some(i) = dof_of(a) {
                    for &b in tri {
                        if let Some(j) = dof_of(b) {
                            rows[i].push(j);
                        }
                    }
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let slots = elements
            .iter()
            .map(|tri| {
                let mut s = [NO_SLOT; 9];
                for (la, &a) in tri.iter().enumerate() {
                    for (lb, &b) in tri.iter().enumerate() {
                        if let (Some(i), Some(j)) = (dof_of(a), dof_of(b)) {
                            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
                            s[la * 3 + lb] = row_ptr[i] + row.binary_search(&j).expect("pattern entry");
                        }
                    }
                }
                s
            })
            .collect();
        ReducedOperator { dofs, elements: elements.to_vec(), row_ptr, col_idx, slots, symbolic: OnceLock::new() }
    }

    pub fn n_free(&self) -> usize {
        self.dofs.n_free
    }

    /// Scatters element matrices into the reduced pattern.
    pub fn assemble(&self, element_matrices: &[[[f64; 3]; 3]]) -> CsrMatrix {
        let mut values = vec![0.0; self.col_idx.len()];
        for (ke, slots) in element_matrices.iter().zip(&self.slots) {
            for a in 0..3 {
                for b in 0..3 {
                    let s = slots[a * 3 + b];
                    if s != NO_SLOT {
                        values[s] += ke[a][b];
                    }
                }
            }
        }
        CsrMatrix { n: self.dofs.n_free, row_ptr: self.row_ptr.clone(), col_idx: self.col_idx.clone(), values }
    }

    /// Reduced right-hand side: folded nodal load minus the lift of fixed values.
    pub fn reduced_rhs(&self, dofs: &DofMap, element_matrices: &[[[f64; 3]; 3]], load: &[f64]) -> Vec<f64> {
        let mut rhs = dofs.fold(load);
        for (tri, ke) in self.elements.iter().zip(element_matrices) {
            for (la, &a) in tri.iter().enumerate() {
                let NodeDof::Free(i) = dofs.node_dof[a] else { continue };
                for (lb, &b) in tri.iter().enumerate() {
                    if let NodeDof::Fixed(v) = dofs.node_dof[b] {
                        if v != 0.0 {
                            rhs[i] -= ke[la][lb] * v;
                        }
                    }
                }
            }
        }
        rhs
    }

    /// Numeric Cholesky factorization, reusing the cached symbolic analysis.
    pub fn factorize(&self, matrix: CsrMatrix) -> Result<Factorization> {
        let n = matrix.n;
        if n == 0 {
            return Ok(Factorization { matrix, llt: None });
        }
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &matrix.row_ptr, None, &matrix.col_idx);
        let symbolic = match self.symbolic.get() {
            Some(s) => s.clone(),
            None => {
                let s = SymbolicLlt::try_new(sym, Side::Lower)
                    .map_err(|e| Error::Solver(format!("symbolic analysis failed: {e:?}")))?;
                self.symbolic.get_or_init(|| s).clone()
            }
        };
        let mat = SparseColMatRef::new(sym, &matrix.values);
        let llt = Llt::try_new_with_symbolic(symbolic, mat, Side::Lower).map_err(|e| {
            Error::Solver(format!(
                "Cholesky factorization failed ({e:?}); the operator is not positive definite, \
                 most likely a Dirichlet or gauge constraint is missing"
            ))
        })?;
        Ok(Factorization { matrix, llt: Some(llt) })
    }
}

/// A factorized SPD operator that checks the residual of every solve.
pub struct Factorization {
    matrix: CsrMatrix,
    llt: Option<Llt<usize, f64>>,
}

impl Factorization {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.matrix.n;
        let Some(llt) = &self.llt else { return Ok(Vec::new()) };
        let bnorm = norm(rhs);
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut x = rhs.to_vec();
        llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut x, n, 1));
        let mut r = vec![0.0; n];
        for _ in 0..=REFINEMENT_STEPS {
            self.matrix.matvec(&x, &mut r);
            for (ri, bi) in r.iter_mut().zip(rhs) {
                *ri = bi - *ri;
            }
            let rel = norm(&r) / bnorm;
            if !rel.is_finite() {
                return Err(Error::Solver("non-finite residual".into()));
            }
            if rel <= SOLVE_TOLERANCE {
                return Ok(x);
            }
            llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut r, n, 1));
            for (xi, di) in x.iter_mut().zip(&r) {
                *xi += di;
            }
        }
        self.matrix.matvec(&x, &mut r);
        let rel = r.iter().zip(rhs).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt() / bnorm;
        if rel <= SOLVE_TOLERANCE {
            Ok(x)
        } else {
            Err(Error::Solver(format!("relative residual {rel:e} above {SOLVE_TOLERANCE:e}")))
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Jacobi-preconditioned conjugate gradients.
pub fn solve_pcg(matrix: &CsrMatrix, rhs: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = matrix.n;
    let bnorm = norm(rhs);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = matrix
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { f64::NAN })
        .collect();
    if inv_diag.iter().any(|d| d.is_nan()) {
        return Err(Error::Solver("non-positive diagonal entry; operator is not SPD".into()));
    }
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..max_iter {
        matrix.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Solver("conjugate gradient breakdown: operator is not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) / bnorm <= tol {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver(format!("conjugate gradient did not reach {tol:e} in {max_iter} iterations")))
}

/// DOF map that identifies periodic partners without pinning a gauge node.
/// Suitable for operators that are SPD on their own (mass plus stiffness).
pub fn periodic_dof_map(n_nodes: usize, pairs: &[(usize, usize)]) -> Result<DofMap> {
    let sys = SparseSystem {
        elements: Vec::new(),
        element_matrices: Vec::new(),
        load: vec![0.0; n_nodes],
        master: (0..n_nodes).collect(),
        fixed: vec![None; n_nodes],
        record: BoundaryRecord::default(),
    };
    Ok(sys.fold_pairs(pairs)?.dof_map())
}

/// Element stiffness matrices for one tensor per element.
pub fn element_stiffness(mesh: &TriMesh, tensors: &[Tensor2]) -> Result<Vec<[[f64; 3]; 3]>> {
    if tensors.len() != mesh.num_elements() {
        return Err(Error::InvalidInput(format!(
            "{} tensors for {} elements",
            tensors.len(),
            mesh.num_elements()
        )));
    }
    tensors
        .iter()
        .enumerate()
        .map(|(e, k)| {
            if !is_spd(k) {
                return Err(Error::InvalidInput(format!("element {e} tensor {k:?} is not symmetric positive definite")));
            }
            Ok(mesh.element_geometry(e).stiffness(*k))
        })
        .collect()
}

/// Scalar diffusion system on a mesh together with its constraints.
///
/// Constraints accumulate through [`SparseSystem::apply_dirichlet`] and
/// [`SparseSystem::apply_periodic`]; [`SparseSystem::reduce`] produces the
/// matrix over the remaining free DOFs.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    elements: Vec<[usize; 3]>,
    element_matrices: Vec<[[f64; 3]; 3]>,
    pub load: Vec<f64>,
    master: Vec<usize>,
    fixed: Vec<Option<f64>>,
    record: BoundaryRecord,
}

/// Assembles the P1 stiffness of `-div(K ∇u)` with element-wise tensors.
pub fn assemble_diffusion(mesh: &TriMesh, tensors: &[Tensor2]) -> Result<SparseSystem> {
    let element_matrices = element_stiffness(mesh, tensors)?;
    let n = mesh.num_nodes();
    Ok(SparseSystem {
        elements: mesh.elements.clone(),
        element_matrices,
        load: vec![0.0; n],
        master: (0..n).collect(),
        fixed: vec![None; n],
        record: BoundaryRecord::default(),
    })
}

impl SparseSystem {
    pub fn num_nodes(&self) -> usize {
        self.master.len()
    }

    pub fn with_load(mut self, load: Vec<f64>) -> Result<Self> {
        if load.len() != self.num_nodes() {
            return Err(Error::InvalidInput("load length does not match the node count".into()));
        }
        self.load = load;
        Ok(self)
    }

    fn root(&self, mut node: usize) -> usize {
        while self.master[node] != node {
            node = self.master[node];
        }
        node
    }

    /// Fixes `nodes` to `values`, eliminating them symmetrically.
    pub fn apply_dirichlet(mut self, nodes: &[usize], values: &[f64]) -> Result<Self> {
        if nodes.len() != values.len() {
            return Err(Error::InvalidInput("dirichlet nodes and values differ in length".into()));
        }
        for (&node, &v) in nodes.iter().zip(values) {
            if node >= self.num_nodes() {
                return Err(Error::InvalidInput(format!("dirichlet node {node} is not in the mesh")));
            }
            let root = self.root(node);
            if self.fixed[root].is_none() {
                self.record.dirichlet_nodes += 1;
            }
            self.fixed[root] = Some(v);
        }
        Ok(self)
    }

    /// Folds each slave onto its master and pins `gauge` to zero.
    pub fn apply_periodic(self, pairs: &[(usize, usize)], gauge: usize) -> Result<Self> {
        if gauge >= self.num_nodes() {
            return Err(Error::InvalidInput(format!("gauge node {gauge} is not in the mesh")));
        }
        let mut sys = self.fold_pairs(pairs)?;
        let g = sys.root(gauge);
        sys.fixed[g] = Some(0.0);
        sys.record.gauge = Some(gauge);
        Ok(sys)
    }

    fn fold_pairs(mut self, pairs: &[(usize, usize)]) -> Result<Self> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        for &(m, s) in pairs {
            if m >= n || s >= n || m == s {
                return Err(Error::InvalidInput(format!("invalid periodic pair ({m}, {s})")));
            }
            if seen[s] {
                return Err(Error::InvalidInput(format!("node {s} is a slave of two masters")));
            }
            seen[s] = true;
        }
        for &(m, s) in pairs {
            let (rm, rs) = (self.root(m), self.root(s));
            if rm == rs {
                continue;
            }
            if self.fixed[rs].is_some() {
                return Err(Error::InvalidInput(format!("periodic slave {s} is already fixed")));
            }
            self.master[rs] = rm;
        }
        self.record.periodic_pairs = pairs.len();
        Ok(self)
    }

    pub fn dof_map(&self) -> DofMap {
        let n = self.num_nodes();
        let mut root_dof = vec![None; n];
        let mut n_free = 0;
        for node in 0..n {
            if self.master[node] == node && self.fixed[node].is_none() {
                root_dof[node] = Some(n_free);
                n_free += 1;
            }
        }
        let node_dof = (0..n)
            .map(|node| {
                let r = self.root(node);
                match (root_dof[r], self.fixed[r]) {
                    (Some(k), _) => NodeDof::Free(k),
                    (None, Some(v)) => NodeDof::Fixed(v),
                    (None, None) => unreachable!("root is either free or fixed"),
                }
            })
            .collect();
        DofMap { node_dof, n_free }
    }

    pub fn element_matrices(&self) -> &[[[f64; 3]; 3]] {
        &self.element_matrices
    }

    /// Reduced matrix and right-hand side over the free DOFs.
    pub fn reduce(&self) -> (CsrMatrix, Vec<f64>, DofMap) {
        let dofs = self.dof_map();
        let op = ReducedOperator::new(&self.elements, dofs.clone());
        let matrix = op.assemble(&self.element_matrices);
        let rhs = op.reduced_rhs(&dofs, &self.element_matrices, &self.load);
        (matrix, rhs, dofs)
    }

    /// Solves by sparse Cholesky and expands to node values.
    pub fn solve(&self) -> Result<ScalarField> {
        let dofs = self.dof_map();
        let op = ReducedOperator::new(&self.elements, dofs.clone());
        let matrix = op.assemble(&self.element_matrices);
        let rhs = op.reduced_rhs(&dofs, &self.element_matrices, &self.load);
        let fact = op.factorize(matrix)?;
        let x = fact.solve(&rhs)?;
        Ok(ScalarField { values: dofs.expand(&x), bc: self.record.clone() })
    }
}
