//! The multiscale optimization loop, its scenario description and checkpoints.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, DofMap};
use crate::geometry::{build_cell_mesh, build_macro_mesh, MacroGeometry, MacroMeshParams, UnitCellGeometry};
use crate::homogenization::{CellMaterialField, CellSolver, EffectiveTensor};
use crate::levelset::{self, InitPattern, LevelSetField, LevelSetStepper};
use crate::macro_solver::{BoundaryData, MacroMaterialMap, MacroProblem, MacroState};
use crate::mesh::ElementGeometry;
use crate::objectives::{self, ObjectiveMode};
use crate::sensitivity::{self, CellSensitivityInput};

/// Conductivities in W/(K·m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Materials {
    /// Cell phase with χ = 1 (φ > 0).
    pub k_cell_a: f64,
    /// Cell phase with χ = 0 (φ < 0).
    pub k_cell_b: f64,
    /// Evaluation domain; also the obstacle-free reference material.
    pub k_exterior: f64,
    pub k_obstacle: f64,
    /// Fill of the design ring for the normalized objective's reference.
    pub k_pdms: f64,
}

impl Materials {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k_cell_a, self.k_cell_b, self.k_exterior, self.k_obstacle, self.k_pdms];
        if all.iter().all(|k| *k > 0.0 && k.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("all conductivities must be positive and finite: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DStep {
    /// First iteration (1-based) using this width.
    pub from_iteration: usize,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSettings {
    #[serde(rename = "macro")]
    pub macro_mesh: MacroMeshParams,
    pub cell_resolution: usize,
}

impl Default for MeshSettings {
    fn default() -> Self {
        MeshSettings { macro_mesh: MacroMeshParams::graded(0.04, 0.2), cell_resolution: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSetSettings {
    #[serde(default = "default_k_phi")]
    pub k_phi: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_d_schedule")]
    pub d_schedule: Vec<DStep>,
    #[serde(default)]
    pub init: InitPattern,
    #[serde(default)]
    pub normalization: Normalization,
}

/// Which L¹ norms scale the level-set velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Norms of each cell's first sensitivity, held fixed afterwards, so the
    /// velocity shrinks as the design approaches a stationary point.
    #[default]
    Initial,
    /// Norms recomputed every iteration; the velocity always has unit L¹ mass.
    PerIteration,
}

fn default_k_phi() -> f64 {
    1.5
}
fn default_tau() -> f64 {
    2e-4
}
fn default_dt() -> f64 {
    0.01
}
fn default_d_schedule() -> Vec<DStep> {
    vec![DStep { from_iteration: 1, d: 0.2 }, DStep { from_iteration: 71, d: 0.01 }]
}

impl Default for LevelSetSettings {
    fn default() -> Self {
        LevelSetSettings {
            k_phi: default_k_phi(),
            tau: default_tau(),
            dt: default_dt(),
            d_schedule: default_d_schedule(),
            init: InitPattern::default(),
            normalization: Normalization::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Stop when |ΔJ|/J stays below 1e-6 for 10 iterations after the last width switch.
    #[serde(default)]
    pub early_stop: bool,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_max_iter() -> usize {
    150
}
fn default_checkpoint_every() -> usize {
    10
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings { max_iter: default_max_iter(), early_stop: false, checkpoint_every: default_checkpoint_every() }
    }
}

/// Everything that defines an optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub geometry: MacroGeometry,
    pub materials: Materials,
    pub bc: BoundaryData,
    /// Weight of J1 in `J = w J1 + (1 − w) J2`.
    pub w: f64,
    #[serde(default)]
    pub objective_mode: ObjectiveMode,
    #[serde(default)]
    pub mesh: MeshSettings,
    #[serde(default)]
    pub levelset: LevelSetSettings,
    #[serde(default)]
    pub run: RunSettings,
}

fn default_name() -> String {
    "scenario".into()
}

pub const COPPER: f64 = 386.0;
pub const PDMS: f64 = 0.15;
pub const STEEL: f64 = 67.0;

impl Scenario {
    /// Main benchmark: copper/PDMS cells, steel exterior, copper core.
    pub fn reference(w: f64) -> Self {
        Scenario {
            name: if w == 1.0 { "w1".into() } else { format!("w{w}") },
            geometry: MacroGeometry::reference(),
            materials: Materials { k_cell_a: COPPER, k_cell_b: PDMS, k_exterior: STEEL, k_obstacle: COPPER, k_pdms: PDMS },
            bc: BoundaryData { t_low: 0.0, t_high: 1.0 },
            w,
            objective_mode: ObjectiveMode::Standard,
            mesh: MeshSettings::default(),
            levelset: LevelSetSettings::default(),
            run: RunSettings::default(),
        }
    }

    /// Larger cloak with copper/steel cells around a PDMS core, scored by the normalized objective.
    pub fn appendix_b() -> Self {
        Scenario {
            name: "appendix_b".into(),
            geometry: MacroGeometry { lx: 20.0, ly: 40.0 / 3.0, r_design: 5.0, r_core: 3.0, n_sectors: 8 },
            materials: Materials { k_cell_a: COPPER, k_cell_b: STEEL, k_exterior: STEEL, k_obstacle: PDMS, k_pdms: PDMS },
            bc: BoundaryData { t_low: 0.0, t_high: 1.0 },
            w: 1.0,
            objective_mode: ObjectiveMode::NormalizedB,
            mesh: MeshSettings { macro_mesh: MacroMeshParams::graded(0.1, 0.6), cell_resolution: 64 },
            levelset: LevelSetSettings::default(),
            run: RunSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.materials.validate()?;
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::Config(format!("w = {} is outside [0, 1]", self.w)));
        }
        if self.run.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        let ls = &self.levelset;
        if !(ls.k_phi > 0.0 && ls.tau >= 0.0 && ls.dt > 0.0) {
            return Err(Error::Config("levelset needs k_phi > 0, tau >= 0 and dt > 0".into()));
        }
        if ls.d_schedule.is_empty() || ls.d_schedule[0].from_iteration != 1 {
            return Err(Error::Config("d_schedule must start at iteration 1".into()));
        }
        for pair in ls.d_schedule.windows(2) {
            if pair[1].from_iteration <= pair[0].from_iteration {
                return Err(Error::Config("d_schedule iterations must increase".into()));
            }
        }
        if let Some(s) = ls.d_schedule.iter().find(|s| !(s.d > 0.0 && s.d < 1.0)) {
            return Err(Error::Config(format!("transition width d = {} is outside (0, 1)", s.d)));
        }
        if self.mesh.cell_resolution < 16 || !self.mesh.cell_resolution.is_multiple_of(2) {
            return Err(Error::Config("cell_resolution must be even and at least 16".into()));
        }
        if self.bc.t_low == self.bc.t_high {
            return Err(Error::Config("t_low equals t_high; the problem is trivial".into()));
        }
        Ok(())
    }

    /// Transition width used at a 1-based iteration.
    pub fn d_at(&self, iteration: usize) -> f64 {
        self.levelset
            .d_schedule
            .iter()
            .take_while(|s| s.from_iteration <= iteration)
            .last()
            .map_or(self.levelset.d_schedule[0].d, |s| s.d)
    }

    fn last_switch(&self) -> usize {
        self.levelset.d_schedule.last().map_or(1, |s| s.from_iteration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub j1: f64,
    pub j2: f64,
    pub j: f64,
    pub j1_ratio: f64,
    pub j2_ratio: f64,
    pub d: f64,
    pub wall_ms: f64,
}

impl HistoryRecord {
    /// Everything except wall time, for reproducibility checks.
    pub fn objective_bits(&self) -> [u64; 6] {
        [self.j1, self.j2, self.j, self.j1_ratio, self.j2_ratio, self.d].map(f64::to_bits)
    }
}

/// Counts of the expensive solves, per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounters {
    pub cell_solves: usize,
    pub state_solves: usize,
    pub adjoint_j1: usize,
    pub adjoint_j2: usize,
    pub levelset_updates: usize,
}

/// The unit of checkpointing.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignState {
    /// Completed evaluations; equals `history.len()`.
    pub iteration: usize,
    /// Designs to evaluate next (after the final iteration: the evaluated design).
    pub phis: Vec<LevelSetField>,
    /// Tensors of the last evaluated design.
    pub tensors: Vec<EffectiveTensor>,
    pub j1: f64,
    pub j2: f64,
    pub j: f64,
    pub j1_init: f64,
    pub j2_init: f64,
    pub history: Vec<HistoryRecord>,
    pub counters: StageCounters,
    pub finished: bool,
    /// Per-cell `(‖term1‖, ‖term2‖)` frozen at the first update under [`Normalization::Initial`].
    pub reference_norms: Vec<Option<(f64, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    scenario: Scenario,
    iteration: usize,
    j1_init: Option<f64>,
    j2_init: Option<f64>,
    #[serde(default)]
    reference_norms: Vec<Option<(f64, f64)>>,
    tensors: Vec<EffectiveTensor>,
    history: Vec<HistoryRecord>,
    counters: StageCounters,
    finished: bool,
}

/// Result of evaluating one design.
pub struct Evaluation {
    pub tensors: Vec<EffectiveTensor>,
    pub solutions: Vec<crate::homogenization::CellSolution>,
    pub state: MacroState,
    pub j1: f64,
    pub j2: f64,
}

pub struct Optimizer {
    pub scenario: Scenario,
    cell: CellSolver,
    ls_dofs: DofMap,
    ls_weights: Vec<f64>,
    stepper: LevelSetStepper,
    problem: MacroProblem,
    state: DesignState,
    pdms_denominator: Option<f64>,
}

impl Optimizer {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let cell_mesh = build_cell_mesh(&UnitCellGeometry::new(scenario.mesh.cell_resolution))?;
        let phis = (0..scenario.geometry.n_sectors)
            .map(|l| LevelSetField::initialize(&scenario.levelset.init, &cell_mesh, l))
            .collect::<Result<Vec<_>>>()?;
        Self::with_phis(scenario, cell_mesh, phis)
    }

    fn with_phis(scenario: Scenario, cell_mesh: crate::mesh::TriMesh, phis: Vec<LevelSetField>) -> Result<Self> {
        let macro_mesh = build_macro_mesh(&scenario.geometry, &scenario.mesh.macro_mesh)?;
        log::info!(
            "{}: macro mesh {} nodes / {} elements, cell mesh {}x{}",
            scenario.name,
            macro_mesh.num_nodes(),
            macro_mesh.num_elements(),
            scenario.mesh.cell_resolution,
            scenario.mesh.cell_resolution
        );
        let m = &scenario.materials;
        let problem = MacroProblem::new(macro_mesh, scenario.bc, m.k_exterior, m.k_pdms)?;
        let ls = &scenario.levelset;
        let stepper = LevelSetStepper::new(&cell_mesh, ls.k_phi, ls.tau, ls.dt)?;
        let ls_dofs = fem::periodic_dof_map(cell_mesh.num_nodes(), &cell_mesh.periodic_pairs)?;
        let geometries: Vec<ElementGeometry> = cell_mesh.geometries();
        let ls_weights = sensitivity::lumped_weights(&cell_mesh, &geometries, &ls_dofs);
        let cell = CellSolver::new(cell_mesh)?;
        let pdms_denominator = match scenario.objective_mode {
            ObjectiveMode::Standard => None,
            ObjectiveMode::NormalizedB => {
                let ts = problem.t_steel()?.values.clone();
                let tp = problem.t_pdms(m.k_obstacle)?;
                let den = objectives::j1(&problem.mesh, &tp.values, &ts);
                if !(den > 0.0) {
                    return Err(Error::Config("normalized objective has a zero denominator".into()));
                }
                Some(den)
            }
        };
        let n = scenario.geometry.n_sectors;
        let state = DesignState {
            iteration: 0,
            phis,
            tensors: vec![EffectiveTensor::isotropic(m.k_cell_a); n],
            j1: f64::NAN,
            j2: f64::NAN,
            j: f64::NAN,
            j1_init: f64::NAN,
            j2_init: f64::NAN,
            history: Vec::new(),
            counters: StageCounters::default(),
            finished: false,
            reference_norms: vec![None; n],
        };
        Ok(Optimizer { scenario, cell, ls_dofs, ls_weights, stepper, problem, state, pdms_denominator })
    }

    pub fn state(&self) -> &DesignState {
        &self.state
    }

    pub fn into_state(self) -> DesignState {
        self.state
    }

    pub fn cell_solver(&self) -> &CellSolver {
        &self.cell
    }

    pub fn macro_problem(&self) -> &MacroProblem {
        &self.problem
    }

    /// Evaluates a set of level-set fields at transition width `d`.
    pub fn evaluate(&self, phis: &[LevelSetField], d: f64) -> Result<Evaluation> {
        let m = &self.scenario.materials;
        let mesh = self.cell.mesh();
        let solutions = phis
            .par_iter()
            .map(|f| {
                let mat = CellMaterialField::new(f.element_chi(mesh, d), m.k_cell_a, m.k_cell_b)?;
                self.cell.solve(&mat)
            })
            .collect::<Result<Vec<_>>>()?;
        let tensors: Vec<EffectiveTensor> = solutions.iter().map(|s| s.tensor).collect();
        let map = MacroMaterialMap {
            sectors: tensors.iter().map(|t| t.matrix()).collect(),
            k_exterior: m.k_exterior,
            k_core: m.k_obstacle,
        };
        let state = self.problem.solve_state(&map)?;
        let (mut j1, j2) = self.problem.evaluate_objectives(&state.temperature)?;
        if let Some(den) = self.pdms_denominator {
            j1 /= den;
        }
        Ok(Evaluation { tensors, solutions, state, j1, j2 })
    }

    /// One iteration: evaluate the current design, record it and, unless this
    /// was the last iteration, update the level sets. Returns `true` once the run is finished.
    pub fn step(&mut self) -> Result<bool> {
        if self.state.finished {
            return Ok(true);
        }
        let start = Instant::now();
        let k = self.state.iteration + 1;
        let d = self.scenario.d_at(k);
        let w = self.scenario.w;
        let n = self.scenario.geometry.n_sectors;

        let eval = self.evaluate(&self.state.phis, d).map_err(|e| e.at_stage(k, "evaluate"))?;
        self.state.counters.cell_solves += 2 * n;
        self.state.counters.state_solves += 1;
        if k == 1 {
            self.state.j1_init = eval.j1;
            self.state.j2_init = eval.j2;
        }
        let j = objectives::compose(eval.j1, eval.j2, w);
        let ratio = |v: f64, init: f64| if init > 0.0 { v / init } else { 0.0 };
        let mut record = HistoryRecord {
            iteration: k,
            j1: eval.j1,
            j2: eval.j2,
            j,
            j1_ratio: ratio(eval.j1, self.state.j1_init),
            j2_ratio: ratio(eval.j2, self.state.j2_init),
            d,
            wall_ms: 0.0,
        };
        self.state.iteration = k;
        self.state.tensors = eval.tensors.clone();
        self.state.j1 = eval.j1;
        self.state.j2 = eval.j2;
        self.state.j = j;

        let stop = k >= self.scenario.run.max_iter || (self.scenario.run.early_stop && self.converged(k, j));
        if !stop {
            let new_phis = self.update(&eval, d).map_err(|e| e.at_stage(k, "update"))?;
            self.state.phis = new_phis;
        }
        self.state.finished = stop;
        record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        log::info!(
            "iter {k:4}  J1 {:.6e}  J2 {:.6e}  J {:.6e}  J1/J1i {:.3e}  J2/J2i {:.3e}  d {d}  {:.0} ms",
            record.j1,
            record.j2,
            record.j,
            record.j1_ratio,
            record.j2_ratio,
            record.wall_ms
        );
        self.state.history.push(record);
        Ok(stop)
    }

    fn converged(&self, k: usize, j: f64) -> bool {
        const WINDOW: usize = 10;
        if k < self.scenario.last_switch() + WINDOW || self.state.history.len() < WINDOW {
            return false;
        }
        let tail = &self.state.history[self.state.history.len() - WINDOW..];
        tail.iter().all(|r| r.iteration >= self.scenario.last_switch()) && tail.iter().all(|r| (r.j - j).abs() <= 1e-6 * j.abs())
    }

    fn update(&mut self, eval: &Evaluation, d: f64) -> Result<Vec<LevelSetField>> {
        let w = self.scenario.w;
        let n = self.scenario.geometry.n_sectors;
        let mesh = &self.problem.mesh;
        let t = &eval.state.temperature;
        let dj1 = if w > 0.0 {
            let mut v = eval.state.adjoint_j1(&self.problem)?;
            if let Some(den) = self.pdms_denominator {
                v.values.iter_mut().for_each(|x| *x /= den);
            }
            self.state.counters.adjoint_j1 += 1;
            Some(sensitivity::tensor_sensitivities(mesh, t, &v, n))
        } else {
            None
        };
        let dj2 = if w < 1.0 {
            let v = eval.state.adjoint_j2(&self.problem)?;
            self.state.counters.adjoint_j2 += 1;
            Some(sensitivity::tensor_sensitivities(mesh, t, &v, n))
        } else {
            None
        };
        let m = self.scenario.materials;
        let cmesh = self.cell.mesh();
        let updated = self
            .state
            .phis
            .par_iter()
            .zip(&eval.solutions)
            .enumerate()
            .map(|(l, (phi, sol))| {
                let products = sensitivity::phase_strain_products(
                    cmesh,
                    self.cell.geometries(),
                    &self.ls_dofs,
                    sol,
                    m.k_cell_a,
                    m.k_cell_b,
                );
                let chi = phi.nodal_chi(d);
                let input = CellSensitivityInput {
                    products_pc: &products.in_b,
                    products_cp: &products.in_a,
                    chi: &chi,
                    dj1: dj1.as_ref().map(|s| s[l]),
                    dj2: dj2.as_ref().map(|s| s[l]),
                    w,
                    k_a: m.k_cell_a,
                    k_b: m.k_cell_b,
                    reference_norms: match self.scenario.levelset.normalization {
                        Normalization::Initial => self.state.reference_norms[l],
                        Normalization::PerIteration => None,
                    },
                };
                let c = sensitivity::combined_sensitivity(&input, &self.ls_weights, &self.ls_dofs);
                log::debug!("cell {}: L1 norms {:?}, C = ({:.3e}, {:.3e})", l + 1, c.norms, c.c1, c.c2);
                Ok((self.stepper.step(phi, &c.jprime)?, c.norms))
            })
            .collect::<Result<Vec<_>>>()?;
        self.state.counters.levelset_updates += n;
        let (new_phis, norms): (Vec<_>, Vec<_>) = updated.into_iter().unzip();
        if self.scenario.levelset.normalization == Normalization::Initial {
            for (slot, norm) in self.state.reference_norms.iter_mut().zip(norms) {
                slot.get_or_insert(norm);
            }
        }
        Ok(new_phis)
    }

    /// Runs to completion, checkpointing into `checkpoint_dir` if given.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<&DesignState> {
        let every = self.scenario.run.checkpoint_every;
        while !self.step()? {
            if let Some(dir) = checkpoint_dir {
                if every > 0 && self.state.iteration.is_multiple_of(every) {
                    self.checkpoint(dir)?;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            self.checkpoint(dir)?;
        }
        Ok(&self.state)
    }

    /// Writes `state.json` and one `phi_l{n}.csv` per cell into `dir`.
    pub fn checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for f in &self.state.phis {
            levelset::write_phi_csv(&dir.join(phi_file(f.cell_index)), f, self.cell.mesh())?;
        }
        let file = StateFile {
            scenario: self.scenario.clone(),
            iteration: self.state.iteration,
            j1_init: Some(self.state.j1_init).filter(|v| !v.is_nan()),
            j2_init: Some(self.state.j2_init).filter(|v| !v.is_nan()),
            reference_norms: self.state.reference_norms.clone(),
            tensors: self.state.tensors.clone(),
            history: self.state.history.clone(),
            counters: self.state.counters,
            finished: self.state.finished,
        };
        let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Checkpoint {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        std::fs::write(dir.join("state.json"), json)?;
        Ok(())
    }

    /// Restores a run from a checkpoint directory. `scenario` overrides the
    /// stored one (for example a larger `max_iter`); `None` uses the stored scenario.
    pub fn resume(dir: &Path, scenario: Option<Scenario>) -> Result<Self> {
        let path = dir.join("state.json");
        let bad = |reason: String| Error::Checkpoint { path: path.clone(), reason };
        let text = std::fs::read_to_string(&path).map_err(|e| bad(e.to_string()))?;
        let file: StateFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if file.history.len() != file.iteration {
            return Err(bad("history length does not match the iteration count".into()));
        }
        let scenario = scenario.unwrap_or(file.scenario.clone());
        scenario.validate()?;
        if scenario.geometry != file.scenario.geometry || scenario.mesh != file.scenario.mesh {
            return Err(bad("scenario geometry or mesh differs from the checkpoint".into()));
        }
        let cell_mesh = build_cell_mesh(&UnitCellGeometry::new(scenario.mesh.cell_resolution))?;
        let phis = (0..scenario.geometry.n_sectors)
            .map(|l| levelset::read_phi_csv(&dir.join(phi_file(l)), &cell_mesh, l))
            .collect::<Result<Vec<_>>>()?;
        let max_iter = scenario.run.max_iter;
        let mut opt = Self::with_phis(scenario, cell_mesh, phis)?;
        let finished = file.finished && file.iteration >= max_iter;
        if file.finished && !finished {
            return Err(bad(
                "checkpoint holds the final evaluated design, which was never updated; \
                 resume from an intermediate checkpoint to extend the run"
                    .into(),
            ));
        }
        opt.state.iteration = file.iteration;
        opt.state.j1_init = file.j1_init.unwrap_or(f64::NAN);
        opt.state.j2_init = file.j2_init.unwrap_or(f64::NAN);
        opt.state.tensors = file.tensors;
        if !file.reference_norms.is_empty() {
            if file.reference_norms.len() != opt.state.phis.len() {
                return Err(bad("reference norms do not match the number of cells".into()));
            }
            opt.state.reference_norms = file.reference_norms;
        }
        if let Some(last) = file.history.last() {
            opt.state.j1 = last.j1;
            opt.state.j2 = last.j2;
            opt.state.j = last.j;
        }
        opt.state.history = file.history;
        opt.state.counters = file.counters;
        opt.state.finished = finished || file.iteration >= max_iter;
        Ok(opt)
    }

    pub fn history_csv(&self) -> String {
        history_csv(&self.state.history)
    }

    pub fn tensor_csv(&self) -> String {
        tensor_csv(&self.state.tensors)
    }
}

pub fn phi_file(cell_index: usize) -> String {
    format!("phi_l{}.csv", cell_index + 1)
}

pub fn history_csv(history: &[HistoryRecord]) -> String {
    let mut s = String::from("iter,J1,J2,J,J1_ratio,J2_ratio,d,wall_ms\n");
    for r in history {
        writeln!(
            s,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.3}",
            r.iteration, r.j1, r.j2, r.j, r.j1_ratio, r.j2_ratio, r.d, r.wall_ms
        )
        .expect("write to string");
    }
    s
}

pub fn tensor_csv(tensors: &[EffectiveTensor]) -> String {
    let mut s = String::from("l,K11,K12,K22,Kbar1,Kbar2,theta\n");
    for (l, t) in tensors.iter().enumerate() {
        writeln!(
            s,
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.6}",
            l + 1,
            t.k11,
            t.k12,
            t.k22,
            t.kbar1,
            t.kbar2,
            t.theta
        )
        .expect("write to string");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(w: f64) -> Scenario {
        let mut s = Scenario::reference(w);
        s.mesh = MeshSettings { macro_mesh: MacroMeshParams::graded(0.15, 0.5), cell_resolution: 16 };
        s.run.max_iter = 4;
        s
    }

    #[test]
    fn d_schedule_switches_at_71() {
        let s = Scenario::reference(1.0);
        assert_eq!(s.d_at(1), 0.2);
        assert_eq!(s.d_at(70), 0.2);
        assert_eq!(s.d_at(71), 0.01);
        assert_eq!(s.d_at(150), 0.01);
    }

    #[test]
    fn validation_rejects_bad_scenarios() {
        let mut s = small(1.0);
        s.run.max_iter = 0;
        assert!(Optimizer::new(s).is_err());
        let mut s = small(1.0);
        s.w = 1.5;
        assert!(s.validate().is_err());
        let mut s = small(1.0);
        s.levelset.d_schedule[1].d = 1.5;
        assert!(s.validate().is_err());
        let mut s = small(1.0);
        s.materials.k_cell_b = 0.0;
        assert!(s.validate().unwrap_err().is_config_error());
    }

    #[test]
    fn single_iteration_reports_initial_objectives() {
        let mut s = small(1.0);
        s.run.max_iter = 1;
        let mut opt = Optimizer::new(s).unwrap();
        let initial = opt.state().phis.clone();
        let st = opt.run(None).unwrap();
        assert_eq!(st.iteration, 1);
        assert_eq!(st.history.len(), 1);
        assert_eq!(st.j1, st.j1_init);
        assert_eq!(st.history[0].j1_ratio, 1.0);
        assert_eq!(st.phis, initial);
        assert_eq!(st.counters.adjoint_j1, 0);
    }

    #[test]
    fn w1_skips_the_j2_adjoint() {
        let mut opt = Optimizer::new(small(1.0)).unwrap();
        let st = opt.run(None).unwrap();
        assert_eq!(st.counters.adjoint_j2, 0);
        assert_eq!(st.counters.adjoint_j1, 3);
        assert_eq!(st.counters.cell_solves, 4 * 16);
        let mut opt = Optimizer::new(small(0.0)).unwrap();
        let st = opt.run(None).unwrap();
        assert_eq!(st.counters.adjoint_j1, 0);
        assert_eq!(st.counters.adjoint_j2, 3);
    }

    #[test]
    fn phis_stay_periodic_and_bounded() {
        let mut opt = Optimizer::new(small(0.5)).unwrap();
        opt.run(None).unwrap();
        let mesh = opt.cell_solver().mesh().clone();
        for f in &opt.state().phis {
            assert_eq!(f.periodicity_defect(&mesh), 0.0);
            assert!(f.phi.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn checkpoint_round_trip_and_finished_resume_is_noop() {
        let dir = tempfile::tempdir().unwrap();
        let mut opt = Optimizer::new(small(1.0)).unwrap();
        opt.step().unwrap();
        opt.step().unwrap();
        opt.checkpoint(dir.path()).unwrap();
        let resumed = Optimizer::resume(dir.path(), None).unwrap();
        assert_eq!(resumed.state(), opt.state());

        opt.run(Some(dir.path())).unwrap();
        let mut done = Optimizer::resume(dir.path(), None).unwrap();
        assert!(done.state().finished);
        let before = done.state().clone();
        assert!(done.step().unwrap());
        assert_eq!(done.state(), &before);
    }

    #[test]
    fn resume_rejects_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Optimizer::resume(dir.path(), None), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn csv_headers() {
        assert!(history_csv(&[]).starts_with("iter,J1,J2,J,J1_ratio,J2_ratio,d,wall_ms"));
        let t = tensor_csv(&[EffectiveTensor::isotropic(2.0)]);
        assert!(t.starts_with("l,K11,K12,K22,Kbar1,Kbar2,theta\n1,"));
    }
}
