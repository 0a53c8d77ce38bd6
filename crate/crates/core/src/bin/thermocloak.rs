use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use thermocloak::config::{self, RunConfig};
use thermocloak::geometry::{build_cell_mesh, UnitCellGeometry};
use thermocloak::homogenization::{CellMaterialField, CellSolver};
use thermocloak::levelset::{self, LevelSetField};
use thermocloak::mesh::Region;
use thermocloak::optimizer::{history_csv, tensor_csv, Optimizer};
use thermocloak::validation::{self, SweepDesign, TilingSpec};
use thermocloak::vtk::{self, Field};
use thermocloak::{Error, Result};

#[derive(Parser)]
#[command(name = "thermocloak", version, about = "Level-set design of thermal-cloak microstructures")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization and write history, tensors, checkpoints and fields.
    Optimize(OptimizeArgs),
    /// Effective tensor of one level-set file.
    Homogenize(HomogenizeArgs),
    /// Tile a finished design with finite cells and score it.
    Validate(ValidateArgs),
    /// Robustness sweep over obstacle angles for one or more finished designs.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct OptimizeArgs {
    /// Config file, or `bundled:<name>` for a shipped scenario.
    #[arg(long)]
    config: String,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint every N iterations; 0 keeps only the final one.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct HomogenizeArgs {
    /// Level-set CSV as written by `optimize`.
    #[arg(long)]
    phi: PathBuf,
    /// Config supplying the two cell conductivities.
    #[arg(long)]
    config: String,
    /// Transition width; defaults to the last one in the schedule.
    #[arg(long)]
    d: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Finished run directory.
    #[arg(long)]
    run: PathBuf,
    /// Config overriding the run's `[validation]` table.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    epsilon0: Option<f64>,
    /// Comma-separated obstacle angles in degrees; an empty list skips the sweep.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    psi: Option<Vec<f64>>,
    /// Output directory (default: `<run>/validation`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Finished run directories; repeat for several designs.
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    /// Config overriding the first run's `[validation]` table.
    #[arg(long)]
    config: Option<String>,
    #[arg(long, value_delimiter = ',')]
    psi: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Optimize(a) => optimize(a),
        Command::Homogenize(a) => homogenize(a),
        Command::Validate(a) => validate(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        2
    } else if e.is_solver_failure() {
        3
    } else {
        1
    }
}

fn load_config(spec: &str) -> Result<RunConfig> {
    let (cfg, text) = config::load(spec)?;
    for (key, value) in config::defaulted_keys(&text, &cfg) {
        log::info!("default {key} = {value}");
    }
    Ok(cfg)
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(n) = a.checkpoint_every {
        cfg.scenario.run.checkpoint_every = n;
    }
    let mut opt = if a.resume {
        Optimizer::resume(&a.out, Some(cfg.scenario.clone()))?
    } else {
        Optimizer::new(cfg.scenario.clone())?
    };
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("config.toml"), cfg.to_toml())?;
    let state = opt.run(Some(&a.out))?;
    log::info!(
        "finished after {} iterations: J1 = {:.4e} ({:.3e} of initial), J2 = {:.4e} ({:.3e} of initial)",
        state.iteration,
        state.j1,
        state.j1 / state.j1_init,
        state.j2,
        state.j2 / state.j2_init
    );
    if cfg.output.csv {
        std::fs::write(a.out.join("history.csv"), history_csv(&state.history))?;
        std::fs::write(a.out.join("tensors.csv"), tensor_csv(&state.tensors))?;
    }
    if cfg.output.vtk {
        write_run_fields(&opt, &a.out)?;
    }
    Ok(())
}

fn write_run_fields(opt: &Optimizer, dir: &Path) -> Result<()> {
    let state = opt.state();
    let d = opt.scenario.d_at(state.iteration.max(1));
    let eval = opt.evaluate(&state.phis, d)?;
    let problem = opt.macro_problem();
    let mesh = &problem.mesh;
    let m = &opt.scenario.materials;
    let k = |i: usize| -> Vec<f64> {
        let iso = |k: f64| [k, 0.0, k][i];
        mesh.element_region
            .iter()
            .map(|r| match (r, r.sector()) {
                (_, Some(l)) => [eval.tensors[l].k11, eval.tensors[l].k12, eval.tensors[l].k22][i],
                (Region::Core, None) => iso(m.k_obstacle),
                _ => iso(m.k_exterior),
            })
            .collect()
    };
    let (k11, k12, k22) = (k(0), k(1), k(2));
    let t = &eval.state.temperature;
    let ts = problem.t_steel()?;
    let t_sub: Vec<f64> = t.values.iter().zip(&ts.values).map(|(a, b)| a - b).collect();
    let (mut qx, mut qy) = (Vec::with_capacity(k11.len()), Vec::with_capacity(k11.len()));
    for e in 0..mesh.num_elements() {
        let g = t.element_gradient(mesh, e);
        qx.push(-(k11[e] * g[0] + k12[e] * g[1]));
        qy.push(-(k12[e] * g[0] + k22[e] * g[1]));
    }
    vtk::write(
        &dir.join("macro.vtk"),
        mesh,
        &opt.scenario.name,
        &[Field { name: "T", values: &t.values }, Field { name: "T_sub", values: &t_sub }],
        &[
            Field { name: "K11", values: &k11 },
            Field { name: "K12", values: &k12 },
            Field { name: "K22", values: &k22 },
            Field { name: "flux_x", values: &qx },
            Field { name: "flux_y", values: &qy },
        ],
    )?;
    let cell_mesh = opt.cell_solver().mesh();
    for f in &state.phis {
        let chi = f.element_chi(cell_mesh, d);
        vtk::write(
            &dir.join(format!("cell_l{}.vtk", f.cell_index + 1)),
            cell_mesh,
            &format!("cell {}", f.cell_index + 1),
            &[Field { name: "phi", values: &f.phi }],
            &[Field { name: "chi", values: &chi }],
        )?;
    }
    Ok(())
}

fn homogenize(a: HomogenizeArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let text = std::fs::read_to_string(&a.phi).map_err(|e| Error::Checkpoint { path: a.phi.clone(), reason: e.to_string() })?;
    let rows = text.lines().skip(1).filter(|l| !l.trim().is_empty()).count();
    let side = (rows as f64).sqrt().round() as usize;
    if side < 2 || side * side != rows {
        return Err(Error::Checkpoint { path: a.phi.clone(), reason: format!("{rows} rows do not form a square cell grid") });
    }
    let mesh = build_cell_mesh(&UnitCellGeometry::new(side - 1))?;
    let field = levelset::read_phi_csv(&a.phi, &mesh, 0)?;
    let d = a.d.unwrap_or_else(|| cfg.scenario.levelset.d_schedule.last().map_or(0.01, |s| s.d));
    let m = &cfg.scenario.materials;
    let mat = CellMaterialField::new(field.element_chi(&mesh, d), m.k_cell_a, m.k_cell_b)?;
    let t = CellSolver::new(mesh)?.solve(&mat)?.tensor;
    println!("K11 = {:.10e}\nK12 = {:.10e}\nK22 = {:.10e}", t.k11, t.k12, t.k22);
    println!("Kbar1 = {:.10e}\nKbar2 = {:.10e}\ntheta = {:.6} deg", t.kbar1, t.kbar2, t.theta);
    Ok(())
}

/// A finished design, its tiling and the tiled J1/J2 of the initial layout.
struct TiledDesign {
    name: String,
    spec: TilingSpec,
    init: validation::TiledResult,
}

fn tiled_design(run: &Path, cfg: &RunConfig) -> Result<TiledDesign> {
    let opt = Optimizer::resume(run, None)?;
    let s = &opt.scenario;
    let state = opt.state();
    let cell_mesh = opt.cell_solver().mesh();
    let init = (0..s.geometry.n_sectors)
        .map(|l| LevelSetField::initialize(&s.levelset.init, cell_mesh, l))
        .collect::<Result<Vec<_>>>()?;
    let v = &cfg.validation;
    let spec = |phis| TilingSpec {
        epsilon0: v.epsilon0,
        phis,
        d: s.d_at(state.iteration.max(1)),
        geometry: s.geometry,
        materials: s.materials,
        bc: s.bc,
        origin: [0.0, 0.0],
        elements_per_cell: v.elements_per_cell,
    };
    let init = validation::evaluate_tiled(&spec(init), None)?;
    let name = run.file_name().map_or_else(|| s.name.clone(), |n| n.to_string_lossy().into_owned());
    Ok(TiledDesign { name, spec: spec(state.phis.clone()), init })
}

fn validation_config(run: &Path, over: Option<&str>) -> Result<RunConfig> {
    match over {
        Some(c) => load_config(c),
        None => {
            let p = run.join("config.toml");
            let text = std::fs::read_to_string(&p).map_err(|e| Error::Checkpoint { path: p.clone(), reason: e.to_string() })?;
            config::parse(&text, &p.display().to_string())
        }
    }
}

fn validate(a: ValidateArgs) -> Result<()> {
    let mut cfg = validation_config(&a.run, a.config.as_deref())?;
    if let Some(e) = a.epsilon0 {
        cfg.validation.epsilon0 = e;
    }
    if let Some(p) = a.psi {
        cfg.validation.psi = p;
    }
    cfg.validate()?;
    let out = a.out.unwrap_or_else(|| a.run.join("validation"));
    std::fs::create_dir_all(&out)?;
    let design = tiled_design(&a.run, &cfg)?;
    let r = validation::evaluate_tiled(&design.spec, None)?;
    let (j1r, j2r) = (r.j1 / design.init.j1, r.j2 / design.init.j2);
    log::info!("tiled at epsilon0 = {:.5}: J1 = {:.4e} ({j1r:.3e} of initial), J2 = {:.4e} ({j2r:.3e} of initial)", cfg.validation.epsilon0, r.j1, r.j2);
    std::fs::write(
        out.join("validation.csv"),
        format!(
            "epsilon0,J1_init,J2_init,J1,J2,J1_ratio,J2_ratio\n{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}\n",
            cfg.validation.epsilon0, design.init.j1, design.init.j2, r.j1, r.j2, j1r, j2r
        ),
    )?;
    if cfg.output.vtk {
        vtk::write(
            &out.join("tiled.vtk"),
            &r.mesh,
            "tiled design",
            &[Field { name: "temperature", values: &r.temperature }],
            &[Field { name: "conductivity", values: &r.conductivity }],
        )?;
    }
    if !cfg.validation.psi.is_empty() {
        run_sweep(&[design], &cfg, &out)?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = validation_config(&a.runs[0], a.config.as_deref())?;
    if let Some(p) = a.psi {
        cfg.validation.psi = p;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&a.out)?;
    let designs = a.runs.iter().map(|r| tiled_design(r, &cfg)).collect::<Result<Vec<_>>>()?;
    run_sweep(&designs, &cfg, &a.out)
}

fn run_sweep(designs: &[TiledDesign], cfg: &RunConfig, out: &Path) -> Result<()> {
    let geometry = designs[0].spec.geometry;
    let obstacle = cfg.validation.obstacle_for(&geometry, designs[0].spec.materials.k_pdms);
    let sweep: Vec<SweepDesign> = designs
        .iter()
        .map(|d| SweepDesign { name: d.name.clone(), spec: d.spec.clone(), j1_reference: d.init.j1 })
        .collect();
    let rows = validation::robustness_sweep(&sweep, &cfg.validation.psi, obstacle)?;
    for r in &rows {
        log::info!("{} psi = {:>6.1}: J1 = {:.4e} ({:.3e} of initial)", r.design, r.psi, r.j1, r.j1_ratio);
    }
    std::fs::write(out.join("sweep.csv"), validation::sweep_csv(&rows))?;
    Ok(())
}
