//! Run configuration files.
//!
//! A config is TOML with a required `[scenario]` table and optional
//! `[output]` and `[validation]` tables. Unknown keys are errors. Physical
//! inputs (geometry, materials, boundary temperatures, `w`) have no defaults;
//! algorithmic knobs do, and [`defaulted_keys`] lists the ones a file left out.
//!
//! ```toml
//! [scenario]
//! name = "w1"
//! w = 1.0
//! objective_mode = "standard"        # or "normalized_b"
//!
//! [scenario.geometry]
//! lx = 5.0
//! ly = 5.0
//! r_design = 1.35
//! r_core = 0.4
//! n_sectors = 8                      # D1 starts at the positive x1 axis, counter-clockwise
//!
//! [scenario.materials]
//! k_cell_a = 386.0                   # phase where phi > 0
//! k_cell_b = 0.15
//! k_exterior = 67.0
//! k_obstacle = 386.0
//! k_pdms = 0.15
//!
//! [scenario.bc]
//! t_low = 0.0
//! t_high = 1.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MacroGeometry;
use crate::optimizer::Scenario;
use crate::validation::{ObstacleSpec, MIN_ELEMENTS_PER_CELL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub output: OutputSettings,
    #[serde(default)]
    pub validation: ValidationSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    /// Macro and cell fields as legacy VTK.
    #[serde(default = "yes")]
    pub vtk: bool,
    /// History and tensor tables.
    #[serde(default = "yes")]
    pub csv: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings { vtk: true, csv: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSettings {
    /// Physical cell size in metres.
    #[serde(default = "default_epsilon0")]
    pub epsilon0: f64,
    #[serde(default = "default_elements_per_cell")]
    pub elements_per_cell: f64,
    /// Obstacle angles for the robustness sweep, in degrees. Empty skips it.
    #[serde(default = "default_psi")]
    pub psi: Vec<f64>,
    /// Sweep obstacle; a PDMS half-disk of radius `0.3 R_c` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<ObstacleSpec>,
}

fn default_epsilon0() -> f64 {
    1.0 / 9.0
}

fn default_elements_per_cell() -> f64 {
    32.0
}

fn default_psi() -> Vec<f64> {
    (0..8).map(|i| 45.0 * i as f64).collect()
}

impl Default for ValidationSettings {
    fn default() -> Self {
        ValidationSettings {
            epsilon0: default_epsilon0(),
            elements_per_cell: default_elements_per_cell(),
            psi: default_psi(),
            obstacle: None,
        }
    }
}

impl ValidationSettings {
    pub fn obstacle_for(&self, geometry: &MacroGeometry, k_pdms: f64) -> ObstacleSpec {
        self.obstacle.unwrap_or_else(|| ObstacleSpec::half_disk(geometry, 0.0, k_pdms))
    }
}

impl RunConfig {
    pub fn new(scenario: Scenario) -> Self {
        RunConfig { scenario, output: OutputSettings::default(), validation: ValidationSettings::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate().map_err(as_config)?;
        let v = &self.validation;
        if !(v.epsilon0 > 0.0 && v.epsilon0 <= self.scenario.geometry.r_design) {
            return Err(Error::Config(format!(
                "validation.epsilon0 = {} must lie in (0, r_design]",
                v.epsilon0
            )));
        }
        if !(v.elements_per_cell >= MIN_ELEMENTS_PER_CELL && v.elements_per_cell.is_finite()) {
            return Err(Error::Config(format!(
                "validation.elements_per_cell = {} must be at least {MIN_ELEMENTS_PER_CELL}",
                v.elements_per_cell
            )));
        }
        if let Some(p) = v.psi.iter().find(|p| !p.is_finite()) {
            return Err(Error::Config(format!("validation.psi contains {p}")));
        }
        if let Some(o) = &v.obstacle {
            o.validate(&self.scenario.geometry).map_err(as_config)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Parses and validates a config. `origin` names the source in error messages.
pub fn parse(text: &str, origin: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
    cfg.validate().map_err(|e| Error::Config(format!("{origin}: {}", e.to_string().trim_start_matches("configuration error: "))))?;
    Ok(cfg)
}

/// Reads a config file, or a bundled scenario written as `bundled:<name>`.
pub fn load(spec: &str) -> Result<(RunConfig, String)> {
    let text = match spec.strip_prefix("bundled:") {
        Some(name) => bundled(name)
            .ok_or_else(|| {
                let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
                Error::Config(format!("no bundled scenario `{name}`; available: {}", names.join(", ")))
            })?
            .to_string(),
        None => std::fs::read_to_string(Path::new(spec)).map_err(|e| Error::Config(format!("{spec}: {e}")))?,
    };
    Ok((parse(&text, spec)?, text))
}

/// Dotted keys the source text left out, with the value each one took.
pub fn defaulted_keys(text: &str, cfg: &RunConfig) -> Vec<(String, String)> {
    let given: toml::Table = toml::from_str(text).unwrap_or_default();
    let effective = toml::Table::try_from(cfg).expect("config serializes to a table");
    let mut out = Vec::new();
    collect_missing(&given, &effective, "", &mut out);
    out
}

fn collect_missing(given: &toml::Table, effective: &toml::Table, prefix: &str, out: &mut Vec<(String, String)>) {
    for (k, v) in effective {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (given.get(k), v) {
            (None, _) => out.push((path, v.to_string())),
            (Some(toml::Value::Table(g)), toml::Value::Table(e)) => collect_missing(g, e, &path, out),
            _ => {}
        }
    }
}

pub const BUNDLED: [(&str, &str); 3] = [
    ("scenario_w1", include_str!("../scenarios/scenario_w1.toml")),
    ("scenario_whalf", include_str!("../scenarios/scenario_whalf.toml")),
    ("scenario_appendixB", include_str!("../scenarios/scenario_appendixB.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
