//! Scenario configuration: TOML sections with strict keys, a desk-scale
//! default, a full-resolution preset and `SRSW_SECTION__KEY` environment
//! overrides.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation

use serde::{Deserialize, Serialize};
use srsw_core::calibrate::{CalibrationOptions, SolverOptions};
use srsw_core::coarsen::{kernel_c4, kernel_c8, Kernel};
use srsw_core::{GridSpec, PhysicalParams};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "SRSW_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridSection,
    pub physics: PhysicsSection,
    pub run: RunSection,
    pub coarsening: CoarseningSection,
    pub calibration: CalibrationSection,
    pub ensemble: EnsembleSection,
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    /// Domain length in metres.
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub g: f64,
    pub f0: f64,
    pub beta: f64,
    pub h_mean: f64,
    pub viscosity: f64,
    pub friction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub dt_fine: f64,
    pub burn_in_steps: usize,
    pub truth_steps: usize,
    pub snapshot_stride: usize,
    /// Amplitude of the starting elevation, metres.
    pub amplitude: f64,
    pub asselin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseningSection {
    pub c: usize,
    /// `auto` (by factor), `box3` or `pyramid9`.
    pub kernel: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub alpha_decorr: f64,
    pub delta_steps: usize,
    pub n_xi: f64,
    pub solver_tolerance: f64,
    pub solver_max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    /// Empty for a name derived from `c`, `n_xi` and `n_members`.
    pub scenario: String,
    pub n_members: usize,
    pub n_steps: usize,
    pub master_seed: u64,
    /// Coarse time step in seconds; 0 means `c * dt_fine`.
    pub dt_coarse: f64,
    pub snapshot_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    /// Write PGM rasters next to the data files.
    pub rasters: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config::desk()
    }
}

impl Config {
    /// 556 x 80 fine grid, c = 4, 50 members.
    pub fn desk() -> Self {
        let g = GridSpec::desk_default();
        let p = PhysicalParams::default();
        Config {
            grid: GridSection { nx: g.nx, ny: g.ny, lx: g.lx, ly: g.ly },
            physics: PhysicsSection {
                g: p.g,
                f0: p.f0,
                beta: p.beta,
                h_mean: p.h_mean,
                viscosity: p.viscosity,
                friction: p.friction,
            },
            run: RunSection {
                dt_fine: 90.0,
                burn_in_steps: 1000,
                truth_steps: 1120,
                snapshot_stride: 1,
                amplitude: 100.0,
                asselin: 0.01,
            },
            coarsening: CoarseningSection { c: 4, kernel: "auto".into() },
            calibration: CalibrationSection {
                alpha_decorr: 0.2,
                delta_steps: 1,
                n_xi: 0.9,
                solver_tolerance: SolverOptions::default().tolerance,
                solver_max_iterations: SolverOptions::default().max_iterations,
            },
            ensemble: EnsembleSection {
                scenario: String::new(),
                n_members: 50,
                n_steps: 128,
                master_seed: 1,
                dt_coarse: 0.0,
                snapshot_stride: 1,
            },
            outputs: OutputSection { directory: "runs/desk".into(), rasters: true },
        }
    }

    /// Full 2224 x 320 resolution with the 22.5 s step.
    pub fn full_scale() -> Self {
        let mut c = Config::desk();
        let g = GridSpec::full_scale();
        c.grid = GridSection { nx: g.nx, ny: g.ny, lx: g.lx, ly: g.ly };
        c.run.dt_fine = 22.5;
        c.outputs.directory = "runs/full".into();
        c
    }

    /// Parse TOML text on top of a preset, then apply environment overrides.
    pub fn from_sources<I>(text: &str, paper_scale: bool, env: I) -> Result<Config, CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let base = if paper_scale { Config::full_scale() } else { Config::desk() };
        let mut table = toml::Table::try_from(&base).expect("config serializes to a table");
        let mut problems = Vec::new();
        let user: toml::Table = text.parse().map_err(|e| CliError::Validation(vec![format!("config: {e}")]))?;
        merge(&mut table, user, &mut problems);
        let mut overrides = toml::Table::new();
        for (name, value) in env {
            let Some(path) = name.strip_prefix(ENV_PREFIX) else { continue };
            let Some((section, key)) = path.split_once("__") else {
                problems.push(format!("environment variable {name}: expected {ENV_PREFIX}SECTION__KEY"));
                continue;
            };
            let entry =
                overrides.entry(section.to_lowercase()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = entry {
                t.insert(key.to_lowercase(), parse_env_value(&value));
            }
        }
        merge(&mut table, overrides, &mut problems);
        if !problems.is_empty() {
            return Err(CliError::Validation(problems));
        }
        let config: Config =
            table.try_into().map_err(|e: toml::de::Error| CliError::Validation(vec![e.to_string()]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path, paper_scale: bool) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(vec![format!("cannot read config {}: {e}", path.display())]))?;
        Config::from_sources(&text, paper_scale, std::env::vars())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every violated rule, not just the first.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        let g = &self.grid;
        if g.nx < 4 || g.ny < 4 {
            problems.push(format!("grid: nx and ny must be at least 4, got {}x{}", g.nx, g.ny));
        }
        if !(g.lx > 0.0 && g.ly > 0.0) {
            problems.push(format!("grid: lx and ly must be positive, got {} and {}", g.lx, g.ly));
        }
        if let Err(srsw_core::Error::InvalidParameter(msg)) = self.physical_params().validate() {
            problems.extend(msg.split("; ").map(|m| format!("physics: {m}")));
        }
        let r = &self.run;
        if !(r.dt_fine > 0.0) {
            problems.push(format!("run: dt_fine must be positive, got {}", r.dt_fine));
        }
        if r.snapshot_stride == 0 {
            problems.push("run: snapshot_stride must be at least 1".into());
        }
        if !(r.amplitude > 0.0) {
            problems.push(format!("run: amplitude must be positive, got {}", r.amplitude));
        }
        if !(0.0..0.5).contains(&r.asselin) {
            problems.push(format!("run: asselin must be in [0, 0.5), got {}", r.asselin));
        }
        let c = self.coarsening.c;
        if c != 4 && c != 8 {
            problems.push(format!("coarsening: c must be 4 or 8, got {c}"));
        }
        if c == 0 || !g.nx.is_multiple_of(c) || !g.ny.is_multiple_of(c) {
            problems.push(format!("coarsening: c = {c} must divide both nx = {} and ny = {}", g.nx, g.ny));
        } else if g.ny / c < 4 || g.nx / c < 4 {
            problems.push(format!("coarsening: coarse grid {}x{} is smaller than 4x4", g.nx / c, g.ny / c));
        }
        if !["auto", "box3", "pyramid9"].contains(&self.coarsening.kernel.as_str()) {
            problems
                .push(format!("coarsening: kernel must be auto, box3 or pyramid9, got {:?}", self.coarsening.kernel));
        }
        let k = &self.calibration;
        if !(k.alpha_decorr > 0.0 && k.alpha_decorr < 1.0) {
            problems.push(format!("calibration: alpha_decorr must be in (0, 1), got {}", k.alpha_decorr));
        }
        if k.delta_steps == 0 {
            problems.push("calibration: delta_steps must be at least 1".into());
        }
        if !(k.n_xi > 0.0 && k.n_xi <= 1.0) {
            problems.push(format!("calibration: n_xi must be in (0, 1], got {}", k.n_xi));
        }
        if !(k.solver_tolerance > 0.0) || k.solver_max_iterations == 0 {
            problems.push("calibration: solver tolerance and iteration limit must be positive".into());
        }
        let e = &self.ensemble;
        if e.n_members == 0 {
            problems.push("ensemble: n_members must be at least 1".into());
        }
        if e.snapshot_stride == 0 {
            problems.push("ensemble: snapshot_stride must be at least 1".into());
        }
        if !(e.dt_coarse >= 0.0) {
            problems.push(format!("ensemble: dt_coarse must be 0 (automatic) or positive, got {}", e.dt_coarse));
        }
        if e.scenario.contains(['/', '\\']) || e.scenario == "." || e.scenario == ".." {
            problems.push(format!("ensemble: scenario {:?} is not a valid directory name", e.scenario));
        }
        if self.outputs.directory.is_empty() {
            problems.push("outputs: directory must not be empty".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(problems))
        }
    }

    pub fn fine_grid(&self) -> GridSpec {
        GridSpec::new(self.grid.lx, self.grid.ly, self.grid.nx, self.grid.ny).expect("validated grid")
    }

    pub fn physical_params(&self) -> PhysicalParams {
        let p = &self.physics;
        PhysicalParams {
            g: p.g,
            f0: p.f0,
            beta: p.beta,
            h_mean: p.h_mean,
            viscosity: p.viscosity,
            friction: p.friction,
        }
    }

    pub fn kernel(&self) -> Kernel {
        match self.coarsening.kernel.as_str() {
            "box3" => kernel_c4(),
            "pyramid9" => kernel_c8(),
            _ => Kernel::for_factor(self.coarsening.c).expect("validated factor"),
        }
    }

    pub fn calibration_options(&self) -> CalibrationOptions {
        let k = &self.calibration;
        CalibrationOptions {
            delta_steps: k.delta_steps,
            alpha_decorr: k.alpha_decorr,
            n_xi: k.n_xi,
            solver: SolverOptions { tolerance: k.solver_tolerance, max_iterations: k.solver_max_iterations },
        }
    }

    pub fn dt_coarse(&self) -> f64 {
        if self.ensemble.dt_coarse > 0.0 {
            self.ensemble.dt_coarse
        } else {
            self.coarsening.c as f64 * self.run.dt_fine
        }
    }

    pub fn scenario_name(&self) -> String {
        if self.ensemble.scenario.is_empty() {
            format!("c{}-nxi{:.2}-np{}", self.coarsening.c, self.calibration.n_xi, self.ensemble.n_members)
        } else {
            self.ensemble.scenario.clone()
        }
    }
}

/// Overlay `src` onto `dst`, recording keys that `dst` does not know.
fn merge(dst: &mut toml::Table, src: toml::Table, problems: &mut Vec<String>) {
    for (section, value) in src {
        match (dst.get_mut(&section), value) {
            (Some(toml::Value::Table(known)), toml::Value::Table(entries)) => {
                for (key, v) in entries {
                    if known.contains_key(&key) {
                        known.insert(key, v);
                    } else {
                        problems.push(format!("unknown key {section}.{key}"));
                    }
                }
            }
            (Some(_), _) => problems.push(format!("{section} must be a [section] table")),
            (None, _) => problems.push(format!("unknown section [{section}]")),
        }
    }
}

/// Environment values are TOML literals where they parse as one, strings otherwise.
fn parse_env_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn empty_file_gives_desk_defaults() {
        let c = Config::from_sources("", false, no_env()).unwrap();
        assert_eq!(c, Config::desk());
        assert_eq!(c.fine_grid().coarsened(c.coarsening.c).unwrap().nx, 139);
        assert_eq!(c.dt_coarse(), 360.0);
        assert_eq!(c.scenario_name(), "c4-nxi0.90-np50");
    }

    #[test]
    fn full_scale_preset_then_file_values() {
        let c = Config::from_sources("[coarsening]\nc = 8\n", true, no_env()).unwrap();
        assert_eq!((c.grid.nx, c.grid.ny, c.run.dt_fine), (2224, 320, 22.5));
        assert_eq!(c.coarsening.c, 8);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config::desk();
        c.ensemble.master_seed = 99;
        c.calibration.n_xi = 0.99;
        let back = Config::from_sources(&c.to_toml(), false, no_env()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn environment_overrides_file() {
        let env = vec![
            ("SRSW_GRID__NX".to_string(), "560".to_string()),
            ("SRSW_OUTPUTS__DIRECTORY".to_string(), "/tmp/x".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ];
        let c = Config::from_sources("[grid]\nnx = 278\n", false, env).unwrap();
        assert_eq!(c.grid.nx, 560);
        assert_eq!(c.outputs.directory, "/tmp/x");
    }

    #[test]
    fn all_problems_are_reported() {
        let text = "[grid]\nnx = 556\nbogus = 1\n[coarsening]\nc = 5\n[calibration]\nn_xi = 1.5\n[extra]\na = 1\n";
        match Config::from_sources(text, false, no_env()) {
            Err(CliError::Validation(p)) => {
                assert!(p.iter().any(|m| m.contains("grid.bogus")), "{p:?}");
                assert!(p.iter().any(|m| m.contains("[extra]")), "{p:?}");
            }
            other => panic!("{other:?}"),
        }
        match Config::from_sources("[coarsening]\nc = 5\n[calibration]\nn_xi = 1.5\n", false, no_env()) {
            Err(CliError::Validation(p)) => {
                assert!(p.iter().any(|m| m.contains("must divide")), "{p:?}");
                assert!(p.iter().any(|m| m.contains("4 or 8")), "{p:?}");
                assert!(p.iter().any(|m| m.contains("n_xi")), "{p:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_types_and_env_names_are_rejected() {
        assert!(Config::from_sources("[grid]\nnx = \"wide\"\n", false, no_env()).is_err());
        let env = vec![("SRSW_NX".to_string(), "4".to_string())];
        assert!(Config::from_sources("", false, env).is_err());
    }
}
