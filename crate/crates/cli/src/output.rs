//! Output directory layout, manifests, the advisory lock and raster images.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use srsw_core::{snapshot, GridSpec, Kind, ModelState, StaggeredField};

use crate::error::CliError;

pub const VARIABLES: [(&str, Kind); 3] = [("eta", Kind::H), ("u", Kind::U), ("v", Kind::V)];

/// Where every command reads and writes.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    pub scenario: String,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>, scenario: impl Into<String>) -> Self {
        Layout { root: root.into(), scenario: scenario.into() }
    }

    pub fn spinup(&self) -> PathBuf {
        self.root.join("spinup")
    }

    pub fn truth(&self) -> PathBuf {
        self.root.join("truth")
    }

    pub fn scenario_dir(&self) -> PathBuf {
        self.root.join("scenarios").join(&self.scenario)
    }

    pub fn calibration(&self) -> PathBuf {
        self.scenario_dir().join("calibration")
    }

    pub fn ensemble(&self) -> PathBuf {
        self.scenario_dir().join("ensemble")
    }

    pub fn uq(&self) -> PathBuf {
        self.scenario_dir().join("uq")
    }
}

pub fn snapshot_name(step: usize, var: &str) -> String {
    format!("{step:06}.{var}.field")
}

pub fn member_dir(ensemble: &Path, member: usize) -> PathBuf {
    ensemble.join(format!("member_{member:04}"))
}

/// Advisory lock held for the lifetime of a command.
#[derive(Debug)]
pub struct Lock {
    path: PathBuf,
}

impl Lock {
    pub fn acquire(root: &Path) -> Result<Lock, CliError> {
        create_dir(root)?;
        let path = root.join(".srsw-calib.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(root.to_path_buf())),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Empty a command's output directory so reruns leave no stale files.
pub fn fresh_dir(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| CliError::io(path, e))?;
    }
    create_dir(path)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

/// Write `u`, `v` and `eta` as `<stem>.<var>.field`; returns the file names.
pub fn write_state(dir: &Path, step: usize, state: &ModelState) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    for (var, field) in [("eta", &state.eta), ("u", &state.u), ("v", &state.v)] {
        let name = snapshot_name(step, var);
        snapshot::write(dir.join(&name), field, state.time)?;
        names.push(name);
    }
    Ok(names)
}

pub fn read_field(path: &Path, grid: &GridSpec, kind: Kind) -> Result<(StaggeredField, f64), CliError> {
    if !path.exists() {
        return Err(CliError::Input(format!("missing snapshot {}", path.display())));
    }
    Ok(snapshot::read_kind(path, grid, kind)?)
}

pub fn read_state(dir: &Path, step: usize, grid: &GridSpec) -> Result<ModelState, CliError> {
    let (eta, time) = read_field(&dir.join(snapshot_name(step, "eta")), grid, Kind::H)?;
    let (u, _) = read_field(&dir.join(snapshot_name(step, "u")), grid, Kind::U)?;
    let (v, _) = read_field(&dir.join(snapshot_name(step, "v")), grid, Kind::V)?;
    Ok(ModelState::new(u, v, eta, time)?)
}

/// Plain-text run index: `key = value` parameters, then one
/// `step time filename` line per snapshot file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub params: BTreeMap<String, String>,
    pub snapshots: Vec<(usize, f64, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.params.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Input(format!("manifest entry {key:?} missing or malformed")))
    }

    pub fn add(&mut self, step: usize, time: f64, files: &[String]) {
        for f in files {
            self.snapshots.push((step, time, f.clone()));
        }
    }

    /// Distinct snapshot steps with their times, in order.
    pub fn steps(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for (s, t, _) in &self.snapshots {
            if out.last().map(|(last, _)| last) != Some(s) {
                out.push((*s, *t));
            }
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.params {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str("snapshots\n");
        for (s, t, f) in &self.snapshots {
            out.push_str(&format!("{s} {t} {f}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Manifest, CliError> {
        let mut m = Manifest::default();
        let mut in_snapshots = false;
        for (n, line) in text.lines().enumerate() {
            let bad = || CliError::Input(format!("manifest line {}: {line:?}", n + 1));
            if line.trim().is_empty() {
                continue;
            }
            if line == "snapshots" {
                in_snapshots = true;
            } else if in_snapshots {
                let mut parts = line.split_whitespace();
                let step = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                let time = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                let file = parts.next().ok_or_else(bad)?;
                m.snapshots.push((step, time, file.to_string()));
            } else {
                let (k, v) = line.split_once(" = ").ok_or_else(bad)?;
                m.params.insert(k.to_string(), v.to_string());
            }
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_text(&dir.join("manifest.txt"), &self.render())
    }

    pub fn read(dir: &Path) -> Result<Manifest, CliError> {
        let path = dir.join("manifest.txt");
        if !path.exists() {
            return Err(CliError::Input(format!("{} not found; run the previous stage first", path.display())));
        }
        Manifest::parse(&read_text(&path)?)
    }
}

/// 8-bit binary PGM with north at the top, plus a `<file>.txt` sidecar
/// recording the value range mapped onto black and white.
pub fn write_pgm(path: &Path, field: &StaggeredField) -> Result<(), CliError> {
    let g = field.grid();
    let (lo, hi) =
        field.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut bytes = format!("P5\n{} {}\n255\n", g.nx, g.ny).into_bytes();
    for j in (0..g.ny).rev() {
        for &v in field.row(j) {
            let level = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() } else { 128.0 };
            bytes.push(level.clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".txt");
    write_text(Path::new(&sidecar), &format!("min = {lo}\nmax = {hi}\n"))
}
