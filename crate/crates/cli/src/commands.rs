//! The five pipeline stages. Each reads the previous stage's directory
//! under the output root and rewrites its own.

use std::path::{Path, PathBuf};

use srsw_core::calibrate::{calibrate_with, EofBasis};
use srsw_core::coarsen::CoarseningSpec;
use srsw_core::dynamics::{integrate, spinup, TimeScheme};
use srsw_core::ensemble::{run_ensemble_with, EnsembleSpec};
use srsw_core::uq::{
    bias, central_point, ensemble_mean_relative_l2, ensemble_spread, histogram_csv, rank_histogram, rmse, series_csv,
    summarize, time_average_table, SummaryRow,
};
use srsw_core::{snapshot, GridSpec, Kind, ModelState, StaggeredField};

use crate::config::Config;
use crate::error::CliError;
use crate::output::{
    create_dir, fresh_dir, member_dir, read_field, read_state, snapshot_name, write_pgm, write_state, write_text,
    Layout, Manifest, VARIABLES,
};

/// Forecast lengths of the rank histograms.
pub const HISTOGRAM_STEPS: [usize; 2] = [64, 128];

fn scheme(config: &Config) -> TimeScheme {
    TimeScheme::EulerLeapfrog { asselin: config.run.asselin }
}

fn grid_entry(g: &GridSpec) -> String {
    format!("{} {} {} {}", g.nx, g.ny, g.lx, g.ly)
}

fn parse_grid(m: &Manifest, key: &str) -> Result<GridSpec, CliError> {
    let raw = m.get(key).ok_or_else(|| CliError::Input(format!("manifest has no {key}")))?;
    let parts: Vec<&str> = raw.split_whitespace().collect();
    let bad = || CliError::Input(format!("malformed grid entry {raw:?}"));
    if parts.len() != 4 {
        return Err(bad());
    }
    let nx = parts[0].parse().map_err(|_| bad())?;
    let ny = parts[1].parse().map_err(|_| bad())?;
    let lx = parts[2].parse().map_err(|_| bad())?;
    let ly = parts[3].parse().map_err(|_| bad())?;
    Ok(GridSpec::new(lx, ly, nx, ny)?)
}

fn check_grid(m: &Manifest, expected: &GridSpec, stage: &str) -> Result<(), CliError> {
    let found = parse_grid(m, "grid")?;
    if &found != expected {
        return Err(CliError::Input(format!(
            "{stage} output is on a {}x{} grid but the configuration asks for {}x{}",
            found.nx, found.ny, expected.nx, expected.ny
        )));
    }
    Ok(())
}

fn write_config(dir: &Path, config: &Config) -> Result<(), CliError> {
    write_text(&dir.join("config.toml"), &config.to_toml())
}

pub fn cmd_spinup(config: &Config, layout: &Layout) -> Result<PathBuf, CliError> {
    let grid = config.fine_grid();
    let params = config.physical_params();
    let dir = layout.spinup();
    fresh_dir(&dir)?;
    let steps = config.run.burn_in_steps;
    let state = spinup(&grid, &params, config.run.amplitude, steps, config.run.dt_fine, scheme(config))?;
    let files = write_state(&dir, steps, &state)?;
    let mut m = Manifest::default();
    m.set("command", "spinup");
    m.set("config", "config.toml");
    m.set("grid", grid_entry(&grid));
    m.set("dt", config.run.dt_fine);
    m.set("steps", steps);
    m.set("amplitude", config.run.amplitude);
    m.add(steps, state.time, &files);
    m.write(&dir)?;
    write_config(&dir, config)?;
    if config.outputs.rasters {
        write_pgm(&dir.join("eta.pgm"), &state.eta)?;
    }
    Ok(dir)
}

fn load_spinup(layout: &Layout, grid: &GridSpec) -> Result<ModelState, CliError> {
    let dir = layout.spinup();
    let m = Manifest::read(&dir)?;
    check_grid(&m, grid, "spin-up")?;
    read_state(&dir, m.parsed("steps")?, grid)
}

pub fn cmd_truth(config: &Config, layout: &Layout) -> Result<PathBuf, CliError> {
    let grid = config.fine_grid();
    let params = config.physical_params();
    let initial = load_spinup(layout, &grid)?;
    let dir = layout.truth();
    fresh_dir(&dir)?;
    let (steps, stride) = (config.run.truth_steps, config.run.snapshot_stride);
    let mut m = Manifest::default();
    m.set("command", "truth");
    m.set("config", "config.toml");
    m.set("grid", grid_entry(&grid));
    m.set("dt", config.run.dt_fine);
    m.set("steps", steps);
    m.set("stride", stride);
    if steps > 0 {
        let mut files = Vec::new();
        integrate(initial, &params, steps, config.run.dt_fine, scheme(config), |step, s| {
            if step % stride == 0 || step == steps {
                let names = write_state(&dir, step, s).map_err(core_io)?;
                files.push((step, s.time, names));
            }
            Ok(())
        })?;
        for (step, time, names) in files {
            m.add(step, time, &names);
        }
    }
    m.write(&dir)?;
    write_config(&dir, config)?;
    Ok(dir)
}

/// Carry an output failure through a core callback.
fn core_io(e: CliError) -> srsw_core::Error {
    match e {
        CliError::Core(e) => e,
        other => srsw_core::Error::InvalidParameter(other.to_string()),
    }
}

fn coarsening(config: &Config) -> Result<CoarseningSpec, CliError> {
    Ok(CoarseningSpec::new(config.fine_grid(), config.coarsening.c, config.kernel())?)
}

pub fn cmd_calibrate(config: &Config, layout: &Layout) -> Result<PathBuf, CliError> {
    let grid = config.fine_grid();
    let truth_dir = layout.truth();
    let m = Manifest::read(&truth_dir)?;
    check_grid(&m, &grid, "truth")?;
    let steps = m.steps();
    if steps.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
        return Err(CliError::Input(
            "calibration needs truth snapshots at every step (run.snapshot_stride = 1)".into(),
        ));
    }
    let spec = coarsening(config)?;
    let load =
        |t: usize| snapshot::read_kind(truth_dir.join(snapshot_name(steps[t].0, "eta")), &grid, Kind::H).map(|r| r.0);
    let cal = calibrate_with(steps.len(), load, &spec, config.run.dt_fine, &config.calibration_options())?;

    let dir = layout.calibration();
    fresh_dir(&dir)?;
    write_basis(&dir, &cal.basis)?;
    let mut sigma = String::from("mode,sigma,explained\n");
    for (k, (s, e)) in cal.basis.sigma.iter().zip(&cal.basis.explained).enumerate() {
        sigma.push_str(&format!("{},{s},{e}\n", k + 1));
    }
    write_text(&dir.join("sigma.csv"), &sigma)?;
    let d = &cal.decorrelation;
    let mut profile = String::from("lag,mean_abs_corr\n");
    for (l, c) in d.lags.iter().zip(&d.mean_abs_corr) {
        profile.push_str(&format!("{l},{c}\n"));
    }
    write_text(&dir.join("decorrelation.csv"), &profile)?;
    let samples: Vec<String> = cal.sample_steps.iter().map(|t| steps[*t].0.to_string()).collect();
    write_text(
        &dir.join("report.txt"),
        &format!(
            "ell_decorr = {}\nalpha_decorr = {}\nsamples = {}\nsample_steps = {}\nn_retained = {}\nexplained = {}\n",
            d.ell_decorr,
            d.alpha,
            samples.len(),
            samples.join(" "),
            cal.basis.n_retained,
            cal.basis.explained.get(cal.basis.n_retained.saturating_sub(1)).copied().unwrap_or(0.0),
        ),
    )?;
    write_config(&dir, config)?;
    if config.outputs.rasters {
        for (k, psi) in cal.basis.psi.iter().enumerate() {
            write_pgm(&dir.join(format!("psi_{k:02}.pgm")), psi)?;
        }
    }
    Ok(dir)
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn write_basis(dir: &Path, basis: &EofBasis) -> Result<(), CliError> {
    let mut text = format!(
        "n_retained = {}\ndelta_span = {}\ngrid = {}\nsigma = {}\nexplained = {}\n",
        basis.n_retained,
        basis.delta_span,
        grid_entry(&basis.grid),
        join(&basis.sigma),
        join(&basis.explained)
    );
    text.push_str("snapshots\n");
    for k in 0..basis.n_retained {
        for (name, field) in [("xi_u", &basis.xi_u[k]), ("xi_v", &basis.xi_v[k]), ("psi", &basis.psi[k])] {
            let file = format!("{name}_{k:02}.field");
            snapshot::write(dir.join(&file), field, 0.0)?;
            text.push_str(&format!("{k} 0 {file}\n"));
        }
    }
    write_text(&dir.join("basis.txt"), &text)
}

pub fn read_basis(dir: &Path) -> Result<EofBasis, CliError> {
    let path = dir.join("basis.txt");
    if !path.exists() {
        return Err(CliError::Input(format!("{} not found; run calibrate first", path.display())));
    }
    let m = Manifest::parse(&crate::output::read_text(&path)?)?;
    let grid = parse_grid(&m, "grid")?;
    let floats = |key: &str| -> Result<Vec<f64>, CliError> {
        m.get(key)
            .unwrap_or("")
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| CliError::Input(format!("malformed {key} in {}", path.display()))))
            .collect()
    };
    let mut basis = EofBasis::empty(grid);
    basis.n_retained = m.parsed("n_retained")?;
    basis.delta_span = m.parsed("delta_span")?;
    basis.sigma = floats("sigma")?;
    basis.explained = floats("explained")?;
    for k in 0..basis.n_retained {
        basis.xi_u.push(read_field(&dir.join(format!("xi_u_{k:02}.field")), &grid, Kind::U)?.0);
        basis.xi_v.push(read_field(&dir.join(format!("xi_v_{k:02}.field")), &grid, Kind::V)?.0);
        basis.psi.push(read_field(&dir.join(format!("psi_{k:02}.field")), &grid, Kind::Z)?.0);
    }
    Ok(basis)
}

fn project_state(spec: &CoarseningSpec, s: &ModelState) -> Result<ModelState, CliError> {
    let mut out = ModelState::new(spec.project(&s.u)?, spec.project(&s.v)?, spec.project(&s.eta)?, s.time)?;
    out.apply_boundary_conditions();
    Ok(out)
}

pub fn cmd_ensemble(config: &Config, layout: &Layout) -> Result<PathBuf, CliError> {
    let fine = config.fine_grid();
    let params = config.physical_params();
    let spec = coarsening(config)?;
    let initial = project_state(&spec, &load_spinup(layout, &fine)?)?;
    let basis = read_basis(&layout.calibration())?;
    if basis.grid != spec.coarse {
        return Err(CliError::Input(format!(
            "basis grid {}x{} does not match the coarse grid {}x{}",
            basis.grid.nx, basis.grid.ny, spec.coarse.nx, spec.coarse.ny
        )));
    }
    let dt = config.dt_coarse();
    let ratio = dt / config.run.dt_fine;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
        return Err(CliError::Validation(vec![format!(
            "ensemble: dt_coarse = {dt} must be a whole multiple of dt_fine = {}",
            config.run.dt_fine
        )]));
    }
    let ratio = ratio.round() as usize;
    let run = EnsembleSpec {
        n_members: config.ensemble.n_members,
        n_steps: config.ensemble.n_steps,
        dt,
        master_seed: config.ensemble.master_seed,
        stride: config.ensemble.snapshot_stride,
    };

    let dir = layout.ensemble();
    fresh_dir(&dir)?;
    for m in 0..run.n_members {
        create_dir(&member_dir(&dir, m))?;
    }
    let recorded = run.recorded_steps();
    // Snapshots written before a failure stay on disk.
    let result = run_ensemble_with(&initial, &params, &basis, &run, |member, step, state| {
        if recorded.binary_search(&step).is_ok() {
            write_state(&member_dir(&dir, member), step, state).map_err(core_io)?;
        }
        Ok(())
    });

    // Truth on the coarse grid at the recorded steps it covers.
    let truth_dir = layout.truth();
    let truth_manifest = Manifest::read(&truth_dir)?;
    let truth_steps: Vec<usize> = truth_manifest.steps().iter().map(|s| s.0).collect();
    let coarse_truth = dir.join("truth");
    create_dir(&coarse_truth)?;
    let mut m = Manifest::default();
    m.set("command", "ensemble");
    m.set("config", "config.toml");
    m.set("scenario", config.scenario_name());
    m.set("grid", grid_entry(&spec.coarse));
    m.set("fine_grid", grid_entry(&fine));
    m.set("c", spec.c);
    m.set("dt", dt);
    m.set("fine_steps_per_step", ratio);
    m.set("n_members", run.n_members);
    m.set("n_steps", run.n_steps);
    m.set("stride", run.stride);
    m.set("master_seed", run.master_seed);
    m.set("n_retained", basis.n_retained);
    m.set("noise_keying", "chacha20 seed = (master_seed, member), stream = step");
    let mut truth_recorded = Vec::new();
    for &step in &recorded {
        let time = initial.time + step as f64 * dt;
        let fine_step = step * ratio;
        if truth_steps.binary_search(&fine_step).is_ok() {
            let state = project_state(&spec, &read_state(&truth_dir, fine_step, &fine)?)?;
            let names: Vec<String> =
                write_state(&coarse_truth, step, &state)?.into_iter().map(|n| format!("truth/{n}")).collect();
            truth_recorded.push(step);
            m.add(step, time, &names);
        }
        for member in 0..run.n_members {
            let names: Vec<String> =
                VARIABLES.iter().map(|(var, _)| format!("member_{member:04}/{}", snapshot_name(step, var))).collect();
            m.add(step, time, &names);
        }
    }
    m.set("truth_steps", join(&truth_recorded));
    m.write(&dir)?;
    write_config(&dir, config)?;
    result?;
    Ok(dir)
}

/// Central-point series and field access for one ensemble directory.
struct EnsembleData {
    dir: PathBuf,
    scenario: String,
    grid: GridSpec,
    n_members: usize,
    /// Steps with both members and truth, and their times.
    steps: Vec<(usize, f64)>,
}

impl EnsembleData {
    fn open(dir: &Path) -> Result<EnsembleData, CliError> {
        let m = Manifest::read(dir)?;
        let grid = parse_grid(&m, "grid")?;
        let n_members: usize = m.parsed("n_members")?;
        let truth: Vec<usize> =
            m.get("truth_steps").unwrap_or("").split_whitespace().filter_map(|s| s.parse().ok()).collect();
        let steps: Vec<(usize, f64)> = m.steps().into_iter().filter(|(s, _)| truth.contains(s)).collect();
        let mut missing = Vec::new();
        for (step, _) in &steps {
            for member in 0..n_members {
                for (var, _) in VARIABLES {
                    let p = member_dir(dir, member).join(snapshot_name(*step, var));
                    if !p.exists() {
                        missing.push(format!("member {member} step {step} {var}"));
                    }
                }
            }
        }
        if !missing.is_empty() {
            let shown = missing.iter().take(20).cloned().collect::<Vec<_>>().join(", ");
            return Err(CliError::Input(format!(
                "ensemble {} is incomplete ({} missing files): {shown}",
                dir.display(),
                missing.len()
            )));
        }
        if steps.is_empty() {
            return Err(CliError::Input(format!("ensemble {} has no steps covered by the truth", dir.display())));
        }
        let scenario = m.get("scenario").unwrap_or("unnamed").to_string();
        Ok(EnsembleData { dir: dir.to_path_buf(), scenario, grid, n_members, steps })
    }

    fn member_field(&self, member: usize, step: usize, var: &str, kind: Kind) -> Result<StaggeredField, CliError> {
        Ok(read_field(&member_dir(&self.dir, member).join(snapshot_name(step, var)), &self.grid, kind)?.0)
    }

    fn truth_field(&self, step: usize, var: &str, kind: Kind) -> Result<StaggeredField, CliError> {
        Ok(read_field(&self.dir.join("truth").join(snapshot_name(step, var)), &self.grid, kind)?.0)
    }

    /// `(members[m][t], truth[t])` at `point`.
    fn point_series(
        &self,
        var: &str,
        kind: Kind,
        point: (usize, usize),
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>), CliError> {
        let mut members = vec![Vec::with_capacity(self.steps.len()); self.n_members];
        let mut truth = Vec::with_capacity(self.steps.len());
        for (step, _) in &self.steps {
            truth.push(self.truth_field(*step, var, kind)?.get(point.0, point.1));
            for (m, series) in members.iter_mut().enumerate() {
                series.push(self.member_field(m, *step, var, kind)?.get(point.0, point.1));
            }
        }
        Ok((members, truth))
    }
}

fn spread_or_zero(members: &[Vec<f64>]) -> Result<Vec<f64>, CliError> {
    if members.len() < 2 {
        return Ok(vec![0.0; members.first().map_or(0, Vec::len)]);
    }
    Ok(ensemble_spread(members)?)
}

pub fn cmd_uq(config: &Config, layout: &Layout, extra: &[PathBuf]) -> Result<PathBuf, CliError> {
    let data = EnsembleData::open(&layout.ensemble())?;
    let dir = layout.uq();
    fresh_dir(&dir)?;
    let point = central_point(&data.grid);
    let times: Vec<f64> = data.steps.iter().map(|s| s.1).collect();
    let mut report = format!(
        "scenario = {}\ncentral_point = {} {}\nmembers = {}\nsteps = {}\n",
        data.scenario,
        point.0,
        point.1,
        data.n_members,
        data.steps.len()
    );
    let mut rows = Vec::new();
    for (var, kind) in VARIABLES {
        let (members, truth) = data.point_series(var, kind, point)?;
        write_text(&dir.join(format!("bias_{var}.csv")), &series_csv(&times, &bias(&members, &truth)?))?;
        write_text(&dir.join(format!("rmse_{var}.csv")), &series_csv(&times, &rmse(&members, &truth)?))?;
        write_text(&dir.join(format!("spread_{var}.csv")), &series_csv(&times, &spread_or_zero(&members)?))?;
        let mut rel = Vec::with_capacity(data.steps.len());
        for (step, _) in &data.steps {
            let truth_field = data.truth_field(*step, var, kind)?;
            let fields =
                (0..data.n_members).map(|m| data.member_field(m, *step, var, kind)).collect::<Result<Vec<_>, _>>()?;
            rel.push(ensemble_mean_relative_l2(&fields, &truth_field).unwrap_or(f64::NAN));
        }
        write_text(&dir.join(format!("relative_l2_{var}.csv")), &series_csv(&times, &rel))?;
        // Forecast steps only: at step 0 every member equals the truth.
        let forecast = data.steps.first().map_or(0, |(s, _)| usize::from(*s == 0));
        let f_members: Vec<Vec<f64>> = members.iter().map(|s| s[forecast..].to_vec()).collect();
        for n in HISTOGRAM_STEPS {
            if truth.len() - forecast >= n {
                let hist = rank_histogram(&f_members, &truth[forecast..], n, config.ensemble.master_seed)?;
                write_text(&dir.join(format!("rank_histogram_{var}_{n}.csv")), &histogram_csv(&hist))?;
            } else {
                report.push_str(&format!(
                    "rank_histogram_{var}_{n} = skipped, only {} forecast steps\n",
                    truth.len() - forecast
                ));
            }
        }
        rows.push(summarize(&data.scenario, var, &members, &truth)?);
    }
    for other in extra {
        let o = EnsembleData::open(other)?;
        let p = central_point(&o.grid);
        for (var, kind) in VARIABLES {
            let (members, truth) = o.point_series(var, kind, p)?;
            rows.push(summarize(&o.scenario, var, &members, &truth)?);
        }
    }
    write_text(&dir.join("summary.csv"), &time_average_table(&rows))?;
    write_text(&dir.join("report.txt"), &report)?;
    if config.outputs.rasters {
        write_final_rasters(&data, &dir)?;
    }
    Ok(dir)
}

fn write_final_rasters(data: &EnsembleData, dir: &Path) -> Result<(), CliError> {
    let (step, _) = *data.steps.last().expect("non-empty steps");
    let truth = data.truth_field(step, "eta", Kind::H)?;
    let mut mean = StaggeredField::zeros(Kind::H, data.grid);
    let mut square = StaggeredField::zeros(Kind::H, data.grid);
    for m in 0..data.n_members {
        let f = data.member_field(m, step, "eta", Kind::H)?;
        mean.axpy(1.0 / data.n_members as f64, &f)?;
        for (s, x) in square.values_mut().iter_mut().zip(f.values()) {
            *s += x * x / data.n_members as f64;
        }
    }
    let spread = StaggeredField::from_index_fn(Kind::H, data.grid, |i, j| {
        (square.get(i, j) - mean.get(i, j).powi(2)).max(0.0).sqrt()
    });
    write_pgm(&dir.join("truth_eta_final.pgm"), &truth)?;
    write_pgm(&dir.join("mean_eta_final.pgm"), &mean)?;
    write_pgm(&dir.join("spread_eta_final.pgm"), &spread)
}

/// Rows of every summary for callers that want the numbers rather than files.
pub fn summary_rows(dir: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let data = EnsembleData::open(dir)?;
    let p = central_point(&data.grid);
    VARIABLES
        .iter()
        .map(|(var, kind)| {
            let (members, truth) = data.point_series(var, *kind, p)?;
            Ok(summarize(&data.scenario, var, &members, &truth)?)
        })
        .collect()
}
