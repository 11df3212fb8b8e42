//! Noise calibration from fine-resolution data.
//!
//! The pipeline turns a fine elevation series into a set of divergence-free
//! noise modes on the coarse grid:
//!
//! 1. increments of the subgrid discrepancy `C(h) - h` ([`discrepancy_increments`])
//! 2. a decorrelation lag that spaces the calibration samples ([`decorrelation_time`])
//! 3. one stream-function solve per sample ([`transport`])
//! 4. EOFs of the resulting velocity perturbations ([`eof`])

pub mod eof;
pub mod transport;

use rayon::prelude::*;

use crate::coarsen::{mollify, subsample, CoarseningSpec};
use crate::error::{Error, Result};
use crate::grid::StaggeredField;

pub use eof::{eof_decomposition, EofBasis};
pub use transport::{advecting_field, perturbation_velocity, solve_calibration_equation, SolverOptions};

/// Increments of the discrepancy between a fine field and its mollification,
/// restricted to the coarse grid.
#[derive(Debug, Clone)]
pub struct IncrementSeries {
    pub deltas: Vec<StaggeredField>,
    /// Seconds between consecutive entries.
    pub dt_between: f64,
    /// Seconds spanned by each increment.
    pub delta_span: f64,
}

impl IncrementSeries {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

/// `[C(h_{t+d}) - h_{t+d}] - [C(h_t) - h_t]` for every valid start `t`,
/// subsampled onto the coarse grid.
pub fn discrepancy_increments(
    fine_series: &[StaggeredField],
    spec: &CoarseningSpec,
    delta_steps: usize,
    dt_fine: f64,
) -> Result<IncrementSeries> {
    if delta_steps == 0 {
        return Err(Error::InvalidParameter("increment span must be at least one step".into()));
    }
    if fine_series.len() < delta_steps + 1 {
        return Err(Error::TooFewSnapshots { needed: delta_steps + 1, got: fine_series.len() });
    }
    let residuals = fine_series
        .par_iter()
        .map(|h| {
            let smooth = mollify(h, &spec.kernel)?;
            subsample(&smooth.sub(h)?, spec.c)
        })
        .collect::<Result<Vec<_>>>()?;
    increments_from_residuals(&residuals, delta_steps, dt_fine)
}

fn increments_from_residuals(
    residuals: &[StaggeredField],
    delta_steps: usize,
    dt_fine: f64,
) -> Result<IncrementSeries> {
    if delta_steps == 0 {
        return Err(Error::InvalidParameter("increment span must be at least one step".into()));
    }
    if residuals.len() < delta_steps + 1 {
        return Err(Error::TooFewSnapshots { needed: delta_steps + 1, got: residuals.len() });
    }
    let deltas = (0..residuals.len() - delta_steps)
        .map(|t| residuals[t + delta_steps].sub(&residuals[t]))
        .collect::<Result<Vec<_>>>()?;
    Ok(IncrementSeries { deltas, dt_between: dt_fine, delta_span: delta_steps as f64 * dt_fine })
}

/// Pointwise lagged autocorrelation of the series.
///
/// The numerator is the lagged mean product minus the squared mean, the
/// denominator the sample variance. Points without variance get 0.
pub fn autocorrelation(series: &IncrementSeries, lag: usize) -> Result<StaggeredField> {
    let (corr, _) = autocorrelation_with_mask(series, lag)?;
    Ok(corr)
}

fn autocorrelation_with_mask(series: &IncrementSeries, lag: usize) -> Result<(StaggeredField, Vec<bool>)> {
    let n = series.len();
    if n < 2 || lag >= n - 1 {
        return Err(Error::LagOutOfRange { lag, len: n });
    }
    let first = &series.deltas[0];
    let size = first.values().len();
    let mut mean = vec![0.0; size];
    for d in &series.deltas {
        for (m, x) in mean.iter_mut().zip(d.values()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; size];
    for d in &series.deltas {
        for ((v, x), m) in var.iter_mut().zip(d.values()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    let mut lagged = vec![0.0; size];
    for t in 0..n - lag {
        let (a, b) = (series.deltas[t].values(), series.deltas[t + lag].values());
        for ((p, x), y) in lagged.iter_mut().zip(a).zip(b) {
            *p += x * y;
        }
    }
    let scale = (n - lag) as f64;
    let max_var = var.iter().cloned().fold(0.0, f64::max);
    let mut valid = vec![false; size];
    let corr = lagged
        .iter()
        .zip(&mean)
        .zip(&var)
        .enumerate()
        .map(|(k, ((p, m), v))| {
            if *v <= 1e-14 * max_var || *v == 0.0 {
                0.0
            } else {
                valid[k] = true;
                (p / scale - m * m) / v
            }
        })
        .collect();
    Ok((StaggeredField::from_values(first.kind(), *first.grid(), corr)?, valid))
}

/// Spatially averaged absolute autocorrelation per lag and the lag chosen from it.
#[derive(Debug, Clone, PartialEq)]
pub struct DecorrelationEstimate {
    pub lags: Vec<usize>,
    pub mean_abs_corr: Vec<f64>,
    pub ell_decorr: usize,
    pub alpha: f64,
}

/// Smallest lag `>= 1` at which the mean absolute autocorrelation falls to
/// `alpha`, scanning up to a quarter of the series length.
///
/// The profile is divided by its lag-0 value so it starts at exactly 1.
pub fn decorrelation_time(series: &IncrementSeries, alpha: f64) -> Result<DecorrelationEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("decorrelation threshold must be in (0, 1), got {alpha}")));
    }
    let n = series.len();
    if n < 8 {
        return Err(Error::TooFewSnapshots { needed: 8, got: n });
    }
    let max_lag = (n / 4).min(n - 2);
    let mut lags = Vec::new();
    let mut profile = Vec::new();
    let mut norm = 1.0;
    for lag in 0..=max_lag {
        let (corr, valid) = autocorrelation_with_mask(series, lag)?;
        let (sum, count) = corr
            .values()
            .iter()
            .zip(&valid)
            .filter(|(_, v)| **v)
            .fold((0.0, 0usize), |(s, c), (x, _)| (s + x.abs(), c + 1));
        if count == 0 {
            return Err(Error::DegenerateData("increment series has no variance anywhere".into()));
        }
        let mean = sum / count as f64;
        if lag == 0 {
            norm = mean;
        }
        lags.push(lag);
        profile.push(mean / norm);
        if lag >= 1 && mean / norm <= alpha {
            return Ok(DecorrelationEstimate { lags, mean_abs_corr: profile, ell_decorr: lag, alpha });
        }
    }
    Err(Error::DecorrelationNotReached { alpha, max_lag, profile })
}

/// Sample indices `n * ell` for `n = 1 ..= total / ell`.
pub fn calibration_grid(ell_decorr: usize, n_total_steps: usize) -> Vec<usize> {
    assert!(ell_decorr >= 1, "decorrelation lag must be positive");
    (1..=n_total_steps / ell_decorr).map(|n| n * ell_decorr).collect()
}

/// Settings for [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub delta_steps: usize,
    pub alpha_decorr: f64,
    pub n_xi: f64,
    pub solver: SolverOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions { delta_steps: 1, alpha_decorr: 0.2, n_xi: 0.9, solver: SolverOptions::default() }
    }
}

/// Outcome of a full calibration.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub decorrelation: DecorrelationEstimate,
    /// Indices into the fine series at which samples were taken.
    pub sample_steps: Vec<usize>,
    pub basis: EofBasis,
}

/// Run the whole calibration on a fine elevation series with uniform spacing `dt_fine`.
pub fn calibrate(
    fine_series: &[StaggeredField],
    spec: &CoarseningSpec,
    dt_fine: f64,
    options: &CalibrationOptions,
) -> Result<Calibration> {
    calibrate_with(fine_series.len(), |t| Ok(fine_series[t].clone()), spec, dt_fine, options)
}

/// [`calibrate`] for a series too large to hold at once: `load(t)` returns
/// snapshot `t` of `len`. Only coarse residuals are kept; the snapshots at
/// the sample times are loaded a second time.
pub fn calibrate_with<L>(
    len: usize,
    load: L,
    spec: &CoarseningSpec,
    dt_fine: f64,
    options: &CalibrationOptions,
) -> Result<Calibration>
where
    L: Fn(usize) -> Result<StaggeredField> + Sync,
{
    let residuals = (0..len)
        .into_par_iter()
        .map(|t| {
            let h = load(t)?;
            let smooth = mollify(&h, &spec.kernel)?;
            subsample(&smooth.sub(&h)?, spec.c)
        })
        .collect::<Result<Vec<_>>>()?;
    let increments = increments_from_residuals(&residuals, options.delta_steps, dt_fine)?;
    let decorrelation = decorrelation_time(&increments, options.alpha_decorr)?;
    let sample_steps = calibration_grid(decorrelation.ell_decorr, increments.len() - 1);
    if sample_steps.len() < 2 {
        return Err(Error::TooFewSnapshots { needed: 2, got: sample_steps.len() });
    }
    let solved = sample_steps
        .par_iter()
        .map(|&t| {
            let smooth = spec.project(&load(t)?)?;
            let q = advecting_field(&smooth);
            let psi = solve_calibration_equation(&increments.deltas[t], &q, &options.solver)?;
            let (u, v) = perturbation_velocity(&psi);
            Ok((u, v, psi))
        })
        .collect::<Result<Vec<_>>>()?;
    let (velocities, psis): (Vec<_>, Vec<_>) = solved.into_iter().map(|(u, v, p)| ((u, v), p)).unzip();
    let basis = eof_decomposition(&velocities, Some(&psis), increments.delta_span, options.n_xi)?;
    Ok(Calibration { decorrelation, sample_steps, basis })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsen::kernel_c4;
    use crate::grid::{GridSpec, Kind};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn series_from(fields: Vec<StaggeredField>) -> IncrementSeries {
        IncrementSeries { deltas: fields, dt_between: 1.0, delta_span: 1.0 }
    }

    fn coarse_grid() -> GridSpec {
        GridSpec::new(12.0, 8.0, 12, 8).unwrap()
    }

    fn noise_series(n: usize, seed: u64, rho: f64) -> IncrementSeries {
        let g = coarse_grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..g.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let innov = (1.0 - rho * rho).sqrt();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(StaggeredField::from_values(Kind::H, g, x.clone()).unwrap());
            for v in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = rho * *v + innov * z;
            }
        }
        series_from(out)
    }

    #[test]
    fn constant_series_has_zero_increments() {
        let g = GridSpec::new(32.0, 16.0, 32, 16).unwrap();
        let spec = CoarseningSpec::new(g, 4, kernel_c4()).unwrap();
        let h = StaggeredField::from_index_fn(Kind::H, g, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let s = discrepancy_increments(&vec![h; 4], &spec, 1, 90.0).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.delta_span, 90.0);
        assert!(s.deltas.iter().all(|d| d.max_abs() == 0.0));
        assert_eq!((s.deltas[0].grid().nx, s.deltas[0].grid().ny), (8, 4));
    }

    #[test]
    fn two_snapshot_increment_by_hand() {
        let g = GridSpec::new(32.0, 16.0, 32, 16).unwrap();
        let spec = CoarseningSpec::new(g, 4, kernel_c4()).unwrap();
        let a = StaggeredField::from_index_fn(Kind::H, g, |i, j| (i as f64 * 0.3).sin() + j as f64);
        let b = StaggeredField::from_index_fn(Kind::H, g, |i, j| (i as f64 * 0.7).cos() * j as f64);
        let s = discrepancy_increments(&[a.clone(), b.clone()], &spec, 1, 2.0).unwrap();
        let resid = |h: &StaggeredField| mollify(h, &kernel_c4()).unwrap().sub(h).unwrap();
        let (ra, rb) = (resid(&a), resid(&b));
        for j in 0..4 {
            for i in 0..8 {
                let expected = rb.get(4 * i, 4 * j) - ra.get(4 * i, 4 * j);
                assert!((s.deltas[0].get(i, j) - expected).abs() < 1e-12);
            }
        }
        assert!(matches!(
            discrepancy_increments(&[a], &spec, 1, 2.0),
            Err(Error::TooFewSnapshots { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn lag_zero_is_one_up_to_bias() {
        let s = noise_series(200, 1, 0.0);
        let c = autocorrelation(&s, 0).unwrap();
        // lag-0 numerator uses 1/N, denominator 1/(N-1)
        for v in c.values() {
            assert!((v - 1.0).abs() < 0.02, "{v}");
        }
        assert!(autocorrelation(&s, 199).is_err());
    }

    #[test]
    fn white_noise_lag_one_is_small() {
        let n = 2000;
        let s = noise_series(n, 2, 0.0);
        let c = autocorrelation(&s, 1).unwrap();
        let mean_abs = c.values().iter().map(|v| v.abs()).sum::<f64>() / c.values().len() as f64;
        assert!(mean_abs < 3.0 / (n as f64).sqrt(), "{mean_abs}");
        let est = decorrelation_time(&s, 0.2).unwrap();
        assert_eq!(est.ell_decorr, 1);
        assert_eq!(est.mean_abs_corr[0], 1.0);
    }

    #[test]
    fn alternating_series_anticorrelates() {
        let g = coarse_grid();
        let fields =
            (0..100).map(|t| StaggeredField::constant(Kind::H, g, if t % 2 == 0 { 1.0 } else { -1.0 })).collect();
        let c = autocorrelation(&series_from(fields), 1).unwrap();
        assert!(c.values().iter().all(|v| (v + 1.0).abs() < 0.03));
    }

    #[test]
    fn zero_variance_points_are_excluded() {
        let g = coarse_grid();
        let mut s = noise_series(100, 3, 0.0);
        for d in s.deltas.iter_mut() {
            d.fill_row(0, 2.0);
        }
        let c = autocorrelation(&s, 1).unwrap();
        assert!(c.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(c.grid().ny, g.ny);
        let flat = series_from(vec![StaggeredField::zeros(Kind::H, g); 20]);
        assert!(matches!(decorrelation_time(&flat, 0.2), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn ar1_decorrelation_lag() {
        let rho: f64 = 0.9;
        let expected = (0.2f64.ln() / rho.ln()).ceil() as usize;
        assert_eq!(expected, 16);
        let est = decorrelation_time(&noise_series(4000, 4, rho), 0.2).unwrap();
        assert!((est.ell_decorr as i64 - expected as i64).abs() <= 1, "{}", est.ell_decorr);
        let est = decorrelation_time(&noise_series(400, 5, rho), 0.999).unwrap();
        assert_eq!(est.ell_decorr, 1);
    }

    #[test]
    fn unreachable_threshold_reports_profile() {
        let g = coarse_grid();
        let fields = (0..40).map(|t| StaggeredField::from_index_fn(Kind::H, g, |i, _| (t + i) as f64)).collect();
        match decorrelation_time(&series_from(fields), 0.01) {
            Err(Error::DecorrelationNotReached { profile, max_lag, .. }) => {
                assert_eq!(max_lag, 10);
                assert_eq!(profile.len(), 11);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(decorrelation_time(&noise_series(40, 1, 0.0), 1.0).is_err());
    }

    #[test]
    fn calibration_grid_examples() {
        assert_eq!(calibration_grid(1, 5), vec![1, 2, 3, 4, 5]);
        assert_eq!(calibration_grid(16, 100), vec![16, 32, 48, 64, 80, 96]);
        assert!(calibration_grid(200, 100).is_empty());
    }
}
