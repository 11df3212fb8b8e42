//! Ensemble verification: bias, RMSE, relative L2 error, spread and rank histograms.
//!
//! Point series are laid out as `members[m][t]` with the truth as `truth[t]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, StaggeredField};

fn check_shapes(members: &[Vec<f64>], truth: &[f64]) -> Result<()> {
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    for (m, series) in members.iter().enumerate() {
        if series.len() != truth.len() {
            return Err(Error::FieldMismatch(format!(
                "member {m} has {} values, truth has {}",
                series.len(),
                truth.len()
            )));
        }
    }
    Ok(())
}

fn ensemble_mean(members: &[Vec<f64>], t: usize) -> f64 {
    members.iter().map(|s| s[t]).sum::<f64>() / members.len() as f64
}

/// Ensemble mean minus truth, per time.
pub fn bias(members: &[Vec<f64>], truth: &[f64]) -> Result<Vec<f64>> {
    check_shapes(members, truth)?;
    Ok(truth.iter().enumerate().map(|(t, x)| ensemble_mean(members, t) - x).collect())
}

/// Root mean square member error against the truth, per time.
pub fn rmse(members: &[Vec<f64>], truth: &[f64]) -> Result<Vec<f64>> {
    check_shapes(members, truth)?;
    let n = members.len() as f64;
    Ok(truth
        .iter()
        .enumerate()
        .map(|(t, x)| (members.iter().map(|s| (s[t] - x).powi(2)).sum::<f64>() / n).sqrt())
        .collect())
}

/// Sample standard deviation across members (divisor `N - 1`), per time.
pub fn ensemble_spread(members: &[Vec<f64>]) -> Result<Vec<f64>> {
    if members.len() < 2 {
        return Err(Error::InvalidParameter(format!("spread needs at least 2 members, got {}", members.len())));
    }
    let len = members[0].len();
    if members.iter().any(|s| s.len() != len) {
        return Err(Error::FieldMismatch("members have different lengths".into()));
    }
    let n = members.len() as f64;
    Ok((0..len)
        .map(|t| {
            let mean = ensemble_mean(members, t);
            (members.iter().map(|s| (s[t] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect())
}

/// `|member - truth| / |truth|` over all grid points.
pub fn relative_l2(member: &StaggeredField, truth: &StaggeredField) -> Result<f64> {
    member.check_compatible(truth)?;
    let denom: f64 = truth.values().iter().map(|x| x * x).sum();
    if denom == 0.0 {
        return Err(Error::RelativeErrorUndefined);
    }
    let num: f64 = member.values().iter().zip(truth.values()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((num / denom).sqrt())
}

/// Mean over members of [`relative_l2`].
pub fn ensemble_mean_relative_l2(members: &[StaggeredField], truth: &StaggeredField) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut total = 0.0;
    for m in members {
        total += relative_l2(m, truth)?;
    }
    Ok(total / members.len() as f64)
}

/// Counts of the truth's rank among the members.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankHistogram {
    pub counts: Vec<usize>,
    pub n_samples: usize,
}

impl RankHistogram {
    pub fn fractions(&self) -> Vec<f64> {
        self.counts.iter().map(|c| *c as f64 / self.n_samples.max(1) as f64).collect()
    }

    /// Pearson statistic against the uniform histogram.
    pub fn chi_square(&self) -> f64 {
        let expected = self.n_samples as f64 / self.counts.len() as f64;
        self.counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum()
    }
}

/// Rank of the truth at each of the first `n_steps` times: the number of
/// members strictly below it, with ties spread uniformly over the tied
/// positions using a generator seeded by `tie_seed`.
pub fn rank_histogram(members: &[Vec<f64>], truth: &[f64], n_steps: usize, tie_seed: u64) -> Result<RankHistogram> {
    check_shapes(members, truth)?;
    if n_steps == 0 || n_steps > truth.len() {
        return Err(Error::InvalidParameter(format!("cannot rank {n_steps} steps of a {}-step series", truth.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tie_seed);
    let mut counts = vec![0; members.len() + 1];
    for (t, x) in truth.iter().enumerate().take(n_steps) {
        let below = members.iter().filter(|s| s[t] < *x).count();
        let ties = members.iter().filter(|s| s[t] == *x).count();
        let rank = if ties == 0 { below } else { below + rng.random_range(0..=ties) };
        counts[rank] += 1;
    }
    Ok(RankHistogram { counts, n_samples: n_steps })
}

/// Designated central point of a grid.
pub fn central_point(grid: &GridSpec) -> (usize, usize) {
    (grid.nx / 2, grid.ny / 2)
}

pub fn time_mean(series: &[f64]) -> f64 {
    if series.is_empty() {
        return f64::NAN;
    }
    series.iter().sum::<f64>() / series.len() as f64
}

/// One line of the time-averaged summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub variable: String,
    pub mean_bias: f64,
    pub mean_rmse: f64,
}

/// Time means of bias and RMSE for one scenario and variable.
pub fn summarize(scenario: &str, variable: &str, members: &[Vec<f64>], truth: &[f64]) -> Result<SummaryRow> {
    Ok(SummaryRow {
        scenario: scenario.to_string(),
        variable: variable.to_string(),
        mean_bias: time_mean(&bias(members, truth)?),
        mean_rmse: time_mean(&rmse(members, truth)?),
    })
}

/// CSV with one row per scenario and variable.
pub fn time_average_table(rows: &[SummaryRow]) -> String {
    let mut out = String::from("scenario,variable,mean_bias,mean_rmse\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.scenario, r.variable, r.mean_bias, r.mean_rmse));
    }
    out
}

/// `time,value` CSV.
pub fn series_csv(times: &[f64], values: &[f64]) -> String {
    let mut out = String::from("time,value\n");
    for (t, v) in times.iter().zip(values) {
        out.push_str(&format!("{t},{v}\n"));
    }
    out
}

/// `rank,count` CSV.
pub fn histogram_csv(hist: &RankHistogram) -> String {
    let mut out = String::from("rank,count\n");
    for (r, c) in hist.counts.iter().enumerate() {
        out.push_str(&format!("{r},{c}\n"));
    }
    out
}
