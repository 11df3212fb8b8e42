//! Empirical orthogonal functions of the calibrated velocity perturbations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Kind, StaggeredField};

/// Retained noise modes on the coarse grid.
#[derive(Debug, Clone)]
pub struct EofBasis {
    /// Stream function of each retained mode (vorticity points).
    pub psi: Vec<StaggeredField>,
    /// Zonal component of each retained mode.
    pub xi_u: Vec<StaggeredField>,
    /// Meridional component of each retained mode.
    pub xi_v: Vec<StaggeredField>,
    /// All singular values, descending.
    pub sigma: Vec<f64>,
    /// Cumulative variance fraction after each mode.
    pub explained: Vec<f64>,
    pub n_retained: usize,
    /// Seconds spanned by the increments behind the samples.
    pub delta_span: f64,
    pub grid: GridSpec,
}

impl EofBasis {
    /// Basis with no modes; the stochastic model then reduces to the deterministic one.
    pub fn empty(grid: GridSpec) -> Self {
        EofBasis {
            psi: Vec::new(),
            xi_u: Vec::new(),
            xi_v: Vec::new(),
            sigma: Vec::new(),
            explained: Vec::new(),
            n_retained: 0,
            delta_span: 1.0,
            grid,
        }
    }

    /// Multiply every mode by `kappa`.
    pub fn scaled(&self, kappa: f64) -> EofBasis {
        let scale = |fs: &[StaggeredField]| fs.iter().map(|f| f.scaled(kappa)).collect();
        EofBasis {
            psi: scale(&self.psi),
            xi_u: scale(&self.xi_u),
            xi_v: scale(&self.xi_v),
            sigma: self.sigma.iter().map(|s| s * kappa.abs()).collect(),
            ..self.clone()
        }
    }
}

/// Principal components of the scaled, centred samples `(Psi_i - mean) / sqrt(delta_span)`.
///
/// `samples` are `(u, v)` velocity pairs; `psi_samples`, if given, are the
/// stream functions that produced them and get the same temporal
/// coefficients, so each stored stream function generates its mode.
/// Mode `j` is `sigma_j / sqrt(n)` times the `j`-th right singular vector,
/// sign-fixed so that its largest-magnitude entry is positive.
pub fn eof_decomposition(
    samples: &[(StaggeredField, StaggeredField)],
    psi_samples: Option<&[StaggeredField]>,
    delta_span: f64,
    n_xi: f64,
) -> Result<EofBasis> {
    if !(n_xi > 0.0 && n_xi <= 1.0) {
        return Err(Error::InvalidParameter(format!("variance fraction must be in (0, 1], got {n_xi}")));
    }
    if !(delta_span > 0.0) {
        return Err(Error::InvalidParameter(format!("increment span must be positive, got {delta_span}")));
    }
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSnapshots { needed: 2, got: n });
    }
    let grid = *samples[0].0.grid();
    for (u, v) in samples {
        if u.kind() != Kind::U || v.kind() != Kind::V {
            return Err(Error::FieldMismatch("samples must be (U, V) pairs".into()));
        }
        u.check_compatible(&samples[0].0)?;
        v.check_compatible(&samples[0].1)?;
    }
    if let Some(psis) = psi_samples {
        if psis.len() != n {
            return Err(Error::FieldMismatch(format!("{} stream functions for {n} samples", psis.len())));
        }
    }
    let m = grid.len();
    let rows: Vec<Vec<f64>> = samples.iter().map(|(u, v)| [u.values(), v.values()].concat()).collect();
    let data = centred_scaled(&rows, delta_span);
    let frob: f64 = data.iter().map(|x| x * x).sum();
    if !(frob > 0.0) {
        return Err(Error::DegenerateData("all samples are identical".into()));
    }

    // Decompose the tall transpose D^T = V S U^T: the wide, rank-deficient
    // case returns inaccurate factors in nalgebra 0.35.
    let svd = data.transpose().svd(true, true);
    let modes = svd.u.as_ref().expect("left singular vectors requested");
    let u_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let recomposed = modes * DMatrix::from_diagonal(&svd.singular_values) * u_t;
    let error = (recomposed - data.transpose()).norm() / frob.sqrt();
    if !(error <= 1e-8) {
        return Err(Error::DegenerateData(format!(
            "singular value decomposition inaccurate (relative error {error:e})"
        )));
    }
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();

    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let mut running = 0.0;
    let explained: Vec<f64> = sigma
        .iter()
        .map(|s| {
            running += s * s;
            running / total
        })
        .collect();
    let n_retained = explained.iter().position(|&e| e >= n_xi - 1e-12).map_or(explained.len(), |k| k + 1);

    let psi_data = psi_samples.map(|psis| {
        let rows: Vec<Vec<f64>> = psis.iter().map(|p| p.values().to_vec()).collect();
        centred_scaled(&rows, delta_span)
    });
    let root_n = (n as f64).sqrt();
    let mut basis = EofBasis {
        psi: Vec::new(),
        xi_u: Vec::new(),
        xi_v: Vec::new(),
        sigma: sigma.clone(),
        explained,
        n_retained,
        delta_span,
        grid,
    };
    for (rank, &k) in order.iter().take(n_retained).enumerate() {
        let mut mode: Vec<f64> = modes.column(k).iter().map(|x| x * sigma[rank] / root_n).collect();
        let pivot = mode.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        mode.iter_mut().for_each(|x| *x *= sign);
        basis.xi_u.push(StaggeredField::from_values(Kind::U, grid, mode[..m].to_vec())?);
        basis.xi_v.push(StaggeredField::from_values(Kind::V, grid, mode[m..].to_vec())?);
        if let Some(pd) = &psi_data {
            // zeta_j = D^T U_j / sqrt(n), applied to the stream-function data
            let coeffs = u_t.row(k).transpose() * (sign / root_n);
            let psi = pd.tr_mul(&coeffs);
            basis.psi.push(StaggeredField::from_values(Kind::Z, grid, psi.iter().copied().collect())?);
        }
    }
    Ok(basis)
}

fn centred_scaled(rows: &[Vec<f64>], delta_span: f64) -> DMatrix<f64> {
    let n = rows.len();
    let width = rows[0].len();
    let mut mean = vec![0.0; width];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n as f64);
    }
    let scale = 1.0 / delta_span.sqrt();
    DMatrix::from_fn(n, width, |i, c| (rows[i][c] - mean[c]) * scale)
}

/// Largest principal angle between two subspaces given by spanning vectors.
pub fn principal_angle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let qa = orthonormal(a);
    let qb = orthonormal(b);
    // sine form: accurate for small angles, unlike acos of the cosines
    let residual = &qb - &qa * (qa.transpose() * &qb);
    let largest = residual.singular_values().iter().cloned().fold(0.0, f64::max);
    largest.clamp(0.0, 1.0).asin()
}

fn orthonormal(vectors: &[Vec<f64>]) -> DMatrix<f64> {
    let m = DMatrix::from_fn(vectors[0].len(), vectors.len(), |r, c| vectors[c][r]);
    m.qr().q()
}
