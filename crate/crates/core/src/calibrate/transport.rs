//! Stream functions from the transport equation `q . grad(psi) = f`.
//!
//! The equation is discretised with first-order upwind finite volumes on
//! the elevation cells. Cell faces sit on the velocity points, so the
//! advecting field lives exactly where the face fluxes are needed. Each
//! cell contributes
//!
//! ```text
//! sum over inflow faces F of |q . n_F| |F| (psi_cell - psi_upwind) / area = f_cell
//! ```
//!
//! with `psi = 0` outside the north and south walls. When the walls carry
//! no inflow the system is singular (constants and closed streamlines), so
//! it is solved in the least-squares sense by CGLS started from zero, which
//! returns the minimum-norm solution.

use crate::error::{Error, Result};
use crate::grid::{interpolate, wall_rows, GridSpec, Kind, StaggeredField};

/// Advecting field `-perp grad C = (C_y, -C_x)` for a mollified elevation `C`.
///
/// `C` is averaged onto the vorticity points and differenced across each
/// face, which makes `q` discretely divergence-free. `q_v` is zero on the
/// wall rows.
pub fn advecting_field(c_h: &StaggeredField) -> (StaggeredField, StaggeredField) {
    let grid = *c_h.grid();
    let (dx, dy) = (grid.dx(), grid.dy());
    let cz = interpolate(c_h, Kind::Z);
    let qu = StaggeredField::from_index_fn(Kind::U, grid, |i, j| {
        let (i, j) = (i as isize, j as isize);
        (cz.at(i, j + 1) - cz.at(i, j)) / dy
    });
    let mut qv = StaggeredField::from_index_fn(Kind::V, grid, |i, j| {
        let (i, j) = (i as isize, j as isize);
        -(cz.at(i + 1, j) - cz.at(i, j)) / dx
    });
    for j in wall_rows(grid.ny) {
        qv.fill_row(j, 0.0);
    }
    (qu, qv)
}

/// Perpendicular gradient of a vorticity-point stream function:
/// `u = -psi_y` on U points and `v = psi_x` on V points.
///
/// The discrete divergence of the result vanishes identically.
pub fn perturbation_velocity(psi: &StaggeredField) -> (StaggeredField, StaggeredField) {
    let grid = *psi.grid();
    let (dx, dy) = (grid.dx(), grid.dy());
    let u = StaggeredField::from_index_fn(Kind::U, grid, |i, j| {
        let (i, j) = (i as isize, j as isize);
        -(psi.at(i, j + 1) - psi.at(i, j)) / dy
    });
    let v = StaggeredField::from_index_fn(Kind::V, grid, |i, j| {
        let (i, j) = (i as isize, j as isize);
        (psi.at(i + 1, j) - psi.at(i, j)) / dx
    });
    (u, v)
}

/// Discrete divergence `(u_{i+1} - u_i)/dx + (v_{j+1} - v_j)/dy` on the physical H rows.
pub fn divergence(u: &StaggeredField, v: &StaggeredField) -> StaggeredField {
    let grid = *u.grid();
    let (dx, dy) = (grid.dx(), grid.dy());
    StaggeredField::from_index_fn(Kind::H, grid, |i, j| {
        if j == 0 || j == grid.ny - 1 {
            return 0.0;
        }
        let (i, j) = (i as isize, j as isize);
        (u.at(i + 1, j) - u.at(i, j)) / dx + (v.at(i, j + 1) - v.at(i, j)) / dy
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative tolerance on the normal-equation residual `|A^T r| / |A^T b|`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-10, max_iterations: 200_000 }
    }
}

/// Compressed sparse rows.
#[derive(Debug, Clone)]
struct Csr {
    n: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_start[r]..self.row_start[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *out = acc;
        }
    }

    fn mul_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, xr) in x.iter().enumerate() {
            for k in self.row_start[r]..self.row_start[r + 1] {
                y[self.cols[k]] += self.vals[k] * xr;
            }
        }
    }
}

/// Upwind transport operator on the physical cells, rows `1..=ny-2`.
#[derive(Debug, Clone)]
pub struct UpwindOperator {
    grid: GridSpec,
    matrix: Csr,
    /// Cells whose row was replaced by the small pinning diagonal.
    degenerate: Vec<usize>,
}

impl UpwindOperator {
    pub fn new(qu: &StaggeredField, qv: &StaggeredField) -> Result<Self> {
        if qu.kind() != Kind::U || qv.kind() != Kind::V {
            return Err(Error::FieldMismatch("advecting field must be a (U, V) pair".into()));
        }
        qu.check_compatible(&StaggeredField::zeros(Kind::U, *qv.grid()))?;
        if !qu.is_finite() || !qv.is_finite() {
            return Err(Error::InvalidParameter("advecting field is not finite".into()));
        }
        let grid = *qu.grid();
        let (nx, ny) = (grid.nx, grid.ny);
        let (dx, dy) = (grid.dx(), grid.dy());
        let q_max = qu.max_abs().max(qv.max_abs());
        let cells = nx * (ny - 2);
        let mut row_start = Vec::with_capacity(cells + 1);
        let mut cols = Vec::with_capacity(5 * cells);
        let mut vals = Vec::with_capacity(5 * cells);
        let mut degenerate = Vec::new();
        let mut pinned = Vec::new();
        row_start.push(0);
        for j in 1..ny - 1 {
            for i in 0..nx {
                let e = cell_index(nx, i, j);
                let ip = (i + 1) % nx;
                let im = (i + nx - 1) % nx;
                // (outward normal velocity, neighbour) per face; None = exterior
                let faces = [
                    (qu.get(ip, j) / dx, Some(cell_index(nx, ip, j))),
                    (-qu.get(i, j) / dx, Some(cell_index(nx, im, j))),
                    (qv.get(i, j + 1) / dy, (j + 1 < ny - 1).then(|| cell_index(nx, i, j + 1))),
                    (-qv.get(i, j) / dy, (j > 1).then(|| cell_index(nx, i, j - 1))),
                ];
                let quiet = [qu.get(ip, j), qu.get(i, j), qv.get(i, j + 1), qv.get(i, j)]
                    .iter()
                    .all(|q| q.abs() <= 1e-12 * q_max);
                let mut diag = 0.0;
                let mut entries: Vec<(usize, f64)> = Vec::with_capacity(5);
                for (flux, nb) in faces {
                    if flux < 0.0 {
                        diag += -flux;
                        if let Some(nb) = nb {
                            entries.push((nb, flux));
                        }
                    }
                }
                if quiet || diag == 0.0 {
                    degenerate.push(e);
                    pinned.push(cols.len());
                    cols.push(e);
                    vals.push(0.0);
                } else {
                    entries.push((e, diag));
                    entries.sort_by_key(|(c, _)| *c);
                    // merge duplicates (possible when nx is tiny)
                    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
                    for (c, v) in entries {
                        match merged.last_mut() {
                            Some((lc, lv)) if *lc == c => *lv += v,
                            _ => merged.push((c, v)),
                        }
                    }
                    for (c, v) in merged {
                        cols.push(c);
                        vals.push(v);
                    }
                }
                row_start.push(cols.len());
            }
        }
        let max_norm = (0..cells)
            .map(|r| vals[row_start[r]..row_start[r + 1]].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let eps = 1e-10 * if max_norm > 0.0 { max_norm } else { 1.0 };
        for k in pinned {
            vals[k] = eps;
        }
        Ok(UpwindOperator { grid, matrix: Csr { n: cells, row_start, cols, vals }, degenerate })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Cells with no usable inflow face.
    pub fn degenerate_cells(&self) -> usize {
        self.degenerate.len()
    }

    /// Apply the operator to a cell field; ghost rows of the input are
    /// ignored and those of the output are zero.
    pub fn apply(&self, psi: &StaggeredField) -> StaggeredField {
        let x = pack(psi);
        let mut y = vec![0.0; self.matrix.n];
        self.matrix.mul(&x, &mut y);
        unpack(&self.grid, &y)
    }

    /// Least-squares solve on the cells. Degenerate rows have their right-hand side dropped.
    pub fn solve(&self, f: &StaggeredField, options: &SolverOptions) -> Result<(StaggeredField, SolveReport)> {
        let mut b = pack(f);
        for &e in &self.degenerate {
            b[e] = 0.0;
        }
        let (x, report) = cgls(&self.matrix, &b, options)?;
        Ok((unpack(&self.grid, &x), report))
    }
}

fn cell_index(nx: usize, i: usize, j: usize) -> usize {
    (j - 1) * nx + i
}

fn pack(field: &StaggeredField) -> Vec<f64> {
    let ny = field.grid().ny;
    (1..ny - 1).flat_map(|j| field.row(j).iter().copied()).collect()
}

fn unpack(grid: &GridSpec, x: &[f64]) -> StaggeredField {
    let nx = grid.nx;
    StaggeredField::from_index_fn(Kind::H, *grid, |i, j| {
        if j == 0 || j == grid.ny - 1 {
            0.0
        } else {
            x[cell_index(nx, i, j)]
        }
    })
}

/// Convergence summary of a least-squares solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `|A^T r| / |A^T b|` at exit.
    pub normal_residual: f64,
    /// `|r| / |b|` at exit; nonzero when the data are inconsistent.
    pub residual: f64,
}

/// Conjugate gradients on the normal equations with column scaling.
fn cgls(a: &Csr, b: &[f64], options: &SolverOptions) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.n;
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], SolveReport { iterations: 0, normal_residual: 0.0, residual: 0.0 }));
    }
    let mut col_norm = vec![0.0; n];
    for r in 0..n {
        for k in a.row_start[r]..a.row_start[r + 1] {
            col_norm[a.cols[k]] += a.vals[k] * a.vals[k];
        }
    }
    let scale: Vec<f64> = col_norm.iter().map(|c| if *c > 0.0 { 1.0 / c.sqrt() } else { 0.0 }).collect();
    // Work with A S, S = diag(scale), and map back x = S z at the end.
    let mut z = vec![0.0; n];
    let mut r = b.to_vec();
    let mut s = vec![0.0; n];
    a.mul_transpose(&r, &mut s);
    s.iter_mut().zip(&scale).for_each(|(v, c)| *v *= c);
    let s0 = norm(&s);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut q = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < options.max_iterations {
        if rel <= options.tolerance {
            break;
        }
        tmp.iter_mut().zip(&p).zip(&scale).for_each(|((t, p), c)| *t = p * c);
        a.mul(&tmp, &mut q);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            break;
        }
        let step = gamma / qq;
        z.iter_mut().zip(&p).for_each(|(z, p)| *z += step * p);
        r.iter_mut().zip(&q).for_each(|(r, q)| *r -= step * q);
        a.mul_transpose(&r, &mut s);
        s.iter_mut().zip(&scale).for_each(|(v, c)| *v *= c);
        let gamma_next = dot(&s, &s);
        rel = gamma_next.sqrt() / s0;
        p.iter_mut().zip(&s).for_each(|(p, s)| *p = s + (gamma_next / gamma) * *p);
        gamma = gamma_next;
        iterations += 1;
    }
    let x: Vec<f64> = z.iter().zip(&scale).map(|(z, c)| z * c).collect();
    let mut ax = vec![0.0; n];
    a.mul(&x, &mut ax);
    let resid: Vec<f64> = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
    let mut atr = vec![0.0; n];
    a.mul_transpose(&resid, &mut atr);
    let mut atb = vec![0.0; n];
    a.mul_transpose(b, &mut atb);
    let normal_residual = norm(&atr) / norm(&atb).max(f64::MIN_POSITIVE);
    let report = SolveReport { iterations, normal_residual, residual: norm(&resid) / b_norm };
    if !x.iter().all(|v| v.is_finite()) || rel > options.tolerance {
        return Err(Error::SolverResidual { residual: rel, iterations, tolerance: options.tolerance });
    }
    Ok((x, report))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Stream function on the vorticity points solving `q . grad(psi) = f`.
///
/// The cell solution is averaged onto the vorticity points and set to zero
/// on the wall rows, so the induced velocity has no normal component there.
pub fn solve_calibration_equation(
    f: &StaggeredField,
    q: &(StaggeredField, StaggeredField),
    options: &SolverOptions,
) -> Result<StaggeredField> {
    if f.kind() != Kind::H {
        return Err(Error::FieldMismatch(format!("right-hand side must be an H field, got {:?}", f.kind())));
    }
    if !f.is_finite() {
        return Err(Error::InvalidParameter("right-hand side is not finite".into()));
    }
    let op = UpwindOperator::new(&q.0, &q.1)?;
    f.check_compatible(&StaggeredField::zeros(Kind::H, *op.grid()))?;
    let (cells, _) = op.solve(f, options)?;
    Ok(cells_to_corners(&cells))
}

/// Average cell values onto the vorticity points, zero on the walls.
pub fn cells_to_corners(cells: &StaggeredField) -> StaggeredField {
    let ny = cells.grid().ny;
    let mut psi = interpolate(cells, Kind::Z);
    for j in [0, 1, ny - 1] {
        psi.fill_row(j, 0.0);
    }
    psi
}
