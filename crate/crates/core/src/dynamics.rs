//! Deterministic rotating shallow water model in energy / potential
//! vorticity form on the C-grid.
//!
//! The momentum equations are written as
//!
//! ```text
//! u_t = -(K + g eta)_x + (h v) q + D lap(u) - r u
//! v_t = -(K + g eta)_y - (h u) q + D lap(v) - r v
//! eta_t = -(h u)_x - (h v)_y
//! ```
//!
//! with kinetic energy `K` and potential vorticity `q = (f + v_x - u_y) / h`.

use crate::error::{Error, Result};
use crate::grid::{interpolate, point, wall_rows, GridSpec, Kind, ModelState, PhysicalParams, StaggeredField};
use crate::integrate::{self, Integrable};

/// Rate of change of the prognostic variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Tendency {
    pub du: StaggeredField,
    pub dv: StaggeredField,
    pub deta: StaggeredField,
}

impl Tendency {
    pub fn zeros(grid: GridSpec) -> Self {
        Tendency {
            du: StaggeredField::zeros(Kind::U, grid),
            dv: StaggeredField::zeros(Kind::V, grid),
            deta: StaggeredField::zeros(Kind::H, grid),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Tendency) -> Result<()> {
        self.du.axpy(a, &other.du)?;
        self.dv.axpy(a, &other.dv)?;
        self.deta.axpy(a, &other.deta)
    }

    pub fn max_abs(&self) -> f64 {
        self.du.max_abs().max(self.dv.max_abs()).max(self.deta.max_abs())
    }

    fn check_finite(&self) -> Result<()> {
        for field in [&self.du, &self.dv, &self.deta] {
            if let Some((i, j)) = field.first_non_finite() {
                return Err(Error::BlowUp { kind: field.kind(), i, j });
            }
        }
        Ok(())
    }
}

impl Integrable for ModelState {
    type Rate = Tendency;

    fn add_scaled(&self, a: f64, rate: &Tendency) -> ModelState {
        let mut out = self.clone();
        // Kinds and grids match by construction of `tendency`.
        out.u.axpy(a, &rate.du).expect("tendency matches state");
        out.v.axpy(a, &rate.dv).expect("tendency matches state");
        out.eta.axpy(a, &rate.deta).expect("tendency matches state");
        out.apply_boundary_conditions();
        out
    }

    fn asselin_filter(&self, prev: &ModelState, next: &ModelState, gamma: f64) -> ModelState {
        let filter = |c: &StaggeredField, p: &StaggeredField, n: &StaggeredField| {
            let mut out = c.clone();
            for ((o, p), n) in out.values_mut().iter_mut().zip(p.values()).zip(n.values()) {
                *o += gamma * (p - 2.0 * *o + n);
            }
            out
        };
        let mut out = ModelState {
            u: filter(&self.u, &prev.u, &next.u),
            v: filter(&self.v, &prev.v, &next.v),
            eta: filter(&self.eta, &prev.eta, &next.eta),
            time: self.time,
        };
        out.apply_boundary_conditions();
        out
    }
}

/// Starting elevation: a zonal jet from the `arctan` profile plus two
/// zonal waves confined to the channel interior by `sin(pi y / Ly)^4`.
pub fn initial_elevation(grid: &GridSpec, amplitude: f64) -> Result<StaggeredField> {
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidParameter(format!("amplitude must be positive, got {amplitude}")));
    }
    Ok(StaggeredField::from_fn(Kind::H, *grid, |x, y| initial_elevation_at(grid, amplitude, x, y)))
}

/// Closed form of the starting elevation at `(x, y)`.
pub fn initial_elevation_at(grid: &GridSpec, a: f64, x: f64, y: f64) -> f64 {
    use std::f64::consts::PI;
    let (lx, ly) = (grid.lx, grid.ly);
    let jet = -a * (0.05 * (y / ly - 0.5) * PI).atan();
    let waves = a * (16.0 * PI * x / lx).sin() + 0.5 * a * (2.0 * PI * x / lx).sin();
    jet + waves * (PI * y / ly).sin().powi(4)
}

/// Velocities in geostrophic balance with `eta`: `u = -(g/f) eta_y`, `v = (g/f) eta_x`.
///
/// Gradients are compact differences on the staggered points next to the
/// target, averaged onto it. `v` is zero on the wall rows.
pub fn geostrophic_velocities(
    eta: &StaggeredField,
    params: &PhysicalParams,
) -> Result<(StaggeredField, StaggeredField)> {
    if eta.kind() != Kind::H {
        return Err(Error::FieldMismatch(format!("expected an H field, got {:?}", eta.kind())));
    }
    let grid = *eta.grid();
    let (dx, dy) = (grid.dx(), grid.dy());
    for j in 0..grid.ny {
        for kind in [Kind::U, Kind::V] {
            let f = params.coriolis(point(kind, &grid, 0, j).1);
            if f.abs() < 1e-12 {
                return Err(Error::CoriolisVanishes { row: j, f });
            }
        }
    }
    let eta_y = StaggeredField::from_index_fn(Kind::V, grid, |i, j| {
        let (i, j) = (i as isize, j as isize);
        (eta.at(i, j) - eta.at(i, j - 1)) / dy
    });
    let eta_x = StaggeredField::from_index_fn(Kind::U, grid, |i, j| {
        let (i, j) = (i as isize, j as isize);
        (eta.at(i, j) - eta.at(i - 1, j)) / dx
    });
    let eta_y_u = interpolate(&eta_y, Kind::U);
    let eta_x_v = interpolate(&eta_x, Kind::V);
    let u = StaggeredField::from_index_fn(Kind::U, grid, |i, j| {
        let f = params.coriolis(point(Kind::U, &grid, i, j).1);
        -params.g / f * eta_y_u.get(i, j)
    });
    let mut v = StaggeredField::from_index_fn(Kind::V, grid, |i, j| {
        let f = params.coriolis(point(Kind::V, &grid, i, j).1);
        params.g / f * eta_x_v.get(i, j)
    });
    for j in wall_rows(grid.ny) {
        v.fill_row(j, 0.0);
    }
    Ok((u, v))
}

/// Balanced state built from an elevation field, with boundary conditions applied.
pub fn balanced_state(eta: StaggeredField, params: &PhysicalParams) -> Result<ModelState> {
    let (u, v) = geostrophic_velocities(&eta, params)?;
    let mut state = ModelState::new(u, v, eta, 0.0)?;
    state.apply_boundary_conditions();
    Ok(state)
}

/// Potential vorticity `(f + v_x - u_y) / h` on the vorticity points.
pub fn potential_vorticity(state: &ModelState, params: &PhysicalParams) -> Result<StaggeredField> {
    let grid = *state.grid();
    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy) = (grid.dx(), grid.dy());
    let (u, v, e) = (state.u.values(), state.v.values(), state.eta.values());
    let mut out = vec![0.0; grid.len()];
    for j in 0..ny {
        let jm = j.saturating_sub(1);
        let f = params.coriolis(j as f64 * dy);
        for i in 0..nx {
            let im = if i == 0 { nx - 1 } else { i - 1 };
            let vort = (v[j * nx + i] - v[j * nx + im]) / dx - (u[j * nx + i] - u[jm * nx + i]) / dy;
            let depth = params.h_mean + 0.25 * (e[j * nx + i] + e[j * nx + im] + e[jm * nx + i] + e[jm * nx + im]);
            if !(depth > 0.0) {
                return Err(Error::NonPositiveDepth { kind: Kind::Z, i, j, depth });
            }
            out[j * nx + i] = (vort + f) / depth;
        }
    }
    StaggeredField::from_values(Kind::Z, grid, out)
}

/// Mass fluxes `h u` on the U points and `h v` on the V points, with the
/// ghost rows of the zonal flux set by [`boundary_fluxes`].
pub fn mass_fluxes(state: &ModelState, params: &PhysicalParams) -> (StaggeredField, StaggeredField) {
    let (uflux, vflux) = depth_weighted(&state.u, &state.v, &state.eta, params.h_mean);
    (boundary_fluxes(uflux), vflux)
}

/// `(h a, h b)` for a U-field `a` and a V-field `b`, depth averaged onto their points.
pub(crate) fn depth_weighted(
    a: &StaggeredField,
    b: &StaggeredField,
    eta: &StaggeredField,
    h_mean: f64,
) -> (StaggeredField, StaggeredField) {
    let grid = *eta.grid();
    let (nx, ny) = (grid.nx, grid.ny);
    let e = eta.values();
    let mut af = a.clone();
    let mut bf = b.clone();
    {
        let av = af.values_mut();
        for j in 0..ny {
            for i in 0..nx {
                let im = if i == 0 { nx - 1 } else { i - 1 };
                av[j * nx + i] *= h_mean + 0.5 * (e[j * nx + i] + e[j * nx + im]);
            }
        }
    }
    {
        let bv = bf.values_mut();
        for j in 0..ny {
            let jm = j.saturating_sub(1);
            for i in 0..nx {
                bv[j * nx + i] *= h_mean + 0.5 * (e[j * nx + i] + e[jm * nx + i]);
            }
        }
    }
    (af, bf)
}

/// Wall rule for the zonal mass flux: the ghost rows are the negated
/// adjacent physical rows.
pub fn boundary_fluxes(mut uflux: StaggeredField) -> StaggeredField {
    let ny = uflux.grid().ny;
    let nx = uflux.grid().nx;
    for (ghost, inner) in [(0, 1), (ny - 1, ny - 2)] {
        for i in 0..nx {
            let value = -uflux.get(i, inner);
            uflux.set(i, ghost, value);
        }
    }
    uflux
}

/// Right-hand side of the deterministic model.
pub fn tendency(state: &ModelState, params: &PhysicalParams) -> Result<Tendency> {
    state.check_depth(params.h_mean)?;
    let grid = *state.grid();
    let (uflux, vflux) = mass_fluxes(state, params);
    let pv = potential_vorticity(state, params)?;
    let energy = bernoulli(state, params.g);
    let mut out = Tendency::zeros(grid);
    momentum_terms(&grid, &energy, &uflux, &vflux, &pv, &mut out);
    dissipation(state, params, &mut out);
    continuity(&grid, &uflux, &vflux, &mut out.deta);
    out.check_finite()?;
    Ok(out)
}

/// `K + g eta` on the H points, with `K` the four-point average of the squared velocities over two.
fn bernoulli(state: &ModelState, g: f64) -> Vec<f64> {
    let grid = state.grid();
    let (nx, ny) = (grid.nx, grid.ny);
    let (u, v, e) = (state.u.values(), state.v.values(), state.eta.values());
    let mut out = vec![0.0; grid.len()];
    for j in 0..ny {
        let jp = (j + 1).min(ny - 1);
        for i in 0..nx {
            let ip = if i + 1 == nx { 0 } else { i + 1 };
            let k = j * nx + i;
            let ke = 0.25 * (u[j * nx + ip].powi(2) + u[k].powi(2) + v[jp * nx + i].powi(2) + v[k].powi(2));
            out[k] = ke + g * e[k];
        }
    }
    out
}

/// Gradient of `energy` plus the potential vorticity flux terms, added into `out`.
///
/// Shared by the deterministic tendency and the transport-noise
/// perturbation, which reuse the same stencils with different inputs.
pub(crate) fn momentum_terms(
    grid: &GridSpec,
    energy: &[f64],
    uflux: &StaggeredField,
    vflux: &StaggeredField,
    pv: &StaggeredField,
    out: &mut Tendency,
) {
    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy) = (grid.dx(), grid.dy());
    let (uf, vf, q) = (uflux.values(), vflux.values(), pv.values());
    let du = out.du.values_mut();
    for j in 1..ny - 1 {
        for i in 0..nx {
            let im = if i == 0 { nx - 1 } else { i - 1 };
            let k = j * nx + i;
            let grad = (energy[k] - energy[j * nx + im]) / dx;
            let flux = vf[k] + vf[j * nx + im] + vf[(j + 1) * nx + i] + vf[(j + 1) * nx + im];
            du[k] += -grad + flux * (q[k] + q[(j + 1) * nx + i]) / 8.0;
        }
    }
    let dv = out.dv.values_mut();
    for j in 2..ny - 1 {
        for i in 0..nx {
            let ip = if i + 1 == nx { 0 } else { i + 1 };
            let k = j * nx + i;
            let grad = (energy[k] - energy[(j - 1) * nx + i]) / dy;
            let flux = uf[k] + uf[(j - 1) * nx + i] + uf[j * nx + ip] + uf[(j - 1) * nx + ip];
            dv[k] += -grad - flux * (q[k] + q[j * nx + ip]) / 8.0;
        }
    }
}

fn dissipation(state: &ModelState, params: &PhysicalParams, out: &mut Tendency) {
    let (d, r) = (params.viscosity, params.friction);
    if d == 0.0 && r == 0.0 {
        return;
    }
    let grid = state.grid();
    let (nx, ny) = (grid.nx, grid.ny);
    let (cx, cy) = (d / grid.dx().powi(2), d / grid.dy().powi(2));
    for (field, rate, rows) in [(&state.u, &mut out.du, 1..ny - 1), (&state.v, &mut out.dv, 2..ny - 1)] {
        let a = field.values();
        let da = rate.values_mut();
        for j in rows {
            for i in 0..nx {
                let im = if i == 0 { nx - 1 } else { i - 1 };
                let ip = if i + 1 == nx { 0 } else { i + 1 };
                let k = j * nx + i;
                let lap = cx * (a[j * nx + ip] + a[j * nx + im] - 2.0 * a[k])
                    + cy * (a[(j + 1) * nx + i] + a[(j - 1) * nx + i] - 2.0 * a[k]);
                da[k] += lap - r * a[k];
            }
        }
    }
}

/// Flux divergence `-(F_x)_x - (F_y)_y` on the physical H rows, added into `out`.
pub(crate) fn continuity(grid: &GridSpec, uflux: &StaggeredField, vflux: &StaggeredField, out: &mut StaggeredField) {
    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy) = (grid.dx(), grid.dy());
    let (uf, vf) = (uflux.values(), vflux.values());
    let de = out.values_mut();
    for j in 1..ny - 1 {
        for i in 0..nx {
            let ip = if i + 1 == nx { 0 } else { i + 1 };
            let k = j * nx + i;
            de[k] -= (uf[j * nx + ip] - uf[k]) / dx + (vf[(j + 1) * nx + i] - vf[k]) / dy;
        }
    }
}

/// Forward Euler step.
pub fn step_euler(state: &ModelState, params: &PhysicalParams, dt: f64) -> Result<ModelState> {
    let mut next = integrate::euler(state, dt, |s| tendency(s, params))?;
    next.time = state.time + dt;
    Ok(next)
}

/// Leapfrog step; returns `(filtered_curr, next)`.
pub fn step_leapfrog(
    prev: &ModelState,
    curr: &ModelState,
    params: &PhysicalParams,
    dt: f64,
    asselin: f64,
) -> Result<(ModelState, ModelState)> {
    let (filtered, mut next) = integrate::leapfrog(prev, curr, dt, asselin, |s| tendency(s, params))?;
    next.time = curr.time + dt;
    Ok((filtered, next))
}

/// Classical RK4 step.
pub fn step_rk4(state: &ModelState, params: &PhysicalParams, dt: f64) -> Result<ModelState> {
    let mut next = integrate::rk4(state, dt, |s| tendency(s, params))?;
    next.time = state.time + dt;
    Ok(next)
}

/// Time discretisation of the deterministic model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeScheme {
    /// Euler for the first step, leapfrog afterwards, with a
    /// Robert-Asselin filter of the given coefficient.
    EulerLeapfrog {
        asselin: f64,
    },
    Rk4,
}

impl Default for TimeScheme {
    fn default() -> Self {
        TimeScheme::EulerLeapfrog { asselin: 0.01 }
    }
}

/// Integrate `n_steps` from `initial`, calling `observe(step, state)` for
/// the initial state and after every step.
pub fn integrate<F>(
    initial: ModelState,
    params: &PhysicalParams,
    n_steps: usize,
    dt: f64,
    scheme: TimeScheme,
    mut observe: F,
) -> Result<ModelState>
where
    F: FnMut(usize, &ModelState) -> Result<()>,
{
    if !(dt > 0.0) && n_steps > 0 {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    let at_step = |step: usize| move |e: Error| Error::BlowUpAtStep { step, source: Box::new(e) };
    observe(0, &initial)?;
    let mut curr = initial;
    let mut prev: Option<ModelState> = None;
    for step in 1..=n_steps {
        let next = match scheme {
            TimeScheme::Rk4 => step_rk4(&curr, params, dt).map_err(at_step(step))?,
            TimeScheme::EulerLeapfrog { asselin } => match prev.take() {
                None => step_euler(&curr, params, dt).map_err(at_step(step))?,
                Some(p) => {
                    let (filtered, next) = step_leapfrog(&p, &curr, params, dt, asselin).map_err(at_step(step))?;
                    curr = filtered;
                    next
                }
            },
        };
        if matches!(scheme, TimeScheme::EulerLeapfrog { .. }) {
            prev = Some(curr);
        }
        curr = next;
        observe(step, &curr)?;
    }
    Ok(curr)
}

/// Balanced start from the analytic elevation followed by `n_steps` of burn-in.
pub fn spinup(
    grid: &GridSpec,
    params: &PhysicalParams,
    amplitude: f64,
    n_steps: usize,
    dt: f64,
    scheme: TimeScheme,
) -> Result<ModelState> {
    params.validate()?;
    let state = balanced_state(initial_elevation(grid, amplitude)?, params)?;
    integrate(state, params, n_steps, dt, scheme, |_, _| Ok(()))
}

/// Fluid volume `sum (H + eta) dx dy` over the physical cells.
pub fn total_mass(state: &ModelState, params: &PhysicalParams) -> f64 {
    let grid = state.grid();
    let column: f64 =
        grid.interior_rows().map(|j| state.eta.row(j).iter().map(|e| params.h_mean + e).sum::<f64>()).sum();
    column * grid.dx() * grid.dy()
}

/// Sum of `h (u^2 + v^2) / 2 + g eta^2 / 2` over the physical cells, with
/// squared velocities averaged onto the cell centres.
pub fn total_energy(state: &ModelState, params: &PhysicalParams) -> f64 {
    let grid = state.grid();
    let nx = grid.nx;
    let mut total = 0.0;
    for j in grid.interior_rows() {
        for i in 0..nx {
            let ip = (i + 1) % nx;
            let u2 = 0.5 * (state.u.get(i, j).powi(2) + state.u.get(ip, j).powi(2));
            let v2 = 0.5 * (state.v.get(i, j).powi(2) + state.v.get(i, j + 1).powi(2));
            let eta = state.eta.get(i, j);
            total += 0.5 * (params.h_mean + eta) * (u2 + v2) + 0.5 * params.g * eta * eta;
        }
    }
    total
}

/// Sum of potential vorticity times depth over the vorticity points
/// between and on the walls.
pub fn integrated_potential_vorticity(state: &ModelState, params: &PhysicalParams) -> Result<f64> {
    let pv = potential_vorticity(state, params)?;
    let grid = *state.grid();
    let depth = interpolate(&state.eta, Kind::Z);
    let mut total = 0.0;
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            total += pv.get(i, j) * (params.h_mean + depth.get(i, j));
        }
    }
    Ok(total)
}
