//! Stochastic (SALT) shallow water integration on the coarse grid.
//!
//! Transport noise perturbs the advecting velocity by `sum_j xi_j dW_j`.
//! In the momentum equations that gives
//!
//! ```text
//! -grad(u . u~) + (h v~) q~ ,  -(h u~) q~      with  q~ = (v_x - u_y) / h
//! ```
//!
//! and in the continuity equation `-div(h u~)`. The increments reuse the
//! deterministic stencils with the perturbation velocity in place of the
//! advecting one.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::calibrate::EofBasis;
use crate::dynamics::{boundary_fluxes, continuity, depth_weighted, momentum_terms, tendency, Tendency};
use crate::error::{Error, Result};
use crate::grid::{Kind, ModelState, PhysicalParams, StaggeredField};
use crate::integrate::stochastic_rk4;

/// Perturbation velocity `sum_j w_j xi_j`.
pub fn noise_velocity(basis: &EofBasis, w: &[f64]) -> Result<(StaggeredField, StaggeredField)> {
    if w.len() != basis.n_retained || basis.xi_u.len() != basis.n_retained {
        return Err(Error::InvalidParameter(format!(
            "{} noise draws for a basis of {} modes",
            w.len(),
            basis.n_retained
        )));
    }
    let mut u = StaggeredField::zeros(Kind::U, basis.grid);
    let mut v = StaggeredField::zeros(Kind::V, basis.grid);
    for ((xu, xv), wj) in basis.xi_u.iter().zip(&basis.xi_v).zip(w) {
        u.axpy(*wj, xu)?;
        v.axpy(*wj, xv)?;
    }
    Ok((u, v))
}

/// Transport-noise increment of the state for draws `w` (already scaled by
/// `sqrt(dt)` when used inside a time step).
pub fn salt_perturbation(state: &ModelState, params: &PhysicalParams, basis: &EofBasis, w: &[f64]) -> Result<Tendency> {
    let grid = *state.grid();
    if basis.grid != grid {
        return Err(Error::FieldMismatch(format!(
            "basis grid {}x{} does not match state grid {}x{}",
            basis.grid.nx, basis.grid.ny, grid.nx, grid.ny
        )));
    }
    let (nu, nv) = noise_velocity(basis, w)?;
    perturbation_from_velocity(state, params, &nu, &nv)
}

/// [`salt_perturbation`] for an explicit perturbation velocity.
pub fn perturbation_from_velocity(
    state: &ModelState,
    params: &PhysicalParams,
    nu: &StaggeredField,
    nv: &StaggeredField,
) -> Result<Tendency> {
    let grid = *state.grid();
    let mut out = Tendency::zeros(grid);
    if nu.max_abs() == 0.0 && nv.max_abs() == 0.0 {
        return Ok(out);
    }
    let (uflux, vflux) = depth_weighted(nu, nv, &state.eta, params.h_mean);
    let uflux = boundary_fluxes(uflux);
    let vort = relative_vorticity_per_depth(state, params)?;
    let energy = cross_energy(state, nu, nv);
    momentum_terms(&grid, &energy, &uflux, &vflux, &vort, &mut out);
    continuity(&grid, &uflux, &vflux, &mut out.deta);
    Ok(out)
}

/// `(v_x - u_y) / h` on the vorticity points.
fn relative_vorticity_per_depth(state: &ModelState, params: &PhysicalParams) -> Result<StaggeredField> {
    let no_rotation = PhysicalParams { f0: 0.0, beta: 0.0, ..*params };
    crate::dynamics::potential_vorticity(state, &no_rotation)
}

/// `u . u~` on the H points, each product averaged from the two adjacent faces.
fn cross_energy(state: &ModelState, nu: &StaggeredField, nv: &StaggeredField) -> Vec<f64> {
    let grid = state.grid();
    let (nx, ny) = (grid.nx, grid.ny);
    let (u, v) = (state.u.values(), state.v.values());
    let (a, b) = (nu.values(), nv.values());
    let mut out = vec![0.0; grid.len()];
    for j in 0..ny {
        let jp = (j + 1).min(ny - 1);
        for i in 0..nx {
            let ip = if i + 1 == nx { 0 } else { i + 1 };
            let k = j * nx + i;
            out[k] =
                0.5 * (u[j * nx + ip] * a[j * nx + ip] + u[k] * a[k] + v[jp * nx + i] * b[jp * nx + i] + v[k] * b[k]);
        }
    }
    out
}

/// Standard normal draws for one member and step, in mode order.
///
/// The generator is keyed by `(master_seed, member)` through its seed and by
/// `step` through its stream, so every draw is reproducible independently of
/// scheduling.
pub fn noise_draws(master_seed: u64, member: usize, step: usize, n_modes: usize) -> Vec<f64> {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&(member as u64).to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(seed);
    rng.set_stream(step as u64);
    (0..n_modes).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// One stochastic RK4 step with the draws `w` held fixed across stages.
pub fn step_srsw_rk4(
    state: &ModelState,
    params: &PhysicalParams,
    basis: &EofBasis,
    dt: f64,
    w: &[f64],
) -> Result<ModelState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    let scaled: Vec<f64> = w.iter().map(|x| x * dt.sqrt()).collect();
    let noisy = scaled.iter().any(|x| *x != 0.0);
    let mut next = stochastic_rk4(state, |x| {
        let mut g = tendency(x, params)?;
        for f in [&mut g.du, &mut g.dv, &mut g.deta] {
            f.values_mut().iter_mut().for_each(|v| *v *= dt);
        }
        if noisy {
            g.axpy(1.0, &salt_perturbation(x, params, basis, &scaled)?)?;
        }
        Ok(g)
    })?;
    next.time = state.time + dt;
    Ok(next)
}

/// Snapshots of every member at the recorded steps.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    /// `members[m][k]` is member `m` at `steps[k]`.
    pub members: Vec<Vec<ModelState>>,
}

/// Settings shared by every member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub n_members: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub master_seed: u64,
    /// Snapshot every `stride` steps (plus the initial state).
    pub stride: usize,
}

impl EnsembleSpec {
    pub fn recorded_steps(&self) -> Vec<usize> {
        let stride = self.stride.max(1);
        (0..=self.n_steps).filter(|s| s % stride == 0).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n_members == 0 {
            return Err(Error::EmptyEnsemble);
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {}", self.dt)));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("snapshot stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Integrate one member, calling `observe(step, state)` at every recorded step.
pub fn run_member<F>(
    initial: &ModelState,
    params: &PhysicalParams,
    basis: &EofBasis,
    spec: &EnsembleSpec,
    member: usize,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(usize, &ModelState) -> Result<()>,
{
    let fail = |step: usize, e: Error| Error::MemberFailed { member, step, source: Box::new(e) };
    let mut state = initial.clone();
    observe(0, &state)?;
    for step in 1..=spec.n_steps {
        let w = noise_draws(spec.master_seed, member, step, basis.n_retained);
        state = step_srsw_rk4(&state, params, basis, spec.dt, &w).map_err(|e| fail(step, e))?;
        if !state.is_finite() {
            return Err(fail(step, Error::BlowUp { kind: Kind::H, i: 0, j: 0 }));
        }
        if step % spec.stride == 0 {
            observe(step, &state)?;
        }
    }
    Ok(())
}

/// Run all members in parallel, handing each recorded state to `observe(member, step, state)`.
///
/// Members are independent; on failure the error of the lowest failing member id is returned.
pub fn run_ensemble_with<F>(
    initial: &ModelState,
    params: &PhysicalParams,
    basis: &EofBasis,
    spec: &EnsembleSpec,
    observe: F,
) -> Result<()>
where
    F: Fn(usize, usize, &ModelState) -> Result<()> + Sync,
{
    spec.validate()?;
    let results: Vec<Result<()>> = (0..spec.n_members)
        .into_par_iter()
        .map(|m| run_member(initial, params, basis, spec, m, |step, s| observe(m, step, s)))
        .collect();
    results.into_iter().collect()
}

/// Run all members and keep their recorded snapshots in memory.
pub fn run_ensemble(
    initial: &ModelState,
    params: &PhysicalParams,
    basis: &EofBasis,
    spec: &EnsembleSpec,
) -> Result<EnsembleRun> {
    spec.validate()?;
    let members = (0..spec.n_members)
        .into_par_iter()
        .map(|m| {
            let mut snaps = Vec::new();
            run_member(initial, params, basis, spec, m, |_, s| {
                snaps.push(s.clone());
                Ok(())
            })?;
            Ok(snaps)
        })
        .collect::<Result<Vec<_>>>()?;
    let steps = spec.recorded_steps();
    let times = steps.iter().map(|s| initial.time + *s as f64 * spec.dt).collect();
    Ok(EnsembleRun { steps, times, members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::transport::perturbation_velocity;
    use crate::dynamics::step_rk4;
    use crate::grid::GridSpec;

    fn grid() -> GridSpec {
        GridSpec::new(2.0e6, 1.0e6, 16, 12).unwrap()
    }

    fn basis(grid: GridSpec, modes: usize) -> EofBasis {
        let mut b = EofBasis::empty(grid);
        for k in 0..modes {
            let psi = StaggeredField::from_fn(Kind::Z, grid, |x, y| {
                let s = (std::f64::consts::PI * y / grid.ly).sin();
                1.0e3 * s * s * ((k + 1) as f64 * 2.0 * std::f64::consts::PI * x / grid.lx).cos()
            });
            let mut psi = psi;
            for j in [0, 1, grid.ny - 1] {
                psi.fill_row(j, 0.0);
            }
            let (u, v) = perturbation_velocity(&psi);
            b.psi.push(psi);
            b.xi_u.push(u);
            b.xi_v.push(v);
            b.sigma.push(1.0);
        }
        b.n_retained = modes;
        b
    }

    fn wavy_state(grid: GridSpec) -> ModelState {
        let eta = StaggeredField::from_fn(Kind::H, grid, |x, y| 2.0 * (x * 3e-6).sin() * (y * 2e-6).cos());
        crate::dynamics::balanced_state(eta, &PhysicalParams::default()).unwrap()
    }

    #[test]
    fn zero_draws_give_zero_perturbation() {
        let g = grid();
        let t = salt_perturbation(&wavy_state(g), &PhysicalParams::default(), &basis(g, 2), &[0.0, 0.0]).unwrap();
        assert_eq!(t.max_abs(), 0.0);
    }

    #[test]
    fn rest_state_is_unperturbed() {
        let g = grid();
        let t =
            salt_perturbation(&ModelState::rest(g), &PhysicalParams::default(), &basis(g, 2), &[0.7, -1.3]).unwrap();
        assert_eq!(t.du.max_abs(), 0.0);
        assert_eq!(t.dv.max_abs(), 0.0);
        assert!(t.deta.max_abs() < 1e-12);
    }

    #[test]
    fn draw_count_and_grid_checked() {
        let g = grid();
        let p = PhysicalParams::default();
        assert!(salt_perturbation(&ModelState::rest(g), &p, &basis(g, 2), &[1.0]).is_err());
        let other = GridSpec::new(2.0e6, 1.0e6, 8, 12).unwrap();
        assert!(salt_perturbation(&ModelState::rest(other), &p, &basis(g, 1), &[1.0]).is_err());
    }

    #[test]
    fn noiseless_step_is_rk4() {
        let g = grid();
        let p = PhysicalParams::default();
        let s = wavy_state(g);
        let a = step_srsw_rk4(&s, &p, &EofBasis::empty(g), 60.0, &[]).unwrap();
        let b = step_rk4(&s, &p, 60.0).unwrap();
        for (x, y) in [(&a.u, &b.u), (&a.v, &b.v), (&a.eta, &b.eta)] {
            for (p, q) in x.values().iter().zip(y.values()) {
                assert!((p - q).abs() <= 1e-12 * q.abs().max(1e-6));
            }
        }
        let c = step_srsw_rk4(&s, &p, &basis(g, 2), 60.0, &[0.0, 0.0]).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn draws_are_keyed() {
        let a = noise_draws(7, 3, 11, 5);
        assert_eq!(a, noise_draws(7, 3, 11, 5));
        assert_ne!(a, noise_draws(7, 4, 11, 5));
        assert_ne!(a, noise_draws(7, 3, 12, 5));
        assert_ne!(a, noise_draws(8, 3, 11, 5));
        assert_eq!(&noise_draws(7, 3, 11, 8)[..5], &a[..]);
    }

    #[test]
    fn empty_basis_members_coincide() {
        let g = grid();
        let spec = EnsembleSpec { n_members: 3, n_steps: 5, dt: 60.0, master_seed: 1, stride: 2 };
        let run = run_ensemble(&wavy_state(g), &PhysicalParams::default(), &EofBasis::empty(g), &spec).unwrap();
        assert_eq!(run.steps, vec![0, 2, 4]);
        assert_eq!(run.members.len(), 3);
        assert_eq!(run.members[0], run.members[2]);
        assert!(matches!(
            run_ensemble(
                &wavy_state(g),
                &PhysicalParams::default(),
                &EofBasis::empty(g),
                &EnsembleSpec { n_members: 0, ..spec }
            ),
            Err(Error::EmptyEnsemble)
        ));
    }

    #[test]
    fn noisy_members_differ_and_conserve_mass() {
        let g = grid();
        let p = PhysicalParams::default().inviscid();
        let s = wavy_state(g);
        let spec = EnsembleSpec { n_members: 2, n_steps: 20, dt: 60.0, master_seed: 5, stride: 20 };
        let run = run_ensemble(&s, &p, &basis(g, 2).scaled(50.0), &spec).unwrap();
        assert_ne!(run.members[0][1], run.members[1][1]);
        let m0 = crate::dynamics::total_mass(&s, &p);
        for member in &run.members {
            let drift = (crate::dynamics::total_mass(&member[1], &p) - m0).abs() / m0;
            assert!(drift < 1e-10, "{drift}");
        }
    }

    #[test]
    fn blow_up_names_member_and_step() {
        let g = grid();
        let s = wavy_state(g);
        let spec = EnsembleSpec { n_members: 2, n_steps: 50, dt: 60.0, master_seed: 5, stride: 1 };
        let err = run_ensemble(&s, &PhysicalParams::default(), &basis(g, 1).scaled(1e12), &spec).unwrap_err();
        match err {
            Error::MemberFailed { member, step, .. } => {
                assert_eq!(member, 0);
                assert!(step >= 1);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
