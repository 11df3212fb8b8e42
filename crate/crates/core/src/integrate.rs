//! Explicit time-stepping schemes, generic over the state type.
//!
//! The same code drives the shallow water model and the scalar surrogates
//! used to check convergence and the Stratonovich limit of the stochastic
//! Runge-Kutta scheme.

use crate::error::Result;

/// A state that can be advanced by a rate of change.
pub trait Integrable: Clone {
    type Rate;

    /// `self + a * rate`, with any boundary conditions re-applied.
    fn add_scaled(&self, a: f64, rate: &Self::Rate) -> Self;

    /// Robert-Asselin filter of the middle level: `self + gamma * (prev - 2 self + next)`.
    fn asselin_filter(&self, prev: &Self, next: &Self, gamma: f64) -> Self;
}

impl Integrable for f64 {
    type Rate = f64;

    fn add_scaled(&self, a: f64, rate: &f64) -> f64 {
        self + a * rate
    }

    fn asselin_filter(&self, prev: &f64, next: &f64, gamma: f64) -> f64 {
        self + gamma * (prev - 2.0 * self + next)
    }
}

/// Forward Euler: `x + dt * F(x)`.
pub fn euler<S, F>(x: &S, dt: f64, mut rate: F) -> Result<S>
where
    S: Integrable,
    F: FnMut(&S) -> Result<S::Rate>,
{
    Ok(x.add_scaled(dt, &rate(x)?))
}

/// Classical fourth-order Runge-Kutta step for an autonomous rate.
pub fn rk4<S, F>(x: &S, dt: f64, mut rate: F) -> Result<S>
where
    S: Integrable,
    F: FnMut(&S) -> Result<S::Rate>,
{
    let c1 = rate(x)?;
    let c2 = rate(&x.add_scaled(0.5 * dt, &c1))?;
    let c3 = rate(&x.add_scaled(0.5 * dt, &c2))?;
    let c4 = rate(&x.add_scaled(dt, &c3))?;
    Ok(x.add_scaled(dt / 6.0, &c1).add_scaled(dt / 3.0, &c2).add_scaled(dt / 3.0, &c3).add_scaled(dt / 6.0, &c4))
}

/// Runge-Kutta stages applied to an increment map `G(x)` that already
/// carries the time step, i.e. `G(x) = A(x) dt + B(x) dW` with the noise
/// increment frozen across the four stages. Expanding the stages shows
/// the second one picks up `B(B(x)) dW^2 / 2`, so the scheme converges to
/// the Stratonovich solution.
pub fn stochastic_rk4<S, G>(x: &S, increment: G) -> Result<S>
where
    S: Integrable,
    G: FnMut(&S) -> Result<S::Rate>,
{
    rk4(x, 1.0, increment)
}

/// One leapfrog step `next = prev + 2 dt F(curr)`.
///
/// Returns `(filtered_curr, next)`; with `gamma = 0` the filtered level is
/// `curr` unchanged.
pub fn leapfrog<S, F>(prev: &S, curr: &S, dt: f64, gamma: f64, mut rate: F) -> Result<(S, S)>
where
    S: Integrable,
    F: FnMut(&S) -> Result<S::Rate>,
{
    let next = prev.add_scaled(2.0 * dt, &rate(curr)?);
    let filtered = if gamma == 0.0 { curr.clone() } else { curr.asselin_filter(prev, &next, gamma) };
    Ok((filtered, next))
}
