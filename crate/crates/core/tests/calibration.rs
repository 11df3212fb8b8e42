use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use srsw_core::calibrate::eof::principal_angle;
use srsw_core::calibrate::transport::{divergence, UpwindOperator};
use srsw_core::calibrate::{
    calibrate, decorrelation_time, eof_decomposition, CalibrationOptions, IncrementSeries, SolverOptions,
};
use srsw_core::coarsen::{kernel_c4, CoarseningSpec};
use srsw_core::dynamics::{spinup, TimeScheme};
use srsw_core::{GridSpec, Kind, PhysicalParams, StaggeredField};

fn channel(nx: usize, ny: usize) -> GridSpec {
    let full = GridSpec::full_scale();
    GridSpec::new(full.lx, full.ly, nx, ny).unwrap()
}

#[test]
fn eof_recovers_three_orthogonal_modes() {
    let g = GridSpec::new(1.0e6, 1.0e6, 12, 10).unwrap();
    let tau = 2.0 * std::f64::consts::PI;
    let true_modes: Vec<(StaggeredField, StaggeredField)> = (1..=3)
        .map(|k| {
            let u = StaggeredField::from_index_fn(Kind::U, g, |i, j| {
                (tau * k as f64 * i as f64 / g.nx as f64).cos() * (1.0 + j as f64 / g.ny as f64)
            });
            let v = StaggeredField::from_index_fn(Kind::V, g, |i, _| (tau * k as f64 * i as f64 / g.nx as f64).sin());
            (u, v)
        })
        .collect();
    let flat = |(u, v): &(StaggeredField, StaggeredField)| [u.values(), v.values()].concat();
    let truth: Vec<Vec<f64>> = true_modes.iter().map(flat).collect();
    for a in 0..3 {
        for b in 0..a {
            let dot: f64 = truth[a].iter().zip(&truth[b]).map(|(x, y)| x * y).sum();
            assert!(dot.abs() < 1e-9, "modes {a} and {b} are not orthogonal");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let amplitudes = [3.0, 2.0, 1.0];
    let noise = Normal::new(0.0, 1e-3).unwrap();
    let samples: Vec<(StaggeredField, StaggeredField)> = (0..300)
        .map(|_| {
            let mut u = StaggeredField::zeros(Kind::U, g);
            let mut v = StaggeredField::zeros(Kind::V, g);
            for ((mu, mv), s) in true_modes.iter().zip(amplitudes) {
                let z: f64 = StandardNormal.sample(&mut rng);
                u.axpy(s * z, mu).unwrap();
                v.axpy(s * z, mv).unwrap();
            }
            for x in u.values_mut().iter_mut().chain(v.values_mut()) {
                *x += noise.sample(&mut rng);
            }
            (u, v)
        })
        .collect();
    let basis = eof_decomposition(&samples, None, 1.0, 0.999).unwrap();
    assert_eq!(basis.n_retained, 3);
    let found: Vec<Vec<f64>> = basis.xi_u.iter().zip(&basis.xi_v).map(|(u, v)| flat(&(u.clone(), v.clone()))).collect();
    let angle = principal_angle(&found, &truth).to_degrees();
    assert!(angle < 5.0, "principal angle {angle} degrees");
}

/// Relative error of the upwind solve against a smooth solution with the
/// right-hand side evaluated from its exact gradient.
fn analytic_solve_error(nx: usize, ny: usize) -> f64 {
    let g = channel(nx, ny);
    let (a, b) = (1.0, 0.5);
    let qu = StaggeredField::constant(Kind::U, g, a);
    let qv = StaggeredField::constant(Kind::V, g, b);
    let op = UpwindOperator::new(&qu, &qv).unwrap();
    // Inflow through the south wall face, where the exterior value is 0.
    let (y0, width) = (g.dy(), g.ly - 2.0 * g.dy());
    let kx = 2.0 * std::f64::consts::PI / g.lx;
    let ky = std::f64::consts::PI / width;
    let exact = |x: f64, y: f64| (1.0 + 0.5 * (kx * x).sin()) * (ky * (y - y0)).sin();
    let rhs = |x: f64, y: f64| {
        a * 0.5 * kx * (kx * x).cos() * (ky * (y - y0)).sin()
            + b * (1.0 + 0.5 * (kx * x).sin()) * ky * (ky * (y - y0)).cos()
    };
    let f = StaggeredField::from_fn(Kind::H, g, rhs);
    let (psi, _) = op.solve(&f, &SolverOptions::default()).unwrap();
    let reference = StaggeredField::from_fn(Kind::H, g, exact);
    let (mut num, mut den) = (0.0, 0.0);
    for j in g.interior_rows() {
        for i in 0..g.nx {
            num += (psi.get(i, j) - reference.get(i, j)).powi(2);
            den += reference.get(i, j).powi(2);
        }
    }
    (num / den).sqrt()
}

#[test]
fn upwind_solve_converges_at_first_order() {
    let coarse = analytic_solve_error(139, 20);
    let fine = analytic_solve_error(278, 40);
    let order = (coarse / fine).log2();
    assert!(order >= 0.8, "errors {coarse} -> {fine}, order {order}");
}

#[test]
fn discrete_manufactured_solution_on_desk_grid() {
    let g = channel(139, 20);
    // Uniform flow has no closed streamlines, so the solution is unique.
    let uniform =
        UpwindOperator::new(&StaggeredField::constant(Kind::U, g, 1.0), &StaggeredField::constant(Kind::V, g, 0.5))
            .unwrap();
    let exact = StaggeredField::from_fn(Kind::H, g, |x, y| (x * 3e-7).sin() + y / g.ly);
    let f = uniform.apply(&exact);
    let (psi, _) = uniform.solve(&f, &SolverOptions { tolerance: 1e-14, ..Default::default() }).unwrap();
    let mut exact_interior = exact.clone();
    for j in [0, g.ny - 1] {
        exact_interior.fill_row(j, 0.0);
    }
    let err = psi.sub(&exact_interior).unwrap().l2_norm() / exact_interior.l2_norm();
    assert!(err < 1e-8, "relative error {err}");
}

#[test]
fn ar1_increments_decorrelate_at_the_expected_lag() {
    let g = channel(16, 8);
    let rho: f64 = 0.8;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let innovation = Normal::new(0.0, (1.0 - rho * rho).sqrt()).unwrap();
    let mut state: Vec<f64> = (0..g.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let deltas = (0..3000)
        .map(|_| {
            for x in state.iter_mut() {
                *x = rho * *x + innovation.sample(&mut rng);
            }
            StaggeredField::from_values(Kind::H, g, state.clone()).unwrap()
        })
        .collect();
    let series = IncrementSeries { deltas, dt_between: 1.0, delta_span: 1.0 };
    let est = decorrelation_time(&series, 0.2).unwrap();
    let expected = (0.2f64.ln() / rho.ln()).ceil() as usize;
    assert!((est.ell_decorr as i64 - expected as i64).abs() <= 1, "{} vs {expected}", est.ell_decorr);
    assert!((est.mean_abs_corr[0] - 1.0).abs() < 1e-12);
}

#[test]
fn calibrated_modes_are_divergence_free() {
    let fine = channel(160, 32);
    let p = PhysicalParams::default();
    let dt = 90.0;
    let mut series = Vec::new();
    let start = spinup(&fine, &p, 100.0, 100, dt, TimeScheme::default()).unwrap();
    srsw_core::dynamics::integrate(start, &p, 400, dt, TimeScheme::default(), |_, s| {
        series.push(s.eta.clone());
        Ok(())
    })
    .unwrap();
    let spec = CoarseningSpec::new(fine, 4, kernel_c4()).unwrap();
    let cal = calibrate(&series, &spec, dt, &CalibrationOptions::default()).unwrap();
    assert!(cal.basis.n_retained >= 1);
    let s = &cal.basis.sigma;
    assert!(s.windows(2).all(|w| w[0] >= w[1]));
    assert!((cal.basis.explained.last().unwrap() - 1.0).abs() < 1e-12);
    for (u, v) in cal.basis.xi_u.iter().zip(&cal.basis.xi_v) {
        let scale = u.max_abs().max(v.max_abs());
        let div = divergence(&u.scaled(1.0 / scale), &v.scaled(1.0 / scale));
        let g = spec.coarse;
        let worst = g.interior_rows().flat_map(|j| div.row(j).to_vec()).fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(worst * g.dx().min(g.dy()) < 1e-12, "divergence {worst}");
    }
}
