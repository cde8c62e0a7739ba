use std::f64::consts::PI;

use super::*;
use crate::grid::{divergence, StaggeredField};

fn grid(n: usize) -> Grid {
    Grid::square(n, 2.0 * PI).unwrap()
}

fn random_field(g: Grid, seed: u64) -> StaggeredField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let t = Tensor::from_fn(2, g.ny, g.nx, |_, _, _| rng.random_range(-1.0..1.0));
    StaggeredField::new(g, t).unwrap()
}

fn max_diff(a: &StaggeredField, b: &StaggeredField) -> f64 {
    a.tensor()
        .data()
        .iter()
        .zip(b.tensor().data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn taylor_green(g: Grid, scale: f64) -> StaggeredField {
    StaggeredField::from_fns(g, |x, y| scale * x.cos() * y.sin(), |x, y| -scale * x.sin() * y.cos())
}

#[test]
fn advection_of_constant_is_zero() {
    let s = Solver::new(grid(16), PhysicsConfig::default()).unwrap();
    let u = StaggeredField::from_fns(grid(16), |_, _| 0.7, |_, _| -1.1);
    assert!(s.advection_field(&u).unwrap().max_abs() < 1e-13);
}

#[test]
fn shear_has_no_x_advection() {
    let g = grid(32);
    let s = Solver::new(g, PhysicsConfig::default()).unwrap();
    let u = StaggeredField::from_fns(g, |_, y| y.sin(), |_, _| 0.0);
    let a = s.advection_field(&u).unwrap();
    assert!(a.u_x().iter().all(|v| v.abs() < 1e-14));
}

#[test]
fn taylor_green_advection_converges_at_second_order() {
    // -(u . grad) u = (sin 2x / 2, sin 2y / 2) for the Taylor-Green field
    let err = |n: usize| {
        let g = grid(n);
        let s = Solver::new(g, PhysicsConfig::default()).unwrap();
        let exact = StaggeredField::from_fns(g, |x, _| 0.5 * (2.0 * x).sin(), |_, y| 0.5 * (2.0 * y).sin());
        max_diff(&s.advection_field(&taylor_green(g, 1.0)).unwrap(), &exact)
    };
    let (e32, e64, e128) = (err(32), err(64), err(128));
    let dx = 2.0 * PI / 128.0;
    assert!(e128 <= 2.0 * dx * dx, "{e128}");
    assert!(e32 / e64 > 3.5 && e64 / e128 > 3.5, "{e32} {e64} {e128}");
}

#[test]
fn diffusion_matches_laplacian_of_sine() {
    let g = grid(64);
    let phys = PhysicsConfig {
        viscosity: 0.02,
        density: 2.0,
        ..PhysicsConfig::default()
    };
    let s = Solver::new(g, phys).unwrap();
    let u = StaggeredField::from_fns(g, |x, _| x.sin(), |_, _| 0.0);
    let d = s.diffusion_field(&u).unwrap();
    let exact = StaggeredField::from_fns(g, |x, _| -0.01 * x.sin(), |_, _| 0.0);
    let dx = g.dx();
    assert!(max_diff(&d, &exact) <= 0.01 * dx * dx);
    let c = StaggeredField::from_fns(g, |_, _| 3.0, |_, _| 3.0);
    assert!(s.diffusion_field(&c).unwrap().max_abs() < 1e-12);
}

#[test]
fn diffusion_is_linear() {
    let g = grid(16);
    let s = Solver::new(g, PhysicsConfig::default()).unwrap();
    let (u, v) = (random_field(g, 1), random_field(g, 2));
    let combo = StaggeredField::new(g, u.tensor().zip_map(v.tensor(), |a, b| 2.0 * a - 0.5 * b)).unwrap();
    let lhs = s.diffusion_field(&combo).unwrap();
    let du = s.diffusion_field(&u).unwrap();
    let dv = s.diffusion_field(&v).unwrap();
    let rhs = StaggeredField::new(g, du.tensor().zip_map(dv.tensor(), |a, b| 2.0 * a - 0.5 * b)).unwrap();
    assert!(max_diff(&lhs, &rhs) <= 1e-12 * rhs.max_abs());
}

#[test]
fn kolmogorov_forcing_at_rest() {
    let g = grid(32);
    let s = Solver::new(g, PhysicsConfig::default()).unwrap();
    let f = s.forcing_field(&StaggeredField::zeros(g)).unwrap();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (_, y) = g.x_face(i, j);
            assert_eq!(f.tensor().at(0, j, i), (4.0 * y).sin());
            assert_eq!(f.tensor().at(1, j, i), 0.0);
        }
    }
}

#[test]
fn drag_is_linear_in_velocity() {
    let g = grid(16);
    let s = Solver::new(g, PhysicsConfig::default()).unwrap();
    let u = random_field(g, 3);
    let fu = s.forcing_field(&u).unwrap();
    let f0 = s.forcing_field(&StaggeredField::zeros(g)).unwrap();
    for k in 0..u.tensor().len() {
        let lhs = fu.tensor().data()[k] - f0.tensor().data()[k];
        let rhs = -0.1 * u.tensor().data()[k];
        assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON, "{lhs} vs {rhs}");
    }
}

#[test]
fn no_forcing_gives_zero() {
    let g = grid(16);
    let s = Solver::new(g, PhysicsConfig::decaying(0.01, 0.01)).unwrap();
    assert_eq!(s.forcing_field(&random_field(g, 4)).unwrap().max_abs(), 0.0);
}

#[test]
fn projection_is_idempotent_and_solenoidal() {
    let g = grid(32);
    let s = Solver::new(g, PhysicsConfig::default()).unwrap();
    let u = random_field(g, 5);
    let p = s.project_field(&u).unwrap();
    assert!(divergence(&p).max_abs() <= 1e-10 * u.max_abs());
    let pp = s.project_field(&p).unwrap();
    assert!(max_diff(&p, &pp) <= 1e-12);
}

#[test]
fn projection_annihilates_gradients() {
    let g = grid(32);
    let s = Solver::new(g, PhysicsConfig::default()).unwrap();
    // phi = sin(x) cos(2y) + 0.3 cos(3x): gradient on faces built spectrally from phi at centers
    let phi = crate::grid::CenteredField::from_fn(g, |x, y| x.sin() * (2.0 * y).cos() + 0.3 * (3.0 * x).cos());
    let u = crate::grid::gradient(&phi).unwrap();
    let p = s.project_field(&u).unwrap();
    assert!(p.max_abs() <= 1e-12 * u.max_abs().max(1.0), "{}", p.max_abs());
}

#[test]
fn rest_is_a_fixed_point_without_forcing() {
    let g = grid(16);
    let s = Solver::new(g, PhysicsConfig::decaying(0.01, 0.01)).unwrap();
    let mut st = SolverState::new(StaggeredField::zeros(g));
    for _ in 0..5 {
        st = s.step(&st).unwrap();
    }
    assert_eq!(st.velocity.max_abs(), 0.0);
    assert_eq!(st.step_index, 5);
    assert!((st.time - 0.05).abs() < 1e-9);
}

#[test]
fn taylor_green_decays_at_the_analytic_rate() {
    let g = grid(64);
    let nu = 0.01;
    let dt = 0.01;
    for scheme in [TimeScheme::ForwardEuler, TimeScheme::Rk3] {
        let phys = PhysicsConfig {
            time_scheme: scheme,
            ..PhysicsConfig::decaying(nu, dt)
        };
        let s = Solver::new(g, phys).unwrap();
        let traj = s.rollout(&taylor_green(g, 1.0), 50).unwrap();
        let t = 50.0 * dt;
        let exact = taylor_green(g, (-2.0 * nu * t).exp());
        let rel = max_diff(&traj[50], &exact) / exact.max_abs();
        assert!(rel < 2e-3, "{scheme:?}: {rel}");
    }
}

#[test]
fn decaying_flow_loses_energy_and_keeps_momentum() {
    let g = grid(32);
    let s = Solver::new(g, PhysicsConfig::decaying(0.01, 0.005)).unwrap();
    let u0 = s.project_field(&random_field(g, 6)).unwrap();
    let mean = |u: &StaggeredField| {
        let n = g.cells() as f64;
        (u.u_x().iter().sum::<f64>() / n, u.u_y().iter().sum::<f64>() / n)
    };
    let m0 = mean(&u0);
    let mut st = SolverState::new(u0);
    for _ in 0..40 {
        let next = s.step(&st).unwrap();
        assert!(next.velocity.kinetic_energy() <= st.velocity.kinetic_energy());
        let m = mean(&next.velocity);
        assert!((m.0 - m0.0).abs() < 1e-12 && (m.1 - m0.1).abs() < 1e-12);
        assert!(divergence(&next.velocity).max_abs() <= 1e-10 * next.velocity.max_abs().max(1.0));
        st = next;
    }
}

#[test]
fn steps_are_deterministic() {
    let g = grid(16);
    let s = Solver::new(g, PhysicsConfig::default()).unwrap();
    let u0 = s.project_field(&random_field(g, 7)).unwrap();
    let a = s.rollout(&u0, 10).unwrap();
    let b = s.rollout(&u0, 10).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let bits = |f: &StaggeredField| f.tensor().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x), bits(y));
    }
}

#[test]
fn blow_up_is_reported() {
    let g = grid(8);
    let s = Solver::new(g, PhysicsConfig::default()).unwrap();
    let mut t = Tensor::zeros(&[2, 8, 8]);
    t.data_mut()[3] = f64::NAN;
    let st = SolverState::new(StaggeredField::new(g, t).unwrap());
    assert!(matches!(s.step(&st), Err(Error::BlowUp { step: 1 })));
}

#[test]
fn invalid_physics_is_rejected() {
    let bad = PhysicsConfig {
        density: 0.0,
        ..PhysicsConfig::default()
    };
    assert!(Solver::new(grid(8), bad).is_err());
}
