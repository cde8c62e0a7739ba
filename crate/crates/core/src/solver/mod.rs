//! Explicit finite-volume base solver for incompressible Navier-Stokes on
//! the periodic staggered grid.
//!
//! Each stage is an explicit update with the momentum tendency
//! (advection + diffusion + body force) followed by an exact pressure
//! projection; stages are combined by SSP-RK3 (projected once more) by
//! default, or a single forward-Euler stage. All arithmetic goes through [`Backend`], so the same
//! code runs eagerly and on a differentiation tape.

pub mod poisson;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager};
use crate::error::{Error, Result};
use crate::grid::{Grid, StaggeredField};
use crate::tensor::Tensor;
use poisson::PoissonSolver;

pub const CFL_WARN: f64 = 0.5;
pub const CFL_MAX: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingKind {
    Kolmogorov,
    None,
}

/// Explicit time integrator. Every stage ends with a pressure projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    ForwardEuler,
    /// Three-stage strong-stability-preserving Runge-Kutta (Shu-Osher form).
    #[default]
    Rk3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub density: f64,
    pub viscosity: f64,
    pub dt: f64,
    pub forcing: ForcingKind,
    pub forcing_amplitude: f64,
    pub forcing_wavenumber: f64,
    pub drag: f64,
    #[serde(default)]
    pub time_scheme: TimeScheme,
}

impl Default for PhysicsConfig {
    /// Forced Kolmogorov flow at Re = 1000 on the 64x64 base grid.
    fn default() -> Self {
        Self {
            density: 1.0,
            viscosity: 1e-3,
            dt: 7.0125e-3,
            forcing: ForcingKind::Kolmogorov,
            forcing_amplitude: 1.0,
            forcing_wavenumber: 4.0,
            drag: 0.1,
            time_scheme: TimeScheme::Rk3,
        }
    }
}

impl PhysicsConfig {
    /// Unforced flow with the given kinematic viscosity.
    pub fn decaying(viscosity: f64, dt: f64) -> Self {
        Self {
            viscosity,
            dt,
            forcing: ForcingKind::None,
            drag: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::config("density", "must be positive"));
        }
        if !(self.viscosity >= 0.0 && self.viscosity.is_finite()) {
            return Err(Error::config("viscosity", "must be non-negative"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", "must be positive"));
        }
        if !(self.drag >= 0.0 && self.drag.is_finite()) {
            return Err(Error::config("drag", "must be non-negative"));
        }
        Ok(())
    }

    pub fn kinematic_viscosity(&self) -> f64 {
        self.viscosity / self.density
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub velocity: StaggeredField,
    pub time: f64,
    pub step_index: usize,
}

impl SolverState {
    pub fn new(velocity: StaggeredField) -> Self {
        Self {
            velocity,
            time: 0.0,
            step_index: 0,
        }
    }
}

/// Base solver bound to one grid and one set of physical constants.
#[derive(Clone, Debug)]
pub struct Solver {
    grid: Grid,
    physics: PhysicsConfig,
    poisson: Arc<PoissonSolver>,
    body_force: Option<Tensor>,
}

impl Solver {
    pub fn new(grid: Grid, physics: PhysicsConfig) -> Result<Self> {
        physics.validate()?;
        let body_force = match physics.forcing {
            ForcingKind::None => None,
            ForcingKind::Kolmogorov => Some(Tensor::from_fn(2, grid.ny, grid.nx, |c, j, i| {
                if c == 0 {
                    let (_, y) = grid.x_face(i, j);
                    physics.forcing_amplitude * (physics.forcing_wavenumber * y).sin()
                } else {
                    0.0
                }
            })),
        };
        Ok(Self {
            grid,
            poisson: Arc::new(PoissonSolver::new(grid)),
            physics,
            body_force,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn physics(&self) -> &PhysicsConfig {
        &self.physics
    }

    pub fn poisson(&self) -> &Arc<PoissonSolver> {
        &self.poisson
    }

    /// `-div(u u)` in conservative flux form with linear interpolation of the
    /// advected velocity to the flux locations.
    pub fn advection<B: Backend>(&self, b: &mut B, u: &B::Value) -> Result<B::Value> {
        let (dx, dy) = (self.grid.dx(), self.grid.dy());
        let ux = b.slice_channels(u, 0, 1)?;
        let uy = b.slice_channels(u, 1, 1)?;

        // normal fluxes at cell centers: u_c^2 and v_c^2
        let centered = b.face_to_center(u)?;
        let normal = b.square(&centered)?;
        let fxx = b.slice_channels(&normal, 0, 1)?;
        let fyy = b.slice_channels(&normal, 1, 1)?;

        // cross flux u_n v_n at lower-left nodes
        let ux_below = b.shift(&ux, 0, 1)?;
        let un = b.add(&ux, &ux_below)?;
        let uy_left = b.shift(&uy, 1, 0)?;
        let vn = b.add(&uy, &uy_left)?;
        let g = b.mul(&un, &vn)?;
        let g = b.scale(&g, 0.25)?;

        // x-momentum on x-faces
        let fxx_left = b.shift(&fxx, 1, 0)?;
        let dfx = b.sub(&fxx, &fxx_left)?;
        let g_up = b.shift(&g, 0, -1)?;
        let dgy = b.sub(&g_up, &g)?;
        let ax = b.scale(&dfx, -1.0 / dx)?;
        let ax2 = b.scale(&dgy, -1.0 / dy)?;
        let ax = b.add(&ax, &ax2)?;

        // y-momentum on y-faces
        let g_right = b.shift(&g, -1, 0)?;
        let dgx = b.sub(&g_right, &g)?;
        let fyy_below = b.shift(&fyy, 0, 1)?;
        let dfy = b.sub(&fyy, &fyy_below)?;
        let ay = b.scale(&dgx, -1.0 / dx)?;
        let ay2 = b.scale(&dfy, -1.0 / dy)?;
        let ay = b.add(&ay, &ay2)?;

        b.concat_channels(&[&ax, &ay])
    }

    /// `(mu / rho)` times the five-point Laplacian of each component.
    pub fn diffusion<B: Backend>(&self, b: &mut B, u: &B::Value) -> Result<B::Value> {
        let nu = self.physics.kinematic_viscosity();
        let (dx2, dy2) = (self.grid.dx().powi(2), self.grid.dy().powi(2));
        let left = b.shift(u, 1, 0)?;
        let right = b.shift(u, -1, 0)?;
        let down = b.shift(u, 0, 1)?;
        let up = b.shift(u, 0, -1)?;
        let sx = b.add(&left, &right)?;
        let sy = b.add(&down, &up)?;
        let sx = b.scale(&sx, nu / dx2)?;
        let sy = b.scale(&sy, nu / dy2)?;
        let center = b.scale(u, -2.0 * nu * (1.0 / dx2 + 1.0 / dy2))?;
        let s = b.add(&sx, &sy)?;
        b.add(&s, &center)
    }

    /// Body force per unit mass: `A sin(k y) e_x - drag u`, or nothing.
    pub fn forcing<B: Backend>(&self, b: &mut B, u: &B::Value) -> Result<Option<B::Value>> {
        let Some(f) = &self.body_force else {
            return Ok(None);
        };
        let f = b.constant(f.clone());
        if self.physics.drag == 0.0 {
            return Ok(Some(f));
        }
        let drag = b.scale(u, -self.physics.drag)?;
        Ok(Some(b.add(&f, &drag)?))
    }

    /// Removes the gradient part: `u - grad p` with `lap p = div u`.
    pub fn project<B: Backend>(&self, b: &mut B, u: &B::Value) -> Result<B::Value> {
        let (dx, dy) = (self.grid.dx(), self.grid.dy());
        let div = b.divergence(u, dx, dy)?;
        let p = b.poisson(&div, &self.poisson)?;
        let gp = b.gradient(&p, dx, dy)?;
        b.sub(u, &gp)
    }

    /// Sum of advection, diffusion and forcing.
    pub fn tendency<B: Backend>(&self, b: &mut B, u: &B::Value) -> Result<B::Value> {
        let adv = self.advection(b, u)?;
        let diff = self.diffusion(b, u)?;
        let mut rhs = b.add(&adv, &diff)?;
        if let Some(f) = self.forcing(b, u)? {
            rhs = b.add(&rhs, &f)?;
        }
        Ok(rhs)
    }

    /// Projected Euler stage `project(u + dt * tendency(u))`.
    fn euler_stage<B: Backend>(&self, b: &mut B, u: &B::Value) -> Result<B::Value> {
        let rhs = self.tendency(b, u)?;
        let inc = b.scale(&rhs, self.physics.dt)?;
        let star = b.add(u, &inc)?;
        self.project(b, &star)
    }

    /// One time step of the configured scheme.
    pub fn advance<B: Backend>(&self, b: &mut B, u: &B::Value) -> Result<B::Value> {
        match self.physics.time_scheme {
            TimeScheme::ForwardEuler => self.euler_stage(b, u),
            TimeScheme::Rk3 => {
                let u1 = self.euler_stage(b, u)?;
                let e1 = self.euler_stage(b, &u1)?;
                let a = b.scale(u, 0.75)?;
                let c = b.scale(&e1, 0.25)?;
                let u2 = b.add(&a, &c)?;
                let e2 = self.euler_stage(b, &u2)?;
                let a = b.scale(u, 1.0 / 3.0)?;
                let c = b.scale(&e2, 2.0 / 3.0)?;
                // The combination keeps a third of any divergence in `u`,
                // which corrected hybrid states carry.
                let u3 = b.add(&a, &c)?;
                self.project(b, &u3)
            }
        }
    }

    /// Courant number `max|U| dt / dx`.
    pub fn cfl(&self, u: &Tensor) -> f64 {
        u.max_abs() * self.physics.dt / self.grid.dx().min(self.grid.dy())
    }

    pub fn check_cfl(&self, u: &Tensor, step: usize) {
        let c = self.cfl(u);
        if c > CFL_MAX {
            log::warn!("step {step}: CFL number {c:.3} exceeds {CFL_MAX}");
        } else if c > CFL_WARN {
            log::debug!("step {step}: CFL number {c:.3} above {CFL_WARN}");
        }
    }

    /// Eager step of a solver state with blow-up detection.
    pub fn step(&self, state: &SolverState) -> Result<SolverState> {
        if state.velocity.grid() != &self.grid {
            return Err(Error::Grid("state grid differs from solver grid".into()));
        }
        self.check_cfl(state.velocity.tensor(), state.step_index);
        let next = self.advance(&mut Eager, state.velocity.tensor())?;
        let step_index = state.step_index + 1;
        if !next.is_finite() {
            return Err(Error::BlowUp { step: step_index });
        }
        Ok(SolverState {
            velocity: StaggeredField::new(self.grid, next)?,
            time: step_index as f64 * self.physics.dt,
            step_index,
        })
    }

    /// Runs `steps` eager steps and returns every state including the first.
    pub fn rollout(&self, u0: &StaggeredField, steps: usize) -> Result<Vec<StaggeredField>> {
        let mut out = Vec::with_capacity(steps + 1);
        let mut state = SolverState::new(u0.clone());
        out.push(u0.clone());
        for _ in 0..steps {
            state = self.step(&state)?;
            out.push(state.velocity.clone());
        }
        Ok(out)
    }

    pub fn advection_field(&self, u: &StaggeredField) -> Result<StaggeredField> {
        StaggeredField::new(self.grid, self.advection(&mut Eager, u.tensor())?)
    }

    pub fn diffusion_field(&self, u: &StaggeredField) -> Result<StaggeredField> {
        StaggeredField::new(self.grid, self.diffusion(&mut Eager, u.tensor())?)
    }

    pub fn forcing_field(&self, u: &StaggeredField) -> Result<StaggeredField> {
        match self.forcing(&mut Eager, u.tensor())? {
            Some(t) => StaggeredField::new(self.grid, t),
            None => Ok(StaggeredField::zeros(self.grid)),
        }
    }

    pub fn project_field(&self, u: &StaggeredField) -> Result<StaggeredField> {
        StaggeredField::new(self.grid, self.project(&mut Eager, u.tensor())?)
    }
}

#[cfg(test)]
mod tests;
