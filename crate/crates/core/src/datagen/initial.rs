use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{wavenumber, Fft2};
use crate::grid::{Grid, StaggeredField};
use crate::solver::poisson::PoissonSolver;
use crate::tensor::Tensor;

/// Random solenoidal velocity with shell energy `~ k^4 exp(-2 (k/k0)^2)`,
/// which peaks at `k0 = peak_wavenumber`, rescaled so that the largest
/// cell-centered speed equals `max_velocity`.
pub fn random_initial_condition(
    grid: &Grid,
    seed: u64,
    max_velocity: f64,
    peak_wavenumber: f64,
) -> Result<StaggeredField> {
    let nyquist = (grid.nx.min(grid.ny) / 2) as f64;
    if !(peak_wavenumber > 0.0 && peak_wavenumber < nyquist) {
        return Err(Error::config(
            "peak_wavenumber",
            format!("{peak_wavenumber} must lie in (0, {nyquist})"),
        ));
    }
    if !(max_velocity > 0.0 && max_velocity.is_finite()) {
        return Err(Error::config("max_velocity", "must be positive"));
    }
    let (h, w) = (grid.ny, grid.nx);
    let fft = Fft2::new(h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (kx0, ky0) = (
        2.0 * std::f64::consts::PI / grid.length_x,
        2.0 * std::f64::consts::PI / grid.length_y,
    );

    let mut data = Vec::with_capacity(2 * h * w);
    for _ in 0..2 {
        let noise: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut spec: Vec<Complex64> = fft.forward_real(&noise);
        for ky in 0..h {
            let ny = wavenumber(ky, h);
            for kx in 0..w {
                let nx = wavenumber(kx, w);
                let k = ((nx as f64 * kx0).powi(2) + (ny as f64 * ky0).powi(2)).sqrt();
                let beyond = 2 * nx.unsigned_abs() as usize >= w || 2 * ny.unsigned_abs() as usize >= h;
                let amp = if k == 0.0 || beyond {
                    0.0
                } else {
                    (k.powi(3) * (-2.0 * (k / peak_wavenumber).powi(2)).exp()).sqrt()
                };
                spec[ky * w + kx] *= amp;
            }
        }
        fft.inverse(&mut spec);
        data.extend(spec.iter().map(|c| c.re));
    }

    let raw = StaggeredField::new(*grid, Tensor::new(&[2, h, w], data)?)?;
    let poisson = PoissonSolver::new(*grid);
    let div = crate::grid::divergence(&raw);
    let p = crate::grid::CenteredField::new(
        *grid,
        Tensor::new(&[1, h, w], poisson.solve_pseudo(div.values().data()))?,
    )?;
    let gp = crate::grid::gradient(&p)?;
    let projected = raw.tensor().zip_map(gp.tensor(), |a, b| a - b);
    let field = StaggeredField::new(*grid, projected)?;
    let speed = field.max_speed();
    if speed == 0.0 {
        return Err(Error::Grid(
            "grid too coarse for a non-trivial initial condition".into(),
        ));
    }
    Ok(field.scaled(max_velocity / speed))
}
