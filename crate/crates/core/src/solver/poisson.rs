//! Exact periodic Poisson solve for the 5-point Laplacian.
//!
//! The discrete Laplacian is diagonal in the Fourier basis with eigenvalues
//! `(2 cos(2 pi kx / nx) - 2) / dx^2 + (2 cos(2 pi ky / ny) - 2) / dy^2`,
//! so the solve is a pointwise division between two FFTs. The zero mode is
//! pinned to zero, which makes the operator the symmetric pseudo-inverse.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::Grid;

/// Tolerance on the right-hand-side mean, relative to `max(max|rhs|, 1)`.
/// The floor keeps roundoff-level divergences of solenoidal fields solvable.
pub const SOLVABILITY_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct PoissonSolver {
    grid: Grid,
    fft: Fft2,
    inv_eigen: Vec<f64>,
}

impl PoissonSolver {
    pub fn new(grid: Grid) -> Self {
        let (h, w) = (grid.ny, grid.nx);
        let (dx2, dy2) = (grid.dx() * grid.dx(), grid.dy() * grid.dy());
        let tau = 2.0 * std::f64::consts::PI;
        let mut inv_eigen = vec![0.0; h * w];
        for ky in 0..h {
            let ey = (2.0 * (tau * ky as f64 / h as f64).cos() - 2.0) / dy2;
            for kx in 0..w {
                let ex = (2.0 * (tau * kx as f64 / w as f64).cos() - 2.0) / dx2;
                let lam = ex + ey;
                inv_eigen[ky * w + kx] = if kx == 0 && ky == 0 { 0.0 } else { 1.0 / lam };
            }
        }
        Self {
            grid,
            fft: Fft2::new(h, w),
            inv_eigen,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Solves `L p = rhs` with `mean(p) = 0`; fails when `rhs` is not
    /// (numerically) mean-free.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
        let max_abs = rhs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if mean.abs() > SOLVABILITY_TOL * max_abs.max(1.0) {
            return Err(Error::Unsolvable { mean, max_abs });
        }
        Ok(self.solve_pseudo(rhs))
    }

    /// Pseudo-inverse: the mean of `rhs` is discarded instead of rejected.
    pub fn solve_pseudo(&self, rhs: &[f64]) -> Vec<f64> {
        let mut c: Vec<Complex64> = rhs.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.forward(&mut c);
        for (v, s) in c.iter_mut().zip(&self.inv_eigen) {
            *v *= *s;
        }
        self.fft.inverse(&mut c);
        c.into_iter().map(|v| v.re).collect()
    }
}

/// Five-point Laplacian of a centered scalar, periodic.
pub fn laplacian(grid: &Grid, p: &[f64]) -> Vec<f64> {
    let (h, w) = (grid.ny, grid.nx);
    let (dx2, dy2) = (grid.dx() * grid.dx(), grid.dy() * grid.dy());
    let mut out = vec![0.0; h * w];
    for j in 0..h {
        let (jm, jp) = ((j + h - 1) % h, (j + 1) % h);
        for i in 0..w {
            let (im, ip) = ((i + w - 1) % w, (i + 1) % w);
            let c = p[j * w + i];
            out[j * w + i] =
                (p[j * w + im] - 2.0 * c + p[j * w + ip]) / dx2 + (p[jm * w + i] - 2.0 * c + p[jp * w + i]) / dy2;
        }
    }
    out
}
