//! Periodic staggered grid and the field containers that live on it.
//!
//! Index convention (cell `(i, j)`, `i` along `x`, `j` along `y`):
//!
//! * `u_x(i, j)` sits on the left face, at `(i dx, (j + 1/2) dy)`;
//! * `u_y(i, j)` sits on the bottom face, at `((i + 1/2) dx, j dy)`;
//! * centered quantities (pressure, hidden state) sit at `((i + 1/2) dx, (j + 1/2) dy)`;
//! * node quantities (vorticity) sit on the lower-left corner `(i dx, j dy)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Backend, Eager};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub length_x: f64,
    pub length_y: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, length_x: f64, length_y: f64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::Grid(format!("need at least 4x4 cells, got {nx}x{ny}")));
        }
        if !(length_x > 0.0 && length_y > 0.0 && length_x.is_finite() && length_y.is_finite()) {
            return Err(Error::Grid(format!(
                "side lengths must be positive, got {length_x} x {length_y}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            length_x,
            length_y,
        })
    }

    /// Square `n x n` grid on a box of side `length`.
    pub fn square(n: usize, length: f64) -> Result<Self> {
        Self::new(n, n, length, length)
    }

    pub fn dx(&self) -> f64 {
        self.length_x / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.length_y / self.ny as f64
    }

    pub fn is_square(&self) -> bool {
        self.nx == self.ny && self.length_x == self.length_y
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy())
    }

    pub fn x_face(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.dx(), (j as f64 + 0.5) * self.dy())
    }

    pub fn y_face(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx(), j as f64 * self.dy())
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.dx(), j as f64 * self.dy())
    }

    /// Coarsened grid covering the same box.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.nx % factor != 0 || self.ny % factor != 0 {
            return Err(Error::Grid(format!(
                "{}x{} is not divisible by {factor}",
                self.nx, self.ny
            )));
        }
        Self::new(self.nx / factor, self.ny / factor, self.length_x, self.length_y)
    }
}

/// Velocity on cell faces; channel 0 is `u_x`, channel 1 is `u_y`.
#[derive(Clone, Debug, PartialEq)]
pub struct StaggeredField {
    grid: Grid,
    data: Tensor,
}

impl StaggeredField {
    pub fn new(grid: Grid, data: Tensor) -> Result<Self> {
        if data.shape() != [2, grid.ny, grid.nx] {
            return Err(Error::shape(
                "staggered field",
                format!("expected [2, {}, {}], got {:?}", grid.ny, grid.nx, data.shape()),
            ));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: Tensor::zeros(&[2, grid.ny, grid.nx]),
        }
    }

    /// Samples `fx` on x-faces and `fy` on y-faces.
    pub fn from_fns(grid: Grid, fx: impl Fn(f64, f64) -> f64, fy: impl Fn(f64, f64) -> f64) -> Self {
        let data = Tensor::from_fn(2, grid.ny, grid.nx, |c, j, i| {
            if c == 0 {
                let (x, y) = grid.x_face(i, j);
                fx(x, y)
            } else {
                let (x, y) = grid.y_face(i, j);
                fy(x, y)
            }
        });
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn u_x(&self) -> &[f64] {
        self.data.channel(0)
    }

    pub fn u_y(&self) -> &[f64] {
        self.data.channel(1)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.max_abs()
    }

    pub fn is_finite(&self) -> bool {
        self.data.is_finite()
    }

    /// Largest cell-centered speed `|U|`.
    pub fn max_speed(&self) -> f64 {
        let c = face_to_center(self);
        let (ux, uy) = (c.values().channel(0), c.values().channel(1));
        ux.iter().zip(uy).fold(0.0, |m, (a, b)| m.max((a * a + b * b).sqrt()))
    }

    /// `0.5 * mean(u_x^2 + u_y^2)` over faces.
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.data.data().iter().map(|v| v * v).sum::<f64>() / self.grid.cells() as f64
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            data: self.data.map(|v| v * s),
        }
    }

    pub fn roll(&self, sx: isize, sy: isize) -> Self {
        Self {
            grid: self.grid,
            data: self.data.roll(sx, sy),
        }
    }
}

/// `M`-channel quantity at cell centers (or nodes, for vorticity).
#[derive(Clone, Debug, PartialEq)]
pub struct CenteredField {
    grid: Grid,
    data: Tensor,
}

impl CenteredField {
    pub fn new(grid: Grid, data: Tensor) -> Result<Self> {
        match data.shape() {
            [_, h, w] if *h == grid.ny && *w == grid.nx => Ok(Self { grid, data }),
            s => Err(Error::shape(
                "centered field",
                format!("expected [M, {}, {}], got {s:?}", grid.ny, grid.nx),
            )),
        }
    }

    pub fn zeros(grid: Grid, channels: usize) -> Self {
        Self {
            grid,
            data: Tensor::zeros(&[channels, grid.ny, grid.nx]),
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let data = Tensor::from_fn(1, grid.ny, grid.nx, |_, j, i| {
            let (x, y) = grid.center(i, j);
            f(x, y)
        });
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn values(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.max_abs()
    }
}

/// Second-order divergence at cell centers.
pub fn divergence(u: &StaggeredField) -> CenteredField {
    let g = u.grid;
    let mut out = vec![0.0; g.cells()];
    kernels::divergence(u.data.data(), &mut out, g.ny, g.nx, g.dx(), g.dy());
    CenteredField {
        grid: g,
        data: Tensor::new(&[1, g.ny, g.nx], out).expect("shape"),
    }
}

/// Discrete curl `d u_y/dx - d u_x/dy` at lower-left nodes.
pub fn vorticity(u: &StaggeredField) -> CenteredField {
    let g = u.grid;
    let mut out = vec![0.0; g.cells()];
    kernels::vorticity(u.data.data(), &mut out, g.ny, g.nx, g.dx(), g.dy());
    CenteredField {
        grid: g,
        data: Tensor::new(&[1, g.ny, g.nx], out).expect("shape"),
    }
}

/// Two-point average of each face component onto cell centers.
pub fn face_to_center(u: &StaggeredField) -> CenteredField {
    let data = Eager.face_to_center(&u.data).expect("staggered shape");
    CenteredField { grid: u.grid, data }
}

/// Inverse-direction two-point average of a 2-channel centered field onto faces.
pub fn center_to_face(c: &CenteredField) -> Result<StaggeredField> {
    if c.channels() != 2 {
        return Err(Error::shape(
            "center_to_face",
            format!("expected 2 channels, got {}", c.channels()),
        ));
    }
    let data = Eager.center_to_face(&c.data)?;
    Ok(StaggeredField { grid: c.grid, data })
}

/// Face-centered gradient of a scalar at cell centers.
pub fn gradient(p: &CenteredField) -> Result<StaggeredField> {
    let g = p.grid;
    let data = Eager.gradient(&p.data, g.dx(), g.dy())?;
    Ok(StaggeredField { grid: g, data })
}

/// Staggered velocity `(d psi/dy, -d psi/dx)` derived from a node-valued
/// stream function; its discrete divergence vanishes identically.
pub fn from_stream_function(grid: Grid, psi: &[f64]) -> Result<StaggeredField> {
    if psi.len() != grid.cells() {
        return Err(Error::shape(
            "stream function",
            format!("expected {} nodes, got {}", grid.cells(), psi.len()),
        ));
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let at = |i: usize, j: usize| psi[(j % ny) * nx + (i % nx)];
    let data = Tensor::from_fn(2, ny, nx, |c, j, i| {
        if c == 0 {
            // x-face (i, j) spans nodes (i, j) .. (i, j + 1)
            (at(i, j + 1) - at(i, j)) / grid.dy()
        } else {
            -(at(i + 1, j) - at(i, j)) / grid.dx()
        }
    });
    StaggeredField::new(grid, data)
}
