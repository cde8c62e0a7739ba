//! Reference trajectory generation, downsampling and chunking.

mod case;
mod dataset;
mod initial;
mod trajectory;

pub use case::{CaseConfig, CaseKind};
pub use dataset::{generate_dataset, Dataset, DatasetConfig, DatasetEntry, Split};
pub use initial::random_initial_condition;
pub use trajectory::{Trajectory, TrajectoryHeader};

use crate::error::{Error, Result};
use crate::grid::{Grid, StaggeredField};
use crate::solver::{Solver, SolverState};
use crate::tensor::Tensor;

/// Averages fine face values over each coarse face. A discretely
/// divergence-free fine field stays divergence-free, since the coarse flux
/// through a cell side is the sum of the fine fluxes through it.
pub fn downsample(u: &StaggeredField, factor: usize) -> Result<StaggeredField> {
    let fine = u.grid();
    let coarse: Grid = fine.coarsen(factor)?;
    let t = u.tensor();
    let inv = 1.0 / factor as f64;
    let data = Tensor::from_fn(2, coarse.ny, coarse.nx, |c, j, i| {
        let (fi, fj) = (i * factor, j * factor);
        let s: f64 = if c == 0 {
            (0..factor).map(|k| t.at(0, fj + k, fi)).sum()
        } else {
            (0..factor).map(|k| t.at(1, fj, fi + k)).sum()
        };
        s * inv
    });
    StaggeredField::new(coarse, data)
}

/// Training window: an initial condition followed by `T` targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Index of the source trajectory in its dataset.
    pub source: usize,
    /// Index of the first snapshot in the source trajectory.
    pub offset: usize,
    pub snapshots: Vec<StaggeredField>,
}

impl Sample {
    pub fn steps(&self) -> usize {
        self.snapshots.len() - 1
    }
}

/// Splits into non-overlapping windows of `steps + 1` snapshots starting at
/// offsets `k (steps + 1)`; the remainder is dropped.
pub fn chunk(traj: &Trajectory, steps: usize, source: usize) -> Result<Vec<Sample>> {
    if steps == 0 {
        return Err(Error::config("steps", "chunk length must be at least 1"));
    }
    let w = steps + 1;
    if traj.len() < w {
        return Err(Error::TooShort { len: traj.len(), steps });
    }
    Ok((0..traj.len() / w)
        .map(|k| Sample {
            source,
            offset: k * w,
            snapshots: traj.snapshots[k * w..(k + 1) * w].to_vec(),
        })
        .collect())
}

/// Reference output: the downsampled coarse trajectory, the fine state at
/// its first snapshot and, on request, the whole fine trajectory.
#[derive(Clone, Debug)]
pub struct Reference {
    pub coarse: Trajectory,
    pub fine_start: Trajectory,
    pub fine: Option<Trajectory>,
}

/// Runs the fine solver from a random initial condition, discards the
/// warm-up and records one snapshot per coarse step.
pub fn generate_reference(cfg: &CaseConfig) -> Result<Reference> {
    cfg.validate()?;
    let fine_grid = cfg.fine_grid()?;
    let coarse_grid = cfg.coarse_grid()?;
    let factor = cfg.factor();
    let solver = Solver::new(fine_grid, cfg.fine_physics())?;
    let u0 = random_initial_condition(&fine_grid, cfg.seed, cfg.max_velocity, cfg.peak_wavenumber)?;
    let mut state = SolverState::new(u0);
    for _ in 0..cfg.warmup_steps() {
        state = solver.step(&state)?;
    }
    let start_time = state.time;
    let fine_start = state.velocity.clone();
    let mut coarse = Vec::with_capacity(cfg.n_steps + 1);
    let mut fine = Vec::new();
    for k in 0..=cfg.n_steps {
        if k > 0 {
            for _ in 0..factor {
                state = solver.step(&state)?;
            }
        }
        coarse.push(downsample(&state.velocity, factor)?);
        if cfg.store_fine {
            fine.push(state.velocity.clone());
        }
    }
    let header = |grid, stride, physics| TrajectoryHeader {
        grid,
        dt: cfg.dt_coarse,
        stride,
        physics,
        case: cfg.case,
        seed: cfg.seed,
        start_time,
    };
    Ok(Reference {
        coarse: Trajectory::new(header(coarse_grid, factor, cfg.fine_physics()), coarse)?,
        fine_start: Trajectory::new(header(fine_grid, factor, cfg.fine_physics()), vec![fine_start])?,
        fine: if cfg.store_fine {
            Some(Trajectory::new(header(fine_grid, factor, cfg.fine_physics()), fine)?)
        } else {
            None
        },
    })
}
