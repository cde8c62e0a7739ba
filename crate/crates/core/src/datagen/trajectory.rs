use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CaseKind;
use crate::binio::{self, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::grid::{Grid, StaggeredField};
use crate::solver::PhysicsConfig;
use crate::tensor::Tensor;

const MAGIC: &[u8] = b"TMNT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub grid: Grid,
    /// Time between snapshots.
    pub dt: f64,
    /// Solver steps between snapshots.
    pub stride: usize,
    /// Physics of the solver that produced the data (its `dt` is the
    /// solver step, `dt / stride`).
    pub physics: PhysicsConfig,
    pub case: CaseKind,
    pub seed: u64,
    /// Simulated time of the first snapshot.
    pub start_time: f64,
}

/// Equally spaced velocity snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub snapshots: Vec<StaggeredField>,
}

impl Trajectory {
    pub fn new(header: TrajectoryHeader, snapshots: Vec<StaggeredField>) -> Result<Self> {
        if let Some(s) = snapshots.iter().find(|s| s.grid() != &header.grid) {
            return Err(Error::Grid(format!(
                "snapshot on {:?}, header says {:?}",
                s.grid(),
                header.grid
            )));
        }
        Ok(Self { header, snapshots })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Time spanned from the first to the last snapshot.
    pub fn duration(&self) -> f64 {
        self.len().saturating_sub(1) as f64 * self.header.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.header.start_time + k as f64 * self.header.dt
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.str(&serde_json::to_string(&self.header).expect("header serializes"));
        e.u64(self.len() as u64);
        for s in &self.snapshots {
            e.f64s(s.tensor().data());
        }
        e.finish(MAGIC)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut d = Decoder::open(bytes, MAGIC, path)?;
        let header: TrajectoryHeader = serde_json::from_str(&d.str()?).map_err(|e| d.err(format!("header: {e}")))?;
        let n = d.u64()? as usize;
        let g = header.grid;
        let mut snapshots = Vec::with_capacity(n);
        for _ in 0..n {
            let data = d.f64s(2 * g.nx * g.ny)?;
            snapshots.push(StaggeredField::new(g, Tensor::new(&[2, g.ny, g.nx], data)?)?);
        }
        d.finish()?;
        Self::new(header, snapshots)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read(path)?, path)
    }
}
