use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Eager;
use crate::error::{Error, Result};
use crate::grid::StaggeredField;
use crate::solver::{Solver, SolverState};
use crate::tensor::Tensor;
use crate::tmn::Model;

/// Wall-clock seconds of repeated runs after one discarded warm-up run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: Vec<f64>,
    pub median: f64,
    /// Interquartile range.
    pub iqr: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn measure(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<TimingStats> {
    if repeats < 5 {
        return Err(Error::config("repeats", "need at least 5 repeats"));
    }
    f()?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_secs_f64());
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(TimingStats {
        median: quantile(&sorted, 0.5),
        iqr: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
        samples,
    })
}

/// Cost of advancing one simulated time unit with the hybrid coarse model
/// and with the fine solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Seconds per simulated time unit.
    pub coarse: TimingStats,
    pub fine: TimingStats,
    /// `fine.median / coarse.median`.
    pub speedup: f64,
}

/// Times `steps` coarse steps of `model` (the bare coarse solver when
/// `None`) against the fine solver covering the same simulated time.
pub fn timing_harness(
    model: Option<&Model>,
    coarse: &Solver,
    u_coarse: &StaggeredField,
    fine: &Solver,
    u_fine: &StaggeredField,
    steps: usize,
    repeats: usize,
) -> Result<TimingReport> {
    if steps == 0 {
        return Err(Error::config("steps", "must be at least 1"));
    }
    let ratio = coarse.physics().dt / fine.physics().dt;
    let fine_steps = ratio.round() as usize * steps;
    if fine_steps == 0 || (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::config("dt", "coarse step must be a multiple of the fine step"));
    }
    let span = steps as f64 * coarse.physics().dt;

    let p: Vec<Tensor> = model
        .map(|m| m.params().into_iter().cloned().collect())
        .unwrap_or_default();
    let mut c = measure(repeats, || {
        let mut e = Eager;
        match model {
            Some(m) => {
                let mut u = u_coarse.tensor().clone();
                let mut h = m.encode(&mut e, &p, &u)?;
                for _ in 0..steps {
                    let (un, hn) = m.step(&mut e, &p, coarse, &u, h.as_ref())?;
                    u = un;
                    h = hn;
                }
            }
            None => {
                let mut s = SolverState::new(u_coarse.clone());
                for _ in 0..steps {
                    s = coarse.step(&s)?;
                }
            }
        }
        Ok(())
    })?;
    let mut f = measure(repeats, || {
        let mut s = SolverState::new(u_fine.clone());
        for _ in 0..fine_steps {
            s = fine.step(&s)?;
        }
        Ok(())
    })?;
    for stats in [&mut c, &mut f] {
        for x in stats.samples.iter_mut() {
            *x /= span;
        }
        stats.median /= span;
        stats.iqr /= span;
    }
    Ok(TimingReport {
        speedup: f.median / c.median,
        coarse: c,
        fine: f,
    })
}
