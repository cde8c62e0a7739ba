//! Solver-in-the-loop training: trajectory loss, Adam, learning-rate
//! schedule and the chunk-length curriculum.

mod adam;
mod curriculum;

pub use adam::{optimizer_step, AdamConfig, AdamState};
pub use curriculum::{
    coarse_solver, train_curriculum, Checkpoint, LogRow, TrainOptions, TrainOutcome, BEST_DIR, CHECKPOINT_DIR,
    METRICS_FILE,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Tape};
use crate::error::{Error, Result};
use crate::grid::StaggeredField;
use crate::solver::Solver;
use crate::tensor::Tensor;
use crate::tmn::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub chunk_lengths: Vec<usize>,
    pub epochs_per_length: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_rate: f64,
    pub transition_steps: f64,
    /// Steps between hidden-state consistency terms; `None` uses the chunk
    /// length.
    pub encoder_consistency_interval: Option<usize>,
    pub hidden_loss_weight: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Cap on training chunks drawn per epoch after shuffling.
    pub samples_per_epoch: Option<usize>,
    /// Cap on validation chunks, taken in order.
    pub validation_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            chunk_lengths: vec![16, 32, 64],
            epochs_per_length: 400,
            batch_size: 8,
            lr0: 1e-3,
            decay_rate: 0.5,
            transition_steps: 50_000.0,
            encoder_consistency_interval: None,
            hidden_loss_weight: 1.0,
            adam: AdamConfig::default(),
            seed: 0,
            samples_per_epoch: None,
            validation_samples: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_lengths.is_empty() || self.chunk_lengths.contains(&0) {
            return Err(Error::config("chunk_lengths", "must be non-empty and positive"));
        }
        if self.chunk_lengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("chunk_lengths", "must be strictly ascending"));
        }
        if self.epochs_per_length == 0 {
            return Err(Error::config("epochs_per_length", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config("lr0", "must be positive"));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::config("decay_rate", "must lie in (0, 1]"));
        }
        if !(self.transition_steps > 0.0) {
            return Err(Error::config("transition_steps", "must be positive"));
        }
        if self.encoder_consistency_interval == Some(0) {
            return Err(Error::config("encoder_consistency_interval", "must be at least 1"));
        }
        if !(self.hidden_loss_weight >= 0.0 && self.hidden_loss_weight.is_finite()) {
            return Err(Error::config("hidden_loss_weight", "must be non-negative"));
        }
        if self.samples_per_epoch == Some(0) || self.validation_samples == Some(0) {
            return Err(Error::config("samples_per_epoch", "caps must be at least 1"));
        }
        self.adam.validate()
    }

    pub fn lr(&self, step: u64) -> f64 {
        self.lr0 * self.decay_rate.powf(step as f64 / self.transition_steps)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            interval: self.encoder_consistency_interval,
            hidden_weight: self.hidden_loss_weight,
        }
    }
}

/// Default exponential decay: `1e-3 * 0.5^(step / 50000)`.
pub fn lr_schedule(step: u64) -> f64 {
    TrainConfig::default().lr(step)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub interval: Option<usize>,
    pub hidden_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            interval: None,
            hidden_weight: 1.0,
        }
    }
}

/// Loss value with its two sums reported separately.
#[derive(Clone, Debug)]
pub struct LossTerms<V> {
    pub total: V,
    pub velocity: f64,
    /// Weighted hidden-consistency sum.
    pub hidden: f64,
}

fn mse<B: Backend>(b: &mut B, a: &B::Value, r: &B::Value) -> Result<B::Value> {
    let d = b.sub(a, r)?;
    let s = b.square(&d)?;
    b.mean(&s)
}

fn accumulate<B: Backend>(b: &mut B, acc: Option<B::Value>, x: B::Value) -> Result<Option<B::Value>> {
    Ok(Some(match acc {
        None => x,
        Some(a) => b.add(&a, &x)?,
    }))
}

/// Rolls the model out from `snapshots[0]` for `T = snapshots.len() - 1`
/// steps. The loss is the sum over steps `1..=T` of the velocity MSE plus
/// `hidden_weight` times the sum over steps `jN`, `j = 0..=T/N`, of the MSE
/// between the rolled-out hidden state and the encoding of the reference.
/// Step 0 contributes nothing there since both sides equal the encoding
/// of `snapshots[0]`.
pub fn trajectory_loss<B: Backend>(
    b: &mut B,
    p: &[B::Value],
    model: &Model,
    solver: &Solver,
    snapshots: &[StaggeredField],
    cfg: &LossConfig,
) -> Result<LossTerms<B::Value>> {
    let steps = snapshots.len().saturating_sub(1);
    if steps == 0 {
        return Err(Error::config(
            "snapshots",
            "need an initial state and at least one target",
        ));
    }
    let n = cfg.interval.unwrap_or(steps);
    if n == 0 || steps % n != 0 {
        return Err(Error::config(
            "encoder_consistency_interval",
            format!("{n} does not divide the chunk length {steps}"),
        ));
    }
    if let Some(s) = snapshots.iter().find(|s| s.grid() != solver.grid()) {
        return Err(Error::Grid(format!(
            "snapshot on {:?}, solver on {:?}",
            s.grid(),
            solver.grid()
        )));
    }
    let with_hidden = model.hidden_dim() > 0 && cfg.hidden_weight > 0.0;

    let mut u = b.constant(snapshots[0].tensor().clone());
    let mut h = model.encode(b, p, &u)?;
    let (mut vel, mut hid) = (None, None);
    for (i, target) in snapshots.iter().enumerate().skip(1) {
        let (un, hn) = model.step(b, p, solver, &u, h.as_ref())?;
        let r = b.constant(target.tensor().clone());
        let m = mse(b, &un, &r)?;
        vel = accumulate(b, vel, m)?;
        if with_hidden && i % n == 0 {
            let hr = model.encode(b, p, &r)?.expect("models with hidden state encode");
            let m = mse(b, hn.as_ref().expect("models with hidden state update it"), &hr)?;
            hid = accumulate(b, hid, m)?;
        }
        u = un;
        h = hn;
    }
    let vel = vel.expect("at least one step");
    let velocity = b.value(&vel).item();
    let (total, hidden) = match hid {
        Some(hs) => {
            let w = b.scale(&hs, cfg.hidden_weight)?;
            let hidden = b.value(&w).item();
            (b.add(&vel, &w)?, hidden)
        }
        None => (vel, 0.0),
    };
    let v = b.value(&total).item();
    if !v.is_finite() {
        return Err(Error::Loss(format!("{v} after {steps} steps")));
    }
    Ok(LossTerms {
        total,
        velocity,
        hidden,
    })
}

/// Loss and its gradient with respect to every model parameter, in
/// [`Model::params`] order.
pub fn loss_and_gradient(
    model: &Model,
    solver: &Solver,
    snapshots: &[StaggeredField],
    cfg: &LossConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let terms = trajectory_loss(&mut tape, &p, model, solver, snapshots, cfg)?;
    let loss = tape.value(&terms.total).item();
    let grads = tape.backward(terms.total)?;
    Ok((loss, p.iter().map(|&v| grads.wrt(v)).collect()))
}
