use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{loss_and_gradient, optimizer_step, trajectory_loss, AdamState, LossConfig, TrainConfig};
use crate::autodiff::Eager;
use crate::binio::{self, Decoder, Encoder};
use crate::datagen::{chunk, Sample, Trajectory};
use crate::error::{Error, Result};
use crate::solver::{PhysicsConfig, Solver};
use crate::tensor::Tensor;
use crate::tmn::{load_bundle, save_bundle, Model};

pub const METRICS_FILE: &str = "metrics.csv";
const CSV_HEADER: &str = "step,epoch,T,lr,train_loss,val_loss,skipped";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const BEST_DIR: &str = "best";
const STATE_FILE: &str = "optimizer.tmno";
const STATE_MAGIC: &[u8] = b"TMNO1";

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory for the metrics log, checkpoints and the best bundle.
    pub out_dir: Option<PathBuf>,
    pub resume: bool,
    /// Stop after this many epochs in total, counting resumed ones.
    pub stop_after_epochs: Option<usize>,
    pub code_version: String,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub chunk_length: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub skipped: usize,
}

impl LogRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.epoch, self.chunk_length, self.lr, self.train_loss, self.val_loss, self.skipped
        )
    }

    fn parse(line: &str, path: &Path) -> Result<Self> {
        let bad = || Error::format(path, format!("bad metrics row `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        Ok(Self {
            step: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            chunk_length: f[2].parse().map_err(|_| bad())?,
            lr: f[3].parse().map_err(|_| bad())?,
            train_loss: f[4].parse().map_err(|_| bad())?,
            val_loss: f[5].parse().map_err(|_| bad())?,
            skipped: f[6].parse().map_err(|_| bad())?,
        })
    }
}

/// Optimizer progress saved next to a model bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u32,
    pub step: u64,
    /// Epochs completed across all stages.
    pub epochs_done: usize,
    pub best_val: f64,
    pub best_params: Option<Vec<Tensor>>,
    pub adam: AdamState,
}

impl Checkpoint {
    fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u32(self.config_hash);
        e.u64(self.step);
        e.u64(self.epochs_done as u64);
        e.f64(self.best_val);
        e.u64(self.adam.t);
        let tensors = |e: &mut Encoder, ts: &[Tensor]| {
            e.u64(ts.len() as u64);
            for t in ts {
                e.u64(t.shape().len() as u64);
                for &d in t.shape() {
                    e.u64(d as u64);
                }
                e.f64s(t.data());
            }
        };
        tensors(&mut e, &self.adam.m);
        tensors(&mut e, &self.adam.v);
        e.u32(self.best_params.is_some() as u32);
        if let Some(b) = &self.best_params {
            tensors(&mut e, b);
        }
        e.finish(STATE_MAGIC)
    }

    fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut d = Decoder::open(bytes, STATE_MAGIC, path)?;
        let config_hash = d.u32()?;
        let step = d.u64()?;
        let epochs_done = d.u64()? as usize;
        let best_val = d.f64()?;
        let t = d.u64()?;
        let tensors = |d: &mut Decoder| -> Result<Vec<Tensor>> {
            let n = d.u64()? as usize;
            (0..n)
                .map(|_| {
                    let rank = d.u64()? as usize;
                    let shape = (0..rank)
                        .map(|_| d.u64().map(|x| x as usize))
                        .collect::<Result<Vec<_>>>()?;
                    let data = d.f64s(shape.iter().product())?;
                    Tensor::new(&shape, data)
                })
                .collect()
        };
        let m = tensors(&mut d)?;
        let v = tensors(&mut d)?;
        let best_params = if d.u32()? == 1 { Some(tensors(&mut d)?) } else { None };
        d.finish()?;
        Ok(Self {
            config_hash,
            step,
            epochs_done,
            best_val,
            best_params,
            adam: AdamState { m, v, t },
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation parameters of the last stage reached.
    pub best: Model,
    /// Parameters after the last completed epoch.
    pub last: Model,
    pub log: Vec<LogRow>,
    pub step: u64,
    pub finished: bool,
}

/// Coarse solver matching a trajectory: its physics with the snapshot
/// spacing as time step.
pub fn coarse_solver(traj: &Trajectory) -> Result<Solver> {
    let h = &traj.header;
    Solver::new(
        h.grid,
        PhysicsConfig {
            dt: h.dt,
            ..h.physics.clone()
        },
    )
}

fn config_hash(cfg: &TrainConfig, model: &Model, train: &[Trajectory], val: &[Trajectory]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(serde_json::to_string(cfg).expect("config serializes").as_bytes());
    h.update(model.kind().as_bytes());
    for (n, p) in model.param_names().iter().zip(model.params()) {
        h.update(n.as_bytes());
        h.update(format!("{:?}", p.shape()).as_bytes());
    }
    for t in train.iter().chain(val) {
        h.update(&t.header.seed.to_le_bytes());
        h.update(&(t.len() as u64).to_le_bytes());
    }
    h.finalize()
}

fn set_params(model: &mut Model, values: &[Tensor]) {
    for (p, v) in model.params_mut().into_iter().zip(values) {
        *p = v.clone();
    }
}

fn skippable(e: &Error) -> bool {
    matches!(e, Error::BlowUp { .. } | Error::Loss(_))
}

fn chunks(trajs: &[Trajectory], t: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (k, traj) in trajs.iter().enumerate() {
        out.extend(chunk(traj, t, k)?);
    }
    Ok(out)
}

/// Order of training chunks in global epoch `epoch`.
fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

fn validation_loss(model: &Model, solver: &Solver, samples: &[Sample], loss: &LossConfig) -> Result<f64> {
    let values: Vec<Option<f64>> = samples
        .par_iter()
        .map(|s| {
            let mut e = Eager;
            let p: Vec<Tensor> = model.params().into_iter().cloned().collect();
            match trajectory_loss(&mut e, &p, model, solver, &s.snapshots, loss) {
                Ok(t) => Ok(Some(t.total.item())),
                Err(err) if skippable(&err) => Ok(None),
                Err(err) => Err(err),
            }
        })
        .collect::<Result<_>>()?;
    let ok: Vec<f64> = values.into_iter().flatten().collect();
    Ok(if ok.is_empty() {
        f64::NAN
    } else {
        ok.iter().sum::<f64>() / ok.len() as f64
    })
}

/// Trains `model` on chunks of increasing length, `epochs_per_length`
/// epochs each, keeping the best-validation parameters of every stage.
pub fn train_curriculum(
    cfg: &TrainConfig,
    mut model: Model,
    train: &[Trajectory],
    val: &[Trajectory],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::config("train", "no training trajectories"))?;
    if val.is_empty() {
        return Err(Error::config("validation", "no validation trajectories"));
    }
    if let Some(t) = train.iter().chain(val).find(|t| {
        t.header.grid != first.header.grid || t.header.dt != first.header.dt || t.header.physics != first.header.physics
    }) {
        return Err(Error::config(
            "train",
            format!("trajectory seed {} has a different grid or physics", t.header.seed),
        ));
    }
    let solver = coarse_solver(first)?;
    let loss_cfg = cfg.loss_config();
    let hash = config_hash(cfg, &model, train, val);

    let mut adam = AdamState::new(model.params());
    let mut step = 0u64;
    let mut epochs_done = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<Tensor>> = None;
    let mut log = Vec::new();

    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ck = dir.join(CHECKPOINT_DIR);
        if opts.resume && ck.exists() {
            let (m, _) = load_bundle(&ck)?;
            let path = ck.join(STATE_FILE);
            let state = Checkpoint::from_bytes(&binio::read(&path)?, &path)?;
            if state.config_hash != hash {
                return Err(Error::config(
                    "resume",
                    format!("checkpoint in {} was made with a different configuration", ck.display()),
                ));
            }
            model = m;
            adam = state.adam;
            step = state.step;
            epochs_done = state.epochs_done;
            best_val = state.best_val;
            best_params = state.best_params;
            log = read_log(&dir.join(METRICS_FILE), epochs_done)?;
            log::info!("resuming after epoch {epochs_done} at step {step}");
        } else {
            let path = dir.join(METRICS_FILE);
            binio::write_atomic(&path, format!("{CSV_HEADER}\n").as_bytes())?;
        }
    }

    let total_epochs = cfg.chunk_lengths.len() * cfg.epochs_per_length;
    let stop = opts.stop_after_epochs.unwrap_or(usize::MAX).min(total_epochs);
    let mut best_model = model.clone();
    while epochs_done < stop {
        let stage = epochs_done / cfg.epochs_per_length;
        let t = cfg.chunk_lengths[stage];
        if epochs_done % cfg.epochs_per_length == 0 {
            best_val = f64::INFINITY;
            best_params = None;
        }
        let samples = chunks(train, t)?;
        let mut val_samples = chunks(val, t)?;
        if let Some(k) = cfg.validation_samples {
            val_samples.truncate(k);
        }
        let mut order = epoch_order(cfg.seed, epochs_done, samples.len());
        if let Some(k) = cfg.samples_per_epoch {
            order.truncate(k);
        }

        let (mut loss_sum, mut counted, mut skipped) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Option<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .map(
                    |&i| match loss_and_gradient(&model, &solver, &samples[i].snapshots, &loss_cfg) {
                        Ok(r) => Ok(Some(r)),
                        Err(e) if skippable(&e) => {
                            log::warn!(
                                "skipping chunk {} of trajectory {}: {e}",
                                samples[i].offset,
                                samples[i].source
                            );
                            Ok(None)
                        }
                        Err(e) => Err(e),
                    },
                )
                .collect::<Result<_>>()?;
            let ok: Vec<(f64, Vec<Tensor>)> = results.into_iter().flatten().collect();
            skipped += batch.len() - ok.len();
            if ok.is_empty() {
                continue;
            }
            let scale = 1.0 / ok.len() as f64;
            let mut grads: Vec<Tensor> = ok[0].1.iter().map(|g| Tensor::zeros(g.shape())).collect();
            for (l, gs) in &ok {
                loss_sum += l;
                counted += 1;
                for (acc, g) in grads.iter_mut().zip(gs) {
                    for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * x;
                    }
                }
            }
            let lr = cfg.lr(step);
            optimizer_step(&mut model.params_mut(), &grads, &mut adam, lr, &cfg.adam)?;
            step += 1;
        }
        if 2 * skipped > order.len() {
            return Err(Error::Training(format!(
                "{skipped} of {} chunks skipped in epoch {epochs_done}",
                order.len()
            )));
        }

        let val_loss = validation_loss(&model, &solver, &val_samples, &loss_cfg)?;
        if val_loss < best_val {
            best_val = val_loss;
            best_params = Some(model.params().into_iter().cloned().collect());
        }
        let row = LogRow {
            step,
            epoch: epochs_done,
            chunk_length: t,
            lr: cfg.lr(step),
            train_loss: if counted > 0 {
                loss_sum / counted as f64
            } else {
                f64::NAN
            },
            val_loss,
            skipped,
        };
        log::info!(
            "epoch {} T={} step {} train {:.6e} val {:.6e} skipped {}",
            row.epoch,
            t,
            step,
            row.train_loss,
            val_loss,
            skipped
        );
        epochs_done += 1;

        best_model = model.clone();
        if let Some(p) = &best_params {
            set_params(&mut best_model, p);
        }
        if let Some(dir) = &opts.out_dir {
            let ck = Checkpoint {
                config_hash: hash,
                step,
                epochs_done,
                best_val,
                best_params: best_params.clone(),
                adam: adam.clone(),
            };
            write_checkpoint(dir, &model, &ck, cfg.seed, &opts.code_version)?;
            append_row(&dir.join(METRICS_FILE), &row)?;
            let best_dir = dir.join(BEST_DIR);
            let tmp = stage_bundle(&best_dir, &best_model, cfg.seed, &opts.code_version)?;
            swap_in(&tmp, &best_dir)?;
        }
        log.push(row);
    }
    if epochs_done > 0 && best_params.is_some() {
        best_model = model.clone();
        set_params(&mut best_model, best_params.as_ref().expect("checked"));
    }
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        log,
        step,
        finished: epochs_done == total_epochs,
    })
}

fn read_log(path: &Path, rows: usize) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::format(path, "missing metrics header"));
    }
    let log: Vec<LogRow> = lines
        .take(rows)
        .map(|l| LogRow::parse(l, path))
        .collect::<Result<_>>()?;
    if log.len() != rows {
        return Err(Error::format(
            path,
            format!("{} rows, checkpoint expects {rows}", log.len()),
        ));
    }
    // Drop rows written after the checkpoint so the log stays append-only
    // from here.
    let mut text = format!("{CSV_HEADER}\n");
    for r in &log {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    binio::write_atomic(path, text.as_bytes())?;
    Ok(log)
}

fn append_row(path: &Path, row: &LogRow) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", row.to_csv()).map_err(|e| Error::io(path, e))
}

/// Writes a bundle into a sibling of `dir` for [`swap_in`].
fn stage_bundle(dir: &Path, model: &Model, seed: u64, version: &str) -> Result<PathBuf> {
    let tmp = dir.with_extension("tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    save_bundle(model, &tmp, seed, version)?;
    Ok(tmp)
}

fn swap_in(tmp: &Path, dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(tmp, dir).map_err(|e| Error::io(dir, e))
}

fn write_checkpoint(out: &Path, model: &Model, ck: &Checkpoint, seed: u64, version: &str) -> Result<()> {
    let dir = out.join(CHECKPOINT_DIR);
    let tmp = stage_bundle(&dir, model, seed, version)?;
    binio::write_atomic(&tmp.join(STATE_FILE), &ck.to_bytes())?;
    swap_in(&tmp, &dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffles_depend_only_on_seed_and_epoch() {
        assert_eq!(epoch_order(3, 5, 40), epoch_order(3, 5, 40));
        assert_ne!(epoch_order(3, 5, 40), epoch_order(3, 6, 40));
        assert_ne!(epoch_order(3, 5, 40), epoch_order(4, 5, 40));
        let mut o = epoch_order(1, 0, 40);
        o.sort_unstable();
        assert_eq!(o, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn checkpoint_state_round_trips() {
        let p = Tensor::new(&[2, 1], vec![0.5, -1.0]).unwrap();
        let ck = Checkpoint {
            config_hash: 7,
            step: 42,
            epochs_done: 3,
            best_val: 0.25,
            best_params: Some(vec![p.clone()]),
            adam: AdamState {
                m: vec![p.clone()],
                v: vec![p.map(|x| x * x)],
                t: 42,
            },
        };
        let path = Path::new("ck");
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes(), path).unwrap(), ck);
        let mut bytes = ck.to_bytes();
        bytes[10] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes, path).is_err());
    }

    #[test]
    fn log_rows_round_trip_exactly() {
        let r = LogRow {
            step: 9,
            epoch: 2,
            chunk_length: 16,
            lr: 0.1 + 0.2,
            train_loss: 1.0 / 3.0,
            val_loss: f64::NAN,
            skipped: 1,
        };
        let back = LogRow::parse(&r.to_csv(), Path::new("m")).unwrap();
        assert_eq!(back.lr, r.lr);
        assert_eq!(back.train_loss, r.train_loss);
        assert!(back.val_loss.is_nan());
    }
}
