use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    energy_spectrum, hidden_state_diagnostic, pearson_vorticity, spectral_error, time_until_below, Decorrelation,
    EnergySpectrum, DECORRELATION_THRESHOLD,
};
use crate::autodiff::Eager;
use crate::binio;
use crate::datagen::{downsample, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{CenteredField, StaggeredField};
use crate::solver::{PhysicsConfig, Solver};
use crate::tensor::Tensor;
use crate::tmn::Model;
use crate::training::coarse_solver;

pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rollout length; `None` runs to the end of each trajectory.
    pub steps: Option<usize>,
    pub threshold: f64,
    /// Snapshot indices rollouts start from.
    pub start_offsets: Vec<usize>,
    /// Record hidden-state correlations every this many steps.
    pub hidden_every: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            steps: None,
            threshold: DECORRELATION_THRESHOLD,
            start_offsets: vec![0],
            hidden_every: 10,
        }
    }
}

/// Metrics of one rollout against its reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEval {
    pub seed: u64,
    pub start: usize,
    pub times: Vec<f64>,
    pub correlation: Vec<f64>,
    pub decorrelation: Decorrelation,
    /// Step at which the rollout produced non-finite values.
    pub blow_up: Option<usize>,
    /// Spectra averaged over the second half of the rollout.
    pub spectrum_model: Option<EnergySpectrum>,
    pub spectrum_reference: Option<EnergySpectrum>,
    pub spectral_error: Option<f64>,
    /// `(step, |r| per channel)` for models with hidden state.
    pub hidden_correlation: Vec<(usize, Vec<Option<f64>>)>,
    pub seconds_per_time_unit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub param_count: usize,
    pub threshold: f64,
    pub trajectories: Vec<TrajectoryEval>,
    pub mean_decorrelation_time: f64,
    /// Spectral error of the trajectory-averaged spectra.
    pub spectral_error: Option<f64>,
    pub seconds_per_time_unit: f64,
}

/// Shells up to the Nyquist wavenumber of the grid.
fn truncate(s: &EnergySpectrum, nyquist: usize) -> EnergySpectrum {
    EnergySpectrum {
        mean_mode: s.mean_mode,
        shells: s.shells[..nyquist.min(s.k_max())].to_vec(),
    }
}

/// Produces the next coarse-grid velocity and hidden state, or `None` on
/// non-finite values.
type Stepper<'a> = Box<dyn FnMut() -> Result<Option<(StaggeredField, Option<CenteredField>)>> + 'a>;

fn model_stepper<'a>(
    model: Option<&'a Model>,
    solver: &'a Solver,
    u0: &StaggeredField,
) -> Result<(Stepper<'a>, Option<CenteredField>)> {
    let g = *u0.grid();
    let p: Vec<Tensor> = model
        .map(|m| m.params().into_iter().cloned().collect())
        .unwrap_or_default();
    let mut u = u0.tensor().clone();
    let mut h = match model {
        Some(m) => m.encode(&mut Eager, &p, &u)?,
        None => None,
    };
    let h0 = h.clone().map(|h| CenteredField::new(g, h)).transpose()?;
    let step: Stepper<'a> = Box::new(move || {
        let mut e = Eager;
        let (un, hn) = match model {
            Some(m) => m.step(&mut e, &p, solver, &u, h.as_ref())?,
            None => (solver.advance(&mut e, &u)?, None),
        };
        if !un.is_finite() || hn.as_ref().is_some_and(|h| !h.is_finite()) {
            return Ok(None);
        }
        u = un;
        h = hn;
        Ok(Some((
            StaggeredField::new(g, u.clone())?,
            h.clone().map(|h| CenteredField::new(g, h)).transpose()?,
        )))
    });
    Ok((step, h0))
}

/// Base solver on a finer grid taking `sub` steps per coarse step, with
/// its output downsampled back to the coarse grid.
fn resolved_stepper<'a>(solver: &'a Solver, u0: StaggeredField, sub: usize, factor: usize) -> Stepper<'a> {
    let mut u = u0.into_tensor();
    let g = *solver.grid();
    Box::new(move || {
        for _ in 0..sub {
            u = solver.advance(&mut Eager, &u)?;
        }
        if !u.is_finite() {
            return Ok(None);
        }
        Ok(Some((downsample(&StaggeredField::new(g, u.clone())?, factor)?, None)))
    })
}

fn eval_one(
    mut step: Stepper<'_>,
    h0: Option<CenteredField>,
    traj: &Trajectory,
    start: usize,
    cfg: &EvalConfig,
) -> Result<TrajectoryEval> {
    let available = traj.len().saturating_sub(start + 1);
    let steps = cfg.steps.unwrap_or(available);
    if steps == 0 || steps > available {
        return Err(Error::TooShort {
            len: traj.len(),
            steps: start + steps,
        });
    }
    let dt = traj.header.dt;
    let g = traj.header.grid;
    let nyquist = ((g.nx / 2) as f64 * 2.0 * std::f64::consts::PI / g.length_x).floor() as usize;
    let window = steps.div_ceil(2);

    let (mut times, mut corr) = (vec![0.0], vec![1.0]);
    let (mut spec_m, mut spec_r) = (Vec::new(), Vec::new());
    let mut hidden = Vec::new();
    let mut blow_up = None;
    let mut stepping = 0.0;
    let every = cfg.hidden_every.max(1);
    if let Some(h) = &h0 {
        hidden.push((0, hidden_state_diagnostic(h, &traj.snapshots[start])?));
    }
    for k in 1..=steps {
        let t0 = Instant::now();
        let next = step()?;
        stepping += t0.elapsed().as_secs_f64();
        let Some((field, h)) = next else {
            blow_up = Some(k);
            break;
        };
        let reference = &traj.snapshots[start + k];
        times.push(k as f64 * dt);
        corr.push(pearson_vorticity(&field, reference)?);
        if k >= window {
            spec_m.push(energy_spectrum(&field)?);
            spec_r.push(energy_spectrum(reference)?);
        }
        if let Some(h) = h.filter(|_| k % every == 0) {
            hidden.push((k, hidden_state_diagnostic(&h, &field)?));
        }
    }
    let mut decorrelation = time_until_below(&times, &corr, cfg.threshold)?;
    if let (Some(k), true) = (blow_up, decorrelation.never) {
        decorrelation = Decorrelation {
            time: k as f64 * dt,
            never: false,
        };
    }
    let (spectrum_model, spectrum_reference, spectral) = if spec_m.is_empty() {
        (None, None, None)
    } else {
        let a = truncate(&EnergySpectrum::average(&spec_m)?, nyquist);
        let b = truncate(&EnergySpectrum::average(&spec_r)?, nyquist);
        let err = spectral_error(&a, &b)?;
        (Some(a), Some(b), Some(err))
    };
    let simulated = (times.len() - 1) as f64 * dt;
    Ok(TrajectoryEval {
        seed: traj.header.seed,
        start,
        times,
        correlation: corr,
        decorrelation,
        blow_up,
        spectrum_model,
        spectrum_reference,
        spectral_error: spectral,
        hidden_correlation: hidden,
        seconds_per_time_unit: if simulated > 0.0 {
            stepping / simulated
        } else {
            f64::NAN
        },
    })
}

fn check_config(trajs: &[Trajectory], cfg: &EvalConfig) -> Result<()> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::config("test", "no trajectories to evaluate"))?;
    if !cfg.threshold.is_finite() || cfg.start_offsets.is_empty() {
        return Err(Error::config(
            "threshold",
            "finite threshold and at least one start offset needed",
        ));
    }
    if let Some(t) = trajs
        .iter()
        .find(|t| t.header.grid != first.header.grid || t.header.dt != first.header.dt)
    {
        return Err(Error::config(
            "test",
            format!("trajectory seed {} differs in grid or step", t.header.seed),
        ));
    }
    Ok(())
}

fn summarize(label: &str, param_count: usize, threshold: f64, evals: Vec<TrajectoryEval>) -> Result<EvalReport> {
    let n = evals.len() as f64;
    let models: Vec<EnergySpectrum> = evals.iter().filter_map(|e| e.spectrum_model.clone()).collect();
    let refs: Vec<EnergySpectrum> = evals.iter().filter_map(|e| e.spectrum_reference.clone()).collect();
    let spectral = if models.len() == evals.len() {
        Some(spectral_error(
            &EnergySpectrum::average(&models)?,
            &EnergySpectrum::average(&refs)?,
        )?)
    } else {
        None
    };
    Ok(EvalReport {
        label: label.to_string(),
        param_count,
        threshold,
        mean_decorrelation_time: evals.iter().map(|e| e.decorrelation.time).sum::<f64>() / n,
        spectral_error: spectral,
        seconds_per_time_unit: evals.iter().map(|e| e.seconds_per_time_unit).sum::<f64>() / n,
        trajectories: evals,
    })
}

/// Rolls `model` (or the bare coarse solver) out from every start offset of
/// every trajectory and compares against the reference snapshots.
pub fn evaluate(label: &str, model: Option<&Model>, trajs: &[Trajectory], cfg: &EvalConfig) -> Result<EvalReport> {
    check_config(trajs, cfg)?;
    let solver = coarse_solver(&trajs[0])?;
    let jobs: Vec<(&Trajectory, usize)> = trajs
        .iter()
        .flat_map(|t| cfg.start_offsets.iter().map(move |&s| (t, s)))
        .collect();
    let evals: Vec<TrajectoryEval> = jobs
        .par_iter()
        .map(|&(t, s)| {
            let u0 = t.snapshots.get(s).ok_or(Error::TooShort { len: t.len(), steps: s })?;
            let (step, h0) = model_stepper(model, &solver, u0)?;
            eval_one(step, h0, t, s, cfg)
        })
        .collect::<Result<_>>()?;
    summarize(label, model.map_or(0, Model::param_count), cfg.threshold, evals)
}

/// Uncorrected base solver at an intermediate `resolution`, started from
/// the downsampled fine state of each trajectory (first snapshot only) and
/// compared on the coarse grid. The time step shrinks with the grid
/// spacing.
pub fn evaluate_resolution(
    resolution: usize,
    trajs: &[Trajectory],
    fine_starts: &[Trajectory],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    check_config(trajs, cfg)?;
    if fine_starts.len() != trajs.len() {
        return Err(Error::config("fine_starts", "one fine start per trajectory needed"));
    }
    let coarse = trajs[0].header.grid;
    if resolution % coarse.nx != 0 || coarse.nx != coarse.ny {
        return Err(Error::config(
            "baseline_resolutions",
            format!("{resolution} is not a multiple of the coarse resolution {}", coarse.nx),
        ));
    }
    let factor = resolution / coarse.nx;
    let evals: Vec<TrajectoryEval> = trajs
        .par_iter()
        .zip(fine_starts)
        .map(|(t, f)| {
            let fine = f.snapshots.first().ok_or(Error::TooShort { len: 0, steps: 0 })?;
            if fine.grid().nx % resolution != 0 || f.header.seed != t.header.seed {
                return Err(Error::config(
                    "baseline_resolutions",
                    format!("{resolution} does not divide the fine resolution {}", fine.grid().nx),
                ));
            }
            let u0 = downsample(fine, fine.grid().nx / resolution)?;
            let h = &t.header;
            let dt = h.dt / factor as f64;
            let solver = Solver::new(
                *u0.grid(),
                PhysicsConfig {
                    dt,
                    ..h.physics.clone()
                },
            )?;
            eval_one(resolved_stepper(&solver, u0, factor, factor), None, t, 0, cfg)
        })
        .collect::<Result<_>>()?;
    summarize(&format!("base_{resolution}"), 0, cfg.threshold, evals)
}

#[derive(Serialize)]
struct Summary<'a> {
    label: &'a str,
    param_count: usize,
    threshold: f64,
    mean_decorrelation_time: f64,
    spectral_error: Option<f64>,
    seconds_per_time_unit: f64,
    trajectories: Vec<SummaryRow>,
}

#[derive(Serialize)]
struct SummaryRow {
    seed: u64,
    start: usize,
    decorrelation_time: f64,
    never: bool,
    blow_up: Option<usize>,
    spectral_error: Option<f64>,
}

impl EvalReport {
    /// Writes `correlation.csv`, `spectra.csv`, `hidden.csv`,
    /// `summary.json` and the full `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut corr = String::from("seed,start,time,r\n");
        let mut spectra = String::from("seed,start,k,model,reference\n");
        let mut hidden = String::from("seed,start,step,channel,abs_r\n");
        for t in &self.trajectories {
            for (time, r) in t.times.iter().zip(&t.correlation) {
                let _ = writeln!(corr, "{},{},{time},{r}", t.seed, t.start);
            }
            if let (Some(m), Some(r)) = (&t.spectrum_model, &t.spectrum_reference) {
                for (k, (a, b)) in m.shells.iter().zip(&r.shells).enumerate() {
                    let _ = writeln!(spectra, "{},{},{},{a},{b}", t.seed, t.start, k + 1);
                }
            }
            for (step, rs) in &t.hidden_correlation {
                for (c, r) in rs.iter().enumerate() {
                    let v = r.map_or(String::new(), |x| x.to_string());
                    let _ = writeln!(hidden, "{},{},{step},{c},{v}", t.seed, t.start);
                }
            }
        }
        let summary = Summary {
            label: &self.label,
            param_count: self.param_count,
            threshold: self.threshold,
            mean_decorrelation_time: self.mean_decorrelation_time,
            spectral_error: self.spectral_error,
            seconds_per_time_unit: self.seconds_per_time_unit,
            trajectories: self
                .trajectories
                .iter()
                .map(|t| SummaryRow {
                    seed: t.seed,
                    start: t.start,
                    decorrelation_time: t.decorrelation.time,
                    never: t.decorrelation.never,
                    blow_up: t.blow_up,
                    spectral_error: t.spectral_error,
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        binio::write_atomic(&dir.join("correlation.csv"), corr.as_bytes())?;
        binio::write_atomic(&dir.join("spectra.csv"), spectra.as_bytes())?;
        binio::write_atomic(&dir.join("hidden.csv"), hidden.as_bytes())?;
        binio::write_atomic(&dir.join("summary.json"), json.as_bytes())?;
        let full = serde_json::to_vec(self).expect("report serializes");
        binio::write_atomic(&dir.join(REPORT_FILE), &full)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let raw = binio::read(&path)?;
        serde_json::from_slice(&raw).map_err(|e| Error::format(&path, e.to_string()))
    }
}
