//! Evaluation metrics: vorticity correlation, decorrelation time, energy
//! spectra and hidden-state diagnostics.

mod report;
mod timing;

pub use report::{evaluate, evaluate_resolution, EvalConfig, EvalReport, TrajectoryEval, REPORT_FILE};
pub use timing::{measure, timing_harness, TimingReport, TimingStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{wavenumber, Fft2};
use crate::grid::{face_to_center, vorticity, CenteredField, StaggeredField};

/// Decorrelation threshold on the vorticity correlation.
pub const DECORRELATION_THRESHOLD: f64 = 0.95;

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    // Spread at roundoff level of the values counts as constant.
    let flat = |s: f64, v: &[f64]| {
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        s == 0.0 || (s / n).sqrt() <= 1e-13 * scale
    };
    if flat(saa, a) || flat(sbb, b) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of the node vorticities of two velocity fields.
pub fn pearson_vorticity(a: &StaggeredField, b: &StaggeredField) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(Error::Grid("correlation of fields on different grids".into()));
    }
    let (wa, wb) = (vorticity(a), vorticity(b));
    pearson(wa.values().data(), wb.values().data()).ok_or_else(|| Error::Metric("vorticity has zero variance".into()))
}

/// First crossing below a correlation threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decorrelation {
    /// Crossing time, or the last time when `never` is set.
    pub time: f64,
    pub never: bool,
}

/// First time whose correlation is below `threshold`.
pub fn time_until_below(times: &[f64], r: &[f64], threshold: f64) -> Result<Decorrelation> {
    if times.len() != r.len() || times.is_empty() {
        return Err(Error::Metric(format!(
            "{} times for {} correlations",
            times.len(),
            r.len()
        )));
    }
    Ok(match r.iter().position(|&x| x < threshold) {
        Some(k) => Decorrelation {
            time: times[k],
            never: false,
        },
        None => Decorrelation {
            time: *times.last().expect("non-empty"),
            never: true,
        },
    })
}

/// Correlation of every aligned snapshot pair followed by
/// [`time_until_below`].
pub fn decorrelation(
    model: &[StaggeredField],
    reference: &[StaggeredField],
    times: &[f64],
    threshold: f64,
) -> Result<(Vec<f64>, Decorrelation)> {
    if model.len() != reference.len() || model.len() != times.len() {
        return Err(Error::Metric(format!(
            "misaligned trajectories: {} model, {} reference snapshots, {} times",
            model.len(),
            reference.len(),
            times.len()
        )));
    }
    let r = model
        .iter()
        .zip(reference)
        .map(|(a, b)| pearson_vorticity(a, b))
        .collect::<Result<Vec<_>>>()?;
    let d = time_until_below(times, &r, threshold)?;
    Ok((r, d))
}

/// Kinetic energy per integer wavenumber shell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySpectrum {
    /// Energy of the modes rounding to shell 0, the mean flow included.
    pub mean_mode: f64,
    /// `shells[k - 1]` is `E(k)`.
    pub shells: Vec<f64>,
}

impl EnergySpectrum {
    pub fn total(&self) -> f64 {
        self.mean_mode + self.shells.iter().sum::<f64>()
    }

    pub fn k_max(&self) -> usize {
        self.shells.len()
    }

    /// Elementwise mean of spectra over the same shells.
    pub fn average(spectra: &[EnergySpectrum]) -> Result<EnergySpectrum> {
        let first = spectra
            .first()
            .ok_or_else(|| Error::Metric("no spectra to average".into()))?;
        if spectra.iter().any(|s| s.k_max() != first.k_max()) {
            return Err(Error::Metric("spectra over different shells".into()));
        }
        let n = spectra.len() as f64;
        Ok(EnergySpectrum {
            mean_mode: spectra.iter().map(|s| s.mean_mode).sum::<f64>() / n,
            shells: (0..first.k_max())
                .map(|k| spectra.iter().map(|s| s.shells[k]).sum::<f64>() / n)
                .collect(),
        })
    }
}

/// `E(k) = sum over round(|k|) = k of 0.5 (|u_x^|^2 + |u_y^|^2)` of the
/// cell-centered velocity, transformed with `1 / (nx ny)` normalization.
/// Shells reach the largest rounded wavenumber present, so the total
/// equals `0.5 mean(|U|^2)` exactly.
pub fn energy_spectrum(u: &StaggeredField) -> Result<EnergySpectrum> {
    let g = *u.grid();
    if !g.is_square() {
        return Err(Error::Grid("energy spectrum needs a square grid".into()));
    }
    let c = face_to_center(u);
    let fft = Fft2::new(g.ny, g.nx);
    let norm = 1.0 / g.cells() as f64;
    let k0x = 2.0 * std::f64::consts::PI / g.length_x;
    let k0y = 2.0 * std::f64::consts::PI / g.length_y;
    let kmax = (((g.nx / 2) as f64 * k0x).hypot((g.ny / 2) as f64 * k0y)).round() as usize;
    let mut bins = vec![0.0; kmax + 1];
    for ch in 0..2 {
        let hat = fft.forward_real(c.values().channel(ch));
        for j in 0..g.ny {
            let ky = wavenumber(j, g.ny) as f64 * k0y;
            for i in 0..g.nx {
                let kx = wavenumber(i, g.nx) as f64 * k0x;
                let shell = kx.hypot(ky).round() as usize;
                bins[shell] += 0.5 * (hat[j * g.nx + i] * norm).norm_sqr();
            }
        }
    }
    Ok(EnergySpectrum {
        mean_mode: bins[0],
        shells: bins[1..].to_vec(),
    })
}

/// Mean over shells of `|E_a(k) k^5 - E_b(k) k^5|`.
pub fn spectral_error(a: &EnergySpectrum, b: &EnergySpectrum) -> Result<f64> {
    if a.k_max() != b.k_max() || a.k_max() == 0 {
        return Err(Error::Metric(format!(
            "shell ranges differ: {} vs {}",
            a.k_max(),
            b.k_max()
        )));
    }
    let sum: f64 = a
        .shells
        .iter()
        .zip(&b.shells)
        .enumerate()
        .map(|(i, (x, y))| ((x - y) * ((i + 1) as f64).powi(5)).abs())
        .sum();
    Ok(sum / a.k_max() as f64)
}

/// Vorticity averaged from the four corner nodes onto cell centers.
pub fn center_vorticity(u: &StaggeredField) -> CenteredField {
    let w = vorticity(u);
    let g = *u.grid();
    let v = w.values();
    let data = crate::tensor::Tensor::from_fn(1, g.ny, g.nx, |_, j, i| {
        let (i1, j1) = ((i + 1) % g.nx, (j + 1) % g.ny);
        0.25 * (v.at(0, j, i) + v.at(0, j, i1) + v.at(0, j1, i) + v.at(0, j1, i1))
    });
    CenteredField::new(g, data).expect("shape")
}

/// `|Pearson(H_c, vorticity)|` per hidden channel; `None` for channels
/// without variance.
pub fn hidden_state_diagnostic(h: &CenteredField, u: &StaggeredField) -> Result<Vec<Option<f64>>> {
    if h.grid() != u.grid() {
        return Err(Error::Grid("hidden state and velocity on different grids".into()));
    }
    let w = center_vorticity(u);
    Ok((0..h.channels())
        .map(|c| pearson(h.values().channel(c), w.values().data()).map(f64::abs))
        .collect())
}
