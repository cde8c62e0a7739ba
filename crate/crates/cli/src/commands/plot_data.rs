use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tmn_core::datagen::Split;
use tmn_core::grid::vorticity;
use tmn_core::metrics::{EnergySpectrum, EvalReport, REPORT_FILE};
use tmn_core::tmn::{load_bundle, rollout_with};
use tmn_core::training::coarse_solver;

use super::{load_dataset, prepare_out, stencil, PlotArgs};
use crate::plot::{write_range, write_symmetric};
use crate::Invalid;

pub const CORRELATION_CSV: &str = "correlation.csv";
pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const DECORRELATION_CSV: &str = "decorrelation.csv";
pub const STENCIL_CSV: &str = "stencil_decorrelation.csv";

/// Directories below `root` holding a report, labelled by relative path.
fn find_reports(root: &Path, rel: &Path, out: &mut Vec<(String, PathBuf)>) -> std::io::Result<()> {
    if root.join(REPORT_FILE).is_file() {
        let label = if rel.as_os_str().is_empty() {
            "report".to_string()
        } else {
            rel.to_string_lossy().replace(std::path::MAIN_SEPARATOR, "/")
        };
        out.push((label, root.to_path_buf()));
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for d in subdirs {
        let name = d.file_name().expect("entry has a name").to_owned();
        find_reports(&d, &rel.join(name), out)?;
    }
    Ok(())
}

pub fn plot_data(a: &PlotArgs) -> anyhow::Result<()> {
    if !a.report.is_dir() {
        return Err(Invalid(format!("no report directory {}", a.report.display())).into());
    }
    let mut found = Vec::new();
    find_reports(&a.report, Path::new(""), &mut found)?;
    let stencil_summary = a.report.join(stencil::SUMMARY_FILE);
    if found.is_empty() && !stencil_summary.is_file() {
        return Err(Invalid(format!("no evaluation report under {}", a.report.display())).into());
    }
    prepare_out(&a.out, a.force, false)?;

    let mut corr = String::from("report,seed,start,time,r\n");
    let mut spec = String::from("report,k,model_ek5,reference_ek5\n");
    let mut dec = String::from("report,param_count,mean_decorrelation_time,spectral_error\n");
    for (label, dir) in &found {
        let r = EvalReport::read(dir)?;
        for t in &r.trajectories {
            for (time, x) in t.times.iter().zip(&t.correlation) {
                let _ = writeln!(corr, "{label},{},{},{time},{x}", t.seed, t.start);
            }
        }
        let model: Vec<EnergySpectrum> = r.trajectories.iter().filter_map(|t| t.spectrum_model.clone()).collect();
        let refs: Vec<EnergySpectrum> = r
            .trajectories
            .iter()
            .filter_map(|t| t.spectrum_reference.clone())
            .collect();
        if !model.is_empty() && !refs.is_empty() {
            let (m, rf) = (EnergySpectrum::average(&model)?, EnergySpectrum::average(&refs)?);
            for (i, (x, y)) in m.shells.iter().zip(&rf.shells).enumerate() {
                let k5 = ((i + 1) as f64).powi(5);
                let _ = writeln!(spec, "{label},{},{},{}", i + 1, x * k5, y * k5);
            }
        }
        let se = r.spectral_error.map_or(String::new(), |x| x.to_string());
        let _ = writeln!(dec, "{label},{},{},{se}", r.param_count, r.mean_decorrelation_time);
    }
    std::fs::write(a.out.join(CORRELATION_CSV), corr)?;
    std::fs::write(a.out.join(SPECTRUM_CSV), spec)?;
    std::fs::write(a.out.join(DECORRELATION_CSV), dec)?;
    if stencil_summary.is_file() {
        std::fs::copy(&stencil_summary, a.out.join(STENCIL_CSV))?;
    }

    if let (Some(model_dir), Some(data_dir)) = (&a.model, &a.data) {
        heatmaps(model_dir, data_dir, a.steps, a.scale, &a.out)?;
    }
    Ok(())
}

/// Vorticity of the model and reference and every hidden channel after
/// `steps` steps from the first test trajectory.
fn heatmaps(model_dir: &Path, data_dir: &Path, steps: usize, scale: usize, out: &Path) -> anyhow::Result<()> {
    let (model, _) = load_bundle(model_dir)?;
    let data = load_dataset(data_dir)?;
    let entry = data
        .entries(Split::Test)
        .next()
        .ok_or_else(|| Invalid(format!("dataset in {} has no test trajectories", data_dir.display())))?;
    let traj = data.read(entry)?;
    if steps == 0 || steps >= traj.len() {
        return Err(Invalid(format!("--steps must lie in 1..{}", traj.len())).into());
    }
    let solver = coarse_solver(&traj)?;
    let last = rollout_with(&model, &solver, &traj.snapshots[0], steps, |_| Ok(()))?;
    let g = traj.header.grid;
    let hw = (g.ny, g.nx);
    let w_model = vorticity(&last.velocity);
    let w_ref = vorticity(&traj.snapshots[steps]);
    write_symmetric(&out.join("vorticity_model.png"), w_model.values().data(), hw, scale)?;
    write_symmetric(&out.join("vorticity_reference.png"), w_ref.values().data(), hw, scale)?;
    if let Some(h) = &last.hidden {
        for c in 0..h.channels() {
            write_range(&out.join(format!("hidden_{c}.png")), h.values().channel(c), hw, scale)?;
        }
    }
    Ok(())
}
