use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use tmn_core::datagen::{Dataset, Split, Trajectory};
use tmn_core::metrics::{evaluate as eval_model, evaluate_resolution, timing_harness, EvalReport};
use tmn_core::solver::Solver;
use tmn_core::tmn::{load_bundle, Model};
use tmn_core::training::coarse_solver;

use super::{prepare_out, select_cases, EvaluateArgs};
use crate::config::{self, RunConfig};
use crate::manifest::RunManifest;
use crate::Invalid;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMING_FILE: &str = "timing.json";

pub fn evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let c = &a.common;
    if !a.model.join(tmn_core::tmn::BUNDLE_MANIFEST).is_file() {
        return Err(Invalid(format!("no model bundle in {}", a.model.display())).into());
    }
    let (model, bundle) = load_bundle(&a.model)?;
    let cases = select_cases(&a.data, a.case.as_deref())?;
    prepare_out(&c.out, c.force, false)?;
    // Every case gets its own defaults; the root manifest records the first.
    let mut root = None;
    for (case, data) in &cases {
        let loaded = config::load(&c.config, Some(*case), c.seed)?;
        let dir = c.out.join(case.name());
        log::info!("evaluating {} on {}", bundle.kind, case.name());
        evaluate_case(&model, &loaded.config, data, &dir).with_context(|| format!("case {}", case.name()))?;
        let m = root.get_or_insert_with(|| {
            let mut m = RunManifest::start("evaluate", &loaded, loaded.config.seed);
            m.inputs.push(a.model.clone());
            m
        });
        m.inputs.push(data.dir.clone());
        m.outputs.push(dir);
    }
    root.expect("at least one case").finish(&c.out)?;
    Ok(())
}

/// Writes one report directory per model and baseline, a summary table and
/// the timing measurement into `dir`.
pub fn evaluate_case(model: &Model, cfg: &RunConfig, data: &Dataset, dir: &Path) -> anyhow::Result<Vec<EvalReport>> {
    std::fs::create_dir_all(dir)?;
    let test = data.trajectories(Split::Test)?;
    if test.is_empty() {
        return Err(Invalid(format!("dataset in {} has no test trajectories", data.dir.display())).into());
    }
    let ecfg = cfg.eval.eval_config();
    let mut reports = vec![
        eval_model(model.kind(), Some(model), &test, &ecfg)?,
        eval_model("base", None, &test, &ecfg)?,
    ];
    if !cfg.eval.baseline_factors.is_empty() {
        let fine: Vec<Trajectory> = data
            .entries(Split::Test)
            .map(|e| data.read_fine_start(e))
            .collect::<tmn_core::Result<_>>()?;
        let coarse = data.config.case.coarse_resolution;
        for &f in &cfg.eval.baseline_factors {
            reports.push(evaluate_resolution(coarse * f, &test, &fine, &ecfg)?);
        }
    }
    let mut table = String::from("label,param_count,mean_decorrelation_time,spectral_error,seconds_per_time_unit\n");
    for r in &reports {
        r.write(&dir.join(&r.label))?;
        let se = r.spectral_error.map_or(String::new(), |x| x.to_string());
        let _ = writeln!(
            table,
            "{},{},{},{se},{}",
            r.label, r.param_count, r.mean_decorrelation_time, r.seconds_per_time_unit
        );
    }
    std::fs::write(dir.join(SUMMARY_FILE), table)?;

    if cfg.eval.timing_steps > 0 {
        let entry = data.entries(Split::Test).next().expect("test split checked");
        let fine_start = data.read_fine_start(entry)?;
        let case = &data.config.case;
        let fine = Solver::new(case.fine_grid()?, case.fine_physics())?;
        let report = timing_harness(
            Some(model),
            &coarse_solver(&test[0])?,
            &test[0].snapshots[0],
            &fine,
            &fine_start.snapshots[0],
            cfg.eval.timing_steps,
            cfg.eval.timing_repeats,
        )?;
        log::info!("speedup over the reference solver: {:.1}x", report.speedup);
        std::fs::write(dir.join(TIMING_FILE), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(reports)
}
