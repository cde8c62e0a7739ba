use std::fmt::Write as _;

use serde::Serialize;
use tmn_core::datagen::Split;
use tmn_core::metrics::evaluate as eval_model;
use tmn_core::neural::{receptive_field, Activation};
use tmn_core::tmn::{CnnLc, Model};
use tmn_core::training::TrainConfig;

use super::train::{config_for_dataset, fit};
use super::{load_dataset, prepare_out, StencilArgs};
use crate::manifest::RunManifest;

pub const TABLE_FILE: &str = "stencil.csv";
pub const SUMMARY_FILE: &str = "stencil_summary.csv";
pub const TREND_FILE: &str = "trend.json";

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end + 1 < idx.len() && x[idx[end + 1]] == x[idx[k]] {
            end += 1;
        }
        // Ties share the mean of their ranks.
        let mean = (k + end) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=end] {
            r[i] = mean;
        }
        k = end + 1;
    }
    r
}

/// Spearman rank correlation; `None` for fewer than two points or a
/// constant series.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Serialize)]
struct Trend {
    /// Spearman correlation between stencil width and the seed-averaged
    /// decorrelation time.
    spearman_rho: Option<f64>,
    points: usize,
}

pub fn stencil_study(a: &StencilArgs) -> anyhow::Result<()> {
    let c = &a.common;
    let data = load_dataset(&a.data)?;
    let loaded = config_for_dataset(&c.config, a.case.as_deref(), None, &data)?;
    let cfg = &loaded.config;
    let seeds = c.seed.map_or(cfg.stencil.seeds.clone(), |s| vec![s]);
    prepare_out(&c.out, c.force, a.resume)?;
    let test = data.trajectories(Split::Test)?;
    let ecfg = cfg.eval.eval_config();

    let mut m = RunManifest::start("stencil-study", &loaded, seeds[0]);
    m.inputs.push(a.data.clone());
    let mut table = String::from("n,stencil_width,param_count,seed,mean_decorrelation_time,spectral_error\n");
    let mut summary = String::from("n,stencil_width,param_count,mean_decorrelation_time,std_decorrelation_time\n");
    let (mut widths, mut means) = (Vec::new(), Vec::new());
    for n in 1..=cfg.stencil.n_max {
        let mut times = Vec::new();
        let mut params = 0;
        for &seed in &seeds {
            let model = Model::CnnLc(CnnLc::init(n, cfg.stencil.width, Activation::Relu, seed)?);
            params = model.param_count();
            let dir = c.out.join(format!("n{n}_seed{seed}"));
            log::info!("stencil {} ({params} parameters), seed {seed}", receptive_field(n));
            let tcfg = TrainConfig {
                seed,
                ..cfg.stencil_train()
            };
            let outcome = fit(model, &tcfg, &data, &dir, a.resume, None)?;
            let r = eval_model(&format!("cnn{n}"), Some(&outcome.best), &test, &ecfg)?;
            r.write(&dir.join("eval"))?;
            let se = r.spectral_error.map_or(String::new(), |x| x.to_string());
            let _ = writeln!(
                table,
                "{n},{},{params},{seed},{},{se}",
                receptive_field(n),
                r.mean_decorrelation_time
            );
            times.push(r.mean_decorrelation_time);
            m.outputs.push(dir);
        }
        let k = times.len() as f64;
        let mean = times.iter().sum::<f64>() / k;
        let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / k).sqrt();
        let _ = writeln!(summary, "{n},{},{params},{mean},{std}", receptive_field(n));
        widths.push(receptive_field(n) as f64);
        means.push(mean);
    }
    let trend = Trend {
        spearman_rho: spearman(&widths, &means),
        points: widths.len(),
    };
    std::fs::write(c.out.join(TABLE_FILE), table)?;
    std::fs::write(c.out.join(SUMMARY_FILE), summary)?;
    std::fs::write(c.out.join(TREND_FILE), serde_json::to_string_pretty(&trend)?)?;
    m.finish(&c.out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_values() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[10.0, 20.0, 25.0, 100.0]), Some(1.0));
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&x[..1], &[1.0]), None);
        assert_eq!(spearman(&x, &[1.0; 4]), None);
        // Ranks 1, 2.5, 2.5, 4 against 1..4.
        let r = spearman(&x, &[1.0, 5.0, 5.0, 9.0]).unwrap();
        assert!((r - 4.5 / 5.0f64.sqrt() / 4.5f64.sqrt()).abs() < 1e-12, "{r}");
    }
}
