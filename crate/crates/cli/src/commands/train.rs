use std::path::Path;

use tmn_core::datagen::{Dataset, Split};
use tmn_core::tmn::Model;
use tmn_core::training::{train_curriculum, TrainConfig, TrainOptions, BEST_DIR, CHECKPOINT_DIR, METRICS_FILE};

use super::{json_diff, load_dataset, parse_case, prepare_out, TrainArgs};
use crate::config::{self, Loaded};
use crate::manifest::RunManifest;
use crate::Invalid;

/// Loads the configuration for `data`, taking the case from the dataset
/// unless one is given, and checks that both describe the same data.
pub(crate) fn config_for_dataset(
    source: &str,
    case: Option<&str>,
    seed: Option<u64>,
    data: &Dataset,
) -> anyhow::Result<Loaded> {
    let case = match case.map(parse_case).transpose()? {
        Some(None) => return Err(Invalid("this command takes a single case".into()).into()),
        Some(Some(k)) => k,
        None => data.config.case.case,
    };
    let loaded = config::load(source, Some(case), seed)?;
    if loaded.config.dataset != data.config {
        let mut diff = Vec::new();
        json_diff(
            &serde_json::to_value(&loaded.config.dataset)?,
            &serde_json::to_value(&data.config)?,
            "dataset",
            &mut diff,
        );
        return Err(Invalid(format!(
            "dataset in {} was generated with a different configuration (differs in {})",
            data.dir.display(),
            diff.join(", ")
        ))
        .into());
    }
    Ok(loaded)
}

/// Trains `model` on the train and validation splits of `data`.
pub(crate) fn fit(
    model: Model,
    cfg: &TrainConfig,
    data: &Dataset,
    out: &Path,
    resume: bool,
    stop_after: Option<usize>,
) -> anyhow::Result<tmn_core::training::TrainOutcome> {
    let train = data.trajectories(Split::Train)?;
    let val = data.trajectories(Split::Validation)?;
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        resume,
        stop_after_epochs: stop_after,
        code_version: crate::code_version(),
    };
    Ok(train_curriculum(cfg, model, &train, &val, &opts)?)
}

pub fn train(a: &TrainArgs) -> anyhow::Result<()> {
    let c = &a.common;
    let data = load_dataset(&a.data)?;
    let loaded = config_for_dataset(&c.config, a.case.as_deref(), c.seed, &data)?;
    let cfg = &loaded.config;
    prepare_out(&c.out, c.force, a.resume)?;
    if c.force && !a.resume {
        for name in [CHECKPOINT_DIR, BEST_DIR] {
            let p = c.out.join(name);
            if p.exists() {
                std::fs::remove_dir_all(&p)?;
            }
        }
    }
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let model = cfg.model.build(cfg.seed)?;
    log::info!("training {} with {} parameters", model.kind(), model.param_count());
    let mut m = RunManifest::start("train", &loaded, cfg.seed);
    m.inputs.push(a.data.clone());
    let outcome = fit(model, &train_cfg, &data, &c.out, a.resume, a.stop_after)?;
    if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
        log::info!(
            "train loss {:.4e} -> {:.4e}, validation {:.4e} -> {:.4e}",
            first.train_loss,
            last.train_loss,
            first.val_loss,
            last.val_loss
        );
    }
    m.outputs = vec![
        c.out.join(BEST_DIR),
        c.out.join(CHECKPOINT_DIR),
        c.out.join(METRICS_FILE),
    ];
    m.finish(&c.out)?;
    Ok(())
}
