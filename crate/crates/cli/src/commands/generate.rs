use anyhow::Context;
use tmn_core::datagen::{generate_dataset, CaseKind};

use super::{parse_case, prepare_out, GenerateArgs};
use crate::config;
use crate::manifest::RunManifest;

pub fn generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let c = &a.common;
    let cases = match a.case.as_deref().map(parse_case).transpose()? {
        Some(None) => Some(CaseKind::ALL.to_vec()),
        Some(Some(k)) => Some(vec![k]),
        None => None,
    };
    match cases {
        Some(list) if list.len() > 1 => {
            prepare_out(&c.out, c.force, a.resume)?;
            let loaded = config::load(&c.config, None, None)?;
            let mut root = RunManifest::start("generate", &loaded, loaded.config.dataset.base_seed);
            for k in list {
                let dir = c.out.join(k.name());
                one(a, Some(k), &dir)?;
                root.outputs.push(dir);
            }
            root.finish(&c.out)?;
            Ok(())
        }
        Some(list) => one(a, Some(list[0]), &c.out),
        None => one(a, None, &c.out),
    }
}

fn one(a: &GenerateArgs, case: Option<CaseKind>, dir: &std::path::Path) -> anyhow::Result<()> {
    let c = &a.common;
    let mut loaded = config::load(&c.config, case, None)?;
    if let Some(s) = c.seed {
        loaded.config.dataset.base_seed = s;
    }
    prepare_out(dir, c.force, a.resume)?;
    let cfg = &loaded.config.dataset;
    let mut m = RunManifest::start("generate", &loaded, cfg.base_seed);
    log::info!(
        "generating {} {} trajectories into {}",
        cfg.n_trajectories,
        cfg.case.case.name(),
        dir.display()
    );
    let d = generate_dataset(cfg, dir, c.force).with_context(|| format!("generating into {}", dir.display()))?;
    for e in &d.entries {
        m.outputs.push(dir.join(&e.file));
        m.outputs.push(dir.join(&e.fine_start));
    }
    m.finish(dir)?;
    Ok(())
}
