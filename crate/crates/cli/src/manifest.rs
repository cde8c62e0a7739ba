use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::config::{config_path_display, Loaded};

pub const RUN_MANIFEST: &str = "run.json";

/// Provenance of one command invocation, written into its output directory.
/// Everything except the timestamps is a function of the inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Preset name or config file path as given.
    pub config_source: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub code_version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: Option<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, cfg: &Loaded, seed: u64) -> Self {
        Self {
            command: command.into(),
            config_source: config_path_display(cfg),
            config: cfg.config.to_json(),
            seed,
            code_version: crate::code_version(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
            finished_at: None,
        }
    }

    pub fn finish(mut self, dir: &Path) -> anyhow::Result<Self> {
        self.finished_at = Some(now());
        let text = serde_json::to_string_pretty(&self)?;
        let path = dir.join(RUN_MANIFEST);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(self)
    }

    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(RUN_MANIFEST);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
