//! Run configuration: a TOML file layered over a named preset.
//!
//! Resolution order, later wins:
//! 1. the preset (`desk-scale` unless the file names another),
//! 2. the case table of the preset's scale for the selected case,
//! 3. the user file,
//! 4. command-line overrides (`--case`, `--seed`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tmn_core::datagen::{CaseConfig, CaseKind, DatasetConfig};
use tmn_core::metrics::EvalConfig;
use tmn_core::neural::Activation;
use tmn_core::tmn::{CnnLc, Model, TmnConfig, TmnModel};
use tmn_core::training::TrainConfig;
use toml::{Table, Value};

use crate::Invalid;

pub const PRESETS: [(&str, &str); 2] = [
    ("desk-scale", include_str!("../presets/desk-scale.toml")),
    ("paper-scale", include_str!("../presets/paper-scale.toml")),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tmn,
    CnnLc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub tmn: TmnConfig,
    /// Number of 3x3 layers `N` of the memoryless CNN.
    pub cnn_layers: usize,
    pub cnn_width: usize,
}

impl ModelSection {
    pub fn build(&self, seed: u64) -> tmn_core::Result<Model> {
        Ok(match self.kind {
            ModelKind::Tmn => Model::Tmn(TmnModel::init(self.tmn.clone(), seed)?),
            ModelKind::CnnLc => Model::CnnLc(CnnLc::init(self.cnn_layers, self.cnn_width, Activation::Relu, seed)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub steps: Option<usize>,
    pub threshold: f64,
    pub start_offsets: Vec<usize>,
    pub hidden_every: usize,
    /// Refinements of the coarse grid run as uncorrected baselines.
    pub baseline_factors: Vec<usize>,
    /// Coarse steps timed by the speed harness; 0 skips timing.
    pub timing_steps: usize,
    pub timing_repeats: usize,
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            steps: self.steps,
            threshold: self.threshold,
            start_offsets: self.start_offsets.clone(),
            hidden_every: self.hidden_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StencilSection {
    pub n_max: usize,
    pub seeds: Vec<u64>,
    pub width: usize,
    /// Curriculum of the stencil models; the rest follows `[train]`.
    pub chunk_lengths: Vec<usize>,
    pub epochs_per_length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scale: Scale,
    pub case: CaseKind,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub stencil: StencilSection,
}

/// A resolved configuration and where it came from.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    /// Preset name or file path as given.
    pub source: String,
    pub path: Option<PathBuf>,
}

fn preset(name: &str) -> Result<Table, Invalid> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Invalid(format!("unknown preset `{name}`; available: {}", names.join(", ")))
        })?;
    Ok(toml::from_str(text).expect("bundled presets parse"))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn field<'a>(t: &'a Table, key: &str) -> Option<&'a str> {
    t.get(key).and_then(Value::as_str)
}

/// Loads `source`, either a preset name or a TOML file path.
pub fn load(source: &str, case: Option<CaseKind>, seed: Option<u64>) -> anyhow::Result<Loaded> {
    let (user, path) = if PRESETS.iter().any(|(n, _)| *n == source) {
        (Table::new(), None)
    } else {
        let path = PathBuf::from(source);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
        let t: Table = toml::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        (t, Some(path))
    };
    let config = resolve(source, user, case, seed)?;
    Ok(Loaded {
        config,
        source: source.into(),
        path,
    })
}

fn resolve(source: &str, mut user: Table, case: Option<CaseKind>, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let base_name = match user.remove("preset") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(Invalid("preset: expected a preset name".into()).into()),
        None if PRESETS.iter().any(|(n, _)| *n == source) => source.to_string(),
        None => "desk-scale".into(),
    };
    let mut t = preset(&base_name)?;
    merge(&mut t, user.clone());

    let scale: Scale = t
        .get("scale")
        .cloned()
        .map(|v| v.try_into())
        .transpose()
        .map_err(|e| Invalid(format!("scale: {e}")))?
        .unwrap_or(Scale::Desk);
    let case = match case {
        Some(c) => c,
        None => CaseKind::parse(field(&t, "case").unwrap_or("forced_turbulence"))?,
    };
    t.insert("case".into(), Value::String(case.name().into()));

    // The case table of the scale, then the user's case keys on top.
    let case_defaults = match scale {
        Scale::Desk => CaseConfig::desk(case),
        Scale::Paper => CaseConfig::paper(case),
    };
    let mut case_table = Table::try_from(case_defaults).expect("case config serializes");
    let dataset = t
        .entry("dataset")
        .or_insert_with(|| Value::Table(Table::new()))
        .as_table_mut()
        .ok_or_else(|| Invalid("dataset: expected a table".into()))?;
    if let Some(v) = dataset.remove("case") {
        let Value::Table(over) = v else {
            return Err(Invalid("dataset.case: expected a table".into()).into());
        };
        merge(&mut case_table, over);
    }
    case_table.insert("case".into(), Value::String(case.name().into()));
    dataset.insert("case".into(), Value::Table(case_table));

    let mut cfg: RunConfig = Value::Table(t)
        .try_into()
        .map_err(|e: toml::de::Error| Invalid(format!("config: {}", e.message())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> tmn_core::Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.model.tmn.validate()?;
        let bad = |f: &str, m: &str| Err(tmn_core::Error::config(f, m));
        if self.eval.start_offsets.is_empty() {
            return bad("eval.start_offsets", "needs at least one offset");
        }
        if !(self.eval.threshold > -1.0 && self.eval.threshold <= 1.0) {
            return bad("eval.threshold", "must lie in (-1, 1]");
        }
        let factor = self.dataset.case.factor();
        if let Some(f) = self.eval.baseline_factors.iter().find(|&&f| f < 2 || factor % f != 0) {
            return Err(tmn_core::Error::config(
                "eval.baseline_factors",
                format!("{f} is not a proper divisor of the reference factor {factor}"),
            ));
        }
        if self.eval.timing_steps > 0 && self.eval.timing_repeats < 5 {
            return bad("eval.timing_repeats", "need at least 5 repeats");
        }
        if !(1..=7).contains(&self.stencil.n_max) {
            return bad("stencil.n_max", "must lie in 1..=7");
        }
        if self.stencil.seeds.is_empty() {
            return bad("stencil.seeds", "needs at least one seed");
        }
        if self.stencil.chunk_lengths.is_empty() || self.stencil.epochs_per_length == 0 {
            return bad("stencil.chunk_lengths", "needs a non-empty curriculum");
        }
        Ok(())
    }

    /// Training configuration of the stencil-study models.
    pub fn stencil_train(&self) -> TrainConfig {
        TrainConfig {
            chunk_lengths: self.stencil.chunk_lengths.clone(),
            epochs_per_length: self.stencil.epochs_per_length,
            ..self.train.clone()
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

pub fn config_path_display(l: &Loaded) -> String {
    l.path
        .as_deref()
        .map(Path::display)
        .map_or(l.source.clone(), |p| p.to_string())
}
