mod evaluate;
mod generate;
mod plot_data;
mod stencil;
mod train;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tmn_core::datagen::{CaseKind, Dataset};

pub use evaluate::evaluate;
pub use generate::generate;
pub use plot_data::plot_data;
pub use stencil::{spearman, stencil_study};
pub use train::train;

use crate::Invalid;

#[derive(Debug, Parser)]
#[command(name = "tmn", version = crate::CODE_VERSION, about = "Learned corrections for coarse 2D turbulence solvers")]
pub struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "TMN_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a reference dataset.
    Generate(GenerateArgs),
    /// Train a model through the chunk curriculum.
    Train(TrainArgs),
    /// Evaluate a model bundle and the uncorrected baselines.
    Evaluate(EvaluateArgs),
    /// Train and evaluate memoryless CNNs of growing input stencil.
    StencilStudy(StencilArgs),
    /// Turn evaluation reports into figure data.
    PlotData(PlotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Preset name (`desk-scale`, `paper-scale`) or TOML file.
    #[arg(long, default_value = "desk-scale")]
    pub config: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed; for `generate` the dataset base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Case name or `all`; `all` writes one dataset per case under `--out`.
    #[arg(long)]
    pub case: Option<String>,
    /// Keep trajectories already written by an interrupted run.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Case to train on; defaults to the dataset's.
    #[arg(long)]
    pub case: Option<String>,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs in total.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model bundle directory.
    #[arg(long)]
    pub model: PathBuf,
    /// A dataset directory, or a directory of per-case datasets.
    #[arg(long)]
    pub data: PathBuf,
    /// Case name or `all`.
    #[arg(long)]
    pub case: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct StencilArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Case to train on; defaults to the dataset's.
    #[arg(long)]
    pub case: Option<String>,
    /// Continue interrupted trainings.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Directory holding evaluation or stencil-study output.
    pub report: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Pixels per grid cell of the heatmaps.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Model bundle for vorticity and hidden-state heatmaps.
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    /// Dataset whose first test trajectory seeds the heatmap rollout.
    #[arg(long, requires = "model")]
    pub data: Option<PathBuf>,
    /// Rollout length before the heatmap snapshot.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Invalid("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::StencilStudy(a) => stencil_study(&a),
        Command::PlotData(a) => plot_data(&a),
    }
}

/// `None` for `all`.
pub(crate) fn parse_case(s: &str) -> anyhow::Result<Option<CaseKind>> {
    if s == "all" {
        return Ok(None);
    }
    Ok(Some(CaseKind::parse(s)?))
}

/// Creates `dir`, refusing one with content unless `force` or `keep`.
pub(crate) fn prepare_out(dir: &Path, force: bool, keep: bool) -> anyhow::Result<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir)?;
        if !force && !keep && entries.next().is_some() {
            return Err(Invalid(format!("{} is not empty; pass --force to overwrite", dir.display())).into());
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub(crate) fn is_dataset(dir: &Path) -> bool {
    dir.join("manifest.json").is_file()
}

pub(crate) fn load_dataset(dir: &Path) -> anyhow::Result<Dataset> {
    if !is_dataset(dir) {
        return Err(Invalid(format!("no dataset manifest in {}", dir.display())).into());
    }
    Ok(Dataset::load(dir)?)
}

/// Datasets under `data` for the requested case: `data` itself when it is
/// a dataset, otherwise one subdirectory per case.
pub(crate) fn select_cases(data: &Path, case: Option<&str>) -> anyhow::Result<Vec<(CaseKind, Dataset)>> {
    let available: Vec<(CaseKind, PathBuf)> = if is_dataset(data) {
        let d = load_dataset(data)?;
        vec![(d.config.case.case, data.to_path_buf())]
    } else {
        CaseKind::ALL
            .into_iter()
            .map(|c| (c, data.join(c.name())))
            .filter(|(_, p)| is_dataset(p))
            .collect()
    };
    if available.is_empty() {
        return Err(Invalid(format!("no dataset in {}", data.display())).into());
    }
    let names = || available.iter().map(|(c, _)| c.name()).collect::<Vec<_>>().join(", ");
    let chosen: Vec<(CaseKind, PathBuf)> = match case.map(parse_case).transpose()?.flatten() {
        Some(c) => {
            let hit = available.iter().find(|(k, _)| *k == c).cloned();
            vec![hit.ok_or_else(|| {
                Invalid(format!(
                    "case `{}` has no data in {}; available: {}",
                    c.name(),
                    data.display(),
                    names()
                ))
            })?]
        }
        None => available.clone(),
    };
    chosen.into_iter().map(|(c, p)| Ok((c, load_dataset(&p)?))).collect()
}

/// Field-level differences between two serializable values.
pub(crate) fn json_diff(a: &serde_json::Value, b: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
    match (a, b) {
        (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
            for (k, v) in x {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match y.get(k) {
                    Some(w) => json_diff(v, w, &path, out),
                    None => out.push(path),
                }
            }
        }
        _ if a != b => out.push(prefix.to_string()),
        _ => {}
    }
}
