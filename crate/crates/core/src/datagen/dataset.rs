use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_reference, CaseConfig, CaseKind, Trajectory};
use crate::error::{Error, Result};

const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// A set of reference trajectories that differ only in their seed.
/// Trajectory `k` uses seed `base_seed + k`; the first `n_train` go to
/// training, the next `n_validation` to validation and the rest to test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub case: CaseConfig,
    pub n_trajectories: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub base_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::desk(CaseKind::ForcedTurbulence)
    }
}

impl DatasetConfig {
    pub fn desk(case: CaseKind) -> Self {
        Self {
            case: CaseConfig::desk(case),
            n_trajectories: 12,
            n_train: 8,
            n_validation: 1,
            base_seed: 0,
        }
    }

    /// 50 trajectories: 32 train, 2 validation, 16 test.
    pub fn paper(case: CaseKind) -> Self {
        Self {
            case: CaseConfig::paper(case),
            n_trajectories: 50,
            n_train: 32,
            n_validation: 2,
            base_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.case.validate()?;
        if self.n_trajectories == 0 {
            return Err(Error::config("n_trajectories", "must be at least 1"));
        }
        if self.n_train + self.n_validation > self.n_trajectories {
            return Err(Error::config(
                "n_train",
                format!(
                    "{} train + {} validation exceeds {} trajectories",
                    self.n_train, self.n_validation, self.n_trajectories
                ),
            ));
        }
        Ok(())
    }

    pub fn split_of(&self, k: usize) -> Split {
        if k < self.n_train {
            Split::Train
        } else if k < self.n_train + self.n_validation {
            Split::Validation
        } else {
            Split::Test
        }
    }

    pub fn seed_of(&self, k: usize) -> u64 {
        self.base_seed + k as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub file: String,
    /// Fine-grid state at the first snapshot.
    pub fine_start: String,
    pub seed: u64,
    pub split: Split,
    pub snapshots: usize,
}

/// Manifest of a generated dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub entries: Vec<DatasetEntry>,
    #[serde(skip)]
    pub dir: PathBuf,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut d: Dataset = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        d.dir = dir.to_path_buf();
        Ok(d)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn read(&self, entry: &DatasetEntry) -> Result<Trajectory> {
        Trajectory::read(&self.dir.join(&entry.file))
    }

    pub fn read_fine_start(&self, entry: &DatasetEntry) -> Result<Trajectory> {
        Trajectory::read(&self.dir.join(&entry.fine_start))
    }

    pub fn trajectories(&self, split: Split) -> Result<Vec<Trajectory>> {
        self.entries(split).map(|e| self.read(e)).collect()
    }

    fn write_manifest(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        crate::binio::write_atomic(&self.dir.join(MANIFEST), text.as_bytes())
    }
}

/// Generates every trajectory of `cfg` into `dir` in parallel. An existing
/// dataset with the same configuration is reused, and trajectories whose
/// files already load are kept unless `force` is set. A dataset with a
/// different configuration is only replaced with `force`.
pub fn generate_dataset(cfg: &DatasetConfig, dir: &Path, force: bool) -> Result<Dataset> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if !force && dir.join(MANIFEST).exists() {
        let existing = Dataset::load(dir)?;
        if existing.config != *cfg {
            return Err(Error::config(
                "out",
                format!("{} holds a dataset with a different configuration", dir.display()),
            ));
        }
    }
    let entries: Vec<DatasetEntry> = (0..cfg.n_trajectories)
        .map(|k| DatasetEntry {
            file: format!("traj_{k:03}_seed{}.tmnt", cfg.seed_of(k)),
            fine_start: format!("traj_{k:03}_seed{}.fine0.tmnt", cfg.seed_of(k)),
            seed: cfg.seed_of(k),
            split: cfg.split_of(k),
            snapshots: cfg.case.n_steps + 1,
        })
        .collect();
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let path = dir.join(&e.file);
        let fine_path = dir.join(&e.fine_start);
        if !force
            && Trajectory::read(&path).is_ok_and(|t| t.len() == e.snapshots)
            && Trajectory::read(&fine_path).is_ok_and(|t| t.len() == 1)
        {
            log::info!("keeping {}", path.display());
            return Ok(());
        }
        let case = CaseConfig {
            seed: e.seed,
            store_fine: false,
            ..cfg.case.clone()
        };
        let started = std::time::Instant::now();
        let r = generate_reference(&case)?;
        r.fine_start.write(&fine_path)?;
        r.coarse.write(&path)?;
        log::info!("wrote {} in {:.1?}", path.display(), started.elapsed());
        Ok(())
    })?;
    let d = Dataset {
        config: cfg.clone(),
        entries,
        dir: dir.to_path_buf(),
    };
    d.write_manifest()?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetConfig {
        DatasetConfig {
            case: CaseConfig {
                fine_resolution: 16,
                coarse_resolution: 8,
                n_steps: 4,
                warmup_time: 0.0,
                max_velocity: 1.0,
                peak_wavenumber: 2.0,
                ..CaseConfig::desk(CaseKind::ForcedTurbulence)
            },
            n_trajectories: 4,
            n_train: 2,
            n_validation: 1,
            base_seed: 10,
        }
    }

    #[test]
    fn splits_are_disjoint_by_seed() {
        let cfg = DatasetConfig::default();
        let splits: Vec<Split> = (0..12).map(|k| cfg.split_of(k)).collect();
        assert_eq!(splits.iter().filter(|&&s| s == Split::Train).count(), 8);
        assert_eq!(splits.iter().filter(|&&s| s == Split::Validation).count(), 1);
        assert_eq!(splits.iter().filter(|&&s| s == Split::Test).count(), 3);
    }

    #[test]
    fn generate_load_and_reuse() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let d = generate_dataset(&cfg, dir.path(), false).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(loaded, d);
        let train = loaded.trajectories(Split::Train).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(train[1].header.seed, 11);
        assert_eq!(loaded.trajectories(Split::Test).unwrap()[0].header.seed, 13);
        let f = loaded.read_fine_start(&loaded.entries[1]).unwrap();
        assert_eq!(f.header.grid.nx, 16);
        assert_eq!(
            super::super::downsample(&f.snapshots[0], 2).unwrap(),
            train[1].snapshots[0]
        );

        let again = generate_dataset(&cfg, dir.path(), false).unwrap();
        assert_eq!(again.read(&again.entries[0]).unwrap(), train[0]);

        let mut other = cfg.clone();
        other.base_seed = 99;
        assert!(generate_dataset(&other, dir.path(), false).is_err());
        assert!(generate_dataset(&other, dir.path(), true).is_ok());
    }
}
