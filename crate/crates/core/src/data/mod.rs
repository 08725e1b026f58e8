//! Dataset ingestion, chronological splitting and synthetic data generation.

mod io;
mod synthetic;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::panel::ScenarioPanel;

pub use io::{load_panel, read_panel_files, save_panel, write_long_csv, LONG_HEADER};
pub use synthetic::{generate_synthetic, SyntheticSpec, TruthSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub name: String,
    /// Rated power, MW.
    pub capacity: f64,
}

/// Describes a dataset on disk. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sites: Vec<Site>,
    pub forecasts: PathBuf,
    #[serde(default)]
    pub observations: Option<PathBuf>,
    pub n_scenarios: usize,
    #[serde(default = "default_split_fraction")]
    pub split_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_split_fraction() -> f64 {
    0.8
}

impl DatasetManifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if self.n_scenarios < 2 {
            return Err(Error::Config("n_scenarios must be at least 2".into()));
        }
        self.hierarchy().map(|_| ())
    }

    pub fn hierarchy(&self) -> Result<Hierarchy> {
        Hierarchy::new(
            self.sites.iter().map(|s| s.name.clone()).collect(),
            self.sites.iter().map(|s| s.capacity).collect(),
        )
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Splits issuance times in chronological order; the first `floor(fraction * T)` go to training.
pub fn chronological_split(
    panel: &ScenarioPanel,
    fraction: f64,
) -> Result<(ScenarioPanel, ScenarioPanel)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = panel.n_issuances();
    if n < 2 {
        return Err(Error::Config(format!(
            "need at least 2 issuance times to split, got {n}"
        )));
    }
    let n_train = (fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "split fraction {fraction} leaves an empty side for {n} issuance times"
        )));
    }
    Ok((
        panel.slice_issuances(0..n_train),
        panel.slice_issuances(n_train..n),
    ))
}
