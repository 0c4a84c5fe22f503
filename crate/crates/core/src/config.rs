//! Run configuration: one TOML file per run.
//!
//! ```toml
//! seed = 3            # optional; overrides every single-run seed below
//! out = "runs/a"      # optional; `--out` wins
//! data = "runs/data"  # optional dataset directory; defaults to <out>/data
//!
//! [dataset]
//! n_train = 200
//! [dataset.phantom]
//! size = 64
//! [dataset.mask]
//! acceleration = 4.0
//!
//! [train]
//! mode = "backward"
//! max_iterations = 2000
//! [train.geometry]
//! blocks = 4
//! layers = 3
//! channels = 32
//!
//! [ablate]
//! c_list = [0.8, 0.7, 0.6]
//! ```
//!
//! Every table rejects unknown keys.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri_sim::DatasetConfig;
use crate::train::{AblateConfig, TrainConfig};

pub const DEFAULT_OUT: &str = "out";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub ablate: AblateConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg.resolved())
    }

    /// Read and validate a configuration file. A missing or unreadable file
    /// is a configuration error, not a missing input.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply the top-level seed to the phantom, mask, baseline and training
    /// seeds. Ablation seed lists are left alone.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self.resolved()
    }

    fn resolved(mut self) -> Self {
        if let Some(s) = self.seed {
            self.dataset.phantom.seed = s;
            self.dataset.mask.seed = s;
            self.dataset.recon.seed = s;
            self.train.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.dataset.phantom.validate().map_err(config)?;
        if !(self.dataset.mask.acceleration >= 1.0) {
            return Err(Error::Config(format!("acceleration {} must be at least 1", self.dataset.mask.acceleration)));
        }
        if !(0.0..1.0).contains(&self.dataset.mask.center_fraction) {
            return Err(Error::Config(format!("center_fraction {} must lie in [0, 1)", self.dataset.mask.center_fraction)));
        }
        self.train.validate().map_err(config)?;
        if self.ablate.seeds.is_empty() {
            return Err(Error::Config("ablate.seeds must not be empty".into()));
        }
        if self.ablate.c_list.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
            return Err(Error::Config("every ablate.c_list entry must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Output directory: the flag if given, else the file's `out`, else `out`.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Dataset directory: the flag if given, else the file's `data`, else
    /// `<out>/data`.
    pub fn data_dir(&self, flag: Option<&Path>, out: &Path) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.data.clone())
            .unwrap_or_else(|| out.join("data"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable as TOML")
    }
}
