//! Layered run configuration: built-in defaults, then a TOML file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use hoigen_core::pipeline::{PipelineConfig, BENCH12_TAXONOMY};
use hoigen_core::synthetic::{BenchmarkConfig, DetectorConfig, WorldConfig};
use hoigen_core::taxonomy::{HoiTaxonomy, Setting};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HICO_DET_TAXONOMY: &str = include_str!("../data/hico_det.taxonomy");
pub const CACHE_ENV: &str = "HOIGEN_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    #[default]
    Synthetic,
    Pretrained,
}

impl std::str::FromStr for BackendChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(BackendChoice::Synthetic),
            "pretrained" => Ok(BackendChoice::Pretrained),
            other => Err(Error::Usage(format!("unknown backend `{other}` (synthetic or pretrained)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendChoice,
    pub seed: u64,
    /// Embedding width. The synthetic preset uses 32; real ViT-B/16 features are 512 wide.
    pub dim: usize,
    /// `bench12`, `hico_det` or a path to a taxonomy file.
    pub taxonomy: String,
    pub setting: Setting,
    pub unseen: usize,
    /// Feature cache of the pretrained backend; falls back to `HOIGEN_CACHE_DIR`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub world: WorldConfig,
    pub detector: DetectorConfig,
    pub benchmark: BenchmarkConfig,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendChoice::Synthetic,
            seed: 0,
            dim: WorldConfig::default().dim,
            taxonomy: "bench12".to_string(),
            setting: Setting::NfUc,
            unseen: 4,
            cache_dir: None,
            world: WorldConfig::default(),
            detector: DetectorConfig::default(),
            benchmark: BenchmarkConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("{}: {e}", origin.display())))
    }

    /// Defaults overlaid with `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text, p)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Copies the shared fields into the nested configurations and checks them.
    pub fn resolve(mut self) -> Result<Self> {
        self.world.dim = self.dim;
        self.pipeline.seed = self.seed;
        self.pipeline.validate()?;
        if self.dim < 8 && self.backend == BackendChoice::Synthetic {
            return Err(Error::Usage(format!("synthetic dim must be at least 8, got {}", self.dim)));
        }
        Ok(self)
    }

    pub fn load_taxonomy(&self) -> Result<HoiTaxonomy> {
        load_taxonomy(&self.taxonomy)
    }

    pub fn cache_dir(&self) -> Result<PathBuf> {
        if let Some(d) = &self.cache_dir {
            return Ok(d.clone());
        }
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Usage(format!("the pretrained backend needs `cache_dir` or {CACHE_ENV}")))
    }
}

/// A built-in taxonomy name or a file path.
pub fn load_taxonomy(source: &str) -> Result<HoiTaxonomy> {
    let text = match source {
        "bench12" => BENCH12_TAXONOMY.to_string(),
        "hico_det" | "hico" => HICO_DET_TAXONOMY.to_string(),
        path => fs::read_to_string(path).map_err(|e| Error::Usage(format!("{path}: {e}")))?,
    };
    HoiTaxonomy::parse(&text).map_err(|e| Error::Usage(format!("{source}: {e}")))
}
