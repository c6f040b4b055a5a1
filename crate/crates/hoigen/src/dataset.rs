//! Builds the prepared dataset for a run from whichever backend is configured.

use std::path::Path;

use hoigen_core::pipeline::{self, Prepared};
use hoigen_core::synthetic::{SyntheticBackend, SyntheticDataset, SyntheticWorld};
use hoigen_core::taxonomy::{build_split, HoiTaxonomy, ZeroShotSplit};

use crate::cache::CachedBackend;
use crate::config::{BackendChoice, RunConfig};
use crate::error::{Error, Result, StageContext};

/// The split of a run: read from `path` when given, otherwise built from the
/// configured setting.
pub fn resolve_split(cfg: &RunConfig, tax: &HoiTaxonomy, path: Option<&Path>) -> Result<ZeroShotSplit> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?;
            ZeroShotSplit::from_document(&text, tax).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))
        }
        None => Ok(build_split(tax, cfg.setting, cfg.unseen, cfg.seed)?),
    }
}

/// Synthetic world, backend and benchmark images for `seed`.
pub fn synthetic_world(
    cfg: &RunConfig,
    tax: &HoiTaxonomy,
    split: &ZeroShotSplit,
    seed: u64,
) -> Result<(SyntheticBackend, SyntheticDataset)> {
    let world = SyntheticWorld::new(tax, cfg.world.clone(), seed)?;
    let data = world.benchmark(split, &cfg.benchmark, seed)?;
    Ok((SyntheticBackend::new(world, cfg.detector.clone()), data))
}

/// Runs the frozen backend over the data of `seed`.
pub fn prepare_data(cfg: &RunConfig, tax: &HoiTaxonomy, split: &ZeroShotSplit, seed: u64) -> Result<Prepared> {
    let thr = cfg.pipeline.iou_threshold;
    match cfg.backend {
        BackendChoice::Synthetic => {
            let (backend, data) = synthetic_world(cfg, tax, split, seed).stage("data")?;
            pipeline::prepare(&backend, tax, split, &data.train, &data.test, thr).stage("prepare")
        }
        BackendChoice::Pretrained => {
            let backend = CachedBackend::open(cfg.cache_dir()?)?;
            if backend_dim(&backend) != cfg.dim {
                return Err(Error::Usage(format!(
                    "cache features are {} wide but the config says dim = {}",
                    backend_dim(&backend),
                    cfg.dim
                )));
            }
            let (train, test) = backend.dataset(|h| split.is_seen(h));
            pipeline::prepare(&backend, tax, split, &train, &test, thr).stage("prepare")
        }
    }
}

fn backend_dim(b: &CachedBackend) -> usize {
    hoigen_core::backend::Backend::dim(b)
}
