//! Feature-cache backend. Pretrained encoders and the detector run offline; their
//! outputs land in a dense-array archive that this backend serves back.

use std::collections::BTreeMap;
use std::path::Path;

use hoigen_core::backend::{AnnotatedImage, Backend, Branch, FeatureVec, GtPair, PairFeatures, RegionSet};
use hoigen_core::linalg::Matrix;
use hoigen_core::synthetic::{SyntheticBackend, SyntheticImage};
use hoigen_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveWriter, DType};
use crate::error::{Error, Result};

const KIND: &str = "feature-cache";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedImageMeta {
    pub id: u64,
    pub part: Part,
    pub pairs: Vec<GtPair>,
    pub detections: RegionSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheMetadata {
    kind: String,
    dim: usize,
    prompts: Vec<String>,
    images: Vec<CachedImageMeta>,
}

/// Serves features recorded in a cache archive. Images are referred to by id.
#[derive(Debug)]
pub struct CachedBackend {
    archive: Archive,
    dim: usize,
    text: BTreeMap<String, usize>,
    text_matrix: Matrix,
    images: BTreeMap<u64, CachedImageMeta>,
}

fn gt_regions(pairs: &[GtPair]) -> RegionSet {
    AnnotatedImage {
        id: 0,
        image: (),
        pairs: pairs.to_vec(),
    }
    .ground_truth_regions()
}

fn backend_err(e: Error) -> CoreError {
    CoreError::Backend(e.to_string())
}

impl CachedBackend {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let archive = Archive::open(dir)?;
        let meta: CacheMetadata = serde_json::from_value(archive.metadata().clone())
            .map_err(|e| Error::format(archive.dir(), format!("cache metadata: {e}")))?;
        if meta.kind != KIND {
            return Err(Error::format(archive.dir(), format!("not a feature cache (kind `{}`)", meta.kind)));
        }
        let text_matrix = archive.matrix("text")?;
        if text_matrix.rows() != meta.prompts.len() || text_matrix.cols() != meta.dim {
            return Err(Error::format(archive.dir(), "text embedding table does not match the prompt list"));
        }
        Ok(Self {
            dim: meta.dim,
            text: meta.prompts.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect(),
            text_matrix,
            images: meta.images.into_iter().map(|m| (m.id, m)).collect(),
            archive,
        })
    }

    /// Annotated train and test images. Training images carrying a category
    /// rejected by `keep` are dropped.
    pub fn dataset(&self, keep: impl Fn(usize) -> bool) -> (Vec<AnnotatedImage<u64>>, Vec<AnnotatedImage<u64>>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for m in self.images.values() {
            let img = AnnotatedImage {
                id: m.id,
                image: m.id,
                pairs: m.pairs.clone(),
            };
            match m.part {
                Part::Train if img.labels().into_iter().all(&keep) => train.push(img),
                Part::Train => {}
                Part::Test => test.push(img),
            }
        }
        (train, test)
    }

    fn meta(&self, id: u64) -> hoigen_core::Result<&CachedImageMeta> {
        self.images
            .get(&id)
            .ok_or_else(|| CoreError::Backend(format!("image {id} is not in the cache")))
    }

    fn rows(&self, name: &str) -> hoigen_core::Result<Matrix> {
        self.archive.matrix(name).map_err(backend_err)
    }
}

impl Backend for CachedBackend {
    type Image = u64;

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_regions(&self, image: &u64, regions: &RegionSet) -> hoigen_core::Result<Vec<PairFeatures>> {
        regions.validate()?;
        let meta = self.meta(*image)?;
        let which = if *regions == meta.detections {
            "det"
        } else if *regions == gt_regions(&meta.pairs) {
            "gt"
        } else {
            return Err(CoreError::Backend(format!("regions of image {image} were not cached")));
        };
        let u = self.rows(&format!("img{image}/{which}/union"))?;
        let h = self.rows(&format!("img{image}/{which}/human"))?;
        let o = self.rows(&format!("img{image}/{which}/object"))?;
        regions
            .pairs()
            .enumerate()
            .map(|(k, (hi, oi))| {
                Ok(PairFeatures {
                    human: hi,
                    object: oi,
                    union: FeatureVec::new(u.row(k).to_vec(), Branch::Union)?,
                    human_feature: FeatureVec::new(h.row(k).to_vec(), Branch::Human)?,
                    object_feature: FeatureVec::new(o.row(k).to_vec(), Branch::Object)?,
                })
            })
            .collect()
    }

    fn encode_text(&self, prompt: &str) -> hoigen_core::Result<FeatureVec> {
        let i = self
            .text
            .get(prompt)
            .ok_or_else(|| CoreError::Backend(format!("prompt `{prompt}` was not cached")))?;
        FeatureVec::new(self.text_matrix.row(*i).to_vec(), Branch::Union)
    }

    fn encode_global(&self, image: &u64) -> hoigen_core::Result<(FeatureVec, FeatureVec)> {
        self.meta(*image)?;
        let g = self.rows(&format!("img{image}/global"))?;
        Ok((
            FeatureVec::new(g.row(0).to_vec(), Branch::GlobalClip)?,
            FeatureVec::new(g.row(1).to_vec(), Branch::GlobalDino)?,
        ))
    }

    fn detect(&self, image: &u64) -> hoigen_core::Result<RegionSet> {
        Ok(self.meta(*image)?.detections.clone())
    }
}

fn put_pairs(w: &mut ArchiveWriter, prefix: &str, feats: &[PairFeatures], dim: usize) -> Result<()> {
    for b in Branch::REGION {
        let m = Matrix::from_rows(dim, feats.iter().map(|f| f.branch(b)))?;
        w.put_matrix(&format!("{prefix}/{b}"), &m, DType::F32, Some(b.as_str()))?;
    }
    Ok(())
}

/// Records everything the pipeline asks of `backend` for the given images,
/// in float32.
pub fn export_synthetic(
    backend: &SyntheticBackend,
    train: &[AnnotatedImage<SyntheticImage>],
    test: &[AnnotatedImage<SyntheticImage>],
    prompts: &[String],
    dir: &Path,
) -> Result<Archive> {
    let dim = backend.dim();
    let mut w = ArchiveWriter::create(dir)?;
    let mut unique: Vec<String> = prompts.to_vec();
    unique.sort();
    unique.dedup();
    let text = Matrix::from_rows(
        dim,
        unique
            .iter()
            .map(|p| backend.encode_text(p).map(|v| v.values))
            .collect::<hoigen_core::Result<Vec<_>>>()?,
    )?;
    w.put_matrix("text", &text, DType::F32, None)?;
    let mut images = Vec::new();
    for (part, set) in [(Part::Train, train), (Part::Test, test)] {
        for img in set {
            let det = backend.detect(&img.image)?;
            put_pairs(&mut w, &format!("img{}/det", img.id), &backend.encode_regions(&img.image, &det)?, dim)?;
            let gt = img.ground_truth_regions();
            put_pairs(&mut w, &format!("img{}/gt", img.id), &backend.encode_regions(&img.image, &gt)?, dim)?;
            let (clip, dino) = backend.encode_global(&img.image)?;
            let g = Matrix::from_rows(dim, [clip.values, dino.values])?;
            w.put_matrix(&format!("img{}/global", img.id), &g, DType::F32, Some("global"))?;
            images.push(CachedImageMeta {
                id: img.id,
                part,
                pairs: img.pairs.clone(),
                detections: det,
            });
        }
    }
    let meta = CacheMetadata {
        kind: KIND.to_string(),
        dim,
        prompts: unique,
        images,
    };
    w.finish(serde_json::to_value(meta).expect("cache metadata serializes"))
}
