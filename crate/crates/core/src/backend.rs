//! Frozen encoder and detector interfaces.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Branch {
    Union,
    Human,
    Object,
    GlobalClip,
    GlobalDino,
}

impl Branch {
    /// The three region branches the generator synthesizes.
    pub const REGION: [Branch; 3] = [Branch::Union, Branch::Human, Branch::Object];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Union => "union",
            Branch::Human => "human",
            Branch::Object => "object",
            Branch::GlobalClip => "global_clip",
            Branch::GlobalDino => "global_dino",
        }
    }

    pub(crate) fn code(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Branch::Union, Branch::Human, Branch::Object, Branch::GlobalClip, Branch::GlobalDino]
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown branch `{s}`")))
    }
}

/// A single embedding with its branch tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVec {
    pub values: Vec<f64>,
    pub branch: Branch,
}

impl FeatureVec {
    pub fn new(values: Vec<f64>, branch: Branch) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite {branch} feature")));
        }
        Ok(Self { values, branch })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Features of one category on one branch, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub branch: Branch,
    pub category: usize,
    pub features: crate::linalg::Matrix,
}

/// Detector output for one image: human and object boxes with confidences.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegionSet {
    pub human_boxes: Vec<BBox>,
    pub human_scores: Vec<f64>,
    pub object_boxes: Vec<BBox>,
    pub object_scores: Vec<f64>,
    pub object_classes: Vec<usize>,
}

impl RegionSet {
    pub fn validate(&self) -> Result<()> {
        if self.human_boxes.len() != self.human_scores.len() {
            return Err(Error::Validation("human boxes and scores differ in length".into()));
        }
        if self.object_boxes.len() != self.object_scores.len()
            || self.object_boxes.len() != self.object_classes.len()
        {
            return Err(Error::Validation("object boxes, scores and classes differ in length".into()));
        }
        for b in self.human_boxes.iter().chain(&self.object_boxes) {
            b.validate()?;
        }
        if self
            .human_scores
            .iter()
            .chain(&self.object_scores)
            .any(|s| !(0.0..=1.0).contains(s))
        {
            return Err(Error::Validation("detection score outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn num_pairs(&self) -> usize {
        self.human_boxes.len() * self.object_boxes.len()
    }

    /// `(human index, object index)` in Cartesian order, humans outermost.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let no = self.object_boxes.len();
        (0..self.human_boxes.len()).flat_map(move |h| (0..no).map(move |o| (h, o)))
    }
}

/// Region features of one human-object pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub human: usize,
    pub object: usize,
    pub union: FeatureVec,
    pub human_feature: FeatureVec,
    pub object_feature: FeatureVec,
}

impl PairFeatures {
    pub fn branch(&self, branch: Branch) -> &[f64] {
        match branch {
            Branch::Union => &self.union.values,
            Branch::Human => &self.human_feature.values,
            Branch::Object => &self.object_feature.values,
            _ => panic!("pair features carry no {branch} branch"),
        }
    }
}

/// Frozen image, region and text encoders plus an off-the-shelf detector.
///
/// Implementations must be deterministic: identical inputs give bit-identical
/// outputs, and concurrent calls through `&self` are allowed.
pub trait Backend {
    type Image;

    /// Embedding width `D`.
    fn dim(&self) -> usize;

    /// Union, human and object features for every human-object pair of `regions`.
    fn encode_regions(&self, image: &Self::Image, regions: &RegionSet) -> Result<Vec<PairFeatures>>;

    /// L2-normalized text embedding.
    fn encode_text(&self, prompt: &str) -> Result<FeatureVec>;

    /// Global `(CLIP, DINO)` image features.
    fn encode_global(&self, image: &Self::Image) -> Result<(FeatureVec, FeatureVec)>;

    fn detect(&self, image: &Self::Image) -> Result<RegionSet>;
}

/// Ground-truth human-object pair annotation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GtPair {
    pub human: BBox,
    pub object: BBox,
    pub object_class: usize,
    pub hois: Vec<usize>,
}

/// An image handle plus its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage<I> {
    pub id: u64,
    pub image: I,
    pub pairs: Vec<GtPair>,
}

impl<I> AnnotatedImage<I> {
    /// Distinct HOI labels of the whole image, ascending.
    pub fn labels(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.pairs.iter().flat_map(|p| p.hois.iter().copied()).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// Regions made of the annotated boxes, one human and one object per pair.
    pub fn ground_truth_regions(&self) -> RegionSet {
        RegionSet {
            human_boxes: self.pairs.iter().map(|p| p.human).collect(),
            human_scores: self.pairs.iter().map(|_| 1.0).collect(),
            object_boxes: self.pairs.iter().map(|p| p.object).collect(),
            object_scores: self.pairs.iter().map(|_| 1.0).collect(),
            object_classes: self.pairs.iter().map(|p| p.object_class).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_validation() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let mut r = RegionSet {
            human_boxes: alloc::vec![b, b],
            human_scores: alloc::vec![0.5, 1.0],
            object_boxes: alloc::vec![b, b, b],
            object_scores: alloc::vec![0.1, 0.2, 0.3],
            object_classes: alloc::vec![0, 1, 2],
        };
        r.validate().unwrap();
        assert_eq!(r.num_pairs(), 6);
        assert_eq!(r.pairs().collect::<Vec<_>>()[4], (1, 1));
        r.object_scores[0] = 1.5;
        assert!(r.validate().is_err());
        r.object_scores[0] = 0.5;
        r.object_classes.pop();
        assert!(r.validate().is_err());
    }

    #[test]
    fn branch_names() {
        for b in Branch::REGION {
            assert_eq!(b.as_str().parse::<Branch>().unwrap(), b);
        }
    }
}
