//! Deterministic synthetic world standing in for the frozen CLIP, DINO and DETR
//! models.
//!
//! Every HOI category gets a unit-norm mean per branch. Region and global
//! features are means plus isotropic noise. The means are built from the
//! same hashed character-trigram word vectors the synthetic text encoder uses,
//! pushed through a fixed near-identity transform, so text embeddings carry
//! partial (not perfect) information about image features, the way CLIP's
//! shared space does. Region features computed from misaligned boxes drift
//! toward a clutter direction, which is the gap between ground-truth crops and
//! detector regions that the aligner has to close.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::backend::{AnnotatedImage, Backend, Branch, FeatureVec, GtPair, PairFeatures, RegionSet};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::linalg::{self, Matrix};
use crate::prompts;
use crate::rng::{self, StreamRng};
use crate::taxonomy::{HoiTaxonomy, ZeroShotSplit};

const STOPWORDS: [&str; 11] = ["a", "an", "the", "of", "photo", "is", "who", "with", "person", "and", "not"];
const STOPWORD_WEIGHT: f64 = 0.35;
const MATCH_IOU: f64 = 0.5;

/// Bag of hashed character trigrams, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashTextEncoder {
    seed: u64,
    dim: usize,
}

impl HashTextEncoder {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn trigram_vec(&self, gram: &[u8]) -> Vec<f64> {
        let mut r = rng::stream(self.seed, &[0x7431, rng::hash_bytes(gram)]);
        rng::normal_vec(&mut r, self.dim)
    }

    /// Unit vector of one word.
    pub fn word(&self, word: &str) -> Vec<f64> {
        let padded: Vec<u8> = core::iter::once(b'<')
            .chain(word.bytes())
            .chain(core::iter::once(b'>'))
            .collect();
        let mut acc = vec![0.0; self.dim];
        for gram in padded.windows(3) {
            linalg::axpy(1.0, &self.trigram_vec(gram), &mut acc);
        }
        linalg::normalize(&mut acc);
        acc
    }

    /// Unit vector of a phrase; filler words are down-weighted.
    pub fn phrase(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for tok in text
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let tok = tok.to_ascii_lowercase();
            let w = if STOPWORDS.contains(&tok.as_str()) { STOPWORD_WEIGHT } else { 1.0 };
            linalg::axpy(w, &self.word(&tok), &mut acc);
        }
        linalg::normalize(&mut acc);
        acc
    }

    pub fn encode(&self, prompt: &str) -> Result<Vec<f64>> {
        if prompt.trim().is_empty() {
            return Err(Error::Backend("empty prompt".into()));
        }
        let v = self.phrase(prompt);
        if linalg::norm(&v) == 0.0 {
            return Err(Error::Backend(format!("prompt `{prompt}` has no tokens")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct WorldConfig {
    /// Embedding width, at least 8.
    pub dim: usize,
    /// Isotropic per-dimension noise scale.
    pub noise: f64,
    /// Strength of the fixed transform separating image space from text space.
    pub modality_gap: f64,
    /// Weight of the per-category component that text cannot predict.
    pub idiosyncrasy: f64,
    /// How strongly box misalignment pulls region features toward clutter.
    pub context_shift: f64,
    /// Minimum distance between distinct category means on every branch.
    pub min_separation: f64,
    pub image_width: f64,
    pub image_height: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            noise: 0.12,
            modality_gap: 0.6,
            idiosyncrasy: 0.35,
            context_shift: 1.2,
            min_separation: 0.1,
            image_width: 1280.0,
            image_height: 720.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DetectorConfig {
    /// Box coordinate jitter as a fraction of the box side.
    pub jitter: f64,
    /// Standard deviation of the detection-score perturbation.
    pub score_noise: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            jitter: 0.08,
            score_noise: 0.05,
        }
    }
}

/// Scene description carried by a synthetic image handle.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub id: u64,
    pub pairs: Vec<GtPair>,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    seed: u64,
    config: WorldConfig,
    text: HashTextEncoder,
    hoi_objects: Vec<usize>,
    num_objects: usize,
    means: BTreeMap<Branch, Matrix>,
    background_union: Matrix,
    background_human: Matrix,
    background_object: Matrix,
    background_global: Vec<f64>,
    clutter: Vec<f64>,
}

impl SyntheticWorld {
    pub fn new(tax: &HoiTaxonomy, config: WorldConfig, seed: u64) -> Result<Self> {
        let d = config.dim;
        if d < 8 {
            return Err(Error::Config(format!("synthetic dim must be at least 8, got {d}")));
        }
        if !(config.noise >= 0.0 && config.noise.is_finite()) {
            return Err(Error::Config("world noise must be finite and non-negative".into()));
        }
        let text = HashTextEncoder::new(seed, d);
        let gap = random_matrix(&mut rng::stream(seed, &[0x6761]), d, config.modality_gap);
        let dino = random_matrix(&mut rng::stream(seed, &[0x646e]), d, 1.0);
        let to_image = |v: &[f64]| -> Vec<f64> {
            let mut out = v.to_vec();
            linalg::axpy(1.0, &gap.mul_vec(v).expect("square"), &mut out);
            out
        };
        let verb_sem: Vec<Vec<f64>> = tax.verbs().iter().map(|v| text.phrase(&prompts::gerund(v))).collect();
        let object_sem: Vec<Vec<f64>> = tax
            .objects()
            .iter()
            .map(|o| text.phrase(&prompts::display_name(o)))
            .collect();
        let person = text.phrase("person");
        let scene = unit_vec(&mut rng::stream(seed, &[0x7363]), d);
        let clutter = unit_vec(&mut rng::stream(seed, &[0x636c]), d);

        let blend = |parts: &[(f64, &[f64])]| -> Vec<f64> {
            let mut acc = vec![0.0; d];
            for (w, v) in parts {
                linalg::axpy(*w, v, &mut acc);
            }
            acc
        };
        let c = tax.num_hois();
        let iota = config.idiosyncrasy;
        let mut means = BTreeMap::new();
        for branch in [Branch::Union, Branch::Human, Branch::Object, Branch::GlobalClip, Branch::GlobalDino] {
            let semantic: Vec<Vec<f64>> = tax
                .hois()
                .iter()
                .map(|h| {
                    let (sv, so) = (&verb_sem[h.verb][..], &object_sem[h.object][..]);
                    match branch {
                        Branch::Union => to_image(&blend(&[(0.55, sv), (0.45, so)])),
                        Branch::Human => to_image(&blend(&[(0.5, sv), (0.2, so), (0.3, &person)])),
                        Branch::Object => to_image(&blend(&[(0.8, so), (0.2, sv)])),
                        Branch::GlobalClip => to_image(&blend(&[(0.45, sv), (0.35, so), (0.2, &scene)])),
                        Branch::GlobalDino => dino.mul_vec(&blend(&[(1.0, sv), (1.0, so)])).expect("square"),
                    }
                })
                .collect();
            let weight = if branch == Branch::Object { 0.5 * iota } else { iota };
            let m = separated_means(&semantic, weight, config.min_separation, seed, branch)?;
            debug_assert_eq!(m.rows(), c);
            means.insert(branch, m);
        }
        let per_object = |f: &dyn Fn(&[f64]) -> Vec<f64>| -> Result<Matrix> {
            Matrix::from_rows(
                d,
                object_sem.iter().map(|so| {
                    let mut v = f(so);
                    linalg::normalize(&mut v);
                    v
                }),
            )
        };
        let background_union = per_object(&|so| to_image(&blend(&[(0.35, &person), (0.65, so)])))?;
        let background_human = per_object(&|so| to_image(&blend(&[(0.8, &person), (0.2, so)])))?;
        let background_object = per_object(&|so| to_image(so))?;
        Ok(Self {
            seed,
            config,
            text,
            hoi_objects: tax.hois().iter().map(|h| h.object).collect(),
            num_objects: tax.num_objects(),
            means,
            background_union,
            background_human,
            background_object,
            background_global: scene,
            clutter,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn num_hois(&self) -> usize {
        self.hoi_objects.len()
    }

    pub fn text_encoder(&self) -> &HashTextEncoder {
        &self.text
    }

    /// Per-category means of `branch`, one row per HOI.
    pub fn means(&self, branch: Branch) -> &Matrix {
        &self.means[&branch]
    }

    pub fn mean(&self, branch: Branch, hoi: usize) -> &[f64] {
        self.means[&branch].row(hoi)
    }

    /// Mean of the per-category means of `labels`.
    pub fn label_mean(&self, branch: Branch, labels: &[usize]) -> Vec<f64> {
        linalg::mean_rows(self.dim(), labels.iter().map(|&h| self.mean(branch, h)))
    }

    fn background(&self, branch: Branch, object: usize) -> &[f64] {
        match branch {
            Branch::Union => self.background_union.row(object),
            Branch::Human => self.background_human.row(object),
            Branch::Object => self.background_object.row(object),
            _ => &self.background_global,
        }
    }

    /// `base` mixed toward clutter by `misalignment`, plus noise from `noise_rng`.
    fn observe(&self, base: &[f64], misalignment: f64, noise_rng: &mut StreamRng) -> Vec<f64> {
        let m = (self.config.context_shift * misalignment).clamp(0.0, 1.0);
        base.iter()
            .zip(&self.clutter)
            .map(|(b, c)| (1.0 - m) * b + m * c + self.config.noise * rng::normal(noise_rng))
            .collect()
    }

    /// One noisy feature of `branch` for an object carrying `labels`.
    pub fn sample(&self, branch: Branch, labels: &[usize], r: &mut StreamRng) -> Vec<f64> {
        self.observe(&self.label_mean(branch, labels), 0.0, r)
    }

    fn random_box(&self, r: &mut StreamRng, x_lo: f64, x_hi: f64, w: (f64, f64), h: (f64, f64)) -> BBox {
        let bw = r.random_range(w.0..w.1);
        let bh = r.random_range(h.0..h.1);
        let x1 = r.random_range(x_lo..(x_hi - bw).max(x_lo + 1.0));
        let y1 = r.random_range(0.0..(self.config.image_height - bh).max(1.0));
        BBox {
            x1,
            y1,
            x2: x1 + bw,
            y2: y1 + bh,
        }
    }

    /// An image whose `k`-th pair carries `pair_labels[k]`. Pairs are laid out in
    /// disjoint vertical strips so they never overlap.
    pub fn make_image(&self, id: u64, pair_labels: &[Vec<usize>]) -> Result<AnnotatedImage<SyntheticImage>> {
        let mut r = rng::stream(self.seed, &[0x696d, id]);
        let strips = pair_labels.len().max(1) as f64;
        let strip_w = self.config.image_width / strips;
        let mut pairs = Vec::with_capacity(pair_labels.len());
        for (k, labels) in pair_labels.iter().enumerate() {
            let object_class = match labels.first() {
                Some(&h) => *self.hoi_objects.get(h).ok_or(Error::UnknownCategory(h))?,
                None => return Err(Error::Validation("a ground-truth pair needs at least one label".into())),
            };
            if labels.iter().any(|&h| self.hoi_objects.get(h) != Some(&object_class)) {
                return Err(Error::Validation("labels of one pair must share the object".into()));
            }
            let lo = k as f64 * strip_w;
            let hi = lo + strip_w;
            let wmax = (strip_w * 0.45).max(40.0);
            let human = self.random_box(&mut r, lo, hi, (40.0, wmax), (160.0, 400.0));
            let object = self.random_box(&mut r, lo, hi, (30.0, wmax), (30.0, 260.0));
            pairs.push(GtPair {
                human,
                object,
                object_class,
                hois: labels.clone(),
            });
        }
        Ok(AnnotatedImage {
            id,
            image: SyntheticImage { id, pairs: pairs.clone() },
            pairs,
        })
    }

    /// Training images contain seen categories only; test images cover every
    /// category. Each image has a primary pair and, with `second_pair_prob`, a
    /// second pair whose category is drawn from the same pool.
    pub fn benchmark(&self, split: &ZeroShotSplit, cfg: &BenchmarkConfig, seed: u64) -> Result<SyntheticDataset> {
        let seen: Vec<usize> = split.seen_hois.iter().copied().collect();
        let all: Vec<usize> = (0..self.num_hois()).collect();
        if seen.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut next_id = 0u64;
        let mut build = |pool: &[usize], per_category: usize, tag: u64| -> Result<Vec<AnnotatedImage<SyntheticImage>>> {
            let mut r = rng::stream(seed, &[0x6473, tag]);
            let mut images = Vec::with_capacity(pool.len() * per_category);
            for &c in pool {
                for _ in 0..per_category {
                    let mut labels = vec![vec![c]];
                    if r.random_bool(cfg.second_pair_prob) {
                        labels.push(vec![pool[r.random_range(0..pool.len())]]);
                    }
                    images.push(self.make_image(next_id, &labels)?);
                    next_id += 1;
                }
            }
            Ok(images)
        };
        let train = build(&seen, cfg.train_images_per_category, 1)?;
        let test = build(&all, cfg.test_images_per_category, 2)?;
        Ok(SyntheticDataset { train, test })
    }

    pub fn num_objects(&self) -> usize {
        self.num_objects
    }
}

fn unit_vec(r: &mut StreamRng, d: usize) -> Vec<f64> {
    let mut v = rng::normal_vec(r, d);
    linalg::normalize(&mut v);
    v
}

/// Gaussian `d x d` matrix scaled so that it maps unit vectors to norm ~`scale`.
fn random_matrix(r: &mut StreamRng, d: usize, scale: f64) -> Matrix {
    let s = scale / libm::sqrt(d as f64);
    Matrix::from_vec(d, d, rng::normal_vec(r, d * d).into_iter().map(|x| x * s).collect()).expect("d*d buffer")
}

/// Normalized `semantic + weight * idiosyncratic` rows, resampling the
/// idiosyncratic part until all rows are at least `min_sep` apart.
fn separated_means(semantic: &[Vec<f64>], weight: f64, min_sep: f64, seed: u64, branch: Branch) -> Result<Matrix> {
    let d = semantic.first().map_or(0, |v| v.len());
    let min_sq = min_sep * min_sep;
    for attempt in 0..64u64 {
        let rows: Vec<Vec<f64>> = semantic
            .iter()
            .enumerate()
            .map(|(h, s)| {
                let mut r = rng::stream(seed, &[0x6964, branch.code(), attempt, h as u64]);
                let mut v = s.clone();
                let mut s_norm = linalg::norm(&v);
                if s_norm == 0.0 {
                    s_norm = 1.0;
                }
                v.iter_mut().for_each(|x| *x /= s_norm);
                linalg::axpy(weight, &unit_vec(&mut r, d), &mut v);
                linalg::normalize(&mut v);
                v
            })
            .collect();
        let ok = (0..rows.len()).all(|i| (i + 1..rows.len()).all(|j| linalg::squared_distance(&rows[i], &rows[j]) >= min_sq));
        if ok {
            return Matrix::from_rows(d, rows);
        }
    }
    Err(Error::Validation(format!(
        "could not separate {branch} category means by {min_sep}; raise idiosyncrasy or dim"
    )))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BenchmarkConfig {
    pub train_images_per_category: usize,
    pub test_images_per_category: usize,
    pub second_pair_prob: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            train_images_per_category: 100,
            test_images_per_category: 30,
            second_pair_prob: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: Vec<AnnotatedImage<SyntheticImage>>,
    pub test: Vec<AnnotatedImage<SyntheticImage>>,
}

/// The synthetic world behind the [`Backend`] interface.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    world: SyntheticWorld,
    detector: DetectorConfig,
}

impl SyntheticBackend {
    pub fn new(world: SyntheticWorld, detector: DetectorConfig) -> Self {
        Self { world, detector }
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }

    pub fn detector_config(&self) -> &DetectorConfig {
        &self.detector
    }

    fn jitter_box(&self, b: &BBox, r: &mut StreamRng) -> BBox {
        let j = self.detector.jitter;
        if j == 0.0 {
            return *b;
        }
        let (w, h) = (b.x2 - b.x1, b.y2 - b.y1);
        let mut out = BBox {
            x1: b.x1 + j * w * rng::normal(r),
            y1: b.y1 + j * h * rng::normal(r),
            x2: b.x2 + j * w * rng::normal(r),
            y2: b.y2 + j * h * rng::normal(r),
        };
        if out.x2 - out.x1 < 1.0 {
            out.x2 = out.x1 + 1.0;
        }
        if out.y2 - out.y1 < 1.0 {
            out.y2 = out.y1 + 1.0;
        }
        out
    }

    fn noisy_score(&self, r: &mut StreamRng) -> f64 {
        (0.9 + self.detector.score_noise * rng::normal(r)).clamp(0.0, 1.0)
    }

    fn box_noise(&self, image: u64, branch: Branch, boxes: &[&BBox]) -> StreamRng {
        let mut path = vec![0x7267, image, branch.code()];
        for b in boxes {
            path.extend(b.as_array().iter().map(|v| v.to_bits()));
        }
        rng::stream(self.world.seed, &path)
    }
}

fn best_match(b: &BBox, candidates: impl Iterator<Item = BBox>) -> Option<(usize, f64)> {
    candidates
        .enumerate()
        .map(|(i, c)| (i, iou(b, &c)))
        .filter(|&(_, v)| v >= MATCH_IOU)
        .fold(None, |best: Option<(usize, f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        })
}

impl Backend for SyntheticBackend {
    type Image = SyntheticImage;

    fn dim(&self) -> usize {
        self.world.dim()
    }

    fn encode_regions(&self, image: &SyntheticImage, regions: &RegionSet) -> Result<Vec<PairFeatures>> {
        regions.validate()?;
        let w = &self.world;
        let mut out = Vec::with_capacity(regions.num_pairs());
        for (hi, oi) in regions.pairs() {
            let hb = regions.human_boxes[hi];
            let ob = regions.object_boxes[oi];
            let ub = hb.union_box(&ob);
            let gh = best_match(&hb, image.pairs.iter().map(|p| p.human));
            let go = best_match(&ob, image.pairs.iter().map(|p| p.object));
            let feature = |branch: Branch| -> Result<FeatureVec> {
                let mut noise = match branch {
                    Branch::Human => self.box_noise(image.id, branch, &[&hb]),
                    Branch::Object => self.box_noise(image.id, branch, &[&ob]),
                    _ => self.box_noise(image.id, branch, &[&hb, &ob]),
                };
                let values = match (gh, go) {
                    (Some((g, h_iou)), Some((g2, o_iou))) if g == g2 => {
                        let gt = &image.pairs[g];
                        let misalignment = match branch {
                            Branch::Union => 1.0 - iou(&ub, &gt.human.union_box(&gt.object)),
                            Branch::Human => 1.0 - h_iou,
                            _ => 1.0 - o_iou,
                        };
                        w.observe(&w.label_mean(branch, &gt.hois), misalignment, &mut noise)
                    }
                    _ => {
                        let class = regions.object_classes[oi];
                        if class >= w.num_objects {
                            return Err(Error::Backend(format!("object class {class} outside the world")));
                        }
                        w.observe(w.background(branch, class), 0.0, &mut noise)
                    }
                };
                FeatureVec::new(values, branch)
            };
            out.push(PairFeatures {
                human: hi,
                object: oi,
                union: feature(Branch::Union)?,
                human_feature: feature(Branch::Human)?,
                object_feature: feature(Branch::Object)?,
            });
        }
        Ok(out)
    }

    fn encode_text(&self, prompt: &str) -> Result<FeatureVec> {
        FeatureVec::new(self.world.text.encode(prompt)?, Branch::Union)
    }

    fn encode_global(&self, image: &SyntheticImage) -> Result<(FeatureVec, FeatureVec)> {
        let mut labels: Vec<usize> = image.pairs.iter().flat_map(|p| p.hois.iter().copied()).collect();
        labels.sort_unstable();
        labels.dedup();
        let w = &self.world;
        let global = |branch: Branch| -> Result<FeatureVec> {
            let mut r = rng::stream(w.seed, &[0x676c, image.id, branch.code()]);
            let base = if labels.is_empty() {
                w.background_global.clone()
            } else {
                w.label_mean(branch, &labels)
            };
            FeatureVec::new(w.observe(&base, 0.0, &mut r), branch)
        };
        Ok((global(Branch::GlobalClip)?, global(Branch::GlobalDino)?))
    }

    fn detect(&self, image: &SyntheticImage) -> Result<RegionSet> {
        let mut r = rng::stream(self.world.seed, &[0x6474, image.id]);
        let mut regions = RegionSet::default();
        for p in &image.pairs {
            regions.human_boxes.push(self.jitter_box(&p.human, &mut r));
            regions.human_scores.push(self.noisy_score(&mut r));
            regions.object_boxes.push(self.jitter_box(&p.object, &mut r));
            regions.object_scores.push(self.noisy_score(&mut r));
            regions.object_classes.push(p.object_class);
        }
        regions.validate()?;
        Ok(regions)
    }
}

/// Display label of a category for plots and reports.
pub fn category_label(tax: &HoiTaxonomy, hoi: usize) -> String {
    let h = tax.hois()[hoi];
    format!("{} {}", tax.verbs()[h.verb], tax.objects()[h.object])
}
