//! End-to-end run: realistic feature extraction, two-stage generator training,
//! synthesis, bank construction, detector-phase head training and evaluation.
//!
//! Each stage is a separate function so ablations can reuse the expensive ones.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::backend::{AnnotatedImage, Backend, Branch, PairFeatures};
use crate::banks::{self, Construction, FeaturePool, GenerativeBanks, PrototypeBank, TextPrototypes};
use crate::error::{Error, Result};
use crate::evalmap::{self, DetectionRecord, GroundTruthRecord, MapReport};
use crate::generator::{EpochLog, FeatureGenerator, GeneratorConfig, GeneratorSample};
use crate::geometry::{iou, BBox};
use crate::linalg::{self, Matrix};
use crate::prompts::PromptTable;
use crate::rng::{self, StreamRng};
use crate::scoring::{self, HeadConfig, HeadSample, InteractionHead, ScoringWeights};
use crate::taxonomy::{multi_hot, HoiTaxonomy, ZeroShotSplit};

/// The small compositional taxonomy used by the synthetic benchmark.
pub const BENCH12_TAXONOMY: &str = include_str!("../data/bench12.taxonomy");

/// Which optional knowledge sources take part in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Components {
    /// Feature generation. Off means realistic-only banks and no synthetic
    /// samples in head training.
    pub generation: bool,
    pub clip_image: bool,
    pub dino_image: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            generation: true,
            clip_image: true,
            dino_image: true,
        }
    }
}

impl Components {
    /// All eight on/off combinations, baseline first and full model last.
    pub fn grid() -> [Components; 8] {
        let c = |generation, clip_image, dino_image| Components {
            generation,
            clip_image,
            dino_image,
        };
        [
            c(false, false, false),
            c(true, false, false),
            c(false, true, false),
            c(false, false, true),
            c(true, false, true),
            c(false, true, true),
            c(true, true, false),
            c(true, true, true),
        ]
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.generation {
            parts.push("FG");
        }
        if self.clip_image {
            parts.push("CLIP-img");
        }
        if self.dino_image {
            parts.push("DINO-img");
        }
        if parts.is_empty() {
            "baseline".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PipelineConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    /// Synthetic features per category and branch (`K`).
    pub synthesis_count: usize,
    /// Bank rows per category (`N_size`).
    pub n_size: usize,
    pub construction: Construction,
    pub weights: ScoringWeights,
    pub head: HeadConfig,
    pub components: Components,
    pub iou_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generator: GeneratorConfig::default(),
            synthesis_count: 100,
            n_size: 2,
            construction: Construction::G,
            weights: ScoringWeights::default(),
            head: HeadConfig::default(),
            components: Components::default(),
            iou_threshold: evalmap::DEFAULT_IOU_THRESHOLD,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.stage1.validate()?;
        self.generator.stage2.validate()?;
        self.head.validate()?;
        self.weights.validate()?;
        if self.synthesis_count == 0 || self.n_size == 0 {
            return Err(Error::Config("synthesis count and bank size must be positive".into()));
        }
        if self.generator.hidden_multiplier == 0 || self.generator.latent_dim == Some(0) {
            return Err(Error::Config("generator widths must be positive".into()));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config("IoU threshold must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Weights with disabled image branches zeroed.
    pub fn effective_weights(&self) -> ScoringWeights {
        let mut w = self.weights.clone();
        if !self.components.clip_image {
            w.clip = 0.0;
        }
        if !self.components.dino_image {
            w.dino = 0.0;
        }
        w
    }

    /// Without generation only realistic rows can fill the banks.
    pub fn effective_construction(&self) -> Construction {
        if self.components.generation {
            self.construction
        } else {
            Construction::R
        }
    }
}

/// Region and global features of one detected (or annotated) human-object pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub image: u64,
    pub human_box: BBox,
    pub object_box: BBox,
    pub human_score: f64,
    pub object_score: f64,
    pub object_class: usize,
    /// Labels of the matched ground-truth pair, empty for background pairs.
    pub labels: Vec<usize>,
    pub union: Vec<f64>,
    pub human: Vec<f64>,
    pub object: Vec<f64>,
    pub clip: Vec<f64>,
    pub dino: Vec<f64>,
}

/// Everything the backend contributes, computed once per dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub num_classes: usize,
    pub dim: usize,
    pub split: ZeroShotSplit,
    pub rare: BTreeSet<usize>,
    /// HOI ids per object class.
    pub hois_by_object: Vec<Vec<usize>>,
    pub prompts: PromptTable,
    /// Unit-norm text embedding of every rendered prompt.
    pub prompt_text: Matrix,
    pub text: TextPrototypes,
    /// Ground-truth box features of training pairs.
    pub realistic: FeaturePool,
    /// Detector-pathway features of training pairs matched to ground truth.
    pub aligned: FeaturePool,
    /// Detector-pathway features of test pairs matched to ground truth.
    pub test_aligned: FeaturePool,
    pub train_pairs: Vec<PairRecord>,
    pub test_pairs: Vec<PairRecord>,
    pub clip_bank: PrototypeBank,
    pub dino_bank: PrototypeBank,
    pub ground_truth: Vec<GroundTruthRecord>,
}

impl Prepared {
    pub fn stage1_samples(&self) -> Result<Vec<GeneratorSample>> {
        pool_samples(&self.realistic, &self.prompts)
    }

    pub fn stage2_samples(&self) -> Result<Vec<GeneratorSample>> {
        pool_samples(&self.aligned, &self.prompts)
    }
}

fn pool_samples(pool: &FeaturePool, prompts: &PromptTable) -> Result<Vec<GeneratorSample>> {
    let mut out = Vec::new();
    for (branch, category, rows) in pool.iter() {
        let prompt = prompts.index_for(category, branch)?;
        out.extend(rows.iter().map(|f| GeneratorSample {
            prompt,
            branch,
            feature: f.clone(),
        }));
    }
    Ok(out)
}

fn gt_index(image_pairs: &[crate::backend::GtPair], human: &BBox, object: &BBox, threshold: f64) -> Option<usize> {
    image_pairs
        .iter()
        .enumerate()
        .map(|(k, g)| (k, iou(human, &g.human).min(iou(object, &g.object))))
        .filter(|(_, o)| *o >= threshold)
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
}

fn pair_records<B: Backend>(
    backend: &B,
    img: &AnnotatedImage<B::Image>,
    threshold: f64,
) -> Result<Vec<PairRecord>> {
    let regions = backend.detect(&img.image)?;
    let feats = backend.encode_regions(&img.image, &regions)?;
    let (clip, dino) = backend.encode_global(&img.image)?;
    Ok(feats
        .into_iter()
        .map(|f: PairFeatures| {
            let hb = regions.human_boxes[f.human];
            let ob = regions.object_boxes[f.object];
            let labels = gt_index(&img.pairs, &hb, &ob, threshold).map_or_else(Vec::new, |k| img.pairs[k].hois.clone());
            PairRecord {
                image: img.id,
                human_box: hb,
                object_box: ob,
                human_score: regions.human_scores[f.human],
                object_score: regions.object_scores[f.object],
                object_class: regions.object_classes[f.object],
                labels,
                union: f.union.values,
                human: f.human_feature.values,
                object: f.object_feature.values,
                clip: clip.values.clone(),
                dino: dino.values.clone(),
            }
        })
        .collect())
}

fn add_to_pool(pool: &mut FeaturePool, rec: &PairRecord) -> Result<()> {
    for &h in &rec.labels {
        pool.push(Branch::Union, h, rec.union.clone())?;
        pool.push(Branch::Human, h, rec.human.clone())?;
        pool.push(Branch::Object, h, rec.object.clone())?;
    }
    Ok(())
}

/// Runs the frozen backend over both image sets.
pub fn prepare<B: Backend>(
    backend: &B,
    tax: &HoiTaxonomy,
    split: &ZeroShotSplit,
    train: &[AnnotatedImage<B::Image>],
    test: &[AnnotatedImage<B::Image>],
    iou_threshold: f64,
) -> Result<Prepared> {
    split.validate(tax)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let c = tax.num_hois();
    let dim = backend.dim();
    for img in train {
        if let Some(&h) = img.labels().iter().find(|&&h| !split.is_seen(h)) {
            return Err(Error::Validation(format!(
                "training image {} carries unseen category {h}",
                img.id
            )));
        }
    }
    let prompts = PromptTable::for_taxonomy(tax);
    let mut text_rows = Vec::with_capacity(prompts.len());
    for t in prompts.texts() {
        let mut v = backend.encode_text(&t)?.values;
        linalg::normalize(&mut v);
        text_rows.push(v);
    }
    let prompt_text = Matrix::from_rows(dim, text_rows)?;
    let text = banks::build_text_prototypes(tax, backend)?;

    let mut realistic = FeaturePool::new(dim);
    for img in train {
        let feats = backend.encode_regions(&img.image, &img.ground_truth_regions())?;
        for f in feats.iter().filter(|f| f.human == f.object) {
            for &h in &img.pairs[f.human].hois {
                realistic.push(Branch::Union, h, f.union.values.clone())?;
                realistic.push(Branch::Human, h, f.human_feature.values.clone())?;
                realistic.push(Branch::Object, h, f.object_feature.values.clone())?;
            }
        }
    }
    let mut aligned = FeaturePool::new(dim);
    let mut train_pairs = Vec::new();
    for img in train {
        for rec in pair_records(backend, img, iou_threshold)? {
            add_to_pool(&mut aligned, &rec)?;
            train_pairs.push(rec);
        }
    }
    let mut test_aligned = FeaturePool::new(dim);
    let mut test_pairs = Vec::new();
    let mut ground_truth = Vec::new();
    for img in test {
        for g in &img.pairs {
            for &h in &g.hois {
                if h >= c {
                    return Err(Error::MissingCategory(h));
                }
                ground_truth.push(GroundTruthRecord {
                    image: img.id,
                    human: g.human,
                    object: g.object,
                    hoi: h,
                });
            }
        }
        for rec in pair_records(backend, img, iou_threshold)? {
            add_to_pool(&mut test_aligned, &rec)?;
            test_pairs.push(rec);
        }
    }
    let (clip_bank, dino_bank) = banks::build_multiknowledge_bank(train, backend, c)?;
    let mut hois_by_object = vec![Vec::new(); tax.num_objects()];
    for (i, h) in tax.hois().iter().enumerate() {
        hois_by_object[h.object].push(i);
    }
    Ok(Prepared {
        num_classes: c,
        dim,
        split: split.clone(),
        rare: tax.rarity_partition().0,
        hois_by_object,
        prompts,
        prompt_text,
        text,
        realistic,
        aligned,
        test_aligned,
        train_pairs,
        test_pairs,
        clip_bank,
        dino_bank,
        ground_truth,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub stage1: Vec<Vec<EpochLog>>,
    pub stage2: Vec<Vec<EpochLog>>,
}

/// Stage I followed by Stage II.
pub fn train_generator(prep: &Prepared, cfg: &GeneratorConfig, seed: u64) -> Result<(FeatureGenerator, TrainingLog)> {
    let (mut gen, stage1) = FeatureGenerator::train_stage1(
        prep.prompts.clone(),
        &prep.prompt_text,
        &prep.stage1_samples()?,
        cfg,
        rng::hash_words(&[seed, 0x67]),
    )?;
    let stage2 = gen.train_stage2(&prep.stage2_samples()?, cfg, rng::hash_words(&[seed, 0x67]))?;
    Ok((gen, TrainingLog { stage1, stage2 }))
}

/// `count` synthetic features for every category on every region branch.
pub fn synthesize_pool(gen: &FeatureGenerator, num_classes: usize, count: usize, seed: u64) -> Result<FeaturePool> {
    let mut pool = FeaturePool::new(gen.dim());
    for c in 0..num_classes {
        for b in Branch::REGION {
            let mut r = rng::stream(seed, &[0x7379, c as u64, b.code()]);
            pool.push_batch(&gen.synthesize(c, b, count, &mut r)?)?;
        }
    }
    Ok(pool)
}

/// Fraction of `pool` rows of `branch` whose nearest category mean (over
/// `means`) is their own category.
pub fn centroid_accuracy(pool: &FeaturePool, means: &BTreeMap<usize, Vec<f64>>, branch: Branch) -> Option<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for c in pool.categories(branch) {
        if !means.contains_key(&c) {
            continue;
        }
        for f in pool.get(branch, c) {
            let nearest = means
                .iter()
                .min_by(|a, b| {
                    linalg::squared_distance(f, a.1)
                        .total_cmp(&linalg::squared_distance(f, b.1))
                        .then(a.0.cmp(b.0))
                })
                .map(|(k, _)| *k);
            hit += usize::from(nearest == Some(c));
            total += 1;
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Per-category means of `branch` over the given pools.
pub fn category_means(pools: &[&FeaturePool], branch: Branch) -> BTreeMap<usize, Vec<f64>> {
    let mut grouped: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for pool in pools {
        for c in pool.categories(branch) {
            grouped.entry(c).or_default().extend(pool.get(branch, c).iter().map(Vec::as_slice));
        }
    }
    grouped
        .into_iter()
        .map(|(c, rows)| {
            let d = rows[0].len();
            (c, linalg::mean_rows(d, rows))
        })
        .collect()
}

/// Fixed score terms of a pair: pairwise from the generative banks plus the
/// image-wise term.
fn offsets(prep: &Prepared, banks: &GenerativeBanks, w: &ScoringWeights, rec: &PairRecord) -> Result<Vec<f64>> {
    let s_p = scoring::pairwise_score(&rec.union, &rec.human, &rec.object, banks, &prep.text, w)?;
    if w.clip == 0.0 && w.dino == 0.0 {
        return Ok(s_p.logits);
    }
    let s_i = scoring::imagewise_score(&rec.clip, &rec.dino, &prep.clip_bank, &prep.dino_bank, w)?;
    Ok(scoring::fuse(&s_p, &s_i)?.logits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub map: MapReport,
    pub detections: Vec<DetectionRecord>,
    pub banks: GenerativeBanks,
    pub head: Option<InteractionHead>,
    pub head_loss: Vec<f64>,
}

/// Banks, head training and evaluation for an already trained generator (or
/// none when generation is disabled).
pub fn run_downstream(prep: &Prepared, cfg: &PipelineConfig, synthetic: Option<&FeaturePool>) -> Result<RunOutcome> {
    cfg.validate()?;
    let c = prep.num_classes;
    let construction = cfg.effective_construction();
    let empty = FeaturePool::new(prep.dim);
    let synthetic = if cfg.components.generation {
        Some(synthetic.ok_or_else(|| Error::Config("generation is enabled but no synthetic features were given".into()))?)
    } else {
        None
    };
    let generated = synthetic.unwrap_or(&empty);
    let banks = banks::build_generative_bank(
        generated,
        &prep.realistic,
        &prep.split,
        cfg.n_size,
        construction,
        rng::hash_words(&[cfg.seed, 0x62]),
    )?;
    let w = cfg.effective_weights();

    let mut head = InteractionHead::zeros(prep.dim, c);
    let mut head_loss = Vec::new();
    if cfg.head.enabled {
        let real: Vec<HeadSample> = prep
            .train_pairs
            .iter()
            .map(|rec| {
                Ok(HeadSample {
                    union: rec.union.clone(),
                    human: rec.human.clone(),
                    object: rec.object.clone(),
                    offset: offsets(prep, &banks, &w, rec)?,
                    target: multi_hot(rec.labels.iter().copied(), c)?,
                })
            })
            .collect::<Result<_>>()?;
        let mut draw = |r: &mut StreamRng| -> Result<HeadSample> {
            let pool = synthetic.expect("synthetic draws only with generation");
            let k = r.random_range(0..c);
            let mut pick = |b: Branch| {
                let rows = pool.get(b, k);
                rows[r.random_range(0..rows.len())].clone()
            };
            let (u, h, o) = (pick(Branch::Union), pick(Branch::Human), pick(Branch::Object));
            let s_p = scoring::pairwise_score(&u, &h, &o, &banks, &prep.text, &w)?;
            Ok(HeadSample {
                union: u,
                human: h,
                object: o,
                offset: s_p.logits,
                target: multi_hot([k], c)?,
            })
        };
        let mixer: Option<&mut dyn FnMut(&mut StreamRng) -> Result<HeadSample>> =
            if synthetic.is_some() && cfg.head.n_bs > 0 { Some(&mut draw) } else { None };
        let (trained, hist) = scoring::train_head(head, &real, mixer, &cfg.head, rng::hash_words(&[cfg.seed, 0x68]))?;
        head = trained;
        head_loss = hist;
    }

    let mut detections = Vec::new();
    for rec in &prep.test_pairs {
        let mut logits = offsets(prep, &banks, &w, rec)?;
        if cfg.head.enabled {
            let y = head.forward(&rec.union, &rec.human, &rec.object)?;
            logits.iter_mut().zip(&y).for_each(|(a, b)| *a += b);
        }
        let candidates = prep.hois_by_object.get(rec.object_class).map_or(&[][..], |v| v.as_slice());
        for &k in candidates {
            let score = scoring::detection_score(rec.human_score, rec.object_score, &logits[k..=k])[0];
            detections.push(DetectionRecord {
                image: rec.image,
                human: rec.human_box,
                object: rec.object_box,
                hoi: k,
                score,
            });
        }
    }
    let map = evalmap::map_report(&detections, &prep.ground_truth, &prep.split, &prep.rare, cfg.iou_threshold)?;
    Ok(RunOutcome {
        map,
        detections,
        banks,
        head: cfg.head.enabled.then_some(head),
        head_loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub generator: Option<FeatureGenerator>,
    pub training: TrainingLog,
    /// Nearest-centroid accuracy of synthesized union features against
    /// detector-pathway category means, over all categories.
    pub generation_accuracy: Option<f64>,
}

/// The full pipeline for one configuration.
pub fn run(prep: &Prepared, cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    if !cfg.components.generation {
        return Ok(RunReport {
            outcome: run_downstream(prep, cfg, None)?,
            generator: None,
            training: TrainingLog::default(),
            generation_accuracy: None,
        });
    }
    let (gen, training) = train_generator(prep, &cfg.generator, cfg.seed)?;
    let pool = synthesize_pool(&gen, prep.num_classes, cfg.synthesis_count, rng::hash_words(&[cfg.seed, 0x73]))?;
    let means = category_means(&[&prep.aligned, &prep.test_aligned], Branch::Union);
    Ok(RunReport {
        outcome: run_downstream(prep, cfg, Some(&pool))?,
        generator: Some(gen),
        training,
        generation_accuracy: centroid_accuracy(&pool, &means, Branch::Union),
    })
}

/// Ablation axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AblationAxis {
    NBs,
    Construction,
    NSize,
    Components,
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::NBs => "n_bs",
            AblationAxis::Construction => "construction",
            AblationAxis::NSize => "n_size",
            AblationAxis::Components => "components",
        }
    }

    /// Labelled configurations of this axis derived from `base`.
    pub fn variants(self, base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
        match self {
            AblationAxis::NBs => (1..=4)
                .map(|n| {
                    let mut c = base.clone();
                    c.head.n_bs = n;
                    (format!("{n}"), c)
                })
                .collect(),
            AblationAxis::NSize => (1..=4)
                .map(|n| {
                    let mut c = base.clone();
                    c.n_size = n;
                    (format!("{n}"), c)
                })
                .collect(),
            AblationAxis::Construction => Construction::ALL
                .iter()
                .map(|&k| {
                    let mut c = base.clone();
                    c.construction = k;
                    (k.to_string(), c)
                })
                .collect(),
            AblationAxis::Components => Components::grid()
                .iter()
                .map(|&k| {
                    let mut c = base.clone();
                    c.components = k;
                    (k.label(), c)
                })
                .collect(),
        }
    }
}

impl core::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "n_bs" | "nbs" => Ok(AblationAxis::NBs),
            "construction" => Ok(AblationAxis::Construction),
            "n_size" | "nsize" => Ok(AblationAxis::NSize),
            "components" => Ok(AblationAxis::Components),
            other => Err(Error::Config(format!("unknown ablation axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    /// `(seed, report)` per seed.
    pub runs: Vec<(u64, MapReport)>,
}

impl AblationRow {
    fn mean(&self, f: impl Fn(&MapReport) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = self.runs.iter().filter_map(|(_, r)| f(r)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn full(&self) -> Option<f64> {
        self.mean(|r| r.full)
    }

    pub fn seen(&self) -> Option<f64> {
        self.mean(|r| r.seen)
    }

    pub fn unseen(&self) -> Option<f64> {
        self.mean(|r| r.unseen)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

/// Sweeps `axis` over `seeds`. The generator is trained once per seed and shared
/// by every variant of that seed.
pub fn ablate(prep: &Prepared, base: &PipelineConfig, axis: AblationAxis, seeds: &[u64]) -> Result<AblationTable> {
    base.validate()?;
    let variants = axis.variants(base);
    let mut rows: Vec<AblationRow> = variants
        .iter()
        .map(|(label, _)| AblationRow {
            label: label.clone(),
            runs: Vec::new(),
        })
        .collect();
    for &seed in seeds {
        let needs_generator = variants.iter().any(|(_, c)| c.components.generation);
        let pool = if needs_generator {
            let (gen, _) = train_generator(prep, &base.generator, seed)?;
            Some(synthesize_pool(&gen, prep.num_classes, base.synthesis_count, rng::hash_words(&[seed, 0x73]))?)
        } else {
            None
        };
        for (row, (_, cfg)) in rows.iter_mut().zip(&variants) {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let outcome = run_downstream(prep, &cfg, pool.as_ref())?;
            row.runs.push((seed, outcome.map));
        }
    }
    Ok(AblationTable { axis, rows })
}
