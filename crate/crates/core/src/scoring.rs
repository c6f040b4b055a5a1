//! Pairwise and image-wise HOI scores, their fusion, the training objective and
//! the optional trainable interaction head.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::banks::{GenerativeBanks, PrototypeBank, TextPrototypes};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{AdamW, Linear, LrSchedule, Parameters};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Provenance {
    Pairwise,
    Imagewise,
    Fused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub logits: Vec<f64>,
    pub provenance: Provenance,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn argmax(&self) -> Option<usize> {
        self.logits
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
    }
}

/// Branch weights of the score terms.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScoringWeights {
    pub union: f64,
    pub human: f64,
    pub object: f64,
    pub text: f64,
    pub clip: f64,
    pub dino: f64,
}

/// The loss and score weights share one configuration.
pub type LossConfig = ScoringWeights;

impl Default for ScoringWeights {
    fn default() -> Self {
        Self {
            union: 0.5,
            human: 0.5,
            object: 0.5,
            text: 1.0,
            clip: 0.5,
            dino: 0.5,
        }
    }
}

impl ScoringWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.union, self.human, self.object, self.text, self.clip, self.dino];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("score weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            union: self.union * k,
            human: self.human * k,
            object: self.object * k,
            text: self.text * k,
            clip: self.clip * k,
            dino: self.dino * k,
        }
    }
}

fn add_scaled(acc: &mut [f64], w: f64, v: &[f64]) {
    if w != 0.0 {
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += w * b);
    }
}

fn check_classes(expected: usize, bank: &PrototypeBank) -> Result<()> {
    if bank.num_classes() != expected {
        return Err(shape_err("bank classes", expected, bank.num_classes()));
    }
    Ok(())
}

/// `s_P = sum_i w_i (v_i P_i^T) L_i + w_t (v_u P_text^T)` over the union, human
/// and object branches.
pub fn pairwise_score(
    v_u: &[f64],
    v_h: &[f64],
    v_o: &[f64],
    banks: &GenerativeBanks,
    text: &TextPrototypes,
    w: &ScoringWeights,
) -> Result<ScoreVector> {
    let c = text.matrix.rows();
    for bank in [&banks.union, &banks.human, &banks.object] {
        check_classes(c, bank)?;
    }
    let mut s = vec![0.0; c];
    add_scaled(&mut s, w.union, &banks.union.response(v_u)?);
    add_scaled(&mut s, w.human, &banks.human.response(v_h)?);
    add_scaled(&mut s, w.object, &banks.object.response(v_o)?);
    add_scaled(&mut s, w.text, &text.response(v_u)?);
    Ok(ScoreVector {
        logits: s,
        provenance: Provenance::Pairwise,
    })
}

/// `s_I = w_clip (v_clip P_clip^T) L + w_dino (v_dino P_dino^T) L`, with each
/// class column averaged over the images carrying that class. The banks hold
/// one row per training image, so the plain sum would grow with the dataset.
pub fn imagewise_score(
    v_clip: &[f64],
    v_dino: &[f64],
    clip: &PrototypeBank,
    dino: &PrototypeBank,
    w: &ScoringWeights,
) -> Result<ScoreVector> {
    let c = clip.num_classes();
    check_classes(c, dino)?;
    let mut s = vec![0.0; c];
    add_scaled(&mut s, w.clip, &clip.mean_response(v_clip)?);
    add_scaled(&mut s, w.dino, &dino.mean_response(v_dino)?);
    Ok(ScoreVector {
        logits: s,
        provenance: Provenance::Imagewise,
    })
}

pub fn fuse(s_p: &ScoreVector, s_i: &ScoreVector) -> Result<ScoreVector> {
    if s_p.len() != s_i.len() {
        return Err(shape_err("score length", s_p.len(), s_i.len()));
    }
    Ok(ScoreVector {
        logits: s_p.logits.iter().zip(&s_i.logits).map(|(a, b)| a + b).collect(),
        provenance: Provenance::Fused,
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn check_target(logits: &[f64], target: &[f64]) -> Result<()> {
    if logits.len() != target.len() {
        return Err(shape_err("target length", logits.len(), target.len()));
    }
    if logits.is_empty() {
        return Err(Error::Shape("empty logits".into()));
    }
    if target.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Validation("targets must be binary".into()));
    }
    Ok(())
}

/// Mean per-class binary cross-entropy of `sigmoid(logits)` against a multi-hot
/// target, in the overflow-free form `max(x, 0) - x y + ln(1 + e^-|x|)`.
pub fn total_loss(logits: &[f64], target: &[f64]) -> Result<f64> {
    check_target(logits, target)?;
    let sum: f64 = logits
        .iter()
        .zip(target)
        .map(|(&x, &y)| x.max(0.0) - x * y + libm::log1p(libm::exp(-x.abs())))
        .sum();
    Ok(sum / logits.len() as f64)
}

/// `total_loss` and its gradient with respect to the logits.
pub fn total_loss_grad(logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    let loss = total_loss(logits, target)?;
    let n = logits.len() as f64;
    Ok((loss, logits.iter().zip(target).map(|(&x, &y)| (sigmoid(x) - y) / n).collect()))
}

/// `s_h * s_o * sigmoid(logit_c)` for every class.
pub fn detection_score(s_h: f64, s_o: f64, logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&x| s_h * s_o * sigmoid(x)).collect()
}

/// Linear layer over `[v_u, v_h, v_o]` whose output is added to the fused
/// logits. Starts at zero, so an untrained head leaves scores unchanged.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InteractionHead {
    pub layer: Linear,
}

impl Parameters for InteractionHead {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layer.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layer.tensors_mut()
    }
}

/// One detector-phase training example. `offset` holds the frozen
/// bank scores the head output is added to.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSample {
    pub union: Vec<f64>,
    pub human: Vec<f64>,
    pub object: Vec<f64>,
    pub offset: Vec<f64>,
    pub target: Vec<f64>,
}

impl HeadSample {
    fn input(&self) -> Vec<f64> {
        let mut x = self.union.clone();
        x.extend_from_slice(&self.human);
        x.extend_from_slice(&self.object);
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct HeadConfig {
    pub enabled: bool,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Synthetic samples mixed in per real sample.
    pub n_bs: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epochs: 15,
            batch: 4,
            lr: 1e-3,
            weight_decay: 0.01,
            n_bs: 1,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("head schedule needs positive lr, epochs and batch".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("head weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

impl InteractionHead {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        Self {
            layer: Linear::zeros(3 * dim, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.layer.outputs()
    }

    pub fn forward(&self, v_u: &[f64], v_h: &[f64], v_o: &[f64]) -> Result<Vec<f64>> {
        let mut x = v_u.to_vec();
        x.extend_from_slice(v_h);
        x.extend_from_slice(v_o);
        if x.len() != self.layer.inputs() {
            return Err(shape_err("head input", self.layer.inputs(), x.len()));
        }
        let mut y = self.layer.weight.mul_vec(&x)?;
        y.iter_mut().zip(&self.layer.bias).for_each(|(a, b)| *a += b);
        Ok(y)
    }

    /// Batch-mean loss of `offset + head(x)` and the head gradient.
    pub fn loss_grad(&self, batch: &[&HeadSample]) -> Result<(f64, InteractionHead)> {
        let rows: Vec<Vec<f64>> = batch.iter().map(|s| s.input()).collect();
        let x = Matrix::from_rows(self.layer.inputs(), &rows)?;
        let y = self.layer.forward(&x)?;
        let c = self.classes();
        let mut dy = Matrix::zeros(batch.len(), c);
        let mut loss = 0.0;
        let b = batch.len() as f64;
        for (i, s) in batch.iter().enumerate() {
            let logits: Vec<f64> = y.row(i).iter().zip(&s.offset).map(|(a, o)| a + o).collect();
            let (l, g) = total_loss_grad(&logits, &s.target)?;
            loss += l / b;
            dy.row_mut(i).iter_mut().zip(&g).for_each(|(d, v)| *d = v / b);
        }
        let (grad, _) = self.layer.backward(&x, &dy)?;
        Ok((loss, InteractionHead { layer: grad }))
    }
}

/// Trains `head` on `real` samples, mixing `cfg.n_bs` draws from `synthetic` per
/// real sample so each batch holds `(n_bs + 1) * batch` examples. Returns the
/// per-epoch mean loss.
pub fn train_head(
    mut head: InteractionHead,
    real: &[HeadSample],
    mut synthetic: Option<&mut dyn FnMut(&mut StreamRng) -> Result<HeadSample>>,
    cfg: &HeadConfig,
    seed: u64,
) -> Result<(InteractionHead, Vec<f64>)> {
    cfg.validate()?;
    if real.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut r = rng::stream(seed, &[0x6864]);
    let mut synth_rng = rng::stream(seed, &[0x6873]);
    let total = cfg.epochs * real.len().div_ceil(cfg.batch);
    let mut step = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = rng::permutation(&mut r, real.len());
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let mut extra = Vec::new();
            if let Some(gen) = synthetic.as_mut() {
                for _ in 0..chunk.len() * cfg.n_bs {
                    extra.push(gen(&mut synth_rng)?);
                }
            }
            let batch: Vec<&HeadSample> = chunk.iter().map(|&i| &real[i]).chain(extra.iter()).collect();
            let (loss, grad) = head.loss_grad(&batch)?;
            sum += loss * batch.len() as f64;
            count += batch.len();
            opt.step(&mut head, &grad, LrSchedule::Constant.rate(cfg.lr, step, total));
            step += 1;
        }
        if !head.all_finite() {
            return Err(Error::Validation(format!("head training diverged at epoch {}", epoch + 1)));
        }
        history.push(sum / count as f64);
    }
    Ok((head, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Branch;

    fn one_row(kind: Branch, key: &[f64], label: &[f64]) -> PrototypeBank {
        PrototypeBank::new(
            kind,
            Matrix::from_vec(1, key.len(), key.to_vec()).unwrap(),
            Matrix::from_vec(1, label.len(), label.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn toy_banks() -> (GenerativeBanks, TextPrototypes) {
        let banks = GenerativeBanks {
            union: one_row(Branch::Union, &[1.0, 0.0], &[1.0, 0.0]),
            human: one_row(Branch::Human, &[0.0, 1.0], &[0.0, 1.0]),
            object: one_row(Branch::Object, &[1.0, 1.0], &[1.0, 1.0]),
        };
        let text = TextPrototypes {
            prompts: vec!["a".into(), "b".into()],
            matrix: Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        };
        (banks, text)
    }

    #[test]
    fn pairwise_hand_product() {
        let (banks, text) = toy_banks();
        let w = ScoringWeights {
            union: 0.5,
            human: 0.0,
            object: 0.0,
            text: 0.0,
            clip: 0.0,
            dino: 0.0,
        };
        let s = pairwise_score(&[2.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], &banks, &text, &w).unwrap();
        assert_eq!(s.logits, vec![1.0, 0.0]);
        let zero = pairwise_score(&[2.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], &banks, &text, &w.scaled(0.0)).unwrap();
        assert_eq!(zero.logits, vec![0.0, 0.0]);
    }

    #[test]
    fn pairwise_is_linear_in_weights() {
        let (banks, text) = toy_banks();
        let w = ScoringWeights::default();
        let v = ([0.3, -1.2], [0.7, 0.1], [-0.4, 2.0]);
        let a = pairwise_score(&v.0, &v.1, &v.2, &banks, &text, &w).unwrap();
        let b = pairwise_score(&v.0, &v.1, &v.2, &banks, &text, &w.scaled(2.0)).unwrap();
        for (x, y) in a.logits.iter().zip(&b.logits) {
            assert_eq!(2.0 * x, *y);
        }
        assert!(matches!(pairwise_score(&[1.0], &v.1, &v.2, &banks, &text, &w), Err(Error::Shape(_))));
    }

    #[test]
    fn imagewise_hand_product() {
        let clip = one_row(Branch::GlobalClip, &[0.6, 0.8], &[0.0, 1.0, 1.0]);
        let dino = one_row(Branch::GlobalDino, &[1.0, 0.0], &[0.0, 1.0, 1.0]);
        let w = ScoringWeights {
            clip: 0.5,
            dino: 0.0,
            ..ScoringWeights::default()
        };
        let s = imagewise_score(&[0.6, 0.8], &[0.3, 0.3], &clip, &dino, &w).unwrap();
        for (x, y) in s.logits.iter().zip([0.0, 0.5, 0.5]) {
            assert!((x - y).abs() < 1e-15);
        }
        let swapped = ScoringWeights {
            clip: w.dino,
            dino: w.clip,
            ..w.clone()
        };
        let t = imagewise_score(&[0.3, 0.3], &[0.6, 0.8], &dino, &clip, &swapped).unwrap();
        assert_eq!(s.logits, t.logits);
    }

    #[test]
    fn fuse_sums() {
        let p = ScoreVector {
            logits: vec![1.0, 2.0],
            provenance: Provenance::Pairwise,
        };
        let i = ScoreVector {
            logits: vec![3.0, 4.0],
            provenance: Provenance::Imagewise,
        };
        let f = fuse(&p, &i).unwrap();
        assert_eq!(f.logits, vec![4.0, 6.0]);
        assert_eq!(f.provenance, Provenance::Fused);
        assert_eq!(fuse(&i, &p).unwrap().logits, f.logits);
        let short = ScoreVector {
            logits: vec![1.0],
            provenance: Provenance::Imagewise,
        };
        assert!(fuse(&p, &short).is_err());
    }

    #[test]
    fn loss_hand_values() {
        assert!(total_loss(&[20.0, -20.0], &[1.0, 0.0]).unwrap() < 1e-6);
        assert!((total_loss(&[0.0, 0.0], &[1.0, 0.0]).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
        assert!(total_loss(&[1e6, -1e6], &[0.0, 1.0]).unwrap().is_finite());
        assert!(matches!(total_loss(&[0.0], &[0.5]), Err(Error::Validation(_))));
    }

    #[test]
    fn detection_hand_values() {
        assert_eq!(detection_score(1.0, 1.0, &[f64::INFINITY]), vec![1.0]);
        assert_eq!(detection_score(0.0, 0.7, &[3.0, -1.0]), vec![0.0, 0.0]);
        assert_eq!(detection_score(0.5, 0.5, &[0.0]), vec![0.125]);
    }

    #[test]
    fn head_learns_a_separable_problem() {
        let mut r = rng::stream(3, &[]);
        let samples: Vec<HeadSample> = (0..40)
            .map(|i| {
                let c = i % 2;
                let sign = if c == 0 { 1.0 } else { -1.0 };
                let mut u = rng::normal_vec(&mut r, 4);
                u[0] = sign * 2.0;
                HeadSample {
                    union: u,
                    human: vec![0.0; 4],
                    object: vec![0.0; 4],
                    offset: vec![0.0; 2],
                    target: if c == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
                }
            })
            .collect();
        let cfg = HeadConfig {
            lr: 1e-2,
            ..HeadConfig::default()
        };
        let (head, hist) = train_head(InteractionHead::zeros(4, 2), &samples, None, &cfg, 1).unwrap();
        assert!(hist.last().unwrap() < &(0.5 * hist[0]));
        let y = head.forward(&[2.0, 0.0, 0.0, 0.0], &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(y[0] > y[1]);
    }
}
