//! Key-value prototype banks and text prototypes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::backend::{AnnotatedImage, Backend, Branch, FeatureBatch};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, Matrix};
use crate::prompts;
use crate::rng;
use crate::taxonomy::{multi_hot, HoiTaxonomy, ZeroShotSplit};

/// Keys `P` (`N x D`) with multi-hot values `L` (`N x C`).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrototypeBank {
    pub kind: Branch,
    pub keys: Matrix,
    pub values: Matrix,
}

impl PrototypeBank {
    pub fn new(kind: Branch, keys: Matrix, values: Matrix) -> Result<Self> {
        let bank = Self { kind, keys, values };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        if self.keys.rows() != self.values.rows() {
            return Err(shape_err("bank value rows", self.keys.rows(), self.values.rows()));
        }
        for (i, row) in self.values.iter_rows().enumerate() {
            if row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Validation(format!("bank row {i} has a non-binary value")));
            }
            if !row.contains(&1.0) {
                return Err(Error::Validation(format!("bank row {i} labels no class")));
            }
        }
        if !self.keys.is_finite() {
            return Err(Error::Validation("bank keys must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.keys.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.values.cols()
    }

    /// Classes with at least one prototype.
    pub fn covered_classes(&self) -> Vec<usize> {
        (0..self.num_classes())
            .filter(|&c| self.values.iter_rows().any(|r| r[c] == 1.0))
            .collect()
    }

    /// `(v P^T) L`, a length-`C` vector.
    pub fn response(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(shape_err("query length", self.dim(), v.len()));
        }
        let affinity = self.keys.mul_vec(v)?;
        self.values.vec_mul(&affinity)
    }

    /// `response` divided by the number of rows labelling each class; classes
    /// without rows score 0.
    pub fn mean_response(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.response(v)?;
        let counts = self.values.vec_mul(&alloc::vec![1.0; self.len()])?;
        s.iter_mut().zip(counts).for_each(|(x, n)| {
            if n > 0.0 {
                *x /= n;
            }
        });
        Ok(s)
    }
}

/// How generative bank keys are assembled for each category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Construction {
    /// Realistic seen-category features only.
    #[cfg_attr(feature = "serde", serde(rename = "R"))]
    R,
    /// Element-wise mean of equally many realistic and generated rows.
    #[cfg_attr(feature = "serde", serde(rename = "R+G"))]
    RPlusG,
    /// Realistic rows stacked with generated rows.
    #[cfg_attr(feature = "serde", serde(rename = "R(+)G"))]
    RConcatG,
    /// Generated features only.
    #[default]
    #[cfg_attr(feature = "serde", serde(rename = "G"))]
    G,
}

impl Construction {
    pub const ALL: [Construction; 4] = [Construction::R, Construction::RPlusG, Construction::RConcatG, Construction::G];

    pub fn as_str(self) -> &'static str {
        match self {
            Construction::R => "R",
            Construction::RPlusG => "R+G",
            Construction::RConcatG => "R(+)G",
            Construction::G => "G",
        }
    }
}

impl fmt::Display for Construction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Construction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "r" => Ok(Construction::R),
            "r+g" | "r_plus_g" | "rplusg" => Ok(Construction::RPlusG),
            "r(+)g" | "r⊕g" | "r_concat_g" | "rconcatg" => Ok(Construction::RConcatG),
            "g" => Ok(Construction::G),
            other => Err(Error::Config(format!("unknown bank construction `{other}`"))),
        }
    }
}

/// Features grouped by `(branch, category)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeaturePool {
    dim: usize,
    entries: BTreeMap<(Branch, usize), Vec<Vec<f64>>>,
}

impl FeaturePool {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn push(&mut self, branch: Branch, category: usize, feature: Vec<f64>) -> Result<()> {
        if feature.len() != self.dim {
            return Err(shape_err("pooled feature length", self.dim, feature.len()));
        }
        self.entries.entry((branch, category)).or_default().push(feature);
        Ok(())
    }

    pub fn push_batch(&mut self, batch: &FeatureBatch) -> Result<()> {
        for row in batch.features.iter_rows() {
            self.push(batch.branch, batch.category, row.to_vec())?;
        }
        Ok(())
    }

    pub fn get(&self, branch: Branch, category: usize) -> &[Vec<f64>] {
        self.entries.get(&(branch, category)).map_or(&[], |v| v.as_slice())
    }

    pub fn categories(&self, branch: Branch) -> Vec<usize> {
        self.entries.keys().filter(|(b, _)| *b == branch).map(|(_, c)| *c).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Branch, usize, &[Vec<f64>])> {
        self.entries.iter().map(|((b, c), v)| (*b, *c, v.as_slice()))
    }
}

/// The union, human and object generative banks.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GenerativeBanks {
    pub union: PrototypeBank,
    pub human: PrototypeBank,
    pub object: PrototypeBank,
}

impl GenerativeBanks {
    pub fn get(&self, branch: Branch) -> &PrototypeBank {
        match branch {
            Branch::Human => &self.human,
            Branch::Object => &self.object,
            _ => &self.union,
        }
    }
}

fn pick<'a>(pool: &'a [Vec<f64>], n: usize, category: usize, r: &mut rng::StreamRng) -> Result<Vec<&'a [f64]>> {
    if pool.len() < n {
        return Err(Error::InsufficientFeatures {
            category,
            need: n,
            have: pool.len(),
        });
    }
    Ok(rng::sample_without_replacement(r, pool.len(), n)
        .into_iter()
        .map(|i| pool[i].as_slice())
        .collect())
}

/// Generative bank of one branch. Unseen categories have no realistic features,
/// so every construction other than `R` falls back to generated rows for them
/// and `R` leaves them out.
pub fn build_branch_bank(
    branch: Branch,
    generated: &FeaturePool,
    realistic: &FeaturePool,
    split: &ZeroShotSplit,
    n_size: usize,
    construction: Construction,
    seed: u64,
) -> Result<PrototypeBank> {
    if n_size == 0 {
        return Err(Error::Config("bank size per category must be at least 1".into()));
    }
    let c_total = split.num_hois;
    let dim = if construction == Construction::R {
        realistic.dim()
    } else {
        generated.dim()
    };
    let mut keys: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for c in 0..c_total {
        let mut r = rng::stream(seed, &[0x626b, branch.code(), c as u64]);
        let seen = split.is_seen(c);
        let rows: Vec<Vec<f64>> = match (construction, seen) {
            (Construction::R, false) => Vec::new(),
            (Construction::R, true) => pick(realistic.get(branch, c), n_size, c, &mut r)?
                .into_iter()
                .map(<[f64]>::to_vec)
                .collect(),
            (Construction::G, _) | (_, false) => pick(generated.get(branch, c), n_size, c, &mut r)?
                .into_iter()
                .map(<[f64]>::to_vec)
                .collect(),
            (Construction::RPlusG, true) => {
                let real = pick(realistic.get(branch, c), n_size, c, &mut r)?;
                let gen = pick(generated.get(branch, c), n_size, c, &mut r)?;
                real.iter()
                    .zip(&gen)
                    .map(|(a, b)| a.iter().zip(*b).map(|(x, y)| 0.5 * (x + y)).collect())
                    .collect()
            }
            (Construction::RConcatG, true) => {
                let mut rows: Vec<Vec<f64>> = pick(realistic.get(branch, c), n_size, c, &mut r)?
                    .into_iter()
                    .map(<[f64]>::to_vec)
                    .collect();
                rows.extend(pick(generated.get(branch, c), n_size, c, &mut r)?.into_iter().map(<[f64]>::to_vec));
                rows
            }
        };
        labels.extend(core::iter::repeat_n(c, rows.len()));
        keys.extend(rows);
    }
    let values = Matrix::from_rows(c_total, labels.iter().map(|&c| multi_hot([c], c_total)).collect::<Result<Vec<_>>>()?)?;
    PrototypeBank::new(branch, Matrix::from_rows(dim, keys)?, values)
}

/// Union, human and object banks with `n_size` rows per category.
pub fn build_generative_bank(
    generated: &FeaturePool,
    realistic: &FeaturePool,
    split: &ZeroShotSplit,
    n_size: usize,
    construction: Construction,
    seed: u64,
) -> Result<GenerativeBanks> {
    let build = |b| build_branch_bank(b, generated, realistic, split, n_size, construction, seed);
    Ok(GenerativeBanks {
        union: build(Branch::Union)?,
        human: build(Branch::Human)?,
        object: build(Branch::Object)?,
    })
}

/// CLIP and DINO global-feature banks, one row per training image, sharing the
/// multi-hot label matrix.
pub fn build_multiknowledge_bank<B: Backend>(
    images: &[AnnotatedImage<B::Image>],
    backend: &B,
    num_classes: usize,
) -> Result<(PrototypeBank, PrototypeBank)> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = backend.dim();
    let mut clip = Vec::with_capacity(images.len());
    let mut dino = Vec::with_capacity(images.len());
    let mut values = Vec::with_capacity(images.len());
    for img in images {
        let labels = img.labels();
        if labels.is_empty() {
            return Err(Error::Validation(format!("training image {} has no HOI label", img.id)));
        }
        let (c, dn) = backend.encode_global(&img.image)?;
        clip.push(c.values);
        dino.push(dn.values);
        values.push(multi_hot(labels, num_classes)?);
    }
    let values = Matrix::from_rows(num_classes, values)?;
    Ok((
        PrototypeBank::new(Branch::GlobalClip, Matrix::from_rows(d, clip)?, values.clone())?,
        PrototypeBank::new(Branch::GlobalDino, Matrix::from_rows(d, dino)?, values)?,
    ))
}

/// Unit-norm text features of the per-category prototype prompt, in HOI id order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TextPrototypes {
    pub prompts: Vec<String>,
    pub matrix: Matrix,
}

impl TextPrototypes {
    /// `v P_text^T`.
    pub fn response(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.matrix.mul_vec(v)
    }
}

pub fn build_text_prototypes<B: Backend>(tax: &HoiTaxonomy, backend: &B) -> Result<TextPrototypes> {
    let d = backend.dim();
    let mut texts = Vec::with_capacity(tax.num_hois());
    let mut rows = Vec::with_capacity(tax.num_hois());
    for h in tax.hois() {
        let text = prompts::text_prototype_prompt(&tax.verbs()[h.verb], &tax.objects()[h.object]);
        let mut v = backend.encode_text(&text)?.values;
        if v.len() != d {
            return Err(shape_err("text embedding", d, v.len()));
        }
        if linalg::norm(&v) == 0.0 {
            return Err(Error::Backend(format!("zero text embedding for `{text}`")));
        }
        linalg::normalize(&mut v);
        rows.push(v);
        texts.push(text);
    }
    Ok(TextPrototypes {
        prompts: texts,
        matrix: Matrix::from_rows(d, rows)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use alloc::vec;

    fn split9(unseen: &[usize]) -> ZeroShotSplit {
        let tax = crate::taxonomy::tests::toy();
        let unseen: BTreeSet<usize> = unseen.iter().copied().collect();
        ZeroShotSplit::from_unseen(&tax, crate::taxonomy::Setting::Uc, 0, unseen.len(), unseen).unwrap()
    }

    fn pools(k: usize) -> (FeaturePool, FeaturePool) {
        let mut generated = FeaturePool::new(2);
        let mut realistic = FeaturePool::new(2);
        for b in Branch::REGION {
            for c in 0..9 {
                for i in 0..k {
                    generated.push(b, c, vec![c as f64, i as f64]).unwrap();
                    realistic.push(b, c, vec![-(c as f64), 10.0 + i as f64]).unwrap();
                }
            }
        }
        (generated, realistic)
    }

    #[test]
    fn generated_bank_size() {
        let (g, r) = pools(5);
        let banks = build_generative_bank(&g, &r, &split9(&[0, 4]), 2, Construction::G, 3).unwrap();
        assert_eq!(banks.union.len(), 18);
        assert_eq!(banks.union.covered_classes(), (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn realistic_bank_excludes_unseen() {
        let (g, r) = pools(5);
        let bank = build_branch_bank(Branch::Union, &g, &r, &split9(&[0, 4]), 2, Construction::R, 3).unwrap();
        assert_eq!(bank.len(), 14);
        let covered = bank.covered_classes();
        assert!(!covered.contains(&0) && !covered.contains(&4));
    }

    #[test]
    fn mixed_constructions() {
        let (g, r) = pools(5);
        let split = split9(&[0]);
        let plus = build_branch_bank(Branch::Human, &g, &r, &split, 2, Construction::RPlusG, 3).unwrap();
        assert_eq!(plus.len(), 18);
        // category 1 is seen: average of (-1, 10+i) and (1, j)
        let row = plus.values.iter_rows().position(|l| l[1] == 1.0).unwrap();
        assert_eq!(plus.keys.get(row, 0), 0.0);
        let cat = build_branch_bank(Branch::Human, &g, &r, &split, 2, Construction::RConcatG, 3).unwrap();
        assert_eq!(cat.len(), 2 + 8 * 4);
    }

    #[test]
    fn insufficient_features() {
        let (g, r) = pools(1);
        assert_eq!(
            build_branch_bank(Branch::Union, &g, &r, &split9(&[]), 2, Construction::G, 0),
            Err(Error::InsufficientFeatures {
                category: 0,
                need: 2,
                have: 1
            })
        );
    }

    #[test]
    fn bank_build_is_seeded() {
        let (g, r) = pools(10);
        let a = build_generative_bank(&g, &r, &split9(&[2]), 2, Construction::G, 8).unwrap();
        assert_eq!(a, build_generative_bank(&g, &r, &split9(&[2]), 2, Construction::G, 8).unwrap());
    }

    #[test]
    fn bank_validation() {
        let keys = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(PrototypeBank::new(Branch::Union, keys.clone(), Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap()).is_err());
        assert!(PrototypeBank::new(Branch::Union, keys.clone(), Matrix::from_vec(1, 2, vec![0.5, 0.0]).unwrap()).is_err());
        let bank = PrototypeBank::new(Branch::Union, keys, Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(bank.response(&[2.0, 0.0]).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn construction_names() {
        for c in Construction::ALL {
            assert_eq!(c.as_str().parse::<Construction>().unwrap(), c);
        }
        assert_eq!("R⊕G".parse::<Construction>().unwrap(), Construction::RConcatG);
        assert!("RG".parse::<Construction>().is_err());
    }
}
