//! Generator, bank and head checkpoints in the dense-array archive format.
//! Weights are stored in float64 so a reload is bit-exact.

use std::path::Path;

use hoigen_core::banks::{Construction, GenerativeBanks, PrototypeBank};
use hoigen_core::generator::{CvaeParams, EpochLog, FeatureGenerator, GeneratorLayout};
use hoigen_core::nn::{Linear, Mlp};
use hoigen_core::pipeline::TrainingLog;
use hoigen_core::prompts::PromptTable;
use hoigen_core::scoring::InteractionHead;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::archive::{Archive, ArchiveWriter, DType};
use crate::error::{Error, Result};

pub const GENERATOR_KIND: &str = "generator";
pub const BANKS_KIND: &str = "banks";
pub const HEAD_KIND: &str = "interaction-head";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub kind: String,
    pub dim: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub layout: GeneratorLayout,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub prompts: PromptTable,
    pub residual_aligner: bool,
    pub history: TrainingHistory,
    /// The run configuration that produced the checkpoint.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub stage1: Vec<Vec<EpochLog>>,
    pub stage2: Vec<Vec<EpochLog>>,
}

impl From<&TrainingLog> for TrainingHistory {
    fn from(l: &TrainingLog) -> Self {
        Self {
            stage1: l.stage1.clone(),
            stage2: l.stage2.clone(),
        }
    }
}

fn put_linear(w: &mut ArchiveWriter, prefix: &str, l: &Linear, branch: Option<&str>) -> Result<()> {
    w.put_matrix(&format!("{prefix}/weight"), &l.weight, DType::F64, branch)?;
    w.put(&format!("{prefix}/bias"), &[l.bias.len()], DType::F64, branch, &l.bias)
}

fn get_linear(a: &Archive, prefix: &str) -> Result<Linear> {
    let weight = a.matrix(&format!("{prefix}/weight"))?;
    let bias = a.vector(&format!("{prefix}/bias"))?;
    if bias.len() != weight.rows() {
        return Err(Error::format(a.dir(), format!("{prefix}: bias does not match weight")));
    }
    Ok(Linear { weight, bias })
}

fn put_mlp(w: &mut ArchiveWriter, prefix: &str, m: &Mlp, branch: Option<&str>) -> Result<()> {
    put_linear(w, &format!("{prefix}/hidden"), &m.hidden, branch)?;
    put_linear(w, &format!("{prefix}/output"), &m.output, branch)
}

fn get_mlp(a: &Archive, prefix: &str, residual: bool) -> Result<Mlp> {
    Ok(Mlp {
        hidden: get_linear(a, &format!("{prefix}/hidden"))?,
        output: get_linear(a, &format!("{prefix}/output"))?,
        residual,
    })
}

fn check_kind(a: &Archive, kind: &str) -> Result<()> {
    match a.metadata().get("kind").and_then(|k| k.as_str()) {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::format(
            a.dir(),
            format!("expected a {kind} archive, found {}", other.unwrap_or("no kind")),
        )),
    }
}

pub fn save_generator(
    dir: &Path,
    gen: &FeatureGenerator,
    seed: u64,
    history: &TrainingHistory,
    config: serde_json::Value,
) -> Result<Archive> {
    let mut w = ArchiveWriter::create(dir)?;
    let tag = |i: usize| {
        let b = gen.layout.branches(i);
        (b.len() == 1).then(|| b[0].as_str())
    };
    for (i, v) in gen.vaes.iter().enumerate() {
        put_mlp(&mut w, &format!("vae{i}/encoder"), &v.encoder, tag(i))?;
        put_mlp(&mut w, &format!("vae{i}/generator"), &v.generator, tag(i))?;
        w.put_matrix(&format!("vae{i}/tokens"), &v.tokens, DType::F64, tag(i))?;
    }
    for (i, m) in gen.aligners.iter().enumerate() {
        put_mlp(&mut w, &format!("aligner{i}"), m, tag(i))?;
    }
    let meta = GeneratorMeta {
        kind: GENERATOR_KIND.to_string(),
        dim: gen.dim(),
        latent_dim: gen.vaes[0].tokens.cols(),
        seed,
        layout: gen.layout,
        stage1_epochs: history.stage1.first().map_or(0, Vec::len),
        stage2_epochs: history.stage2.first().map_or(0, Vec::len),
        prompts: gen.prompts.clone(),
        residual_aligner: gen.aligners.first().is_none_or(|m| m.residual),
        history: history.clone(),
        config,
    };
    w.finish(serde_json::to_value(meta).expect("generator metadata serializes"))
}

pub fn load_generator(dir: &Path) -> Result<(FeatureGenerator, GeneratorMeta)> {
    let a = Archive::open(dir)?;
    check_kind(&a, GENERATOR_KIND)?;
    let meta: GeneratorMeta = serde_json::from_value(a.metadata().clone())
        .map_err(|e| Error::format(a.dir(), format!("generator metadata: {e}")))?;
    let n = meta.layout.num_models();
    let mut vaes = Vec::with_capacity(n);
    for i in 0..n {
        vaes.push(CvaeParams {
            encoder: get_mlp(&a, &format!("vae{i}/encoder"), false)?,
            generator: get_mlp(&a, &format!("vae{i}/generator"), false)?,
            tokens: a.matrix(&format!("vae{i}/tokens"))?,
        });
    }
    let aligners = if a.contains("aligner0/hidden/weight") {
        (0..n)
            .map(|i| get_mlp(&a, &format!("aligner{i}"), meta.residual_aligner))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let gen = FeatureGenerator {
        layout: meta.layout,
        prompts: meta.prompts.clone(),
        vaes,
        aligners,
    };
    if gen.vaes.iter().any(|v| v.tokens.rows() != gen.prompts.len()) {
        return Err(Error::format(a.dir(), "token table does not match the prompt table"));
    }
    Ok((gen, meta))
}

fn put_bank(w: &mut ArchiveWriter, name: &str, b: &PrototypeBank) -> Result<()> {
    w.put_matrix(&format!("{name}/keys"), &b.keys, DType::F64, Some(b.kind.as_str()))?;
    w.put_matrix(&format!("{name}/values"), &b.values, DType::F64, Some(b.kind.as_str()))
}

fn get_bank(a: &Archive, name: &str) -> Result<PrototypeBank> {
    let entry = a.entry(&format!("{name}/keys"))?;
    let kind = entry
        .branch
        .as_deref()
        .ok_or_else(|| Error::format(a.dir(), format!("{name}: missing branch tag")))?
        .parse()?;
    let bank = PrototypeBank {
        kind,
        keys: a.matrix(&format!("{name}/keys"))?,
        values: a.matrix(&format!("{name}/values"))?,
    };
    bank.validate()?;
    Ok(bank)
}

pub fn save_banks(
    dir: &Path,
    banks: &GenerativeBanks,
    n_size: usize,
    construction: Construction,
    seed: u64,
    config: serde_json::Value,
) -> Result<Archive> {
    let mut w = ArchiveWriter::create(dir)?;
    put_bank(&mut w, "union", &banks.union)?;
    put_bank(&mut w, "human", &banks.human)?;
    put_bank(&mut w, "object", &banks.object)?;
    w.finish(json!({
        "kind": BANKS_KIND,
        "C": banks.union.num_classes(),
        "N_size": n_size,
        "construction": construction.as_str(),
        "seed": seed,
        "config": config,
    }))
}

pub fn load_banks(dir: &Path) -> Result<GenerativeBanks> {
    let a = Archive::open(dir)?;
    check_kind(&a, BANKS_KIND)?;
    Ok(GenerativeBanks {
        union: get_bank(&a, "union")?,
        human: get_bank(&a, "human")?,
        object: get_bank(&a, "object")?,
    })
}

pub fn save_head(dir: &Path, head: &InteractionHead, losses: &[f64], config: serde_json::Value) -> Result<Archive> {
    let mut w = ArchiveWriter::create(dir)?;
    put_linear(&mut w, "layer", &head.layer, None)?;
    w.finish(json!({ "kind": HEAD_KIND, "loss": losses, "config": config }))
}

pub fn load_head(dir: &Path) -> Result<InteractionHead> {
    let a = Archive::open(dir)?;
    check_kind(&a, HEAD_KIND)?;
    Ok(InteractionHead {
        layer: get_linear(&a, "layer")?,
    })
}
