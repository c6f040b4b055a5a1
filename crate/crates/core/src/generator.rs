//! Text-conditioned feature generator.
//!
//! Stage I fits a class-conditional VAE on realistic region features: the
//! encoder maps a feature to a diagonal Gaussian posterior, the generator
//! reconstructs the feature from a latent sample concatenated with the learnable
//! token of the category prompt. Stage II freezes both networks and fits a
//! residual MLP that maps generated features onto detector-pathway features.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::backend::{Branch, FeatureBatch};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{AdamW, LrSchedule, Mlp, Parameters};
use crate::prompts::PromptTable;
use crate::rng::{self, StreamRng};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Encoder, generator and per-prompt token embeddings of one VAE.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CvaeParams {
    /// `D -> hidden -> 2 * d_z`, emitting `[mu, logvar]`.
    pub encoder: Mlp,
    /// `2 * d_z -> hidden -> D` on `[z, token]`.
    pub generator: Mlp,
    /// One learnable row of width `d_z` per prompt.
    pub tokens: Matrix,
}

impl Parameters for CvaeParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.generator.tensors());
        t.push(self.tokens.as_slice());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.generator.tensors_mut());
        t.push(self.tokens.as_mut_slice());
        t
    }
}

impl CvaeParams {
    /// Fresh networks with tokens initialized from the text embeddings of the
    /// rendered prompts (`text` is `num_prompts x D`). When `d_z != D` the
    /// embeddings go through a fixed random projection first. Tokens are scaled
    /// by `sqrt(d_z)` so their entries match the scale of standard-normal latents.
    pub fn init(dim: usize, latent: usize, hidden: usize, text: &Matrix, seed: u64) -> Result<Self> {
        if dim == 0 || latent == 0 || hidden == 0 {
            return Err(Error::Config("generator widths must be positive".into()));
        }
        if text.cols() != dim {
            return Err(shape_err("prompt embedding width", dim, text.cols()));
        }
        let mut r = rng::stream(seed, &[0x6376, 1]);
        let encoder = Mlp::init(dim, hidden, 2 * latent, &mut r);
        let generator = Mlp::init(2 * latent, hidden, dim, &mut r);
        let scale = libm::sqrt(latent as f64);
        let tokens = if latent == dim {
            let mut t = text.clone();
            t.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
            t
        } else {
            let s = 1.0 / libm::sqrt(latent as f64);
            let proj: Vec<f64> = rng::normal_vec(&mut rng::stream(seed, &[0x6376, 2]), dim * latent)
                .into_iter()
                .map(|x| x * s)
                .collect();
            let proj = Matrix::from_vec(dim, latent, proj)?;
            let mut t = text.matmul(&proj)?;
            t.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
            t
        };
        Ok(Self {
            encoder,
            generator,
            tokens,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder.inputs()
    }

    pub fn latent_dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn num_prompts(&self) -> usize {
        self.tokens.rows()
    }

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|v| *v = 0.0));
        g
    }

    fn check_prompt(&self, prompt: usize) -> Result<()> {
        if prompt >= self.num_prompts() {
            return Err(Error::UnknownCategory(prompt));
        }
        Ok(())
    }
}

/// Posterior `(mu, logvar)` of `x`; logvar is clamped to `[-10, 10]`.
pub fn encode(x: &[f64], params: &CvaeParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != params.dim() {
        return Err(shape_err("feature length", params.dim(), x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite feature".into()));
    }
    let out = params.encoder.forward_vec(x)?;
    let dz = params.latent_dim();
    let mu = out[..dz].to_vec();
    let logvar = out[dz..].iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
    Ok((mu, logvar))
}

/// `z = mu + exp(logvar / 2) * eps` with `eps ~ N(0, I)` drawn from `r`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], r: &mut StreamRng) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| m + libm::exp(0.5 * lv) * rng::normal(r))
        .collect()
}

/// Closed-form `KL(N(mu, diag(exp(logvar))) || N(0, I))`.
pub fn kl_to_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + libm::exp(*lv) - 1.0 - lv)
        .sum::<f64>()
}

/// Generated feature for latent `z` under prompt `prompt`.
pub fn decode(z: &[f64], prompt: usize, params: &CvaeParams) -> Result<Vec<f64>> {
    let dz = params.latent_dim();
    if z.len() != dz {
        return Err(shape_err("latent length", dz, z.len()));
    }
    params.check_prompt(prompt)?;
    let mut input = z.to_vec();
    input.extend_from_slice(params.tokens.row(prompt));
    params.generator.forward_vec(&input)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossParts {
    pub kl: f64,
    pub recon: f64,
}

/// Mean squared error over the feature dimensions.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// Single-sample Stage I objective `KL + MSE(x', x)` with fresh noise from `r`.
pub fn stage1_loss(x: &[f64], prompt: usize, params: &CvaeParams, r: &mut StreamRng) -> Result<(f64, LossParts)> {
    let eps = rng::normal_vec(r, params.latent_dim());
    stage1_loss_with_noise(x, prompt, params, &eps)
}

/// Stage I objective with the reparameterization noise supplied explicitly.
pub fn stage1_loss_with_noise(x: &[f64], prompt: usize, params: &CvaeParams, eps: &[f64]) -> Result<(f64, LossParts)> {
    let (mu, logvar) = encode(x, params)?;
    if eps.len() != mu.len() {
        return Err(shape_err("noise length", mu.len(), eps.len()));
    }
    let z: Vec<f64> = mu
        .iter()
        .zip(&logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + libm::exp(0.5 * lv) * e)
        .collect();
    let x_rec = decode(&z, prompt, params)?;
    let parts = LossParts {
        kl: kl_to_standard_normal(&mu, &logvar),
        recon: mse(&x_rec, x),
    };
    Ok((parts.kl + parts.recon, parts))
}

/// Batch-mean Stage I loss and its gradient. `xs` is `B x D`, `eps` is `B x d_z`.
pub fn stage1_gradients(
    xs: &Matrix,
    prompts: &[usize],
    eps: &Matrix,
    params: &CvaeParams,
) -> Result<(f64, LossParts, CvaeParams)> {
    let b = xs.rows();
    let d = params.dim();
    let dz = params.latent_dim();
    if xs.cols() != d {
        return Err(shape_err("feature length", d, xs.cols()));
    }
    if prompts.len() != b || eps.rows() != b || eps.cols() != dz {
        return Err(Error::Shape(format!(
            "batch of {b} needs {b} prompts and {b}x{dz} noise, got {} and {}x{}",
            prompts.len(),
            eps.rows(),
            eps.cols()
        )));
    }
    for &p in prompts {
        params.check_prompt(p)?;
    }
    let bf = b as f64;
    let (enc_out, enc_cache) = params.encoder.forward_cached(xs)?;
    let mut mu = Matrix::zeros(b, dz);
    let mut lv = Matrix::zeros(b, dz);
    let mut clamped = vec![false; b * dz];
    let mut gen_in = Matrix::zeros(b, 2 * dz);
    for i in 0..b {
        let row = enc_out.row(i);
        for j in 0..dz {
            let raw = row[dz + j];
            let l = raw.clamp(LOGVAR_MIN, LOGVAR_MAX);
            clamped[i * dz + j] = l != raw;
            mu.set(i, j, row[j]);
            lv.set(i, j, l);
            gen_in.set(i, j, row[j] + libm::exp(0.5 * l) * eps.get(i, j));
        }
        gen_in.row_mut(i)[dz..].copy_from_slice(params.tokens.row(prompts[i]));
    }
    let (x_rec, gen_cache) = params.generator.forward_cached(&gen_in)?;

    let mut parts = LossParts::default();
    let mut d_rec = Matrix::zeros(b, d);
    for i in 0..b {
        parts.kl += kl_to_standard_normal(mu.row(i), lv.row(i));
        parts.recon += mse(x_rec.row(i), xs.row(i));
        for (g, (r, x)) in d_rec.row_mut(i).iter_mut().zip(x_rec.row(i).iter().zip(xs.row(i))) {
            *g = 2.0 * (r - x) / (d as f64 * bf);
        }
    }
    parts.kl /= bf;
    parts.recon /= bf;

    let mut grads = params.zeros_like();
    let (g_gen, d_in) = params.generator.backward(&gen_cache, &d_rec)?;
    grads.generator = g_gen;
    let mut d_enc = Matrix::zeros(b, 2 * dz);
    for i in 0..b {
        let din = d_in.row(i);
        for (t, g) in grads.tokens.row_mut(prompts[i]).iter_mut().zip(&din[dz..]) {
            *t += g;
        }
        for j in 0..dz {
            let dzij = din[j];
            let (m, l) = (mu.get(i, j), lv.get(i, j));
            let sd = libm::exp(0.5 * l);
            d_enc.set(i, j, dzij + m / bf);
            let dl = if clamped[i * dz + j] {
                0.0
            } else {
                dzij * eps.get(i, j) * 0.5 * sd + 0.5 * (libm::exp(l) - 1.0) / bf
            };
            d_enc.set(i, dz + j, dl);
        }
    }
    let (g_enc, _) = params.encoder.backward(&enc_cache, &d_enc)?;
    grads.encoder = g_enc;
    Ok((parts.kl + parts.recon, parts, grads))
}

/// Stage II objective: mean squared error between the aligned generated feature
/// and the realistic detector-pathway feature.
pub fn stage2_loss(x_prime: &[f64], x_bar: &[f64], aligner: &Mlp) -> Result<f64> {
    if x_prime.len() != aligner.inputs() {
        return Err(shape_err("generated feature length", aligner.inputs(), x_prime.len()));
    }
    if x_bar.len() != aligner.outputs() {
        return Err(shape_err("target feature length", aligner.outputs(), x_bar.len()));
    }
    Ok(mse(&aligner.forward_vec(x_prime)?, x_bar))
}

/// One training feature with the prompt it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSample {
    pub prompt: usize,
    pub branch: Branch,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 256,
            lr: 1e-3,
            weight_decay: 0.01,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        Ok(())
    }

    fn steps(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub kl: f64,
    pub recon: f64,
}

fn require_branches(data: &[GeneratorSample], branches: &[Branch]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("generator training set is empty".into()));
    }
    for b in branches {
        if !data.iter().any(|s| s.branch == *b) {
            return Err(Error::Config(format!("generator training set has no {b} samples")));
        }
    }
    Ok(())
}

/// Stage I: fits encoder, generator and tokens with AdamW. Reproducible for a
/// fixed `seed`.
pub fn train_stage1(
    mut params: CvaeParams,
    data: &[GeneratorSample],
    branches: &[Branch],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(CvaeParams, Vec<EpochLog>)> {
    schedule.validate()?;
    require_branches(data, branches)?;
    let d = params.dim();
    let dz = params.latent_dim();
    for s in data {
        if s.feature.len() != d {
            return Err(shape_err("training feature length", d, s.feature.len()));
        }
        params.check_prompt(s.prompt)?;
    }
    let mut opt = AdamW::new(schedule.weight_decay);
    let mut r = rng::stream(seed, &[0x7331]);
    let total = schedule.steps(data.len());
    let mut step = 0;
    let mut history = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let order = rng::permutation(&mut r, data.len());
        let mut acc = EpochLog {
            epoch: epoch + 1,
            loss: 0.0,
            kl: 0.0,
            recon: 0.0,
        };
        for chunk in order.chunks(schedule.batch) {
            let xs = Matrix::from_rows(d, chunk.iter().map(|&i| &data[i].feature))?;
            let prompts: Vec<usize> = chunk.iter().map(|&i| data[i].prompt).collect();
            let eps = Matrix::from_vec(chunk.len(), dz, rng::normal_vec(&mut r, chunk.len() * dz))?;
            let (loss, parts, grads) = stage1_gradients(&xs, &prompts, &eps, &params)?;
            let w = chunk.len() as f64;
            acc.loss += loss * w;
            acc.kl += parts.kl * w;
            acc.recon += parts.recon * w;
            opt.step(&mut params, &grads, schedule.schedule.rate(schedule.lr, step, total));
            step += 1;
        }
        let n = data.len() as f64;
        acc.loss /= n;
        acc.kl /= n;
        acc.recon /= n;
        if !params.all_finite() {
            return Err(Error::Validation(format!("stage I diverged at epoch {}", epoch + 1)));
        }
        history.push(acc);
    }
    Ok((params, history))
}

/// `[z, c_k]` rows for the given targets with fresh standard-normal `z`.
fn generator_inputs(
    frozen: &CvaeParams,
    targets: &[GeneratorSample],
    which: impl Iterator<Item = usize>,
    r: &mut StreamRng,
) -> Result<Matrix> {
    let dz = frozen.latent_dim();
    let which: Vec<usize> = which.collect();
    let mut m = Matrix::zeros(which.len(), 2 * dz);
    for (i, &k) in which.iter().enumerate() {
        let row = m.row_mut(i);
        for v in row[..dz].iter_mut() {
            *v = rng::normal(r);
        }
        row[dz..].copy_from_slice(frozen.tokens.row(targets[k].prompt));
    }
    Ok(m)
}

/// Hidden width of the aligner relative to `D`.
pub const ALIGNER_HIDDEN_MULTIPLIER: usize = 4;

/// Stage II: with `frozen` untouched, fits a residual MLP so that
/// `MLP(G(z, c_k))` matches detector-pathway features of category prompt `k`.
/// The returned history holds the full-set MSE after each epoch.
pub fn train_stage2(
    frozen: &CvaeParams,
    targets: &[GeneratorSample],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(Mlp, Vec<EpochLog>)> {
    schedule.validate()?;
    if targets.is_empty() {
        return Err(Error::Config("stage II target set is empty".into()));
    }
    let d = frozen.dim();
    for s in targets {
        if s.feature.len() != d {
            return Err(shape_err("target feature length", d, s.feature.len()));
        }
        frozen.check_prompt(s.prompt)?;
    }
    let mut aligner = Mlp::residual_identity(d, ALIGNER_HIDDEN_MULTIPLIER * d, &mut rng::stream(seed, &[0x616c]));
    let mut opt = AdamW::new(schedule.weight_decay);
    let mut r = rng::stream(seed, &[0x7332]);
    // Progress is measured on one fixed latent draw per target so epoch-to-epoch
    // changes reflect the aligner, not resampling.
    let mut probe_rng = rng::stream(seed, &[0x7072]);
    let probe_in = generator_inputs(frozen, targets, 0..targets.len(), &mut probe_rng)?;
    let probe = frozen.generator.forward(&probe_in)?;
    let total = schedule.steps(targets.len());
    let mut step = 0;
    let mut history = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let order = rng::permutation(&mut r, targets.len());
        for chunk in order.chunks(schedule.batch) {
            let b = chunk.len();
            let generated = frozen.generator.forward(&generator_inputs(frozen, targets, chunk.iter().copied(), &mut r)?)?;
            let (aligned, cache) = aligner.forward_cached(&generated)?;
            let mut dy = Matrix::zeros(b, d);
            for (i, &k) in chunk.iter().enumerate() {
                for (g, (a, y)) in dy.row_mut(i).iter_mut().zip(aligned.row(i).iter().zip(&targets[k].feature)) {
                    *g = 2.0 * (a - y) / (d * b) as f64;
                }
            }
            let (grads, _) = aligner.backward(&cache, &dy)?;
            opt.step(&mut aligner, &grads, schedule.schedule.rate(schedule.lr, step, total));
            step += 1;
        }
        if !aligner.all_finite() {
            return Err(Error::Validation(format!("stage II diverged at epoch {}", epoch + 1)));
        }
        let aligned = aligner.forward(&probe)?;
        let mean = targets
            .iter()
            .enumerate()
            .map(|(i, t)| mse(aligned.row(i), &t.feature))
            .sum::<f64>()
            / targets.len() as f64;
        history.push(EpochLog {
            epoch: epoch + 1,
            loss: mean,
            kl: 0.0,
            recon: mean,
        });
    }
    Ok((aligner, history))
}

/// Whether one VAE serves all three branches or each branch gets its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GeneratorLayout {
    #[default]
    Shared,
    PerBranch,
}

impl GeneratorLayout {
    pub fn model_index(self, branch: Branch) -> Result<usize> {
        match (self, branch) {
            (GeneratorLayout::Shared, Branch::Union | Branch::Human | Branch::Object) => Ok(0),
            (GeneratorLayout::PerBranch, Branch::Union) => Ok(0),
            (GeneratorLayout::PerBranch, Branch::Human) => Ok(1),
            (GeneratorLayout::PerBranch, Branch::Object) => Ok(2),
            (_, b) => Err(Error::Config(format!("the generator has no {b} branch"))),
        }
    }

    pub fn num_models(self) -> usize {
        match self {
            GeneratorLayout::Shared => 1,
            GeneratorLayout::PerBranch => 3,
        }
    }

    /// Branches model `index` is trained on.
    pub fn branches(self, index: usize) -> Vec<Branch> {
        match self {
            GeneratorLayout::Shared => Branch::REGION.to_vec(),
            GeneratorLayout::PerBranch => vec![Branch::REGION[index]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GeneratorConfig {
    /// Latent (= token) width; `None` uses the feature width.
    pub latent_dim: Option<usize>,
    pub hidden_multiplier: usize,
    pub layout: GeneratorLayout,
    pub stage1: TrainSchedule,
    pub stage2: TrainSchedule,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: None,
            hidden_multiplier: 4,
            layout: GeneratorLayout::Shared,
            stage1: TrainSchedule::default(),
            stage2: TrainSchedule {
                schedule: LrSchedule::Cosine { floor: 0.05 },
                ..TrainSchedule::default()
            },
        }
    }
}

/// Trained generator(s) plus optional aligners and the prompt table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGenerator {
    pub layout: GeneratorLayout,
    pub prompts: PromptTable,
    pub vaes: Vec<CvaeParams>,
    /// Empty until Stage II has run; synthesis then skips alignment.
    pub aligners: Vec<Mlp>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeneratorLog {
    pub stage1: Vec<Vec<EpochLog>>,
    pub stage2: Vec<Vec<EpochLog>>,
}

impl FeatureGenerator {
    pub fn dim(&self) -> usize {
        self.vaes[0].dim()
    }

    /// Stage I for every model of the layout.
    pub fn train_stage1(
        prompts: PromptTable,
        prompt_text: &Matrix,
        data: &[GeneratorSample],
        cfg: &GeneratorConfig,
        seed: u64,
    ) -> Result<(Self, Vec<Vec<EpochLog>>)> {
        if prompt_text.rows() != prompts.len() {
            return Err(shape_err("prompt embeddings", prompts.len(), prompt_text.rows()));
        }
        let dim = prompt_text.cols();
        let latent = cfg.latent_dim.unwrap_or(dim);
        let mut vaes = Vec::new();
        let mut logs = Vec::new();
        for m in 0..cfg.layout.num_models() {
            let branches = cfg.layout.branches(m);
            let subset: Vec<GeneratorSample> = data.iter().filter(|s| branches.contains(&s.branch)).cloned().collect();
            let init = CvaeParams::init(dim, latent, cfg.hidden_multiplier * dim, prompt_text, rng::hash_words(&[seed, m as u64]))?;
            let (params, log) = train_stage1(init, &subset, &branches, &cfg.stage1, rng::hash_words(&[seed, 0x31, m as u64]))?;
            vaes.push(params);
            logs.push(log);
        }
        Ok((
            Self {
                layout: cfg.layout,
                prompts,
                vaes,
                aligners: Vec::new(),
            },
            logs,
        ))
    }

    /// Stage II for every model; the VAEs are only read.
    pub fn train_stage2(&mut self, targets: &[GeneratorSample], cfg: &GeneratorConfig, seed: u64) -> Result<Vec<Vec<EpochLog>>> {
        let mut aligners = Vec::new();
        let mut logs = Vec::new();
        for (m, vae) in self.vaes.iter().enumerate() {
            let branches = self.layout.branches(m);
            let subset: Vec<GeneratorSample> = targets.iter().filter(|s| branches.contains(&s.branch)).cloned().collect();
            let (aligner, log) = train_stage2(vae, &subset, &cfg.stage2, rng::hash_words(&[seed, 0x32, m as u64]))?;
            aligners.push(aligner);
            logs.push(log);
        }
        self.aligners = aligners;
        Ok(logs)
    }

    /// `count` synthetic features `MLP(G(z, c_k))`, `z ~ N(0, I)`, for the prompt
    /// of `(category, branch)`.
    pub fn synthesize(&self, category: usize, branch: Branch, count: usize, r: &mut StreamRng) -> Result<FeatureBatch> {
        if count == 0 {
            return Err(Error::Config("synthesis count must be at least 1".into()));
        }
        let prompt = self.prompts.index_for(category, branch)?;
        let m = self.layout.model_index(branch)?;
        let vae = &self.vaes[m];
        let dz = vae.latent_dim();
        let mut gen_in = Matrix::zeros(count, 2 * dz);
        for i in 0..count {
            let row = gen_in.row_mut(i);
            for v in row[..dz].iter_mut() {
                *v = rng::normal(r);
            }
            row[dz..].copy_from_slice(vae.tokens.row(prompt));
        }
        let mut features = vae.generator.forward(&gen_in)?;
        if let Some(aligner) = self.aligners.get(m) {
            features = aligner.forward(&features)?;
        }
        Ok(FeatureBatch {
            branch,
            category,
            features,
        })
    }
}
