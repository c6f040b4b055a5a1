//! The `hoigen` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hoigen_core::backend::Branch;
use hoigen_core::banks::Construction;
use hoigen_core::generator::FeatureGenerator;
use hoigen_core::pipeline::{self, AblationAxis, AblationTable, Prepared, RunReport, TrainingLog};
use hoigen_core::prompts::text_prototype_prompt;
use hoigen_core::rng;
use hoigen_core::synthetic::category_label;
use hoigen_core::taxonomy::{build_split, Setting, ZeroShotSplit};

use crate::cache;
use crate::checkpoint::{self, TrainingHistory};
use crate::config::{load_taxonomy, BackendChoice, RunConfig};
use crate::dataset::{prepare_data, resolve_split, synthetic_world};
use crate::error::{Error, Result, StageContext};
use crate::plot::{self, ScatterGroup};
use crate::records;
use crate::report::{self, Format};

#[derive(Debug, Parser)]
#[command(name = "hoigen", version, about = "Generative zero-shot human-object interaction detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration layered over the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// synthetic or pretrained.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write zero-shot split files.
    BuildSplits(BuildSplitsArgs),
    /// Train one generator stage and write a checkpoint.
    TrainGenerator(TrainGeneratorArgs),
    /// Full pipeline: generator, banks, head training and evaluation.
    TrainEval(TrainEvalArgs),
    /// Sweep one ablation axis over several seeds.
    Ablate(AblateArgs),
    /// Feature projection scatter plots and loss curves of a trained run.
    Diagnose(DiagnoseArgs),
    /// mAP of detection records against ground-truth records.
    Evaluate(EvaluateArgs),
    /// Record the synthetic backend into a feature cache.
    CacheSynthetic(CacheSyntheticArgs),
}

#[derive(Debug, Args)]
pub struct BuildSplitsArgs {
    /// Built-in taxonomy name or taxonomy file.
    #[arg(long)]
    pub taxonomy: Option<String>,
    /// UC, RF_UC, NF_UC, UV, UO or all.
    #[arg(long, default_value = "all")]
    pub setting: String,
    /// Unseen combinations for UC, RF_UC and NF_UC.
    #[arg(long)]
    pub unseen: Option<usize>,
    /// Held-out verbs for UV; defaults to 20, at most a quarter of the verbs.
    #[arg(long)]
    pub unseen_verbs: Option<usize>,
    /// Held-out objects for UO; defaults to 12, at most a quarter of the objects.
    #[arg(long)]
    pub unseen_objects: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainGeneratorArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Checkpoint directory; defaults to `<out>/generator`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Split file; defaults to the configured setting.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Baseline run without feature generation.
    #[arg(long)]
    pub no_generation: bool,
    #[arg(long)]
    pub n_bs: Option<usize>,
    #[arg(long)]
    pub n_size: Option<usize>,
    /// R, R+G, R(+)G or G.
    #[arg(long)]
    pub construction: Option<String>,
    #[arg(long)]
    pub unseen: Option<usize>,
    #[arg(long)]
    pub setting: Option<String>,
    /// Split file; defaults to the configured setting.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainEvalArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value = "text")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// n_bs, construction, n_size or components.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value = "text")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Output directory of a `train-eval` or `train-generator` run.
    #[arg(long)]
    pub run: PathBuf,
    /// Number of categories to plot.
    #[arg(long, default_value_t = 4)]
    pub categories: usize,
    /// Synthesized points per category.
    #[arg(long, default_value_t = 60)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub taxonomy: Option<String>,
    #[arg(long, default_value = "text")]
    pub format: String,
    #[arg(long)]
    pub iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CacheSyntheticArgs {
    #[arg(long)]
    pub split: Option<PathBuf>,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::BuildSplits(a) => build_splits(g, a),
        Command::TrainGenerator(a) => train_generator(g, a),
        Command::TrainEval(a) => train_eval(g, a),
        Command::Ablate(a) => ablate(g, a),
        Command::Diagnose(a) => diagnose(g, a),
        Command::Evaluate(a) => evaluate(g, a),
        Command::CacheSynthetic(a) => cache_synthetic(g, a),
    }
}

fn base_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    if let Some(b) = &g.backend {
        cfg.backend = b.parse()?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, o: &Overrides) -> Result<()> {
    if o.no_generation {
        cfg.pipeline.components.generation = false;
    }
    if let Some(n) = o.n_bs {
        cfg.pipeline.head.n_bs = n;
    }
    if let Some(n) = o.n_size {
        cfg.pipeline.n_size = n;
    }
    if let Some(c) = &o.construction {
        cfg.pipeline.construction = c.parse::<Construction>().map_err(|e| Error::Usage(e.to_string()))?;
    }
    if let Some(u) = o.unseen {
        cfg.unseen = u;
    }
    if let Some(s) = &o.setting {
        cfg.setting = s.parse::<Setting>().map_err(|e| Error::Usage(e.to_string()))?;
    }
    Ok(())
}

fn out_dir(g: &GlobalArgs, default: &str) -> Result<PathBuf> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("run config serializes")
}

fn print_artifacts(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn build_splits(g: &GlobalArgs, a: &BuildSplitsArgs) -> Result<()> {
    let cfg = base_config(g)?;
    let source = a.taxonomy.clone().unwrap_or(cfg.taxonomy.clone());
    let tax = load_taxonomy(&source)?;
    let settings: Vec<Setting> = if a.setting.eq_ignore_ascii_case("all") {
        Setting::ALL.to_vec()
    } else {
        vec![a.setting.parse().map_err(|e: hoigen_core::Error| Error::Usage(e.to_string()))?]
    };
    let single = settings.len() == 1;
    let column_default = |explicit: Option<usize>, convention: usize, available: usize| {
        explicit
            .or(if single { a.unseen } else { None })
            .unwrap_or_else(|| convention.min(available / 4).max(1))
    };
    let dir = out_dir(g, "splits")?;
    let mut written = Vec::new();
    for s in settings {
        let count = match s {
            Setting::Uv => column_default(a.unseen_verbs, 20, tax.num_verbs()),
            Setting::Uo => column_default(a.unseen_objects, 12, tax.num_objects()),
            _ => a.unseen.unwrap_or(cfg.unseen),
        };
        let split = build_split(&tax, s, count, cfg.seed)?;
        split.validate(&tax)?;
        let path = dir.join(format!("{}.split", s.as_str().to_ascii_lowercase()));
        let doc = format!("// taxonomy = {source}\n{}", split.to_document());
        write(&path, &doc)?;
        println!(
            "{s}: {} unseen / {} seen hois, {} seen objects, {} seen verbs, invariants ok",
            split.unseen_hois.len(),
            split.seen_hois.len(),
            split.seen_objects.len(),
            split.seen_verbs.len()
        );
        written.push(path);
    }
    let (rare, nonrare) = tax.rarity_partition();
    println!("rarity: {} rare / {} non-rare", rare.len(), nonrare.len());
    print_artifacts(&written);
    Ok(())
}

fn setup(cfg: RunConfig, split_path: Option<&Path>) -> Result<(RunConfig, hoigen_core::taxonomy::HoiTaxonomy, ZeroShotSplit)> {
    let cfg = cfg.resolve()?;
    let tax = cfg.load_taxonomy()?;
    let split = resolve_split(&cfg, &tax, split_path)?;
    Ok((cfg, tax, split))
}

fn train_generator(g: &GlobalArgs, a: &TrainGeneratorArgs) -> Result<()> {
    let dir = out_dir(g, "run")?;
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| dir.join("generator"));
    let (mut cfg, existing) = if a.stage == 2 {
        if !ckpt.join(crate::archive::MANIFEST).is_file() {
            return Err(Error::Usage(format!("no stage 1 checkpoint at {}", ckpt.display())));
        }
        let (gen, meta) = checkpoint::load_generator(&ckpt)?;
        let mut cfg: RunConfig = serde_json::from_value(meta.config.clone())
            .map_err(|e| Error::format(&ckpt, format!("embedded config: {e}")))?;
        if g.config.is_some() {
            cfg = base_config(g)?;
        } else if let Some(s) = g.seed {
            cfg.seed = s;
        }
        (cfg, Some((gen, meta)))
    } else {
        (base_config(g)?, None)
    };
    let sched = if a.stage == 1 {
        &mut cfg.pipeline.generator.stage1
    } else {
        &mut cfg.pipeline.generator.stage2
    };
    if let Some(e) = a.epochs {
        sched.epochs = e;
    }
    if let Some(l) = a.lr {
        sched.lr = l;
    }
    if let Some(b) = a.batch {
        sched.batch = b;
    }
    let (cfg, tax, split) = setup(cfg, a.split.as_deref())?;
    let prep = prepare_data(&cfg, &tax, &split, cfg.seed)?;
    let gcfg = &cfg.pipeline.generator;
    let gen_seed = rng::hash_words(&[cfg.seed, 0x67]);
    let (gen, history) = match existing {
        None => {
            let samples = prep.stage1_samples().stage("stage1")?;
            let (gen, logs) =
                FeatureGenerator::train_stage1(prep.prompts.clone(), &prep.prompt_text, &samples, gcfg, gen_seed)
                    .stage("stage1")?;
            (
                gen,
                TrainingHistory {
                    stage1: logs,
                    stage2: Vec::new(),
                },
            )
        }
        Some((mut gen, meta)) => {
            if gen.dim() != prep.dim || gen.prompts != prep.prompts {
                return Err(Error::Usage("checkpoint does not match the configured data".into()));
            }
            let samples = prep.stage2_samples().stage("stage2")?;
            let logs = gen.train_stage2(&samples, gcfg, gen_seed).stage("stage2")?;
            let mut h = meta.history;
            h.stage2 = logs;
            (gen, h)
        }
    };
    let stage_log = if a.stage == 1 { &history.stage1 } else { &history.stage2 };
    for (m, log) in stage_log.iter().enumerate() {
        if let (Some(f), Some(l)) = (log.first(), log.last()) {
            println!("stage {} model {m}: {} epochs, loss {:.6} -> {:.6}", a.stage, log.len(), f.loss, l.loss);
        }
    }
    checkpoint::save_generator(&ckpt, &gen, cfg.seed, &history, config_json(&cfg))?;
    let cfg_path = dir.join("config.toml");
    write(&cfg_path, &cfg.to_toml())?;
    print_artifacts(&[ckpt, cfg_path]);
    Ok(())
}

/// The full pipeline with each stage named on failure.
pub fn run_pipeline(prep: &Prepared, cfg: &RunConfig) -> Result<RunReport> {
    let p = &cfg.pipeline;
    if !p.components.generation {
        return Ok(RunReport {
            outcome: pipeline::run_downstream(prep, p, None).stage("evaluation")?,
            generator: None,
            training: TrainingLog::default(),
            generation_accuracy: None,
        });
    }
    let (gen, training) = pipeline::train_generator(prep, &p.generator, p.seed).stage("generator")?;
    let pool = pipeline::synthesize_pool(&gen, prep.num_classes, p.synthesis_count, rng::hash_words(&[p.seed, 0x73]))
        .stage("synthesis")?;
    let means = pipeline::category_means(&[&prep.aligned, &prep.test_aligned], Branch::Union);
    Ok(RunReport {
        outcome: pipeline::run_downstream(prep, p, Some(&pool)).stage("evaluation")?,
        generator: Some(gen),
        generation_accuracy: pipeline::centroid_accuracy(&pool, &means, Branch::Union),
        training,
    })
}

fn train_eval(g: &GlobalArgs, a: &TrainEvalArgs) -> Result<()> {
    let format: Format = a.format.parse()?;
    let mut cfg = base_config(g)?;
    apply_overrides(&mut cfg, &a.overrides)?;
    let (cfg, tax, split) = setup(cfg, a.overrides.split.as_deref())?;
    let dir = out_dir(g, "run")?;
    let prep = prepare_data(&cfg, &tax, &split, cfg.seed)?;
    let run = run_pipeline(&prep, &cfg)?;
    let meta = config_json(&cfg);
    let header = cfg.to_toml();
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        let p = dir.join(name);
        write(&p, text)?;
        written.push(p);
        Ok(())
    };
    put("config.toml", &header)?;
    put("split.txt", &split.to_document())?;
    put("report.txt", &report::run_document(&run, &tax, &split, &cfg, Format::Text))?;
    put("report.json", &report::run_document(&run, &tax, &split, &cfg, Format::Json))?;
    put("detections.tsv", &records::write_detections(&run.outcome.detections, &header))?;
    put("ground_truth.tsv", &records::write_ground_truth(&prep.ground_truth, &header))?;
    if let Some(gen) = &run.generator {
        let p = dir.join("generator");
        checkpoint::save_generator(&p, gen, cfg.seed, &TrainingHistory::from(&run.training), meta.clone())?;
        written.push(p);
    }
    let p = dir.join("banks");
    checkpoint::save_banks(
        &p,
        &run.outcome.banks,
        cfg.pipeline.n_size,
        cfg.pipeline.effective_construction(),
        cfg.seed,
        meta.clone(),
    )?;
    written.push(p);
    if let Some(head) = &run.outcome.head {
        let p = dir.join("head");
        checkpoint::save_head(&p, head, &run.outcome.head_loss, meta)?;
        written.push(p);
    }
    print!("{}", report::map_document(&run.outcome.map, &tax, &split, None, format));
    print_artifacts(&written);
    Ok(())
}

fn ablate(g: &GlobalArgs, a: &AblateArgs) -> Result<()> {
    let format: Format = a.format.parse()?;
    let axis: AblationAxis = a.axis.parse().map_err(|e: hoigen_core::Error| Error::Usage(e.to_string()))?;
    if a.seeds.is_empty() {
        return Err(Error::Usage("at least one seed is needed".into()));
    }
    let mut cfg = base_config(g)?;
    apply_overrides(&mut cfg, &a.overrides)?;
    let (cfg, tax, split) = setup(cfg, a.overrides.split.as_deref())?;
    let mut table: Option<AblationTable> = None;
    for &seed in &a.seeds {
        let prep = prepare_data(&cfg, &tax, &split, seed)?;
        let part = pipeline::ablate(&prep, &cfg.pipeline, axis, &[seed]).stage("ablation")?;
        match &mut table {
            None => table = Some(part),
            Some(t) => {
                for (row, new) in t.rows.iter_mut().zip(part.rows) {
                    row.runs.extend(new.runs);
                }
            }
        }
    }
    let table = table.expect("at least one seed ran");
    let dir = out_dir(g, "ablation")?;
    let txt = dir.join(format!("ablation_{}.txt", axis.as_str()));
    let json = dir.join(format!("ablation_{}.json", axis.as_str()));
    write(&txt, &report::ablation_document(&table, &cfg, Format::Text))?;
    write(&json, &report::ablation_document(&table, &cfg, Format::Json))?;
    print!("{}", report::ablation_document(&table, &cfg, format));
    print_artifacts(&[txt, json]);
    Ok(())
}

fn diagnose(g: &GlobalArgs, a: &DiagnoseArgs) -> Result<()> {
    let ckpt = a.run.join("generator");
    if !ckpt.join(crate::archive::MANIFEST).is_file() {
        return Err(Error::Usage(format!("no generator checkpoint at {}", ckpt.display())));
    }
    if a.categories == 0 || a.samples == 0 {
        return Err(Error::Usage("--categories and --samples must be positive".into()));
    }
    let (gen, meta) = checkpoint::load_generator(&ckpt)?;
    let cfg: RunConfig =
        serde_json::from_value(meta.config.clone()).map_err(|e| Error::format(&ckpt, format!("embedded config: {e}")))?;
    let split_path = a.run.join("split.txt");
    let (cfg, tax, split) = setup(cfg, split_path.is_file().then_some(split_path.as_path()))?;
    let prep = prepare_data(&cfg, &tax, &split, meta.seed)?;
    let dir = g.out.clone().unwrap_or_else(|| a.run.join("diagnose"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let comment = cfg.to_toml();
    let categories: Vec<usize> = prep.realistic.categories(Branch::Union).into_iter().take(a.categories).collect();
    let mut written = Vec::new();
    for b in Branch::REGION {
        let groups = categories
            .iter()
            .map(|&c| {
                let mut r = rng::stream(meta.seed, &[0x6469, c as u64]);
                Ok(ScatterGroup {
                    label: category_label(&tax, c),
                    realistic: prep.aligned.get(b, c).to_vec(),
                    synthesized: gen.synthesize(c, b, a.samples, &mut r)?.features.iter_rows().map(<[f64]>::to_vec).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let path = dir.join(format!("scatter_{b}.svg"));
        plot::scatter_svg(&path, &format!("{b} features: realistic (o) vs synthesized (x)"), &groups, &comment)?;
        written.push(path);
    }
    let mut series = Vec::new();
    for (name, hist) in [("stage1", &meta.history.stage1), ("stage2", &meta.history.stage2)] {
        for (m, log) in hist.iter().enumerate() {
            series.push((format!("{name} model {m}"), log.iter().map(|e| e.loss).collect::<Vec<_>>()));
        }
    }
    series.retain(|(_, v)| !v.is_empty());
    if !series.is_empty() {
        let path = dir.join("loss.svg");
        plot::loss_svg(&path, "generator training loss", &series, &comment)?;
        written.push(path);
    }
    print_artifacts(&written);
    Ok(())
}

fn evaluate(g: &GlobalArgs, a: &EvaluateArgs) -> Result<()> {
    let format: Format = a.format.parse()?;
    let cfg = base_config(g)?;
    let tax = load_taxonomy(a.taxonomy.as_deref().unwrap_or(&cfg.taxonomy))?;
    let split = resolve_split(&cfg, &tax, Some(&a.split))?;
    let dets = records::read_detections(&a.detections)?;
    let gt = records::read_ground_truth(&a.ground_truth)?;
    let thr = a.iou.unwrap_or(cfg.pipeline.iou_threshold);
    let (rare, _) = tax.rarity_partition();
    let map = hoigen_core::evalmap::map_report(&dets, &gt, &split, &rare, thr)?;
    let doc = report::map_document(&map, &tax, &split, None, format);
    print!("{doc}");
    if let Some(dir) = &g.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(if format == Format::Json { "evaluation.json" } else { "evaluation.txt" });
        write(&path, &doc)?;
        print_artifacts(&[path]);
    }
    Ok(())
}

fn cache_synthetic(g: &GlobalArgs, a: &CacheSyntheticArgs) -> Result<()> {
    let mut cfg = base_config(g)?;
    cfg.backend = BackendChoice::Synthetic;
    let (cfg, tax, split) = setup(cfg, a.split.as_deref())?;
    let (backend, data) = synthetic_world(&cfg, &tax, &split, cfg.seed)?;
    let dir = out_dir(g, "cache")?;
    let prompts = hoigen_core::prompts::PromptTable::for_taxonomy(&tax).texts();
    let mut all = prompts;
    all.extend(
        tax.hois()
            .iter()
            .map(|h| text_prototype_prompt(&tax.verbs()[h.verb], &tax.objects()[h.object])),
    );
    cache::export_synthetic(&backend, &data.train, &data.test, &all, &dir)?;
    print_artifacts(&[dir]);
    Ok(())
}
