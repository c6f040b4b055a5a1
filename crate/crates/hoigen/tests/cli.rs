use std::path::Path;
use std::process::{Command, Output};

use hoigen::config::{load_taxonomy, RunConfig};

const QUICK: &str = r#"
seed = 5

[benchmark]
train_images_per_category = 12
test_images_per_category = 6

[pipeline]
synthesis_count = 10

[pipeline.head]
epochs = 2

[pipeline.generator.stage1]
epochs = 3
batch = 64

[pipeline.generator.stage2]
epochs = 3
batch = 64
"#;

fn hoigen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hoigen"))
        .current_dir(dir)
        .env_remove("HOIGEN_CACHE_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn quick_dir() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("quick.toml"), QUICK).unwrap();
    d
}

#[test]
fn config_layers_and_rejects_unknown_keys() {
    let cfg = RunConfig::from_toml(QUICK, Path::new("quick.toml")).unwrap().resolve().unwrap();
    assert_eq!(cfg.seed, 5);
    assert_eq!(cfg.pipeline.seed, 5);
    assert_eq!(cfg.pipeline.generator.stage1.epochs, 3);
    assert_eq!(cfg.pipeline.n_size, 2);
    assert_eq!(cfg.pipeline.head.n_bs, 1);
    assert_eq!(cfg.pipeline.weights.text, 1.0);
    let back = RunConfig::from_toml(&cfg.to_toml(), Path::new("x")).unwrap();
    assert_eq!(back, cfg);
    assert!(RunConfig::from_toml("sede = 1", Path::new("x")).is_err());
    let bad = RunConfig::from_toml("[pipeline]\nn_size = 0", Path::new("x")).unwrap();
    assert_eq!(bad.resolve().unwrap_err().exit_code(), 2);
}

#[test]
fn defaults_follow_the_published_schedule() {
    let cfg = RunConfig::default();
    let p = &cfg.pipeline;
    assert_eq!((p.generator.stage1.epochs, p.generator.stage1.batch, p.generator.stage1.lr), (50, 256, 1e-3));
    assert_eq!((p.head.epochs, p.head.batch, p.head.n_bs), (15, 4, 1));
    assert_eq!((p.synthesis_count, p.n_size), (100, 2));
    let w = &p.weights;
    assert_eq!([w.union, w.human, w.object, w.clip, w.dino, w.text], [0.5, 0.5, 0.5, 0.5, 0.5, 1.0]);
}

#[test]
fn builtin_taxonomies_load() {
    let hico = load_taxonomy("hico_det").unwrap();
    assert_eq!((hico.num_hois(), hico.num_objects(), hico.num_verbs()), (600, 80, 117));
    assert_eq!(load_taxonomy("bench12").unwrap().num_hois(), 12);
    assert_eq!(load_taxonomy("/does/not/exist").unwrap_err().exit_code(), 2);
}

#[test]
fn build_splits_writes_valid_files() {
    let d = tempfile::tempdir().unwrap();
    let o = hoigen(d.path(), &["build-splits", "--setting", "NF_UC", "--unseen", "3", "--seed", "1", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(d.path().join("s/nf_uc.split")).unwrap();
    let tax = load_taxonomy("bench12").unwrap();
    let split = hoigen_core::taxonomy::ZeroShotSplit::from_document(&text, &tax).unwrap();
    assert_eq!(split.unseen_hois.len(), 3);
    // The three most frequent combinations of the built-in taxonomy.
    assert_eq!(split.unseen_hois.iter().copied().collect::<Vec<_>>(), vec![0, 4, 8]);
    let o = hoigen(d.path(), &["build-splits", "--setting", "UC", "--unseen", "12"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_errors_exit_2() {
    let d = quick_dir();
    assert_eq!(code(&hoigen(d.path(), &["ablate", "--axis", "depth", "--config", "quick.toml"])), 2);
    assert_eq!(code(&hoigen(d.path(), &["diagnose", "--run", "missing"])), 2);
    assert_eq!(code(&hoigen(d.path(), &["train-eval", "--backend", "gpu"])), 2);
    assert_eq!(code(&hoigen(d.path(), &["train-eval", "--backend", "pretrained"])), 2);
    assert_eq!(code(&hoigen(d.path(), &["train-generator", "--stage", "3"])), 2);
    assert_eq!(code(&hoigen(d.path(), &["train-generator", "--stage", "2", "--out", "empty"])), 2);
    assert_eq!(code(&hoigen(d.path(), &["frobnicate"])), 2);
    assert_eq!(code(&hoigen(d.path(), &["--help"])), 0);
}

#[test]
fn train_eval_then_diagnose_and_evaluate() {
    let d = quick_dir();
    let o = hoigen(d.path(), &["train-eval", "--config", "quick.toml", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for name in ["report.txt", "report.json", "detections.tsv", "ground_truth.tsv", "generator", "banks", "head"] {
        assert!(d.path().join("run").join(name).exists(), "{name}");
        assert!(stdout.contains(&format!("run/{name}")), "{name} not printed");
    }
    let report = std::fs::read_to_string(d.path().join("run/report.txt")).unwrap();
    assert!(report.starts_with("[config]\n"));
    assert!(report.contains("seed = 5"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 5);
    assert!(json["map"]["unseen"].is_number());

    let o = hoigen(d.path(), &["diagnose", "--run", "run", "--categories", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for b in ["union", "human", "object"] {
        let svg = std::fs::read_to_string(d.path().join(format!("run/diagnose/scatter_{b}.svg"))).unwrap();
        assert!(svg.contains("<svg") && svg.contains("seed = 5"));
        let legend = ["hold bicycle", "carry bicycle", "wash bicycle", "hold horse"];
        assert_eq!(legend.iter().filter(|l| svg.contains(*l)).count(), 3, "{b}");
    }
    assert!(d.path().join("run/diagnose/loss.svg").is_file());

    let o = hoigen(
        d.path(),
        &[
            "evaluate",
            "--detections",
            "run/detections.tsv",
            "--ground-truth",
            "run/ground_truth.tsv",
            "--split",
            "run/split.txt",
            "--format",
            "json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let eval: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(eval["map"], json["map"]);
}

#[test]
fn generator_stages_run_separately() {
    let d = quick_dir();
    let o = hoigen(d.path(), &["train-generator", "--stage", "1", "--epochs", "2", "--config", "quick.toml", "--out", "g"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (gen, meta) = hoigen::checkpoint::load_generator(&d.path().join("g/generator")).unwrap();
    assert!(gen.aligners.is_empty());
    assert_eq!((meta.stage1_epochs, meta.stage2_epochs), (2, 0));
    let o = hoigen(d.path(), &["train-generator", "--stage", "2", "--lr", "0.002", "--out", "g"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (after, meta) = hoigen::checkpoint::load_generator(&d.path().join("g/generator")).unwrap();
    assert_eq!(after.vaes, gen.vaes);
    assert_eq!(after.aligners.len(), 1);
    assert_eq!((meta.stage1_epochs, meta.stage2_epochs), (2, 3));
    assert_eq!(meta.config["pipeline"]["generator"]["stage2"]["lr"], 0.002);
}

#[test]
fn ablate_writes_a_table_per_axis() {
    let d = quick_dir();
    let o = hoigen(d.path(), &["ablate", "--axis", "n_size", "--seeds", "0,1", "--config", "quick.toml", "--out", "ab"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("ab/ablation_n_size.json")).unwrap()).unwrap();
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["runs"].as_array().unwrap().len() == 2));
    let o = hoigen(d.path(), &["ablate", "--axis", "construction", "--seeds", "0", "--config", "quick.toml", "--out", "ab"]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(d.path().join("ab/ablation_construction.txt")).unwrap();
    for label in ["R ", "R+G", "R(+)G", "G "] {
        assert!(text.contains(label), "{label}");
    }
}

#[test]
fn cache_round_trip_through_the_cli() {
    let d = quick_dir();
    let o = hoigen(d.path(), &["cache-synthetic", "--config", "quick.toml", "--out", "cache"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = Command::new(env!("CARGO_BIN_EXE_hoigen"))
        .current_dir(d.path())
        .env("HOIGEN_CACHE_DIR", "cache")
        .args(["train-eval", "--config", "quick.toml", "--backend", "pretrained", "--no-generation", "--out", "p"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("p/report.txt").is_file());
    assert!(!d.path().join("p/generator").exists());
}
