use std::path::Path;

use hoigen::archive::{Archive, ArchiveWriter, DType};
use hoigen::cache::{export_synthetic, CachedBackend};
use hoigen::checkpoint::{load_banks, load_generator, load_head, save_banks, save_generator, save_head, TrainingHistory};
use hoigen::records::{parse_detections, parse_ground_truth, write_detections, write_ground_truth};
use hoigen_core::backend::{Backend, Branch};
use hoigen_core::banks::Construction;
use hoigen_core::evalmap::{DetectionRecord, GroundTruthRecord};
use hoigen_core::generator::{GeneratorConfig, TrainSchedule};
use hoigen_core::geometry::BBox;
use hoigen_core::linalg::Matrix;
use hoigen_core::nn::Parameters;
use hoigen_core::pipeline::{prepare, train_generator, PipelineConfig, BENCH12_TAXONOMY};
use hoigen_core::prompts::PromptTable;
use hoigen_core::rng;
use hoigen_core::synthetic::{BenchmarkConfig, DetectorConfig, SyntheticBackend, SyntheticWorld, WorldConfig};
use hoigen_core::taxonomy::{build_split, HoiTaxonomy, Setting};
use proptest::prelude::*;
use serde_json::json;

#[test]
fn archive_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = Matrix::from_vec(2, 3, vec![1.0, -2.5, 3.25, 1e-3, 0.1, 7.0]).unwrap();
    let mut w = ArchiveWriter::create(dir.path()).unwrap();
    w.put_matrix("exact", &m, DType::F64, Some("union")).unwrap();
    w.put_matrix("narrow", &m, DType::F32, None).unwrap();
    w.put("vec", &[3], DType::F64, None, &[1.0, 2.0, 3.0]).unwrap();
    assert!(w.put("bad", &[4], DType::F64, None, &[1.0]).is_err());
    assert!(w.put("vec", &[1], DType::F64, None, &[1.0]).is_err());
    assert!(w.put("big", &[1], DType::F32, None, &[1e300]).is_err());
    w.finish(json!({ "note": "x" })).unwrap();

    let a = Archive::open(dir.path()).unwrap();
    assert_eq!(a.matrix("exact").unwrap(), m);
    let narrow = a.matrix("narrow").unwrap();
    for (x, y) in narrow.as_slice().iter().zip(m.as_slice()) {
        assert_eq!(*x, f64::from(*y as f32));
    }
    assert_eq!(a.entry("exact").unwrap().branch.as_deref(), Some("union"));
    assert_eq!(a.vector("vec").unwrap(), vec![1.0, 2.0, 3.0]);
    assert!(a.vector("exact").is_err());
    assert!(a.get("missing").is_err());
    assert_eq!(a.metadata()["note"], "x");
    let raw = std::fs::read(dir.path().join(&a.entry("narrow").unwrap().file)).unwrap();
    assert_eq!(raw.len(), 6 * 4);
    assert_eq!(&raw[..4], &1.0f32.to_le_bytes());
}

#[test]
fn truncated_payload_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = ArchiveWriter::create(dir.path()).unwrap();
    w.put("v", &[2], DType::F32, None, &[1.0, 2.0]).unwrap();
    let a = w.finish(json!({})).unwrap();
    let file = dir.path().join(&a.entry("v").unwrap().file);
    std::fs::write(&file, [0u8; 5]).unwrap();
    assert!(Archive::open(dir.path()).unwrap().get("v").is_err());
    assert!(Archive::open(dir.path().join("nope")).is_err());
}

fn boxes() -> impl Strategy<Value = BBox> {
    (-1e4f64..1e4, -1e4f64..1e4, 1e-3f64..1e3, 1e-3f64..1e3).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

proptest! {
    #[test]
    fn records_round_trip(
        dets in prop::collection::vec((any::<u64>(), boxes(), boxes(), 0usize..600, 0.0f64..=1.0), 0..20),
    ) {
        let dets: Vec<DetectionRecord> = dets
            .into_iter()
            .map(|(image, human, object, hoi, score)| DetectionRecord { image, human, object, hoi, score })
            .collect();
        let text = write_detections(&dets, "seed = 1\nnote");
        prop_assert_eq!(parse_detections(&text, Path::new("d.tsv")).unwrap(), dets.clone());
        let gt: Vec<GroundTruthRecord> = dets
            .iter()
            .map(|d| GroundTruthRecord { image: d.image, human: d.human, object: d.object, hoi: d.hoi })
            .collect();
        let text = write_ground_truth(&gt, "");
        prop_assert_eq!(parse_ground_truth(&text, Path::new("g.tsv")).unwrap(), gt);
    }
}

#[test]
fn record_errors_name_the_line() {
    let p = Path::new("x.tsv");
    let bad_score = "# header\n1\t0\t0\t1\t1\t0\t0\t1\t1\t3\t1.5\n";
    let e = parse_detections(bad_score, p).unwrap_err().to_string();
    assert!(e.contains("line 2"), "{e}");
    let short = "1\t0\t0\t1\t1\n";
    assert!(parse_ground_truth(short, p).unwrap_err().to_string().contains("line 1"));
    let inverted = "1\t5\t0\t1\t1\t0\t0\t1\t1\t3\n";
    assert!(parse_ground_truth(inverted, p).is_err());
}

fn world(seed: u64, per_category: usize) -> (HoiTaxonomy, hoigen_core::taxonomy::ZeroShotSplit, SyntheticBackend, hoigen_core::synthetic::SyntheticDataset) {
    let tax = HoiTaxonomy::parse(BENCH12_TAXONOMY).unwrap();
    let split = build_split(&tax, Setting::NfUc, 4, 0).unwrap();
    let w = SyntheticWorld::new(&tax, WorldConfig::default(), seed).unwrap();
    let bench = BenchmarkConfig {
        train_images_per_category: per_category,
        test_images_per_category: per_category / 2,
        ..BenchmarkConfig::default()
    };
    let data = w.benchmark(&split, &bench, seed).unwrap();
    (tax, split, SyntheticBackend::new(w, DetectorConfig::default()), data)
}

#[test]
fn generator_checkpoint_is_bit_exact() {
    let (tax, split, backend, data) = world(0, 10);
    let prep = prepare(&backend, &tax, &split, &data.train, &data.test, 0.5).unwrap();
    let sched = TrainSchedule { epochs: 2, batch: 32, ..TrainSchedule::default() };
    let cfg = GeneratorConfig { stage1: sched.clone(), stage2: sched, ..GeneratorConfig::default() };
    let (gen, log) = train_generator(&prep, &cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_generator(dir.path(), &gen, 4, &TrainingHistory::from(&log), json!({"k": 1})).unwrap();
    let (back, meta) = load_generator(dir.path()).unwrap();
    assert_eq!(back, gen);
    assert_eq!(back.vaes[0].fingerprint(), gen.vaes[0].fingerprint());
    assert_eq!((meta.dim, meta.latent_dim, meta.seed), (32, 32, 4));
    assert_eq!((meta.stage1_epochs, meta.stage2_epochs), (2, 2));
    assert_eq!(meta.prompts, PromptTable::for_taxonomy(&tax));
    let mut a = rng::stream(1, &[]);
    let mut b = rng::stream(1, &[]);
    assert_eq!(gen.synthesize(3, Branch::Human, 4, &mut a).unwrap(), back.synthesize(3, Branch::Human, 4, &mut b).unwrap());
    assert!(load_banks(dir.path()).is_err());
}

#[test]
fn bank_and_head_checkpoints_round_trip() {
    let (tax, split, backend, data) = world(1, 10);
    let prep = prepare(&backend, &tax, &split, &data.train, &data.test, 0.5).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.components.generation = false;
    cfg.head.epochs = 1;
    let out = hoigen_core::pipeline::run_downstream(&prep, &cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let banks_dir = dir.path().join("banks");
    let head_dir = dir.path().join("head");
    save_banks(&banks_dir, &out.banks, 2, Construction::R, 0, json!(null)).unwrap();
    save_head(&head_dir, out.head.as_ref().unwrap(), &out.head_loss, json!(null)).unwrap();
    assert_eq!(load_banks(&banks_dir).unwrap(), out.banks);
    assert_eq!(&load_head(&head_dir).unwrap(), out.head.as_ref().unwrap());
    let meta = Archive::open(&banks_dir).unwrap().metadata().clone();
    assert_eq!(meta["C"], 12);
    assert_eq!(meta["N_size"], 2);
    assert_eq!(meta["construction"], "R");
}

#[test]
fn cached_backend_replays_the_synthetic_one() {
    let (tax, split, backend, data) = world(2, 6);
    let prompts: Vec<String> = PromptTable::for_taxonomy(&tax).texts();
    let dir = tempfile::tempdir().unwrap();
    let mut all = prompts.clone();
    all.extend(tax.hois().iter().map(|h| {
        hoigen_core::prompts::text_prototype_prompt(&tax.verbs()[h.verb], &tax.objects()[h.object])
    }));
    export_synthetic(&backend, &data.train, &data.test, &all, dir.path()).unwrap();
    let cached = CachedBackend::open(dir.path()).unwrap();
    assert_eq!(cached.dim(), 32);
    let (train, test) = cached.dataset(|h| split.is_seen(h));
    assert_eq!(train.len(), data.train.len());
    assert_eq!(test.len(), data.test.len());
    let img = &data.test[0];
    let regions = backend.detect(&img.image).unwrap();
    assert_eq!(cached.detect(&img.id).unwrap(), regions);
    let a = backend.encode_regions(&img.image, &regions).unwrap();
    let b = cached.encode_regions(&img.id, &regions).unwrap();
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.union.values.iter().zip(&y.union.values) {
            assert_eq!(f64::from(*p as f32), *q);
        }
    }
    let t = cached.encode_text(&prompts[0]).unwrap();
    assert!((t.values[0] - backend.encode_text(&prompts[0]).unwrap().values[0]).abs() < 1e-6);
    assert!(cached.encode_text("a photo of nothing").is_err());
    assert!(cached.detect(&u64::MAX).is_err());
    let only_seen_some = cached.dataset(|h| h == 1).0;
    assert!(only_seen_some.len() < train.len());
    let prep = prepare(&cached, &tax, &split, &train, &test, 0.5).unwrap();
    assert_eq!(prep.test_pairs.len(), prepare(&backend, &tax, &split, &data.train, &data.test, 0.5).unwrap().test_pairs.len());
}
