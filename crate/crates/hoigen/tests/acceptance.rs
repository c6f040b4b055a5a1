//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any fails.

use std::path::Path;

use rand::Rng;
use std::process::Command;
use std::time::{Duration, Instant};

use hoigen_core::evalmap::average_precision;
use hoigen_core::generator::{kl_to_standard_normal, stage1_gradients, stage1_loss_with_noise, CvaeParams, FeatureGenerator};
use hoigen_core::linalg::Matrix;
use hoigen_core::nn::Parameters;
use hoigen_core::pipeline::{self, PipelineConfig, Prepared};
use hoigen_core::rng::{self, StreamRng};
use hoigen_core::scoring::{total_loss, total_loss_grad};
use hoigen_core::taxonomy::{build_split, Setting};
use hoigen::config::{load_taxonomy, RunConfig};
use hoigen::dataset::{prepare_data, resolve_split};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn kl_monte_carlo(mu: &[f64], logvar: &[f64], samples: usize, r: &mut StreamRng) -> f64 {
    let mut acc = 0.0;
    for _ in 0..samples {
        let mut s = 0.0;
        for (m, lv) in mu.iter().zip(logvar) {
            let e = rng::normal(r);
            let z = m + (0.5 * lv).exp() * e;
            s += -0.5 * lv - 0.5 * e * e + 0.5 * z * z;
        }
        acc += s;
    }
    acc / samples as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(2024, &[1]);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mu: Vec<f64> = (0..8).map(|_| rng::normal(&mut r)).collect();
        let logvar: Vec<f64> = (0..8).map(|_| 0.7 * rng::normal(&mut r)).collect();
        let exact = kl_to_standard_normal(&mu, &logvar);
        let mc = kl_monte_carlo(&mu, &logvar, 1_000_000, &mut r);
        worst = worst.max((mc - exact).abs() / exact);
    }
    let t = secs(start.elapsed());
    outcome(
        worst < 0.01 && t < 30.0,
        format!("worst relative error {worst:.2e} over 20 cases, {t:.1} s"),
    )
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn criterion_2() -> Outcome {
    let (d, dz, h) = (8, 4, 1e-4);
    let mut r = rng::stream(7, &[2]);
    let text = Matrix::from_rows(d, (0..3).map(|_| rng::normal_vec(&mut r, d))).unwrap();
    let params = CvaeParams::init(d, dz, 2 * d, &text, 7).unwrap();
    let xs = Matrix::from_rows(d, (0..4).map(|_| rng::normal_vec(&mut r, d))).unwrap();
    let eps = Matrix::from_rows(dz, (0..4).map(|_| rng::normal_vec(&mut r, dz))).unwrap();
    let prompts = [0, 1, 2, 1];
    let loss = |p: &CvaeParams| {
        (0..4)
            .map(|i| stage1_loss_with_noise(xs.row(i), prompts[i], p, eps.row(i)).unwrap().0)
            .sum::<f64>()
            / 4.0
    };
    let (_, _, grads) = stage1_gradients(&xs, &prompts, &eps, &params).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(<[f64]>::to_vec).collect();
    let mut probe = params.clone();
    let mut worst_vae = 0.0f64;
    let mut checked = 0usize;
    for (t, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            let orig = probe.tensors()[t][k];
            probe.tensors_mut()[t][k] = orig + h;
            let up = loss(&probe);
            probe.tensors_mut()[t][k] = orig - h;
            let down = loss(&probe);
            probe.tensors_mut()[t][k] = orig;
            let fd = (up - down) / (2.0 * h);
            if g[k].abs().max(fd.abs()) > 1e-6 {
                worst_vae = worst_vae.max(rel_err(g[k], fd));
            }
            checked += 1;
        }
    }
    let mut worst_bce = 0.0f64;
    for _ in 0..10 {
        let logits: Vec<f64> = (0..8).map(|_| 3.0 * rng::normal(&mut r)).collect();
        let target: Vec<f64> = (0..8).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
        let (_, g) = total_loss_grad(&logits, &target).unwrap();
        for k in 0..8 {
            let mut up = logits.clone();
            let mut down = logits.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (total_loss(&up, &target).unwrap() - total_loss(&down, &target).unwrap()) / (2.0 * h);
            worst_bce = worst_bce.max(rel_err(g[k], fd));
        }
    }
    outcome(
        worst_vae < 1e-3 && worst_bce < 1e-3,
        format!("stage I loss: worst {worst_vae:.2e} over {checked} parameters; total loss: worst {worst_bce:.2e}"),
    )
}

struct Staged {
    stage1_first: f64,
    stage1_last: f64,
    stage1_time: f64,
    hash_kept: bool,
    stage2: Vec<f64>,
}

fn staged_training(prep: &Prepared, cfg: &PipelineConfig) -> Staged {
    let seed = rng::hash_words(&[cfg.seed, 0x67]);
    let start = Instant::now();
    let (mut gen, logs) = FeatureGenerator::train_stage1(
        prep.prompts.clone(),
        &prep.prompt_text,
        &prep.stage1_samples().unwrap(),
        &cfg.generator,
        seed,
    )
    .unwrap();
    let stage1_time = secs(start.elapsed());
    let before: Vec<u64> = gen.vaes.iter().map(Parameters::fingerprint).collect();
    let logs2 = gen.train_stage2(&prep.stage2_samples().unwrap(), &cfg.generator, seed).unwrap();
    let after: Vec<u64> = gen.vaes.iter().map(Parameters::fingerprint).collect();
    Staged {
        stage1_first: logs[0][0].loss,
        stage1_last: logs[0].last().unwrap().loss,
        stage1_time,
        hash_kept: before == after,
        stage2: logs2[0].iter().map(|e| e.loss).collect(),
    }
}

struct SeedRun {
    unseen_fg: f64,
    unseen_base: f64,
    accuracy: f64,
    time: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn pipeline_criteria() -> (Outcome, Outcome, Outcome, Outcome) {
    let cfg = RunConfig::default().resolve().unwrap();
    let tax = cfg.load_taxonomy().unwrap();
    let split = resolve_split(&cfg, &tax, None).unwrap();
    let mut runs = Vec::new();
    let mut staged = None;
    for &seed in &SEEDS {
        let start = Instant::now();
        let prep = prepare_data(&cfg, &tax, &split, seed).unwrap();
        let mut pcfg = cfg.pipeline.clone();
        pcfg.seed = seed;
        let fg = pipeline::run(&prep, &pcfg).unwrap();
        let time = secs(start.elapsed());
        let mut base_cfg = pcfg.clone();
        base_cfg.components.generation = false;
        let base = pipeline::run_downstream(&prep, &base_cfg, None).unwrap();
        if seed == SEEDS[0] {
            staged = Some(staged_training(&prep, &pcfg));
        }
        runs.push(SeedRun {
            unseen_fg: fg.outcome.map.unseen.unwrap(),
            unseen_base: base.map.unseen.unwrap(),
            accuracy: fg.generation_accuracy.unwrap(),
            time,
        });
    }
    let s = staged.unwrap();
    let ratio = s.stage1_last / s.stage1_first;
    let c3 = outcome(
        ratio < 0.5 && s.stage1_time < 120.0,
        format!(
            "loss {:.4} -> {:.4} (ratio {ratio:.3}) in {:.1} s",
            s.stage1_first, s.stage1_last, s.stage1_time
        ),
    );
    let violations = s.stage2.windows(2).filter(|w| w[1] > w[0]).count();
    let c4 = outcome(
        s.hash_kept && violations <= 1,
        format!(
            "VAE hash {}, MSE {:.5} -> {:.5}, {violations} increases over {} epochs",
            if s.hash_kept { "unchanged" } else { "CHANGED" },
            s.stage2[0],
            s.stage2.last().unwrap(),
            s.stage2.len()
        ),
    );
    let accs: Vec<String> = runs.iter().map(|r| format!("{:.3}", r.accuracy)).collect();
    let min_acc = runs.iter().map(|r| r.accuracy).fold(1.0, f64::min);
    let c5 = outcome(min_acc >= 0.9, format!("union nearest-centroid accuracy per seed {}", accs.join(" ")));
    let fg = mean(runs.iter().map(|r| r.unseen_fg)) * 100.0;
    let base = mean(runs.iter().map(|r| r.unseen_base)) * 100.0;
    let slowest = runs.iter().map(|r| r.time).fold(0.0, f64::max);
    let c6 = outcome(
        fg - base >= 5.0 && slowest < 300.0,
        format!("unseen mAP {fg:.2} with generation vs {base:.2} without (+{:.2}), slowest seed {slowest:.1} s", fg - base),
    );
    (c3, c4, c5, c6)
}

/// Precision-recall staircase built from scratch.
fn staircase_ap(flags: &[bool], num_gt: usize) -> f64 {
    let mut ap = 0.0;
    for k in 0..flags.len() {
        if !flags[k] {
            continue;
        }
        let best = (k..flags.len())
            .map(|j| flags[..=j].iter().filter(|&&f| f).count() as f64 / (j + 1) as f64)
            .fold(0.0, f64::max);
        ap += best / num_gt as f64;
    }
    ap
}

fn criterion_7() -> Outcome {
    let mut r = rng::stream(77, &[7]);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = r.random_range(0..=12);
        let flags: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let tp = flags.iter().filter(|&&f| f).count();
        let num_gt = (tp + r.random_range(0..=3)).max(1);
        let ap = average_precision(&flags, num_gt).unwrap();
        worst = worst.max((ap - staircase_ap(&flags, num_gt)).abs());
    }
    let hand = average_precision(&[true, false, true], 2).unwrap();
    outcome(
        worst <= 1e-12 && (hand - 0.8333).abs() <= 1e-4 && (hand - 5.0 / 6.0).abs() <= 1e-9,
        format!("max deviation from oracle {worst:.1e} on 200 instances, hand case {hand:.10}"),
    )
}

fn criterion_8() -> Outcome {
    let tax = load_taxonomy("hico_det").unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for (setting, count) in [
        (Setting::Uc, 120),
        (Setting::RfUc, 120),
        (Setting::NfUc, 120),
        (Setting::Uv, 20),
        (Setting::Uo, 12),
    ] {
        match build_split(&tax, setting, count, 0).and_then(|s| s.validate(&tax).map(|()| s)) {
            Ok(s) => lines.push(format!("{} {}", setting.as_str(), s.unseen_hois.len())),
            Err(e) => {
                ok = false;
                lines.push(format!("{} failed: {e}", setting.as_str()));
            }
        }
    }
    let (rare, nonrare) = tax.rarity_partition();
    ok &= rare.len() == 138 && nonrare.len() == 462;
    outcome(ok, format!("unseen per setting [{}], rare/non-rare {}/{}", lines.join(", "), rare.len(), nonrare.len()))
}

fn hoigen(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hoigen"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn criterion_9() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let a = hoigen(d.path(), &["train-eval", "--seed", "3", "--out", "a"]);
    let b = hoigen(d.path(), &["train-eval", "--seed", "3", "--out", "b"]);
    if !a.status.success() || !b.status.success() {
        return outcome(false, format!("train-eval failed: {}", String::from_utf8_lossy(&a.stderr)));
    }
    let mut same = Vec::new();
    for f in ["report.txt", "report.json", "detections.tsv"] {
        let x = std::fs::read(d.path().join("a").join(f)).unwrap();
        let y = std::fs::read(d.path().join("b").join(f)).unwrap();
        same.push((f, x == y));
    }
    let ok = same.iter().all(|(_, s)| *s);
    let detail: Vec<String> = same.iter().map(|(f, s)| format!("{f} {}", if *s { "identical" } else { "DIFFERS" })).collect();
    outcome(ok, detail.join(", "))
}

fn criterion_10() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let o = hoigen(d.path(), &["ablate", "--axis", "n_bs", "--seeds", "0,1,2", "--format", "json", "--out", "ab"]);
    if !o.status.success() {
        return outcome(false, format!("ablate failed: {}", String::from_utf8_lossy(&o.stderr)));
    }
    let text = std::fs::read_to_string(d.path().join("ab").join("ablation_n_bs.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    let col = |k: &str| -> Vec<f64> { rows.iter().map(|r| r[k].as_f64().unwrap() * 100.0).collect() };
    let (seen, unseen) = (col("seen"), col("unseen"));
    let band = 1.0;
    let unseen_ok = unseen.windows(2).all(|w| w[1] >= w[0] - band);
    let seen_ok = seen.windows(2).all(|w| w[1] <= w[0] + band);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    outcome(
        unseen_ok && seen_ok && rows.len() == 4,
        format!("N_bs 1..4 over seeds 0,1,2: unseen {} | seen {}", fmt(&unseen), fmt(&seen)),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("[{}] criterion {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "KL closed form vs Monte Carlo", criterion_1());
    report(2, "gradient checks", criterion_2());
    let (c3, c4, c5, c6) = pipeline_criteria();
    report(3, "Stage I convergence", c3);
    report(4, "Stage II freeze and alignment", c4);
    report(5, "generation quality", c5);
    report(6, "generation beats the baseline on unseen", c6);
    report(7, "AP against the staircase oracle", criterion_7());
    report(8, "split validator on the HICO-DET taxonomy", criterion_8());
    report(9, "determinism of train-eval", criterion_9());
    report(10, "N_bs ablation shape", criterion_10());
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed in {:.1} s",
        results.len() - failed.len(),
        results.len(),
        secs(start.elapsed())
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
