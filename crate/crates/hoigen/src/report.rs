//! Run and ablation reports. Output depends only on its inputs, so equal runs
//! give byte-identical documents.

use std::fmt::Write as _;

use hoigen_core::evalmap::MapReport;
use hoigen_core::pipeline::{AblationTable, RunReport};
use hoigen_core::synthetic::category_label;
use hoigen_core::taxonomy::{HoiTaxonomy, ZeroShotSplit};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Text,
    Json,
}

impl std::str::FromStr for Format {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "text" => Ok(Format::Text),
            "json" | "json-like" => Ok(Format::Json),
            other => Err(crate::error::Error::Usage(format!("unknown format `{other}` (text or json)"))),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.4}", x * 100.0))
}

#[derive(Debug, Clone, Serialize)]
struct CategoryRow {
    id: usize,
    label: String,
    seen: bool,
    rare: bool,
    num_gt: usize,
    ap: Option<f64>,
}

fn category_rows(map: &MapReport, tax: &HoiTaxonomy, split: &ZeroShotSplit) -> Vec<CategoryRow> {
    map.per_category
        .iter()
        .enumerate()
        .map(|(k, ap)| CategoryRow {
            id: k,
            label: category_label(tax, k),
            seen: split.is_seen(k),
            rare: tax.is_rare(k),
            num_gt: map.num_gt[k],
            ap: *ap,
        })
        .collect()
}

fn aggregates(map: &MapReport) -> Value {
    json!({
        "full": map.full,
        "seen": map.seen,
        "unseen": map.unseen,
        "rare": map.rare,
        "nonrare": map.nonrare,
    })
}

fn config_value(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("run config serializes")
}

/// Aggregates and per-category AP of an evaluation, with the configuration.
pub fn map_document(
    map: &MapReport,
    tax: &HoiTaxonomy,
    split: &ZeroShotSplit,
    cfg: Option<&RunConfig>,
    format: Format,
) -> String {
    let rows = category_rows(map, tax, split);
    match format {
        Format::Json => {
            let mut doc = json!({
                "split": { "setting": split.setting.as_str(), "unseen": split.unseen_hois },
                "map": aggregates(map),
                "per_category": rows,
            });
            if let Some(c) = cfg {
                doc["config"] = config_value(c);
            }
            serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
        }
        Format::Text => {
            let mut out = String::new();
            if let Some(c) = cfg {
                out.push_str("[config]\n");
                out.push_str(&c.to_toml());
                out.push('\n');
            }
            map_text(&mut out, map, split, &rows);
            out
        }
    }
}

fn map_text(out: &mut String, map: &MapReport, split: &ZeroShotSplit, rows: &[CategoryRow]) {
    let ids: Vec<String> = split.unseen_hois.iter().map(ToString::to_string).collect();
    let _ = writeln!(out, "[map]");
    let _ = writeln!(out, "setting = {}", split.setting);
    let _ = writeln!(out, "unseen = {}", ids.join(" "));
    let _ = writeln!(out, "full    = {}", opt(map.full));
    let _ = writeln!(out, "seen    = {}", opt(map.seen));
    let _ = writeln!(out, "unseen  = {}", opt(map.unseen));
    let _ = writeln!(out, "rare    = {}", opt(map.rare));
    let _ = writeln!(out, "nonrare = {}", opt(map.nonrare));
    let _ = writeln!(out, "\n[per_category]");
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let _ = writeln!(out, "{:>4}  {:<width$}  {:<6}  {:<7}  {:>6}  {:>8}", "id", "label", "split", "rarity", "gt", "ap");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>4}  {:<width$}  {:<6}  {:<7}  {:>6}  {:>8}",
            r.id,
            r.label,
            if r.seen { "seen" } else { "unseen" },
            if r.rare { "rare" } else { "nonrare" },
            r.num_gt,
            opt(r.ap)
        );
    }
}

/// Report of a full train-and-evaluate run.
pub fn run_document(
    run: &RunReport,
    tax: &HoiTaxonomy,
    split: &ZeroShotSplit,
    cfg: &RunConfig,
    format: Format,
) -> String {
    let map = &run.outcome.map;
    let rows = category_rows(map, tax, split);
    let first_last = |h: &Vec<Vec<hoigen_core::generator::EpochLog>>| -> Vec<Value> {
        h.iter()
            .map(|m| {
                json!({
                    "epochs": m.len(),
                    "first": m.first().map(|e| e.loss),
                    "last": m.last().map(|e| e.loss),
                })
            })
            .collect()
    };
    let head_last = run.outcome.head_loss.last().copied();
    match format {
        Format::Json => {
            let doc = json!({
                "config": config_value(cfg),
                "split": { "setting": split.setting.as_str(), "unseen": split.unseen_hois },
                "map": aggregates(map),
                "generation_accuracy": run.generation_accuracy,
                "stage1": first_last(&run.training.stage1),
                "stage2": first_last(&run.training.stage2),
                "head_loss": run.outcome.head_loss,
                "detections": run.outcome.detections.len(),
                "per_category": rows,
            });
            serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
        }
        Format::Text => {
            let mut out = String::new();
            out.push_str("[config]\n");
            out.push_str(&cfg.to_toml());
            let _ = writeln!(out, "\n[training]");
            for (name, hist) in [("stage1", &run.training.stage1), ("stage2", &run.training.stage2)] {
                for (i, m) in hist.iter().enumerate() {
                    if let (Some(a), Some(b)) = (m.first(), m.last()) {
                        let _ = writeln!(out, "{name}.model{i} = {} epochs, loss {:.6} -> {:.6}", m.len(), a.loss, b.loss);
                    }
                }
            }
            if let Some(acc) = run.generation_accuracy {
                let _ = writeln!(out, "generation_accuracy = {acc:.4}");
            }
            if let Some(l) = head_last {
                let _ = writeln!(out, "head_loss = {} epochs, final {l:.6}", run.outcome.head_loss.len());
            }
            let _ = writeln!(out, "detections = {}\n", run.outcome.detections.len());
            map_text(&mut out, map, split, &rows);
            out
        }
    }
}

/// Mean mAP per ablation row plus the per-seed values.
pub fn ablation_document(table: &AblationTable, cfg: &RunConfig, format: Format) -> String {
    match format {
        Format::Json => {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|r| {
                    json!({
                        "label": r.label,
                        "full": r.full(),
                        "seen": r.seen(),
                        "unseen": r.unseen(),
                        "runs": r.runs.iter().map(|(s, m)| json!({ "seed": s, "map": aggregates(m) })).collect::<Vec<_>>(),
                    })
                })
                .collect();
            let doc = json!({ "axis": table.axis.as_str(), "config": config_value(cfg), "rows": rows });
            serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
        }
        Format::Text => {
            let mut out = String::new();
            out.push_str("[config]\n");
            out.push_str(&cfg.to_toml());
            let _ = writeln!(out, "\n[ablation]\naxis = {}", table.axis.as_str());
            let seeds: Vec<String> = table
                .rows
                .first()
                .map(|r| r.runs.iter().map(|(s, _)| s.to_string()).collect())
                .unwrap_or_default();
            let _ = writeln!(out, "seeds = {}\n", seeds.join(" "));
            let width = table.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(7);
            let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", "variant", "full", "seen", "unseen");
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>8}  {:>8}  {:>8}",
                    r.label,
                    opt(r.full()),
                    opt(r.seen()),
                    opt(r.unseen())
                );
            }
            out
        }
    }
}
