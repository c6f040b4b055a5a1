//! Line-delimited, tab-separated detection and ground-truth records.
//!
//! Detection lines are `image hx1 hy1 hx2 hy2 ox1 oy1 ox2 oy2 hoi score`;
//! ground-truth lines are the same without the score. Lines starting with `#`
//! are comments. Floats use the shortest representation that round-trips.

use std::fmt::Write as _;
use std::path::Path;

use hoigen_core::evalmap::{DetectionRecord, GroundTruthRecord};
use hoigen_core::geometry::BBox;

use crate::error::{Error, Result};

fn push_box(out: &mut String, b: &BBox) {
    for v in [b.x1, b.y1, b.x2, b.y2] {
        write!(out, "\t{v:?}").expect("writing to a String");
    }
}

pub fn write_detections(records: &[DetectionRecord], header: &str) -> String {
    let mut out = String::new();
    for line in header.lines() {
        writeln!(out, "# {line}").expect("writing to a String");
    }
    for r in records {
        write!(out, "{}", r.image).expect("writing to a String");
        push_box(&mut out, &r.human);
        push_box(&mut out, &r.object);
        writeln!(out, "\t{}\t{:?}", r.hoi, r.score).expect("writing to a String");
    }
    out
}

pub fn write_ground_truth(records: &[GroundTruthRecord], header: &str) -> String {
    let mut out = String::new();
    for line in header.lines() {
        writeln!(out, "# {line}").expect("writing to a String");
    }
    for r in records {
        write!(out, "{}", r.image).expect("writing to a String");
        push_box(&mut out, &r.human);
        push_box(&mut out, &r.object);
        writeln!(out, "\t{}", r.hoi).expect("writing to a String");
    }
    out
}

struct Fields<'a> {
    path: &'a Path,
    line: usize,
    parts: Vec<&'a str>,
}

impl Fields<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::format(self.path, format!("line {}: {}", self.line, message.into()))
    }

    fn float(&self, i: usize) -> Result<f64> {
        let v: f64 = self.parts[i]
            .parse()
            .map_err(|_| self.err(format!("`{}` is not a number", self.parts[i])))?;
        if !v.is_finite() {
            return Err(self.err("non-finite value"));
        }
        Ok(v)
    }

    fn bbox(&self, at: usize) -> Result<BBox> {
        BBox::new(self.float(at)?, self.float(at + 1)?, self.float(at + 2)?, self.float(at + 3)?)
            .map_err(|e| self.err(e.to_string()))
    }

    fn int<T: std::str::FromStr>(&self, i: usize) -> Result<T> {
        self.parts[i]
            .parse()
            .map_err(|_| self.err(format!("`{}` is not a non-negative integer", self.parts[i])))
    }
}

fn lines<'a>(text: &'a str, path: &'a Path, width: usize) -> impl Iterator<Item = Result<Fields<'a>>> {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        let f = Fields {
            path,
            line: i + 1,
            parts: line.split('\t').collect(),
        };
        if f.parts.len() != width {
            return Some(Err(f.err(format!("expected {width} fields, found {}", f.parts.len()))));
        }
        Some(Ok(f))
    })
}

pub fn parse_detections(text: &str, path: &Path) -> Result<Vec<DetectionRecord>> {
    lines(text, path, 11)
        .map(|f| {
            let f = f?;
            let score = f.float(10)?;
            if !(0.0..=1.0).contains(&score) {
                return Err(f.err(format!("score {score} outside [0, 1]")));
            }
            Ok(DetectionRecord {
                image: f.int(0)?,
                human: f.bbox(1)?,
                object: f.bbox(5)?,
                hoi: f.int(9)?,
                score,
            })
        })
        .collect()
}

pub fn parse_ground_truth(text: &str, path: &Path) -> Result<Vec<GroundTruthRecord>> {
    lines(text, path, 10)
        .map(|f| {
            let f = f?;
            Ok(GroundTruthRecord {
                image: f.int(0)?,
                human: f.bbox(1)?,
                object: f.bbox(5)?,
                hoi: f.int(9)?,
            })
        })
        .collect()
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, path)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(&text, path)
}
