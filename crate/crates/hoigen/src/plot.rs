//! Diagnostic plots: 2-D PCA scatter of realistic against synthesized features
//! and training loss curves, as SVG.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use plotters::prelude::*;

use crate::error::{Error, Result};

/// Projection onto the top two principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    pub axes: [Vec<f64>; 2],
    pub variance: [f64; 2],
}

impl Pca2 {
    /// Fits on `rows`. Axis signs are fixed so the largest-magnitude loading is
    /// positive.
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if n < 2 || d < 2 {
            return Err(Error::Usage("PCA needs at least two rows of width two".into()));
        }
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v / n as f64);
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
        let cov = (x.transpose() * &x) / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let axis = |k: usize| {
            let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
            let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        };
        Ok(Self {
            mean,
            axes: [axis(0), axis(1)],
            variance: [eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]],
        })
    }

    pub fn project(&self, row: &[f64]) -> (f64, f64) {
        let c = |a: &[f64]| row.iter().zip(&self.mean).zip(a).map(|((x, m), w)| (x - m) * w).sum();
        (c(&self.axes[0]), c(&self.axes[1]))
    }
}

/// One category's points in a scatter plot.
#[derive(Debug, Clone)]
pub struct ScatterGroup {
    pub label: String,
    pub realistic: Vec<Vec<f64>>,
    pub synthesized: Vec<Vec<f64>>,
}

fn with_comment(svg: String, comment: &str) -> String {
    let safe = comment.replace("--", "- -");
    let Some(at) = svg.find("<svg").and_then(|s| svg[s..].find('>').map(|e| s + e + 1)) else {
        return svg;
    };
    format!("{}\n<!--\n{}\n-->{}", &svg[..at], safe.trim_end(), &svg[at..])
}

fn write_svg(path: &Path, svg: String, comment: &str) -> Result<()> {
    std::fs::write(path, with_comment(svg, comment)).map_err(|e| Error::io(path, e))
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::format(path, format!("plotting failed: {e}"))
}

fn bounds(points: impl Iterator<Item = (f64, f64)>) -> (std::ops::Range<f64>, std::ops::Range<f64>) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (-1.0..1.0, -1.0..1.0);
    }
    let pad = |a: f64, b: f64| {
        let p = ((b - a) * 0.05).max(1e-6);
        (a - p)..(b + p)
    };
    (pad(x0, x1), pad(y0, y1))
}

/// Scatter of realistic (faint circles) and synthesized (solid crosses) features
/// per category, projected by a PCA fitted on all plotted rows.
pub fn scatter_svg(path: &Path, title: &str, groups: &[ScatterGroup], comment: &str) -> Result<()> {
    let rows: Vec<&[f64]> = groups
        .iter()
        .flat_map(|g| g.realistic.iter().chain(&g.synthesized).map(Vec::as_slice))
        .collect();
    let pca = Pca2::fit(&rows)?;
    let projected: Vec<(Vec<(f64, f64)>, Vec<(f64, f64)>)> = groups
        .iter()
        .map(|g| {
            (
                g.realistic.iter().map(|r| pca.project(r)).collect(),
                g.synthesized.iter().map(|r| pca.project(r)).collect(),
            )
        })
        .collect();
    let (xr, yr) = bounds(projected.iter().flat_map(|(a, b)| a.iter().chain(b).copied()));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 640)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(32)
            .y_label_area_size(48)
            .build_cartesian_2d(xr, yr)
            .map_err(|e| plot_err(path, e))?;
        chart
            .configure_mesh()
            .x_desc("PC1")
            .y_desc("PC2")
            .draw()
            .map_err(|e| plot_err(path, e))?;
        for (i, (g, (real, synth))) in groups.iter().zip(&projected).enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(real.iter().map(|&p| Circle::new(p, 3, color.mix(0.25).filled())))
                .map_err(|e| plot_err(path, e))?;
            chart
                .draw_series(synth.iter().map(|&p| Cross::new(p, 3, color.stroke_width(1))))
                .map_err(|e| plot_err(path, e))?
                .label(g.label.clone())
                .legend(move |(x, y)| Cross::new((x, y), 4, color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(path, e))?;
        root.present().map_err(|e| plot_err(path, e))?;
    }
    write_svg(path, svg, comment)
}

/// Loss curves, one line per named series, against epoch.
pub fn loss_svg(path: &Path, title: &str, series: &[(String, Vec<f64>)], comment: &str) -> Result<()> {
    let (xr, yr) = bounds(
        series
            .iter()
            .flat_map(|(_, v)| v.iter().enumerate().map(|(i, &y)| ((i + 1) as f64, y))),
    );
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(xr, yr)
            .map_err(|e| plot_err(path, e))?;
        chart
            .configure_mesh()
            .x_desc("epoch")
            .y_desc("loss")
            .draw()
            .map_err(|e| plot_err(path, e))?;
        for (i, (name, values)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(
                    values.iter().enumerate().map(|(k, &y)| ((k + 1) as f64, y)),
                    color.stroke_width(2),
                ))
                .map_err(|e| plot_err(path, e))?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(path, e))?;
        root.present().map_err(|e| plot_err(path, e))?;
    }
    write_svg(path, svg, comment)
}
