//! Normalized histograms of objective values: a CSV of bin edges and
//! densities plus a standalone SVG bar chart. Densities integrate to one.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub densities: Vec<f64>,
}

/// Bin the values into `bins` equal-width bins over [min, max]; constant
/// inputs collapse to a single unit-width bin centered on the value.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Validation("histogram needs at least one value".into()));
    }
    if bins == 0 {
        return Err(Error::Validation("histogram needs at least one bin".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len() as f64;
    if max == min {
        return Ok(Histogram {
            edges: vec![min - 0.5, min + 0.5],
            counts: vec![values.len()],
            densities: vec![1.0],
        });
    }
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let densities = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    let edges = (0..=bins).map(|i| min + i as f64 * width).collect();
    Ok(Histogram {
        edges,
        counts,
        densities,
    })
}

fn csv_bytes(h: &Histogram) -> Vec<u8> {
    let mut out = String::from("bin_left,bin_right,count,density\n");
    for i in 0..h.counts.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            h.edges[i],
            h.edges[i + 1],
            h.counts[i],
            h.densities[i]
        );
    }
    out.into_bytes()
}

fn svg_bytes(h: &Histogram, title: &str) -> Vec<u8> {
    let (w, ht) = (640.0, 400.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 40.0, 50.0);
    let plot_w = w - ml - mr;
    let plot_h = ht - mt - mb;
    let dmax = h.densities.iter().copied().fold(0.0f64, f64::max).max(1e-30);
    let xmin = h.edges[0];
    let xmax = *h.edges.last().unwrap();
    let span = (xmax - xmin).max(1e-30);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{ht}" viewBox="0 0 {w} {ht}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{ht}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        title
    );
    for i in 0..h.counts.len() {
        let x0 = ml + (h.edges[i] - xmin) / span * plot_w;
        let x1 = ml + (h.edges[i + 1] - xmin) / span * plot_w;
        let bh = h.densities[i] / dmax * plot_h;
        let _ = writeln!(
            s,
            r##"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#4878a8" stroke="white" stroke-width="0.5"/>"##,
            x0,
            mt + plot_h - bh,
            (x1 - x0).max(0.0),
            bh
        );
    }
    // Axes and extremal tick labels.
    let _ = writeln!(
        s,
        r#"<line x1="{ml}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        mt + plot_h,
        w - mr,
        mt + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{:.1}" stroke="black"/>"#,
        mt + plot_h
    );
    let _ = writeln!(
        s,
        r#"<text x="{ml}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.6}</text>"#,
        mt + plot_h + 18.0,
        xmin
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.6}</text>"#,
        w - mr,
        mt + plot_h + 18.0,
        xmax
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.4}</text>"#,
        ml - 6.0,
        mt + 10.0,
        dmax
    );
    let _ = writeln!(s, "</svg>");
    s.into_bytes()
}

/// Write `<base>.csv` and `<base>.svg` for the values.
pub fn emit_histogram(values: &[f64], bins: usize, base: &Path) -> Result<Histogram> {
    let h = histogram(values, bins)?;
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let title = base
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "histogram".into());
    std::fs::write(base.with_extension("csv"), csv_bytes(&h))?;
    std::fs::write(base.with_extension("svg"), svg_bytes(&h, &title))?;
    Ok(h)
}
