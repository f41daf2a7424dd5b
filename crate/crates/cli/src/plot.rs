//! Act-F1 and KL learning curves as SVG or text.

use std::fmt::Write;

use anyhow::{bail, Result};

use semidial::train::MetricsRecord;

pub struct Curves {
    pub f1: Vec<(f64, f64)>,
    /// `log10` of the KL term.
    pub log_kl: Vec<(f64, f64)>,
    pub f1_label: &'static str,
    pub kl_label: &'static str,
}

/// Held-out series where they exist, training-interval series otherwise.
pub fn curves(records: &[MetricsRecord]) -> Result<Curves> {
    if records.is_empty() {
        bail!("metrics file has no records");
    }
    let held = records.iter().any(|r| r.heldout_da_f1.is_some());
    let series = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        records.iter().filter_map(|r| f(r).map(|v| (r.step as f64, v))).collect()
    };
    let log = |v: f64| v.max(1e-12).log10();
    Ok(if held {
        Curves {
            f1: series(&|r| r.heldout_da_f1),
            log_kl: series(&|r| r.heldout_kl.map(log)),
            f1_label: "held-out act F1",
            kl_label: "log10 held-out KL",
        }
    } else {
        Curves {
            f1: series(&|r| r.train_da_f1),
            log_kl: series(&|r| r.l_kl.map(log)),
            f1_label: "train act F1",
            kl_label: "log10 train KL",
        }
    })
}

fn bounds(points: &[(f64, f64)], fixed: Option<(f64, f64)>) -> (f64, f64, f64, f64) {
    let x0 = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x1 = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = fixed.unwrap_or_else(|| {
        let lo = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor();
        let hi = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil();
        (lo, if hi > lo { hi } else { lo + 1.0 })
    });
    (x0, if x1 > x0 { x1 } else { x0 + 1.0 }, y0, y1)
}

fn svg_panel(out: &mut String, top: f64, label: &str, points: &[(f64, f64)], fixed: Option<(f64, f64)>, colour: &str) {
    let (left, width, height) = (60.0, 520.0, 180.0);
    let _ = writeln!(
        out,
        r#"<rect x="{left}" y="{top}" width="{width}" height="{height}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(out, r#"<text x="{left}" y="{}" font-size="13">{label}</text>"#, top - 6.0);
    if points.is_empty() {
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="12">no data</text>"#, left + 10.0, top + 20.0);
        return;
    }
    let (x0, x1, y0, y1) = bounds(points, fixed);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * width;
    let py = |y: f64| top + height - (y - y0) / (y1 - y0) * height;
    for (v, anchor) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{v:.2}</text>"#,
            left - 4.0,
            anchor + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{left}" y="{}" font-size="11">{x0}</text><text x="{}" y="{}" font-size="11" text-anchor="end">step {x1}</text>"#,
        top + height + 14.0,
        left + width,
        top + height + 14.0
    );
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
        path.join(" ")
    );
}

pub fn render_svg(c: &Curves) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="620" height="500" font-family="sans-serif">"#
    );
    svg_panel(&mut out, 30.0, c.f1_label, &c.f1, Some((0.0, 1.0)), "#1f77b4");
    svg_panel(&mut out, 280.0, c.kl_label, &c.log_kl, None, "#d62728");
    out.push_str("</svg>\n");
    out
}

fn ascii_panel(out: &mut String, label: &str, points: &[(f64, f64)], fixed: Option<(f64, f64)>) {
    const W: usize = 60;
    const H: usize = 12;
    let _ = writeln!(out, "{label}");
    if points.is_empty() {
        let _ = writeln!(out, "  (no data)");
        return;
    }
    let (x0, x1, y0, y1) = bounds(points, fixed);
    let mut grid = vec![vec![' '; W]; H];
    for &(x, y) in points {
        let col = (((x - x0) / (x1 - x0)) * (W - 1) as f64).round() as usize;
        let row = (((y - y0) / (y1 - y0)).clamp(0.0, 1.0) * (H - 1) as f64).round() as usize;
        grid[H - 1 - row][col.min(W - 1)] = '*';
    }
    for (i, row) in grid.iter().enumerate() {
        let tick = match i {
            0 => format!("{y1:>7.2}"),
            _ if i == H - 1 => format!("{y0:>7.2}"),
            _ => " ".repeat(7),
        };
        let _ = writeln!(out, "{tick} |{}", row.iter().collect::<String>());
    }
    let _ = writeln!(out, "        +{}", "-".repeat(W));
    let _ = writeln!(out, "         {:<w$}{:>8}", x0, x1, w = W - 8);
}

pub fn render_ascii(c: &Curves) -> String {
    let mut out = String::new();
    ascii_panel(&mut out, c.f1_label, &c.f1, Some((0.0, 1.0)));
    out.push('\n');
    ascii_panel(&mut out, c.kl_label, &c.log_kl, None);
    out
}
