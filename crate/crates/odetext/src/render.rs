//! Plain-text tables, CSV files and the SVG quiver plot.

use std::fmt::Write as _;
use std::io::Write;

use odetext_core::eval::EvalResult;
use odetext_core::interpret::{SaliencyReport, VectorFieldGrid};

pub const FIELD_HEADER: &str = "# odetext vector field v1";
pub const TRAJECTORY_HEADER: &str = "# odetext trajectories v1";

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Benchmark rows as an aligned text table.
pub fn benchmark_table(rows: &[EvalResult]) -> String {
    let header = ["model", "interpretable", "accuracy", "f1", "auroc", "balanced_accuracy"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                if r.interpretable { "yes" } else { "no" }.to_string(),
                metric(Some(r.accuracy)),
                metric(Some(r.f1)),
                metric(r.auroc),
                metric(Some(r.balanced_accuracy)),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: &[&str]| {
        let parts: Vec<String> = cols
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        writeln!(out, "{}", parts.join("  ").trim_end()).expect("writing to a String");
    };
    line(&header);
    for row in &cells {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

pub fn benchmark_csv<W: Write>(rows: &[EvalResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "interpretable", "accuracy", "f1", "auroc", "balanced_accuracy"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.interpretable.to_string(),
            r.accuracy.to_string(),
            r.f1.to_string(),
            r.auroc.map_or_else(String::new, |a| a.to_string()),
            r.balanced_accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `token  score` table for the top `k` entries.
pub fn saliency_table(report: &SaliencyReport, k: usize) -> String {
    let top = report.top_k(k);
    let width = top.iter().map(|(t, _)| t.len()).max().unwrap_or(0).max("token".len());
    let mut out = format!(
        "class {} ({} documents, score: {})\n{:<width$}  score\n",
        report.class_name, report.n_documents, report.score, "token"
    );
    for (token, score) in top {
        writeln!(out, "{token:<width$}  {score:.6}").expect("writing to a String");
    }
    out
}

pub fn saliency_csv<W: Write>(reports: &[SaliencyReport], k: usize, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "rank", "token", "score"])?;
    for report in reports {
        for (rank, (token, score)) in report.top_k(k).iter().enumerate() {
            w.write_record([
                report.class_name.clone(),
                (rank + 1).to_string(),
                token.clone(),
                score.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn field_csv<W: Write>(grid: &VectorFieldGrid, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{FIELD_HEADER}")?;
    writeln!(out, "x,y,dx,dy")?;
    for [x, y, dx, dy] in &grid.rows {
        writeln!(out, "{x},{y},{dx},{dy}")?;
    }
    Ok(())
}

pub fn trajectories_csv<W: Write>(paths: &[Vec<[f64; 3]>], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    writeln!(out, "doc,t,x,y")?;
    for (i, path) in paths.iter().enumerate() {
        for [t, x, y] in path {
            writeln!(out, "{i},{t},{x},{y}")?;
        }
    }
    Ok(())
}

const SVG_SIZE: f64 = 600.0;
const SVG_MARGIN: f64 = 30.0;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Self-contained SVG: one arrow per grid point, arrow length scaled so the
/// longest spans 0.9 grid cells, plus optional trajectories as polylines.
pub fn quiver_svg(grid: &VectorFieldGrid, paths: &[Vec<[f64; 3]>]) -> String {
    let xs = grid.rows.iter().map(|r| r[0]);
    let ys = grid.rows.iter().map(|r| r[1]);
    let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (ymin, ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let inner = SVG_SIZE - 2.0 * SVG_MARGIN;
    let sx = |x: f64| SVG_MARGIN + (x - xmin) / (xmax - xmin) * inner;
    // SVG y grows downwards
    let sy = |y: f64| SVG_MARGIN + (ymax - y) / (ymax - ymin) * inner;

    let cell = inner / (grid.n.max(2) - 1) as f64;
    let longest = grid.rows.iter().map(|r| r[2].hypot(r[3])).fold(0.0, f64::max);
    let scale = if longest > 0.0 { 0.9 * cell / longest } else { 0.0 };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    );
    let _ = writeln!(
        svg,
        r##"<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="#444"/></marker></defs>"##
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<rect x="{SVG_MARGIN}" y="{SVG_MARGIN}" width="{inner}" height="{inner}" fill="none" stroke="#bbb"/>"##
    );
    let _ = writeln!(svg, r##"<g stroke="#444" stroke-width="1">"##);
    for [x, y, dx, dy] in &grid.rows {
        let (x0, y0) = (sx(*x), sy(*y));
        let (x1, y1) = (x0 + dx * scale, y0 - dy * scale);
        if (x1 - x0).hypot(y1 - y0) < 1e-9 {
            let _ = writeln!(svg, r##"<circle cx="{x0:.2}" cy="{y0:.2}" r="1" fill="#444"/>"##);
        } else {
            let _ = writeln!(
                svg,
                r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" marker-end="url(#head)"/>"#
            );
        }
    }
    let _ = writeln!(svg, "</g>");
    for (i, path) in paths.iter().enumerate() {
        let points: Vec<String> = path
            .iter()
            .map(|[_, x, y]| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5" opacity="0.8"/>"#,
            points.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{SVG_MARGIN}" y="{:.0}" font-family="sans-serif" font-size="11">x [{xmin}, {xmax}]  y [{ymin}, {ymax}]</text>"#,
        SVG_SIZE - 8.0
    );
    svg.push_str("</svg>\n");
    svg
}
