//! Report emission: JSON report, per-curve CSV and SVG plots, and a plain
//! text table with the reference baselines alongside measured AP.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::eval::{ApMode, ApResult, EvalReport, IouKind};
use crate::io::{write_atomic, IoError};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("failed to write report: {0}")]
    WriteFailure(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(format!("unknown report format {other:?} (expected json, csv or svg)")),
        }
    }
}

fn kind_tag(k: IouKind) -> &'static str {
    match k {
        IouKind::ThreeD => "3d",
        IouKind::Bev => "bev",
    }
}

fn curve_stem(r: &ApResult) -> String {
    let class: String = r.class_name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
    format!("pr_{}_{}_{}", class, r.difficulty.name().to_lowercase(), kind_tag(r.iou_kind))
}

pub fn report_json(report: &EvalReport) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(report).expect("report serializes");
    v.push(b'\n');
    v
}

pub fn curve_csv(r: &ApResult) -> String {
    let mut out = String::from("recall,precision,score\n");
    for p in &r.curve.points {
        let _ = writeln!(out, "{},{},{}", p.recall, p.precision, p.score);
    }
    out
}

pub fn curve_svg(r: &ApResult) -> String {
    const W: f64 = 400.0;
    const H: f64 = 300.0;
    const M: f64 = 40.0;
    let sx = |x: f64| M + x * (W - 2.0 * M);
    let sy = |y: f64| H - M - y * (H - 2.0 * M);
    let mut path = String::new();
    for (i, p) in r.curve.points.iter().enumerate() {
        let _ = write!(path, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(p.recall), sy(p.precision));
    }
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{:.2},{:.2} L{:.2},{:.2} L{:.2},{:.2}" stroke="black" fill="none"/>"#,
        sx(0.0),
        sy(1.0),
        sx(0.0),
        sy(0.0),
        sx(1.0),
        sy(0.0)
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">recall</text>"#, W / 2.0, H - 8.0);
    let _ = writeln!(out, r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">precision</text>"#, H / 2.0, H / 2.0);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" font-size="13" text-anchor="middle">{} {} {} AP11={:.4} AP40={:.4}</text>"#,
        W / 2.0,
        r.class_name,
        r.difficulty.name(),
        kind_tag(r.iou_kind),
        r.ap_eleven_point,
        r.ap_forty_point
    );
    if !path.is_empty() {
        let _ = writeln!(out, r#"<path d="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#, path.trim_end());
    }
    out.push_str("</svg>\n");
    out
}

/// Text table of measured AP next to the reference rows.
pub fn summary_table(report: &EvalReport) -> String {
    let mode = report.config.mode;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "IoU threshold {} | interpolation {}",
        report.config.iou_threshold,
        match mode {
            ApMode::ElevenPoint => "11-point",
            ApMode::FortyPoint => "40-point",
        }
    );
    let _ = writeln!(out, "{:<40} {:>8} {:>8} {:>8}", "row", "Easy", "Moderate", "Hard");
    let mut rows: Vec<(String, [Option<f64>; 3])> = Vec::new();
    let mut seen: Vec<(String, IouKind)> = Vec::new();
    for r in &report.results {
        if !seen.contains(&(r.class_name.clone(), r.iou_kind)) {
            seen.push((r.class_name.clone(), r.iou_kind));
        }
    }
    for (class, kind) in seen {
        let mut vals = [None; 3];
        for r in report.results.iter().filter(|r| r.class_name == class && r.iou_kind == kind) {
            vals[r.difficulty as usize] = Some(r.ap(mode));
        }
        rows.push((format!("measured {class} ({})", kind_tag(kind)), vals));
    }
    let mut names: Vec<&str> = Vec::new();
    for b in &report.baselines {
        if !names.contains(&b.name.as_str()) {
            names.push(&b.name);
        }
    }
    for name in names {
        let mut vals = [None; 3];
        for b in report.baselines.iter().filter(|b| b.name == name) {
            vals[b.difficulty as usize] = Some(b.ap);
        }
        rows.push((format!("[paper] {name}"), vals));
    }
    for (name, vals) in rows {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{:<40} {:>8} {:>8} {:>8}", name, cell(vals[0]), cell(vals[1]), cell(vals[2]));
    }
    for c in report.comparisons.iter().filter(|c| c.label.is_some()) {
        let _ = writeln!(out, "{} {} ({}): {:.4} [{}]", c.class_name, c.difficulty.name(), kind_tag(c.iou_kind), c.measured_ap, c.label.as_deref().unwrap_or_default());
    }
    out
}

/// Writes the requested formats under `dir` and returns the files written.
pub fn emit_report(report: &EvalReport, formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        let p = dir.join("report.json");
        write_atomic(&p, &report_json(report))?;
        written.push(p);
    }
    for r in &report.results {
        if formats.contains(&ReportFormat::Csv) {
            let p = dir.join(format!("{}.csv", curve_stem(r)));
            write_atomic(&p, curve_csv(r).as_bytes())?;
            written.push(p);
        }
        if formats.contains(&ReportFormat::Svg) {
            let p = dir.join(format!("{}.svg", curve_stem(r)));
            write_atomic(&p, curve_svg(r).as_bytes())?;
            written.push(p);
        }
    }
    Ok(written)
}
