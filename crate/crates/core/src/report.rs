//! File exports of an archive: per-metric CSV tables, long-format series for
//! plotting, an ASE width x batch grid, JSON, and SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::analysis::{analyze, fmt_sig, Analysis, AnalysisError, AnalyzeOptions, Metric, Row};
use crate::archive::{write_archive, ArchiveError, ResultsArchive};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown report format `{0}` (expected csv, json or svg)")]
    UnknownFormat(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Metrics exported as x = batch size series.
pub const SERIES_METRICS: [Metric; 5] = [Metric::Throughput, Metric::Speedup, Metric::Rtr, Metric::Ase, Metric::Bsr];

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        w.write_record(header).expect("write to memory");
        for r in rows {
            w.write_record(r).expect("write to memory");
        }
        w.flush().expect("flush to memory");
    }
    String::from_utf8(buf).expect("utf-8 csv")
}

/// One table per metric: `device,compiler,model,batch,value,std,note`.
pub fn metric_csv(analysis: &Analysis, metric: Metric) -> String {
    csv_string(
        &["device", "compiler", "model", "batch", "value", "std", "note"],
        analysis.rows_for(metric).map(|r| {
            vec![
                r.device.clone(),
                r.compiler.clone(),
                r.model.clone(),
                r.batch_label(),
                r.value_label(),
                r.std_label(),
                r.note.clone(),
            ]
        }),
    )
}

fn series_name(r: &Row) -> String {
    format!("{}@{}", r.compiler, r.device)
}

/// Long format: `series,device,compiler,model,x,y` with x the batch size.
pub fn series_csv(analysis: &Analysis, metric: Metric) -> String {
    csv_string(
        &["series", "device", "compiler", "model", "x", "y"],
        analysis.rows_for(metric).filter(|r| r.value.is_some()).map(|r| {
            vec![
                series_name(r),
                r.device.clone(),
                r.compiler.clone(),
                r.model.clone(),
                r.batch_label(),
                r.value_label(),
            ]
        }),
    )
}

/// ASE for every block-stack configuration, laid out as
/// `device,compiler,kind,depth,width,batch,ase`. Computed straight from the
/// records as `T(b) / (b * T(1))`.
pub fn ase_heatmap_csv(archive: &ResultsArchive) -> String {
    let mut unit: BTreeMap<(&str, &str, &str), f64> = BTreeMap::new();
    for r in archive.records.iter().filter(|r| r.batch_size == 1) {
        unit.insert((&r.device_id, &r.compiler_id, &r.model_key), r.throughput_mean);
    }
    let mut cells = Vec::new();
    for r in &archive.records {
        let Some(spec) = archive.plan.model_by_key(&r.model_key).and_then(|m| m.block_spec()) else {
            continue;
        };
        let Some(t1) = unit.get(&(r.device_id.as_str(), r.compiler_id.as_str(), r.model_key.as_str())) else {
            continue;
        };
        let ase = r.throughput_mean / (f64::from(r.batch_size) * t1);
        cells.push((
            (r.device_id.clone(), r.compiler_id.clone(), spec.kind.to_string(), spec.depth, spec.width, r.batch_size),
            ase,
        ));
    }
    cells.sort_by(|a, b| a.0.cmp(&b.0));
    csv_string(
        &["device", "compiler", "kind", "depth", "width", "batch", "ase"],
        cells.into_iter().map(|((d, c, k, depth, width, b), v)| {
            vec![d, c, k, depth.to_string(), width.to_string(), b.to_string(), fmt_sig(v, 4)]
        }),
    )
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Points per series name.
type Series = BTreeMap<String, Vec<(f64, f64)>>;

/// Line chart of one metric for one model, one polyline per series.
pub fn svg_chart(title: &str, y_label: &str, series: &Series) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 170.0, 40.0, 50.0);
    let points = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, 0.0_f64, f64::MIN);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 < x0 {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape_xml(title));
    let (ax0, ax1, ay0, ay1) = (px(x0), px(x1), py(y0), py(y1));
    let _ = writeln!(s, r#"<path d="M{ax0:.1},{ay1:.1} L{ax0:.1},{ay0:.1} L{ax1:.1},{ay0:.1}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * f64::from(i) / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            ax0 - 6.0,
            py(y) + 4.0,
            fmt_sig(y, 4)
        );
    }
    let mut xs: Vec<f64> = series.values().flatten().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(x), ay0 + 18.0, fmt_sig(x, 4));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">batch size</text>"#, (ax0 + ax1) / 2.0, h - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0,
        escape_xml(y_label)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{:.1}" y="{:.1}" width="12" height="3" fill="{color}"/>"#, w - right + 12.0, ly);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, w - right + 30.0, ly + 5.0, escape_xml(name));
    }
    s.push_str("</svg>\n");
    s
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// Files a report would write, as (relative path, contents). Keeps the
/// rendering pure so callers and tests can compare bytes directly.
pub fn render_report(
    archive: &ResultsArchive,
    format: ReportFormat,
    opts: &AnalyzeOptions,
) -> Result<Vec<(PathBuf, String)>, ReportError> {
    let analysis = analyze(archive, opts)?;
    let mut files = Vec::new();
    let series_files = |files: &mut Vec<(PathBuf, String)>| {
        for m in SERIES_METRICS {
            if analysis.rows_for(m).next().is_some() {
                files.push((PathBuf::from("series").join(format!("{m}.csv")), series_csv(&analysis, m)));
            }
        }
        files.push((PathBuf::from("ase_heatmap.csv"), ase_heatmap_csv(archive)));
    };
    match format {
        ReportFormat::Csv => {
            for m in Metric::ALL {
                if analysis.rows_for(m).next().is_some() {
                    files.push((PathBuf::from(format!("{m}.csv")), metric_csv(&analysis, m)));
                }
            }
            series_files(&mut files);
        }
        ReportFormat::Json => {
            files.push((PathBuf::from("analysis.json"), analysis.to_json()));
        }
        ReportFormat::Svg => {
            series_files(&mut files);
            for m in SERIES_METRICS {
                let mut by_model: BTreeMap<&str, Series> = BTreeMap::new();
                for r in analysis.rows_for(m) {
                    if let (Some(v), Some(b)) = (r.value, r.batch) {
                        by_model
                            .entry(&r.model)
                            .or_default()
                            .entry(series_name(r))
                            .or_default()
                            .push((f64::from(b.lo), v));
                    }
                }
                for (model, series) in by_model {
                    let name = format!("{m}__{}.svg", file_stem(model));
                    files.push((PathBuf::from("charts").join(name), svg_chart(&format!("{m}: {model}"), m.name(), &series)));
                }
            }
        }
    }
    Ok(files)
}

/// Writes the report under `out_dir` and returns the paths written. The JSON
/// format also exports the archive itself as `archive.json`.
pub fn write_report(
    archive: &ResultsArchive,
    format: ReportFormat,
    opts: &AnalyzeOptions,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let files = render_report(archive, format, opts)?;
    let mut written = Vec::new();
    for (rel, contents) in files {
        let path = out_dir.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.to_path_buf(), source })?;
        }
        fs::write(&path, contents).map_err(|source| ReportError::Io { path: path.clone(), source })?;
        written.push(path);
    }
    if format == ReportFormat::Json {
        let path = out_dir.join("archive.json");
        write_archive(&path, archive)?;
        written.push(path);
    }
    Ok(written)
}
