//! Metric tables computed from a results archive.
//!
//! Per-record rows cover throughput, CPU and compile time; ratio rows cover
//! speedup, RTR, ASE, BSR and the depth fit. With `group_by` set, the
//! throughput, CPU and compile rows are pooled per group instead, and the
//! non-grouped coordinate columns read `*`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::ResultsArchive;
use crate::metrics::{self, BatchBucket, DepthPoint, MetricsError, Pooling, ScalingSeries, ThroughputPoint};
use crate::model::ResultRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Throughput,
    Cpu,
    Compile,
    Speedup,
    Rtr,
    Ase,
    Bsr,
    Slope,
    Retention,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::Throughput,
        Metric::Cpu,
        Metric::Compile,
        Metric::Speedup,
        Metric::Rtr,
        Metric::Ase,
        Metric::Bsr,
        Metric::Slope,
        Metric::Retention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Throughput => "throughput",
            Metric::Cpu => "cpu",
            Metric::Compile => "compile",
            Metric::Speedup => "speedup",
            Metric::Rtr => "rtr",
            Metric::Ase => "ase",
            Metric::Bsr => "bsr",
            Metric::Slope => "slope",
            Metric::Retention => "retention",
        }
    }

    /// Throughput, CPU and compile time print with two decimals, ratios with
    /// four significant digits.
    pub fn format(self, v: f64) -> String {
        match self {
            Metric::Throughput | Metric::Cpu | Metric::Compile => format!("{v:.2}"),
            _ => fmt_sig(v, 4),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {kind} `{value}`")]
pub struct ParseError {
    kind: &'static str,
    value: String,
}

impl FromStr for Metric {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ParseError { kind: "metric", value: s.to_string() })
    }
}

/// `%g`-style formatting with `digits` significant digits.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Device,
    Compiler,
    Family,
    Bucket,
}

impl FromStr for GroupKey {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "device" => Ok(GroupKey::Device),
            "compiler" => Ok(GroupKey::Compiler),
            "family" => Ok(GroupKey::Family),
            "bucket" => Ok(GroupKey::Bucket),
            _ => Err(ParseError { kind: "grouping key", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    /// Empty selects every metric the archive supports; metrics that cannot
    /// be computed for some group are then skipped instead of failing.
    pub metrics: Vec<Metric>,
    pub group_by: Vec<GroupKey>,
    /// Buckets for `GroupKey::Bucket`; empty means one bucket per batch size.
    pub buckets: Vec<BatchBucket>,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub metric: Metric,
    pub device: String,
    pub compiler: String,
    /// Model key, architecture family (grouped rows), or `kind:wWIDTH` for
    /// depth fits.
    pub model: String,
    /// Batch size or bucket; `None` spans all batch sizes.
    pub batch: Option<BatchBucket>,
    pub value: Option<f64>,
    pub std: Option<f64>,
    pub note: String,
}

impl Row {
    pub fn batch_label(&self) -> String {
        match self.batch {
            None => "*".into(),
            Some(b) if b.lo == b.hi => b.lo.to_string(),
            Some(b) => b.label(),
        }
    }

    pub fn value_label(&self) -> String {
        self.value.map(|v| self.metric.format(v)).unwrap_or_default()
    }

    pub fn std_label(&self) -> String {
        self.std.map(|v| self.metric.format(v)).unwrap_or_default()
    }

    fn sort_key(&self) -> (Metric, &str, &str, &str, Option<BatchBucket>) {
        (self.metric, &self.device, &self.compiler, &self.model, self.batch)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("no identity baseline for {0}")]
    MissingBaseline(String),
    #[error("no batch size 1 measurement for {0}")]
    MissingUnitBatch(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub rows: Vec<Row>,
}

fn single(b: u32) -> Option<BatchBucket> {
    Some(BatchBucket::new(b, b))
}

fn sub_unity(v: f64) -> String {
    if metrics::is_sub_unity(v) {
        "sub-unity".into()
    } else {
        String::new()
    }
}

/// Identity throughput by (device, model, batch).
type Baseline<'a> = BTreeMap<(&'a str, &'a str, u32), &'a ResultRecord>;

struct Ctx<'a> {
    archive: &'a ResultsArchive,
    strict: bool,
    identity: Baseline<'a>,
    rows: Vec<Row>,
}

impl<'a> Ctx<'a> {
    /// In strict mode missing inputs are errors; otherwise the item is skipped.
    fn missing(&self, err: AnalysisError) -> Result<(), AnalysisError> {
        if self.strict {
            Err(err)
        } else {
            Ok(())
        }
    }

    fn family(&self, model_key: &str) -> String {
        self.archive.plan.model_by_key(model_key).map_or_else(|| model_key.to_string(), |m| m.family())
    }

    fn compiled(&self) -> impl Iterator<Item = &'a ResultRecord> {
        self.archive.records.iter().filter(|r| !r.is_identity)
    }

    fn baseline_for(&self, r: &ResultRecord) -> Option<&'a ResultRecord> {
        self.identity.get(&(r.device_id.as_str(), r.model_key.as_str(), r.batch_size)).copied()
    }

    fn per_record(&mut self, metric: Metric) {
        for r in &self.archive.records {
            let (value, std, note) = match metric {
                Metric::Throughput => (Some(r.throughput_mean), Some(r.throughput_std), String::new()),
                Metric::Cpu => match r.cpu_mean {
                    Some(m) => (Some(m), r.cpu_std, String::new()),
                    None => (None, None, "no samples in window".into()),
                },
                _ => (Some(r.compile_time_s), None, String::new()),
            };
            self.rows.push(Row {
                metric,
                device: r.device_id.clone(),
                compiler: r.compiler_id.clone(),
                model: r.model_key.clone(),
                batch: single(r.batch_size),
                value,
                std,
                note,
            });
        }
    }

    fn grouped(&mut self, metric: Metric, opts: &AnalyzeOptions) -> Result<(), AnalysisError> {
        let by = |k| opts.group_by.contains(&k);
        let buckets: Vec<BatchBucket> = if !by(GroupKey::Bucket) {
            let lo = self.archive.records.iter().map(|r| r.batch_size).min().unwrap_or(1);
            let hi = self.archive.records.iter().map(|r| r.batch_size).max().unwrap_or(1);
            vec![BatchBucket::new(lo, hi)]
        } else if opts.buckets.is_empty() {
            let mut sizes: Vec<u32> = self.archive.records.iter().map(|r| r.batch_size).collect();
            sizes.sort_unstable();
            sizes.dedup();
            sizes.into_iter().map(|b| BatchBucket::new(b, b)).collect()
        } else {
            opts.buckets.clone()
        };
        let mut groups: BTreeMap<(String, String, String), Vec<&ResultRecord>> = BTreeMap::new();
        for r in &self.archive.records {
            let key = (
                if by(GroupKey::Device) { r.device_id.clone() } else { "*".into() },
                if by(GroupKey::Compiler) { r.compiler_id.clone() } else { "*".into() },
                if by(GroupKey::Family) { self.family(&r.model_key) } else { "*".into() },
            );
            groups.entry(key).or_default().push(r);
        }
        for ((device, compiler, model), members) in groups {
            let stats = metrics::bucket_aggregate(&members, &buckets, opts.pooling)?;
            for (bucket, s) in stats {
                let Some(s) = s else { continue };
                let batch = by(GroupKey::Bucket).then_some(bucket);
                let (value, std, note) = match metric {
                    Metric::Throughput => (Some(s.throughput.mean), Some(s.throughput.std), String::new()),
                    Metric::Cpu => match s.cpu {
                        Some(c) => (Some(c.mean), Some(c.std), String::new()),
                        None => (None, None, "no samples in window".into()),
                    },
                    _ => {
                        let times: Vec<f64> = members
                            .iter()
                            .filter(|r| bucket.contains(r.batch_size))
                            .map(|r| r.compile_time_s)
                            .collect();
                        let c = metrics::aggregate(&times)?;
                        (Some(c.mean), Some(c.std), String::new())
                    }
                };
                self.rows.push(Row {
                    metric,
                    device: device.clone(),
                    compiler: compiler.clone(),
                    model: model.clone(),
                    batch,
                    value,
                    std,
                    note: format!("{}{}records={}", note, if note.is_empty() { "" } else { "; " }, s.records),
                });
            }
        }
        Ok(())
    }

    fn speedups(&mut self) -> Result<(), AnalysisError> {
        if self.compiled().next().is_none() || self.identity.is_empty() {
            return self.missing(AnalysisError::MissingBaseline("speedup: archive lacks a compiled/identity pair".into()));
        }
        for r in &self.archive.records {
            let Some(base) = self.baseline_for(r) else {
                self.missing(AnalysisError::MissingBaseline(format!(
                    "{} {} batch {}",
                    r.device_id, r.model_key, r.batch_size
                )))?;
                continue;
            };
            let v = metrics::speedup(r.throughput_mean, base.throughput_mean)?;
            self.rows.push(Row {
                metric: Metric::Speedup,
                device: r.device_id.clone(),
                compiler: r.compiler_id.clone(),
                model: r.model_key.clone(),
                batch: single(r.batch_size),
                value: Some(v),
                std: None,
                note: sub_unity(v),
            });
        }
        Ok(())
    }

    /// Scaling series keyed by (device, compiler, model).
    fn series(&self) -> BTreeMap<(&'a str, &'a str, &'a str), Vec<ThroughputPoint>> {
        let mut out: BTreeMap<_, Vec<ThroughputPoint>> = BTreeMap::new();
        for r in &self.archive.records {
            out.entry((r.device_id.as_str(), r.compiler_id.as_str(), r.model_key.as_str()))
                .or_default()
                .push(ThroughputPoint { batch_size: r.batch_size, throughput: r.throughput_mean });
        }
        out
    }

    fn scaling(&mut self, metric: Metric) -> Result<(), AnalysisError> {
        let all = self.series();
        let mut built: BTreeMap<(&str, &str, &str), ScalingSeries> = BTreeMap::new();
        for (key, points) in &all {
            match ScalingSeries::new(key.1, points.clone()) {
                Ok(s) => {
                    built.insert(*key, s);
                }
                Err(MetricsError::MissingBatchSize { .. }) => {
                    self.missing(AnalysisError::MissingUnitBatch(format!("{} {} {}", key.0, key.1, key.2)))?
                }
                Err(e) => return Err(e.into()),
            }
        }
        if metric == Metric::Bsr && (self.compiled().next().is_none() || self.identity.is_empty()) {
            return self.missing(AnalysisError::MissingBaseline("bsr: archive lacks a compiled/identity pair".into()));
        }
        let identity_id = self.archive.plan.identity_compiler().map(str::to_string);
        for (&(device, compiler, model), series) in &built {
            let baseline = match (metric, &identity_id) {
                (Metric::Bsr, Some(id)) => match built.get(&(device, id.as_str(), model)) {
                    Some(b) => Some(b),
                    None => {
                        self.missing(AnalysisError::MissingBaseline(format!("{device} {model}")))?;
                        continue;
                    }
                },
                (Metric::Bsr, None) => {
                    self.missing(AnalysisError::MissingBaseline(format!("{device} {model}")))?;
                    continue;
                }
                _ => None,
            };
            for p in series.points() {
                let b = p.batch_size;
                let v = match metric {
                    Metric::Rtr => metrics::rtr(series, b)?,
                    Metric::Ase => metrics::ase(series, b)?,
                    _ => {
                        let base = baseline.expect("bsr baseline");
                        match metrics::bsr(series, base, b) {
                            Ok(v) => v,
                            Err(MetricsError::MissingBatchSize { .. }) => {
                                self.missing(AnalysisError::MissingBaseline(format!(
                                    "{device} {model} batch {b}"
                                )))?;
                                continue;
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                };
                let note = if metric == Metric::Bsr { sub_unity(v) } else { String::new() };
                self.rows.push(Row {
                    metric,
                    device: device.to_string(),
                    compiler: compiler.to_string(),
                    model: model.to_string(),
                    batch: single(b),
                    value: Some(v),
                    std: None,
                    note,
                });
            }
        }
        Ok(())
    }

    fn depth(&mut self, want_slope: bool, want_retention: bool) -> Result<(), AnalysisError> {
        // (device, compiler, kind:width, batch) -> depth points
        let mut groups: BTreeMap<(String, String, String, u32), Vec<DepthPoint>> = BTreeMap::new();
        for r in self.compiled() {
            let Some(spec) = self.archive.plan.model_by_key(&r.model_key).and_then(|m| m.block_spec().cloned())
            else {
                continue;
            };
            let Some(base) = self.baseline_for(r) else {
                self.missing(AnalysisError::MissingBaseline(format!(
                    "{} {} batch {}",
                    r.device_id, r.model_key, r.batch_size
                )))?;
                continue;
            };
            let speedup = metrics::speedup(r.throughput_mean, base.throughput_mean)?;
            groups
                .entry((
                    r.device_id.clone(),
                    r.compiler_id.clone(),
                    format!("{}:w{}", spec.kind, spec.width),
                    r.batch_size,
                ))
                .or_default()
                .push(DepthPoint { depth: spec.depth, speedup });
        }
        for ((device, compiler, model, batch), points) in groups {
            let fit = match metrics::depth_scaling_fit(&points) {
                Ok(f) => f,
                Err(MetricsError::InsufficientPoints(_) | MetricsError::DegenerateX | MetricsError::MissingUnitDepth) => {
                    continue
                }
                Err(e) => return Err(e.into()),
            };
            let mut push = |metric, v: f64, note: String| {
                self.rows.push(Row {
                    metric,
                    device: device.clone(),
                    compiler: compiler.clone(),
                    model: model.clone(),
                    batch: single(batch),
                    value: Some(v),
                    std: None,
                    note,
                });
            };
            if want_slope {
                push(Metric::Slope, fit.slope, if fit.slope < 0.0 { "negative".into() } else { String::new() });
            }
            if want_retention {
                push(Metric::Retention, fit.retention, sub_unity(fit.retention));
            }
        }
        Ok(())
    }
}

pub fn analyze(archive: &ResultsArchive, opts: &AnalyzeOptions) -> Result<Analysis, AnalysisError> {
    let strict = !opts.metrics.is_empty();
    let mut selected: Vec<Metric> = if strict { opts.metrics.clone() } else { Metric::ALL.to_vec() };
    selected.sort();
    selected.dedup();

    let identity = archive
        .records
        .iter()
        .filter(|r| r.is_identity)
        .map(|r| ((r.device_id.as_str(), r.model_key.as_str(), r.batch_size), r))
        .collect();
    let mut ctx = Ctx { archive, strict, identity, rows: Vec::new() };

    for &metric in &selected {
        match metric {
            Metric::Throughput | Metric::Cpu | Metric::Compile => {
                if opts.group_by.is_empty() {
                    ctx.per_record(metric);
                } else {
                    ctx.grouped(metric, opts)?;
                }
            }
            Metric::Speedup => ctx.speedups()?,
            Metric::Rtr | Metric::Ase | Metric::Bsr => ctx.scaling(metric)?,
            Metric::Slope => ctx.depth(true, false)?,
            Metric::Retention => ctx.depth(false, true)?,
        }
    }
    let mut rows = ctx.rows;
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(Analysis { rows })
}

pub const CSV_HEADER: [&str; 8] = ["metric", "device", "compiler", "model", "batch", "value", "std", "note"];

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf)
}

impl Row {
    fn fields(&self) -> [String; 8] {
        [
            self.metric.name().to_string(),
            self.device.clone(),
            self.compiler.clone(),
            self.model.clone(),
            self.batch_label(),
            self.value_label(),
            self.std_label(),
            self.note.clone(),
        ]
    }
}

impl Analysis {
    pub fn rows_for(&self, metric: Metric) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(move |r| r.metric == metric)
    }

    /// RFC 4180 CSV with LF line endings.
    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        {
            let mut w = csv_writer(&mut buf);
            w.write_record(CSV_HEADER).expect("write to memory");
            for r in &self.rows {
                w.write_record(r.fields()).expect("write to memory");
            }
            w.flush().expect("flush to memory");
        }
        String::from_utf8(buf).expect("utf-8 csv")
    }

    /// Aligned plain-text table; `value ± std` in one column.
    pub fn to_table(&self) -> String {
        let header = ["metric", "device", "compiler", "model", "batch", "value", "note"];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                let value = match (r.value, r.std) {
                    (Some(_), Some(_)) => format!("{} ± {}", r.value_label(), r.std_label()),
                    _ => r.value_label(),
                };
                [
                    r.metric.name().to_string(),
                    r.device.clone(),
                    r.compiler.clone(),
                    r.model.clone(),
                    r.batch_label(),
                    value,
                    r.note.clone(),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(&header.map(String::from));
        for row in &body {
            line(row);
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("analysis serializes");
        s.push('\n');
        s
    }
}
