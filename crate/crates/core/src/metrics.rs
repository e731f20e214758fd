//! Throughput statistics and batch/depth scaling metrics.
//!
//! For a compiler `c` with throughput `T_c(b)` at batch size `b`:
//!
//! * RTR_c(b) = T_c(b) / T_c(1)
//! * ASE_c(b) = T_c(b) / (b * T_c(1))
//! * BSR_c(b) = ASE_c(b) / ASE_identity(b)
//!
//! Depth scaling fits the speedup over the identity baseline against the
//! number of stacked blocks: the slope is the ordinary least-squares slope,
//! retention is speedup(deepest) / speedup(depth 1).
//!
//! Values below one (RTR, BSR) are findings, never errors; see [`is_sub_unity`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ResultRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no samples to aggregate")]
    EmptyInput,
    #[error("throughput must be positive and finite, got {0}")]
    NonPositiveThroughput(f64),
    #[error("series `{series}` has no measurement at batch size {batch_size}")]
    MissingBatchSize { series: String, batch_size: u32 },
    #[error("invalid scaling series `{series}`: {reason}")]
    InvalidSeries { series: String, reason: String },
    #[error("depth fit needs at least two points, got {0}")]
    InsufficientPoints(usize),
    #[error("depth fit needs a measurement at depth 1")]
    MissingUnitDepth,
    #[error("all depths are equal; slope is undefined")]
    DegenerateX,
    #[error("depth {0} appears more than once")]
    DuplicateDepth(u32),
    #[error("invalid depth point (depth {depth}, speedup {speedup})")]
    InvalidDepthPoint { depth: u32, speedup: f64 },
    #[error("batch buckets {0} and {1} overlap")]
    OverlappingBuckets(String, String),
    #[error("batch bucket {0} is empty (lo > hi)")]
    InvalidBucket(String),
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Arithmetic mean and sample (n - 1) standard deviation; std is 0 for a
/// single sample.
pub fn aggregate(samples: &[f64]) -> Result<Summary, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    // Welford
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let n = samples.len();
    let std = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
    Ok(Summary { mean, std, n })
}

fn check_throughput(t: f64) -> Result<f64, MetricsError> {
    if t.is_finite() && t > 0.0 {
        Ok(t)
    } else {
        Err(MetricsError::NonPositiveThroughput(t))
    }
}

pub fn speedup(t_compiled: f64, t_identity: f64) -> Result<f64, MetricsError> {
    Ok(check_throughput(t_compiled)? / check_throughput(t_identity)?)
}

pub fn is_sub_unity(value: f64) -> bool {
    value < 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPoint {
    pub batch_size: u32,
    pub throughput: f64,
}

/// Throughput of one compiler across batch sizes; strictly increasing
/// batch sizes, always containing batch size 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSeries {
    compiler_id: String,
    points: Vec<ThroughputPoint>,
}

impl ScalingSeries {
    pub fn new(
        compiler_id: impl Into<String>,
        mut points: Vec<ThroughputPoint>,
    ) -> Result<Self, MetricsError> {
        let compiler_id = compiler_id.into();
        let invalid = |reason: String| MetricsError::InvalidSeries { series: compiler_id.clone(), reason };
        points.sort_by_key(|p| p.batch_size);
        for p in &points {
            if p.batch_size == 0 {
                return Err(invalid("batch size 0".into()));
            }
            check_throughput(p.throughput)?;
        }
        if let Some(w) = points.windows(2).find(|w| w[0].batch_size == w[1].batch_size) {
            return Err(invalid(format!("batch size {} repeated", w[0].batch_size)));
        }
        if points.first().map(|p| p.batch_size) != Some(1) {
            return Err(MetricsError::MissingBatchSize { series: compiler_id, batch_size: 1 });
        }
        Ok(Self { compiler_id, points })
    }

    /// Convenience constructor from `(batch, throughput)` pairs.
    pub fn from_pairs(
        compiler_id: impl Into<String>,
        pairs: &[(u32, f64)],
    ) -> Result<Self, MetricsError> {
        let points = pairs
            .iter()
            .map(|&(batch_size, throughput)| ThroughputPoint { batch_size, throughput })
            .collect();
        Self::new(compiler_id, points)
    }

    pub fn compiler_id(&self) -> &str {
        &self.compiler_id
    }

    pub fn points(&self) -> &[ThroughputPoint] {
        &self.points
    }

    pub fn throughput_at(&self, batch_size: u32) -> Result<f64, MetricsError> {
        self.points
            .binary_search_by_key(&batch_size, |p| p.batch_size)
            .map(|i| self.points[i].throughput)
            .map_err(|_| MetricsError::MissingBatchSize {
                series: self.compiler_id.clone(),
                batch_size,
            })
    }

    /// The same series with every throughput multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            compiler_id: self.compiler_id.clone(),
            points: self
                .points
                .iter()
                .map(|p| ThroughputPoint { batch_size: p.batch_size, throughput: p.throughput * k })
                .collect(),
        }
    }
}

/// Relative throughput rate `T(b) / T(1)`.
pub fn rtr(series: &ScalingSeries, batch_size: u32) -> Result<f64, MetricsError> {
    let tb = series.throughput_at(batch_size)?;
    let t1 = series.throughput_at(1)?;
    Ok(tb / t1)
}

/// Absolute scaling efficiency `T(b) / (b * T(1))`.
pub fn ase(series: &ScalingSeries, batch_size: u32) -> Result<f64, MetricsError> {
    Ok(rtr(series, batch_size)? / f64::from(batch_size))
}

/// Batch scaling resilience `ASE_c(b) / ASE_identity(b)`.
pub fn bsr(
    series: &ScalingSeries,
    identity: &ScalingSeries,
    batch_size: u32,
) -> Result<f64, MetricsError> {
    Ok(ase(series, batch_size)? / ase(identity, batch_size)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub depth: u32,
    /// Compiled throughput over identity throughput at the same coordinates.
    pub speedup: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScalingFit {
    /// Speedup change per additional block.
    pub slope: f64,
    pub retention: f64,
}

pub fn depth_scaling_fit(points: &[DepthPoint]) -> Result<DepthScalingFit, MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::InsufficientPoints(points.len()));
    }
    for p in points {
        if p.depth == 0 || !(p.speedup.is_finite() && p.speedup > 0.0) {
            return Err(MetricsError::InvalidDepthPoint { depth: p.depth, speedup: p.speedup });
        }
    }
    if points.iter().all(|p| p.depth == points[0].depth) {
        return Err(MetricsError::DegenerateX);
    }
    let mut depths: Vec<u32> = points.iter().map(|p| p.depth).collect();
    depths.sort_unstable();
    if let Some(w) = depths.windows(2).find(|w| w[0] == w[1]) {
        return Err(MetricsError::DuplicateDepth(w[0]));
    }
    let unit = points.iter().find(|p| p.depth == 1).ok_or(MetricsError::MissingUnitDepth)?;
    let deepest = points.iter().max_by_key(|p| p.depth).expect("nonempty");

    let n = points.len() as f64;
    let x_mean = points.iter().map(|p| f64::from(p.depth)).sum::<f64>() / n;
    let y_mean = points.iter().map(|p| p.speedup).sum::<f64>() / n;
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), p| {
        let dx = f64::from(p.depth) - x_mean;
        (sxy + dx * (p.speedup - y_mean), sxx + dx * dx)
    });

    Ok(DepthScalingFit { slope: sxy / sxx, retention: deepest.speedup / unit.speedup })
}

/// Inclusive batch-size range, e.g. `2-4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BatchBucket {
    pub lo: u32,
    pub hi: u32,
}

impl BatchBucket {
    pub fn new(lo: u32, hi: u32) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, batch_size: u32) -> bool {
        (self.lo..=self.hi).contains(&batch_size)
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.lo, self.hi)
    }

    /// Parses `lo-hi` or a single batch size.
    pub fn parse(s: &str) -> Option<Self> {
        let (lo, hi) = match s.split_once('-') {
            Some((lo, hi)) => (lo.trim().parse().ok()?, hi.trim().parse().ok()?),
            None => {
                let b = s.trim().parse().ok()?;
                (b, b)
            }
        };
        (lo <= hi).then_some(Self { lo, hi })
    }
}

/// How records are pooled inside a bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Pool the per-repetition samples of every record; records without
    /// raw samples contribute their mean once.
    #[default]
    FlattenSamples,
    /// Each record's mean counts once.
    RecordMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub throughput: Summary,
    pub cpu: Option<Summary>,
    pub records: usize,
}

/// Per-bucket statistics; `None` marks an empty bucket.
pub fn bucket_aggregate(
    records: &[&ResultRecord],
    buckets: &[BatchBucket],
    pooling: Pooling,
) -> Result<Vec<(BatchBucket, Option<BucketStats>)>, MetricsError> {
    for b in buckets {
        if b.lo > b.hi {
            return Err(MetricsError::InvalidBucket(b.label()));
        }
    }
    for (i, a) in buckets.iter().enumerate() {
        for b in &buckets[i + 1..] {
            if a.lo <= b.hi && b.lo <= a.hi {
                return Err(MetricsError::OverlappingBuckets(a.label(), b.label()));
            }
        }
    }
    let mut out = Vec::with_capacity(buckets.len());
    for bucket in buckets {
        let members: Vec<&ResultRecord> =
            records.iter().copied().filter(|r| bucket.contains(r.batch_size)).collect();
        if members.is_empty() {
            out.push((*bucket, None));
            continue;
        }
        let mut throughput = Vec::new();
        let mut cpu = Vec::new();
        for r in &members {
            match pooling {
                Pooling::FlattenSamples => {
                    if r.throughput_samples.is_empty() {
                        throughput.push(r.throughput_mean);
                    } else {
                        throughput.extend_from_slice(&r.throughput_samples);
                    }
                    if r.cpu_samples.is_empty() {
                        cpu.extend(r.cpu_mean);
                    } else {
                        cpu.extend_from_slice(&r.cpu_samples);
                    }
                }
                Pooling::RecordMeans => {
                    throughput.push(r.throughput_mean);
                    cpu.extend(r.cpu_mean);
                }
            }
        }
        out.push((
            *bucket,
            Some(BucketStats {
                throughput: aggregate(&throughput)?,
                cpu: aggregate(&cpu).ok(),
                records: members.len(),
            }),
        ));
    }
    Ok(out)
}
