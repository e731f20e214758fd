//! Synthetic block-stack models and the embedded architecture catalog.
//!
//! Block stacks are homogeneous repetitions of either a convolutional block
//! (`Conv -> BatchNorm -> ReLU`, 3x3 kernel) or a multi-head-attention block
//! (`Linear(QKV) -> Reshape -> MatMul -> Softmax -> MatMul -> Add -> LayerNorm -> ReLU`).
//! Parameter counts are closed-form; no weights are ever materialized.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Convolution kernel edge length used by every conv block.
pub const CONV_KERNEL: u32 = 3;
/// Input tensor shape (channels, height, width) for conv block stacks.
pub const CONV_INPUT_SHAPE: [u32; 3] = [3, 244, 244];
/// Sequence length fed to MHA block stacks.
pub const MHA_SEQUENCE_LEN: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Conv,
    Mha,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Conv => "conv",
            BlockKind::Mha => "mha",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conv" => Ok(BlockKind::Conv),
            "mha" => Ok(BlockKind::Mha),
            other => Err(format!("unknown block kind `{other}` (expected conv or mha)")),
        }
    }
}

/// A stack of `depth` identical blocks of the given `width`.
///
/// Width is the channel count for conv blocks and the embedding dimension
/// for MHA blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockStackSpec {
    pub kind: BlockKind,
    pub width: u32,
    pub depth: u32,
}

impl BlockStackSpec {
    pub fn new(kind: BlockKind, width: u32, depth: u32) -> Self {
        Self { kind, width, depth }
    }

    /// Stable result key, e.g. `block:conv:w64:d6`.
    pub fn key(&self) -> String {
        format!("block:{}:w{}:d{}", self.kind, self.width, self.depth)
    }

    /// Parses a key produced by [`BlockStackSpec::key`].
    pub fn parse_key(key: &str) -> Option<Self> {
        let rest = key.strip_prefix("block:")?;
        let mut parts = rest.split(':');
        let kind = parts.next()?.parse().ok()?;
        let width = parts.next()?.strip_prefix('w')?.parse().ok()?;
        let depth = parts.next()?.strip_prefix('d')?.parse().ok()?;
        if parts.next().is_some() {
            return None;
        }
        Some(Self { kind, width, depth })
    }

    /// Default input shape handed to backends when the plan gives none.
    pub fn default_input_shape(&self) -> Vec<u32> {
        match self.kind {
            BlockKind::Conv => CONV_INPUT_SHAPE.to_vec(),
            BlockKind::Mha => vec![MHA_SEQUENCE_LEN, self.width],
        }
    }

    pub fn block_params(&self) -> u64 {
        match self.kind {
            BlockKind::Conv => conv_block_params(u64::from(self.width)),
            BlockKind::Mha => mha_block_params(u64::from(self.width)),
        }
    }
}

/// Parameters of one conv block with `channels` input and output channels:
/// 3x3 convolution with bias (9C^2 + C) plus batch-norm scale and shift (2C).
pub fn conv_block_params(channels: u64) -> u64 {
    let k2 = u64::from(CONV_KERNEL * CONV_KERNEL);
    k2 * channels * channels + channels + 2 * channels
}

/// Parameters of one MHA block with embedding dimension `embed_dim`:
/// packed QKV projection (3d^2 + 3d) plus output projection (d^2 + d).
///
/// The LayerNorm affine parameters (2d) are not counted.
pub fn mha_block_params(embed_dim: u64) -> u64 {
    let d = embed_dim;
    (3 * d * d + 3 * d) + (d * d + d)
}

pub fn stack_params(spec: &BlockStackSpec) -> u64 {
    u64::from(spec.depth) * spec.block_params()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchitectureStyle {
    Convolutional,
    Transformer,
    Hybrid,
}

impl FromStr for ArchitectureStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Convolutional" => Ok(Self::Convolutional),
            "Transformer" => Ok(Self::Transformer),
            "Hybrid" => Ok(Self::Hybrid),
            other => Err(format!("unknown architecture style `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CatalogEntry {
    pub name: String,
    pub family: String,
    pub style: ArchitectureStyle,
    pub parameters: u64,
    pub macs: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown model `{0}` (not in the architecture catalog)")]
pub struct UnknownModel(pub String);

/// Catalog file version shipped with this build.
pub const CATALOG_VERSION: u32 = 1;

const CATALOG_CSV: &str = include_str!("../data/catalog_v1.csv");

#[derive(Deserialize)]
struct CatalogRow {
    name: String,
    family: String,
    style: String,
    parameters: u64,
    macs: u64,
}

/// Parses catalog CSV text (`name,family,style,parameters,macs`).
pub fn parse_catalog(text: &str) -> Result<Vec<CatalogEntry>, String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut entries = Vec::new();
    for (i, row) in reader.deserialize::<CatalogRow>().enumerate() {
        let row = row.map_err(|e| format!("catalog row {}: {e}", i + 1))?;
        entries.push(CatalogEntry {
            style: row.style.parse()?,
            name: row.name,
            family: row.family,
            parameters: row.parameters,
            macs: row.macs,
        });
    }
    Ok(entries)
}

/// The embedded architecture catalog, parsed once on first use.
pub fn catalog() -> &'static [CatalogEntry] {
    static CATALOG: OnceLock<Vec<CatalogEntry>> = OnceLock::new();
    CATALOG.get_or_init(|| parse_catalog(CATALOG_CSV).expect("embedded catalog is well-formed"))
}

pub fn catalog_lookup(name: &str) -> Result<&'static CatalogEntry, UnknownModel> {
    catalog()
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| UnknownModel(name.to_string()))
}
