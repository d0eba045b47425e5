//! Profiled per-layer convolution algorithm costs.
//!
//! A catalog maps `(conv layer, algorithm, mini-batch size)` to a measured
//! `(seconds, bits)` pair. Layer ids count convolution layers only, starting
//! at 1. A catalog is only constructed through validation, so every value of
//! [`AlgorithmCatalog`] is complete: each layer `1..=q` has at least one
//! algorithm at every declared batch size.
//!
//! Two interchange formats are supported, both with the same five fields:
//!
//! ```text
//! layer_id,algorithm,batch_size,time_seconds,memory_bits
//! 1,gemm,128,0.0412,4497868800
//! ```
//!
//! and a JSON array of objects with those keys.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::Bits;

pub const CSV_HEADER: [&str; 5] = [
    "layer_id",
    "algorithm",
    "batch_size",
    "time_seconds",
    "memory_bits",
];

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlgorithmId(String);

impl AlgorithmId {
    pub fn new(name: impl Into<String>) -> Result<Self, CatalogError> {
        let name = name.into();
        if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c == ',') {
            return Err(CatalogError::InvalidAlgorithm(name));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for AlgorithmId {
    type Err = CatalogError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub time: f64,
    pub memory: Bits,
}

/// One catalog row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub layer_id: u32,
    pub algorithm: AlgorithmId,
    pub batch_size: u64,
    pub time_seconds: f64,
    pub memory_bits: Bits,
}

impl CostEntry {
    pub fn new(
        layer_id: u32,
        algorithm: &str,
        batch_size: u64,
        time_seconds: f64,
        memory_bits: Bits,
    ) -> Result<Self, CatalogError> {
        Ok(Self {
            layer_id,
            algorithm: AlgorithmId::new(algorithm)?,
            batch_size,
            time_seconds,
            memory_bits,
        })
    }

    fn check(&self) -> Result<(), String> {
        if self.layer_id == 0 {
            return Err("layer_id must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if !(self.time_seconds.is_finite() && self.time_seconds > 0.0) {
            return Err(format!(
                "time_seconds must be a positive finite number, found {}",
                self.time_seconds
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatalogFormat {
    Csv,
    Json,
}

impl CatalogFormat {
    /// `.json` files are JSON, everything else is CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => CatalogFormat::Json,
            _ => CatalogFormat::Csv,
        }
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    /// `line` is the file line for CSV and the 1-based array position for JSON.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate entry for layer {layer_id}, algorithm {algorithm}, batch {batch_size} (lines {first_line} and {second_line})")]
    DuplicateKey {
        layer_id: u32,
        algorithm: AlgorithmId,
        batch_size: u64,
        first_line: usize,
        second_line: usize,
    },
    #[error("incomplete catalog: {}", describe_gaps(.gaps))]
    Incomplete { gaps: Vec<Gap> },
    #[error("invalid algorithm name {0:?}")]
    InvalidAlgorithm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A `(layer, batch size)` pair with no algorithm at all.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Gap {
    pub layer_id: u32,
    pub batch_size: u64,
}

fn describe_gaps(gaps: &[Gap]) -> String {
    if gaps.is_empty() {
        return "catalog has no entries".into();
    }
    let shown: Vec<_> = gaps
        .iter()
        .take(8)
        .map(|g| format!("(layer {}, batch {})", g.layer_id, g.batch_size))
        .collect();
    let more = gaps.len().saturating_sub(shown.len());
    if more > 0 {
        format!("no algorithm for {} and {more} more", shown.join(", "))
    } else {
        format!("no algorithm for {}", shown.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    layer_id: u32,
    batch_size: u64,
    algorithm: AlgorithmId,
}

/// Validated, immutable cost catalog.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmCatalog {
    entries: BTreeMap<Key, Cost>,
    batch_sizes: Vec<u64>,
    layer_count: u32,
}

impl AlgorithmCatalog {
    /// Validate rows in the given order. Row `i` is reported as line `i + 1`.
    pub fn from_entries(entries: Vec<CostEntry>) -> Result<Self, CatalogError> {
        let located = entries.into_iter().enumerate().map(|(i, e)| (i + 1, e)).collect();
        Self::from_located(located)
    }

    fn from_located(rows: Vec<(usize, CostEntry)>) -> Result<Self, CatalogError> {
        let mut entries = BTreeMap::new();
        let mut lines = BTreeMap::new();
        for (line, entry) in rows {
            entry
                .check()
                .map_err(|message| CatalogError::Parse { line, message })?;
            let key = Key {
                layer_id: entry.layer_id,
                batch_size: entry.batch_size,
                algorithm: entry.algorithm,
            };
            if let Some(&first_line) = lines.get(&key) {
                return Err(CatalogError::DuplicateKey {
                    layer_id: key.layer_id,
                    algorithm: key.algorithm,
                    batch_size: key.batch_size,
                    first_line,
                    second_line: line,
                });
            }
            lines.insert(key.clone(), line);
            entries.insert(
                key,
                Cost {
                    time: entry.time_seconds,
                    memory: entry.memory_bits,
                },
            );
        }

        let batch_sizes: Vec<u64> = entries
            .keys()
            .map(|k| k.batch_size)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let layer_count = entries.keys().map(|k| k.layer_id).max().unwrap_or(0);
        if entries.is_empty() {
            return Err(CatalogError::Incomplete { gaps: Vec::new() });
        }
        let covered: BTreeSet<(u32, u64)> =
            entries.keys().map(|k| (k.layer_id, k.batch_size)).collect();
        let gaps: Vec<Gap> = (1..=layer_count)
            .flat_map(|layer_id| {
                batch_sizes.iter().map(move |&batch_size| Gap {
                    layer_id,
                    batch_size,
                })
            })
            .filter(|g| !covered.contains(&(g.layer_id, g.batch_size)))
            .collect();
        if !gaps.is_empty() {
            return Err(CatalogError::Incomplete { gaps });
        }

        Ok(Self {
            entries,
            batch_sizes,
            layer_count,
        })
    }

    pub fn load<R: Read>(source: R, format: CatalogFormat) -> Result<Self, CatalogError> {
        match format {
            CatalogFormat::Csv => Self::from_csv(source),
            CatalogFormat::Json => Self::from_json(source),
        }
    }

    pub fn from_csv<R: Read>(source: R) -> Result<Self, CatalogError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let header = reader.headers().map_err(|e| csv_error(1, e))?.clone();
        let names: Vec<&str> = header.iter().collect();
        if names != CSV_HEADER {
            return Err(CatalogError::Parse {
                line: 1,
                message: format!(
                    "expected header `{}`, found `{}`",
                    CSV_HEADER.join(","),
                    names.join(",")
                ),
            });
        }

        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                csv_error(line, e)
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let field = |i: usize| record.get(i).unwrap_or_default();
            let parse_err = |name: &str, value: &str| CatalogError::Parse {
                line,
                message: format!("invalid {name} {value:?}"),
            };
            let entry = CostEntry {
                layer_id: field(0).parse().map_err(|_| parse_err("layer_id", field(0)))?,
                algorithm: AlgorithmId::new(field(1)).map_err(|_| parse_err("algorithm", field(1)))?,
                batch_size: field(2).parse().map_err(|_| parse_err("batch_size", field(2)))?,
                time_seconds: field(3)
                    .parse()
                    .map_err(|_| parse_err("time_seconds", field(3)))?,
                memory_bits: field(4).parse().map_err(|_| parse_err("memory_bits", field(4)))?,
            };
            rows.push((line, entry));
        }
        Self::from_located(rows)
    }

    pub fn from_json<R: Read>(source: R) -> Result<Self, CatalogError> {
        let raw: Vec<serde_json::Value> =
            serde_json::from_reader(source).map_err(|e| CatalogError::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
        let mut rows = Vec::with_capacity(raw.len());
        for (i, value) in raw.into_iter().enumerate() {
            let entry: CostEntry =
                serde_json::from_value(value).map_err(|e| CatalogError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            AlgorithmId::new(entry.algorithm.as_str()).map_err(|_| CatalogError::Parse {
                line: i + 1,
                message: format!("invalid algorithm {:?}", entry.algorithm.as_str()),
            })?;
            rows.push((i + 1, entry));
        }
        Self::from_located(rows)
    }

    /// Rows in canonical order: layer, then batch size, then algorithm name.
    pub fn entries(&self) -> impl Iterator<Item = CostEntry> + '_ {
        self.entries.iter().map(|(k, c)| CostEntry {
            layer_id: k.layer_id,
            algorithm: k.algorithm.clone(),
            batch_size: k.batch_size,
            time_seconds: c.time,
            memory_bits: c.memory,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of convolution layers covered (`q`).
    pub fn layer_count(&self) -> u32 {
        self.layer_count
    }

    /// Distinct algorithm names (`p` is their count).
    pub fn algorithms(&self) -> BTreeSet<AlgorithmId> {
        self.entries.keys().map(|k| k.algorithm.clone()).collect()
    }

    /// Sorted, de-duplicated batch sizes present in the catalog.
    pub fn batch_sizes(&self) -> &[u64] {
        &self.batch_sizes
    }

    pub fn has_batch_size(&self, batch_size: u64) -> bool {
        self.batch_sizes.binary_search(&batch_size).is_ok()
    }

    /// Exact-key lookup; `None` means the algorithm is unavailable there.
    pub fn query(&self, layer_id: u32, algorithm: &AlgorithmId, batch_size: u64) -> Option<Cost> {
        self.entries
            .get(&Key {
                layer_id,
                batch_size,
                algorithm: algorithm.clone(),
            })
            .copied()
    }

    /// All algorithms available for one layer at one batch size, by name.
    pub fn options(&self, layer_id: u32, batch_size: u64) -> Vec<(AlgorithmId, Cost)> {
        let lo = Key {
            layer_id,
            batch_size,
            algorithm: AlgorithmId(String::new()),
        };
        self.entries
            .range(lo..)
            .take_while(|(k, _)| k.layer_id == layer_id && k.batch_size == batch_size)
            .map(|(k, c)| (k.algorithm.clone(), *c))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), CatalogError> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(CSV_HEADER).map_err(|e| csv_error(0, e))?;
        for e in self.entries() {
            writer
                .write_record([
                    e.layer_id.to_string(),
                    e.algorithm.to_string(),
                    e.batch_size.to_string(),
                    e.time_seconds.to_string(),
                    e.memory_bits.to_string(),
                ])
                .map_err(|e| csv_error(0, e))?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut sink: W) -> Result<(), CatalogError> {
        let rows: Vec<CostEntry> = self.entries().collect();
        serde_json::to_writer_pretty(&mut sink, &rows).map_err(|e| CatalogError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        sink.write_all(b"\n")?;
        Ok(())
    }
}

fn csv_error(line: usize, e: csv::Error) -> CatalogError {
    CatalogError::Parse {
        line,
        message: e.to_string(),
    }
}
