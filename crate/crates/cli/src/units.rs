//! Unit-suffixed quantities accepted on the command line.
//!
//! Sizes are bytes with decimal (`KB`, `MB`, `GB`, `TB`) or binary (`KiB`,
//! `MiB`, `GiB`, `TiB`) multipliers. Bandwidths are either bits per second
//! (`bps`, `Kbps`, `Mbps`, `Gbps`, `Tbps`, also spelled `Gbit/s`) or bytes per
//! second (`B/s`, `KB/s`, `MB/s`, `GB/s`). Suffixes are case-sensitive so that
//! `Gb` and `GB` cannot be confused.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitError {
    #[error("missing number in {0:?}")]
    MissingNumber(String),
    #[error("unknown unit suffix {suffix:?} in {input:?} (expected one of: {expected})")]
    UnknownSuffix {
        input: String,
        suffix: String,
        expected: String,
    },
    #[error("{0:?} must be a positive finite quantity")]
    NotPositive(String),
}

const SIZE_UNITS: &[(&str, f64)] = &[
    ("B", 1.0),
    ("KB", 1e3),
    ("MB", 1e6),
    ("GB", 1e9),
    ("TB", 1e12),
    ("KiB", 1024.0),
    ("MiB", 1048576.0),
    ("GiB", 1073741824.0),
    ("TiB", 1099511627776.0),
];

const BANDWIDTH_UNITS: &[(&str, f64)] = &[
    ("bps", 1.0 / 8.0),
    ("Kbps", 1e3 / 8.0),
    ("Mbps", 1e6 / 8.0),
    ("Gbps", 1e9 / 8.0),
    ("Tbps", 1e12 / 8.0),
    ("bit/s", 1.0 / 8.0),
    ("Kbit/s", 1e3 / 8.0),
    ("Mbit/s", 1e6 / 8.0),
    ("Gbit/s", 1e9 / 8.0),
    ("B/s", 1.0),
    ("KB/s", 1e3),
    ("MB/s", 1e6),
    ("GB/s", 1e9),
];

const TIME_UNITS: &[(&str, f64)] = &[("", 1.0), ("s", 1.0), ("ms", 1e-3), ("us", 1e-6)];

fn split(input: &str) -> Result<(f64, &str), UnitError> {
    let s = input.trim();
    let end = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '+'))
        .unwrap_or(s.len());
    let (number, suffix) = s.split_at(end);
    let value: f64 = number
        .parse()
        .map_err(|_| UnitError::MissingNumber(input.to_string()))?;
    Ok((value, suffix.trim()))
}

fn parse_with(input: &str, table: &[(&str, f64)]) -> Result<f64, UnitError> {
    let (value, suffix) = split(input)?;
    let scale = table
        .iter()
        .find(|(name, _)| *name == suffix)
        .map(|&(_, s)| s)
        .ok_or_else(|| UnitError::UnknownSuffix {
            input: input.to_string(),
            suffix: suffix.to_string(),
            expected: table
                .iter()
                .map(|(n, _)| if n.is_empty() { "<none>" } else { n })
                .collect::<Vec<_>>()
                .join(", "),
        })?;
    let out = value * scale;
    if !(out.is_finite() && out > 0.0) {
        return Err(UnitError::NotPositive(input.to_string()));
    }
    Ok(out)
}

/// Size in bytes, e.g. `180MB`, `12GiB`.
pub fn parse_size(input: &str) -> Result<f64, UnitError> {
    parse_with(input, SIZE_UNITS)
}

/// Bandwidth in bytes per second, e.g. `10Gbps`, `1.25GB/s`.
pub fn parse_bandwidth(input: &str) -> Result<f64, UnitError> {
    parse_with(input, BANDWIDTH_UNITS)
}

/// Duration in seconds; a bare number means seconds.
pub fn parse_seconds(input: &str) -> Result<f64, UnitError> {
    parse_with(input, TIME_UNITS)
}

/// GPU memory in bits, from a size such as `12GiB`.
pub fn parse_memory_bits(input: &str) -> Result<u128, UnitError> {
    let bytes = parse_size(input)?;
    Ok((bytes * 8.0).round() as u128)
}
