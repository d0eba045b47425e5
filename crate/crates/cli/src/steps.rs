//! Per-step timing trace for overhead estimation.
//!
//! ```text
//! # step   seconds   [hidden]
//! 2        0.040     hidden
//! 5        1.000
//! host_to_gpu 0.012
//! ```
//!
//! Steps are numbered 1 to 7 or named (`gpu_processing`, ...). A trailing
//! `hidden` marks a step that overlaps with GPU processing.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;
use trainplan_core::scale::PipelineStep;

use crate::units::parse_seconds;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct StepFileError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepTrace {
    pub times: BTreeMap<PipelineStep, f64>,
    pub hidden: BTreeSet<PipelineStep>,
}

pub fn parse_steps(text: &str) -> Result<StepTrace, StepFileError> {
    let mut trace = StepTrace::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| StepFileError { line, message };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(err("expected `<step> <seconds> [hidden]`".into()));
        }
        let step: PipelineStep = fields[0].parse().map_err(err)?;
        let seconds = match parse_seconds(fields[1]) {
            Ok(s) => s,
            Err(_) if fields[1].parse::<f64>() == Ok(0.0) => 0.0,
            Err(e) => return Err(err(e.to_string())),
        };
        if trace.times.insert(step, seconds).is_some() {
            return Err(err(format!("step {step} listed twice")));
        }
        match fields.get(2) {
            None => {}
            Some(&"hidden") => {
                trace.hidden.insert(step);
            }
            Some(other) => return Err(err(format!("expected `hidden`, found {other:?}"))),
        }
    }
    Ok(trace)
}
