//! Mini-batch size sweep.
//!
//! Each candidate batch size is evaluated independently: charge the memory
//! model, hand the remaining budget to the algorithm selector, and turn the
//! per-batch time into an epoch estimate. The candidate with the smallest
//! epoch time is recommended, ties going to the larger batch.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::AlgorithmCatalog;
use crate::memory::{memory_bound_with_shapes, Bits, MemoryBreakdown, MemoryError};
use crate::network::{propagate_shapes, NetworkSpec, ShapeError};
use crate::select::{Instance, SelectError, Selection};

/// Used when the caller gives no candidates; intersected with the catalog.
pub const DEFAULT_CANDIDATES: [u64; 5] = [32, 64, 128, 256, 512];

pub const CLASSIFIER_CAVEAT: &str = "classifier memory is a coarse estimate: \
its bias term is (m - 1) * 3 * 32 bits regardless of layer widths and its output term does not \
scale with the mini-batch size";

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no candidate batch sizes to evaluate")]
    NoCandidates,
    #[error("batch size {0} is not declared in the catalog")]
    CandidateNotInCatalog(u64),
    #[error("network has {network} convolution layers but the catalog covers {catalog}")]
    LayerCountMismatch { network: usize, catalog: u32 },
    #[error("dataset size must be at least 1")]
    EmptyDataset,
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Select(SelectError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum Outcome {
    Feasible {
        selection: Selection,
        epoch_time: f64,
        throughput: f64,
    },
    Infeasible {
        min_memory: Bits,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchCandidateResult {
    pub batch_size: u64,
    pub breakdown: MemoryBreakdown,
    pub outcome: Outcome,
}

impl BatchCandidateResult {
    pub fn selection(&self) -> Option<&Selection> {
        match &self.outcome {
            Outcome::Feasible { selection, .. } => Some(selection),
            Outcome::Infeasible { .. } => None,
        }
    }

    pub fn epoch_time(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Feasible { epoch_time, .. } => Some(epoch_time),
            Outcome::Infeasible { .. } => None,
        }
    }

    pub fn throughput(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Feasible { throughput, .. } => Some(throughput),
            Outcome::Infeasible { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvisoryKind {
    ReduceBatch,
    AdjustModel,
    Caveat,
}

impl fmt::Display for AdvisoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdvisoryKind::ReduceBatch => "reduce_batch",
            AdvisoryKind::AdjustModel => "adjust_model",
            AdvisoryKind::Caveat => "caveat",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Advisory {
    pub kind: AdvisoryKind,
    pub message: String,
    /// Convolution layer ids (catalog numbering).
    pub affected_layers: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub candidates: Vec<BatchCandidateResult>,
    pub recommended: Option<u64>,
    pub advisories: Vec<Advisory>,
}

impl BatchPlan {
    pub fn recommended_result(&self) -> Option<&BatchCandidateResult> {
        let b = self.recommended?;
        self.candidates.iter().find(|c| c.batch_size == b)
    }
}

/// `{32, 64, 128, 256, 512}` restricted to the catalog's batch sizes.
pub fn default_candidates(catalog: &AlgorithmCatalog) -> Vec<u64> {
    DEFAULT_CANDIDATES
        .into_iter()
        .filter(|&b| catalog.has_batch_size(b))
        .collect()
}

/// Evaluate one candidate.
pub fn evaluate_candidate(
    network: &NetworkSpec,
    catalog: &AlgorithmCatalog,
    gpu_memory: Bits,
    dataset_size: u64,
    batch_size: u64,
) -> Result<BatchCandidateResult, PlanError> {
    let shapes = propagate_shapes(network)?;
    evaluate(network, &shapes, catalog, gpu_memory, dataset_size, batch_size)
}

fn evaluate(
    network: &NetworkSpec,
    shapes: &[crate::network::TensorShape],
    catalog: &AlgorithmCatalog,
    gpu_memory: Bits,
    dataset_size: u64,
    batch_size: u64,
) -> Result<BatchCandidateResult, PlanError> {
    let breakdown = memory_bound_with_shapes(gpu_memory, network, shapes, batch_size)?;
    let instance = Instance::from_catalog(catalog, batch_size).map_err(PlanError::Select)?;
    let outcome = match instance.solve(breakdown.bound) {
        Ok(selection) => {
            let batches = dataset_size.div_ceil(batch_size);
            Outcome::Feasible {
                epoch_time: batches as f64 * selection.total_time,
                throughput: batch_size as f64 / selection.total_time,
                selection,
            }
        }
        Err(SelectError::Infeasible { min_memory, .. }) => Outcome::Infeasible { min_memory },
        Err(e) => return Err(PlanError::Select(e)),
    };
    Ok(BatchCandidateResult {
        batch_size,
        breakdown,
        outcome,
    })
}

/// Index of the recommended candidate: minimal epoch time, larger batch on
/// exact ties.
fn pick(candidates: &[BatchCandidateResult]) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.epoch_time().map(|t| (i, t, c.batch_size)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|(i, _, _)| i)
}

pub fn plan_batch_size(
    network: &NetworkSpec,
    catalog: &AlgorithmCatalog,
    gpu_memory: Bits,
    dataset_size: u64,
    candidates: &[u64],
) -> Result<BatchPlan, PlanError> {
    if candidates.is_empty() {
        return Err(PlanError::NoCandidates);
    }
    if dataset_size == 0 {
        return Err(PlanError::EmptyDataset);
    }
    if let Some(&b) = candidates.iter().find(|&&b| !catalog.has_batch_size(b)) {
        return Err(PlanError::CandidateNotInCatalog(b));
    }
    if network.conv_layer_count() != catalog.layer_count() as usize {
        return Err(PlanError::LayerCountMismatch {
            network: network.conv_layer_count(),
            catalog: catalog.layer_count(),
        });
    }
    let shapes = propagate_shapes(network)?;

    let results = candidates
        .par_iter()
        .map(|&b| evaluate(network, &shapes, catalog, gpu_memory, dataset_size, b))
        .collect::<Result<Vec<_>, _>>()?;

    let recommended = pick(&results).map(|i| results[i].batch_size);
    let mut plan = BatchPlan {
        candidates: results,
        recommended,
        advisories: Vec::new(),
    };
    plan.advisories = advise_refinement(&plan, network, catalog);
    Ok(plan)
}

/// Suggestions for trading batch size or model shape for speed, plus the
/// standing classifier-memory caveat.
pub fn advise_refinement(
    plan: &BatchPlan,
    network: &NetworkSpec,
    catalog: &AlgorithmCatalog,
) -> Vec<Advisory> {
    let mut out = Vec::new();

    match plan.recommended_result() {
        None => {
            let smallest = plan.candidates.iter().map(|c| c.batch_size).min();
            out.push(Advisory {
                kind: AdvisoryKind::ReduceBatch,
                message: match smallest {
                    Some(b) => format!(
                        "no candidate batch size fits in GPU memory (smallest tried: {b}); \
                         try smaller batch sizes or a larger GPU"
                    ),
                    None => "no candidate batch size was evaluated".into(),
                },
                affected_layers: Vec::new(),
            });
        }
        Some(rec) => {
            let rec_tp = rec.throughput().unwrap_or(0.0);
            let better_smaller = plan
                .candidates
                .iter()
                .filter(|c| c.batch_size < rec.batch_size)
                .filter_map(|c| c.throughput().map(|t| (c.batch_size, t)))
                .filter(|&(_, t)| t > rec_tp)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((b, t)) = better_smaller {
                out.push(Advisory {
                    kind: AdvisoryKind::ReduceBatch,
                    message: format!(
                        "batch size {b} reaches {t:.2} samples/s against {rec_tp:.2} at the \
                         recommended {}; reducing the batch frees memory for faster algorithms",
                        rec.batch_size
                    ),
                    affected_layers: Vec::new(),
                });
            }
            if let Some(adv) = memory_bound_layers(rec, network, catalog) {
                out.push(adv);
            }
        }
    }

    out.push(Advisory {
        kind: AdvisoryKind::Caveat,
        message: CLASSIFIER_CAVEAT.into(),
        affected_layers: Vec::new(),
    });
    out
}

/// Layers whose fastest algorithm would not fit even when swapped in alone.
fn memory_bound_layers(
    rec: &BatchCandidateResult,
    network: &NetworkSpec,
    catalog: &AlgorithmCatalog,
) -> Option<Advisory> {
    let selection = rec.selection()?;
    let bound = rec.breakdown.bound;
    let positions = network.conv_layer_positions();
    let mut layers = Vec::new();
    let mut details = Vec::new();
    for (&layer, chosen) in &selection.assignment {
        let chosen_cost = catalog.query(layer, chosen, rec.batch_size)?;
        let fastest = catalog
            .options(layer, rec.batch_size)
            .into_iter()
            .min_by(|a, b| {
                a.1.time
                    .total_cmp(&b.1.time)
                    .then(a.1.memory.cmp(&b.1.memory))
                    .then_with(|| a.0.cmp(&b.0))
            })?;
        if fastest.1.time >= chosen_cost.time {
            continue;
        }
        let swapped = selection.total_memory - chosen_cost.memory + fastest.1.memory;
        if bound < 0 || swapped > bound as Bits {
            layers.push(layer);
            let position = positions
                .get(layer as usize - 1)
                .map(|p| format!(" (feature layer {p})"))
                .unwrap_or_default();
            details.push(format!(
                "conv {layer}{position}: {} would be {:.2}x faster than {} but needs {} more bits",
                fastest.0,
                chosen_cost.time / fastest.1.time,
                chosen,
                fastest.1.memory.saturating_sub(chosen_cost.memory),
            ));
        }
    }
    if layers.is_empty() {
        return None;
    }
    Some(Advisory {
        kind: AdvisoryKind::AdjustModel,
        message: format!(
            "memory keeps faster algorithms out at batch size {}; consider a larger stride or \
             leaner filters to free memory. {}",
            rec.batch_size,
            details.join("; ")
        ),
        affected_layers: layers,
    })
}
