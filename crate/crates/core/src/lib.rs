//! Capacity planning for data-parallel CNN training.
//!
//! The crate chains five pieces:
//!
//! - [`network`]: a linear conv/pool + fully-connected description and its
//!   shape propagation;
//! - [`memory`]: exact bit accounting of feature maps, parameters and the
//!   classifier, leaving a workspace budget;
//! - [`catalog`]: profiled `(time, memory)` per layer, algorithm and batch
//!   size;
//! - [`select`]: exact per-layer algorithm assignment under the budget;
//! - [`batch`]: the batch-size sweep and its advisories;
//!
//! plus [`scale`] for multi-GPU efficiency and parameter-server sizing.

pub mod batch;
pub mod catalog;
pub mod memory;
pub mod network;
pub mod scale;
pub mod select;

pub use batch::{
    advise_refinement, default_candidates, plan_batch_size, Advisory, AdvisoryKind,
    BatchCandidateResult, BatchPlan, Outcome, PlanError,
};
pub use catalog::{AlgorithmCatalog, AlgorithmId, CatalogError, CatalogFormat, Cost, CostEntry, Gap};
pub use memory::{
    classifier_memory, feature_map_memory, memory_bound, model_param_memory, Bits,
    MemoryBreakdown, MemoryError, SignedBits,
};
pub use network::{
    propagate_shapes, validate_network, ClassifierLayerSpec, FeatureLayerSpec, LayerKind,
    NetworkSpec, ShapeError, TensorShape, Violation,
};
pub use scale::{
    efficiency, estimate_overhead_ratio, max_overhead_ratio, min_parameter_servers,
    recommend_gpus, ClusterSpec, GpuRecommendation, OverheadProfile, PipelineStep, ScaleError,
    ScalingEstimate,
};
pub use select::{brute_force_selection, solve_selection, Choice, Instance, SelectError, Selection};
