//! Multi-GPU speedup estimates and parameter-server sizing.
//!
//! With an overhead ratio `r = T_O / T_C` (non-overlapped overhead over GPU
//! compute per batch), `G` GPUs reach efficiency
//!
//! ```text
//! alpha = (1 + r) / (1 + G r)        speedup = alpha G < 1 + 1/r
//! ```
//!
//! which is Amdahl's law with parallel fraction `T_C / (T_C + T_O)`. Solving
//! for `r` gives the largest overhead that still meets a target efficiency.
//!
//! Parameter servers mask communication when one round of pull plus push
//! (`2 S_p N_w` bytes spread over `N_ps` servers of bandwidth `B_ps`) fits in
//! the compute time `T_C`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScaleError {
    #[error("{0}")]
    Domain(String),
    #[error("no positive GPU processing (step 5) time in the trace")]
    MissingComputeStep,
}

fn domain(msg: impl Into<String>) -> ScaleError {
    ScaleError::Domain(msg.into())
}

fn check_ratio(overhead_ratio: f64) -> Result<(), ScaleError> {
    if overhead_ratio.is_finite() && overhead_ratio >= 0.0 {
        Ok(())
    } else {
        Err(domain(format!(
            "overhead ratio must be a finite non-negative number, got {overhead_ratio}"
        )))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingEstimate {
    pub gpus: u32,
    pub efficiency: f64,
    pub speedup: f64,
}

/// Estimated efficiency of `gpus` GPUs at the given overhead ratio.
pub fn efficiency(gpus: u32, overhead_ratio: f64) -> Result<f64, ScaleError> {
    if gpus < 1 {
        return Err(domain("GPU count must be at least 1"));
    }
    check_ratio(overhead_ratio)?;
    Ok((1.0 + overhead_ratio) / (1.0 + gpus as f64 * overhead_ratio))
}

pub fn scaling_estimate(gpus: u32, overhead_ratio: f64) -> Result<ScalingEstimate, ScaleError> {
    let alpha = efficiency(gpus, overhead_ratio)?;
    Ok(ScalingEstimate {
        gpus,
        efficiency: alpha,
        speedup: alpha * gpus as f64,
    })
}

/// Rows for `G = 1..=gpu_max`.
pub fn scaling_table(gpu_max: u32, overhead_ratio: f64) -> Result<Vec<ScalingEstimate>, ScaleError> {
    if gpu_max < 1 {
        return Err(domain("GPU count must be at least 1"));
    }
    (1..=gpu_max).map(|g| scaling_estimate(g, overhead_ratio)).collect()
}

/// Limiting speedup `1 + 1/r`; `None` when `r = 0` (linear scaling).
pub fn speedup_cap(overhead_ratio: f64) -> Option<f64> {
    (overhead_ratio > 0.0).then(|| 1.0 + 1.0 / overhead_ratio)
}

/// Largest overhead ratio that still reaches efficiency `alpha` on `gpus`
/// GPUs. Defined for `gpus >= 2` and `1/gpus < alpha < 1`.
pub fn max_overhead_ratio(gpus: u32, alpha: f64) -> Result<f64, ScaleError> {
    if gpus < 2 {
        return Err(domain("overhead ratio is only determined for 2 or more GPUs"));
    }
    let denom = alpha * gpus as f64 - 1.0;
    if !(alpha.is_finite() && alpha < 1.0 && denom > 0.0) {
        return Err(domain(format!(
            "efficiency {alpha} is outside ({}, 1) for {gpus} GPUs",
            1.0 / gpus as f64
        )));
    }
    Ok((1.0 - alpha) / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GpuRecommendation {
    Attainable(ScalingEstimate),
    /// No `G <= gpu_max` reaches the target. `cap` is the asymptotic
    /// speedup `1 + 1/r` (absent when `r = 0`); `best` is the `gpu_max` row.
    Unattainable {
        cap: Option<f64>,
        best: ScalingEstimate,
    },
}

/// Smallest `G <= gpu_max` whose estimated speedup reaches `target`.
pub fn recommend_gpus(
    target_speedup: f64,
    overhead_ratio: f64,
    gpu_max: u32,
) -> Result<GpuRecommendation, ScaleError> {
    if !(target_speedup.is_finite() && target_speedup >= 1.0) {
        return Err(domain(format!(
            "target speedup must be at least 1, got {target_speedup}"
        )));
    }
    let table = scaling_table(gpu_max, overhead_ratio)?;
    // speedup is increasing in G, so the first hit is the minimum
    if let Some(row) = table.iter().find(|r| r.speedup >= target_speedup) {
        return Ok(GpuRecommendation::Attainable(*row));
    }
    Ok(GpuRecommendation::Unattainable {
        cap: speedup_cap(overhead_ratio),
        best: *table.last().expect("gpu_max >= 1"),
    })
}

/// The seven steps of one mini-batch iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStep {
    ParameterRefresh = 1,
    DataLoading = 2,
    DataPreparation = 3,
    HostToGpu = 4,
    GpuProcessing = 5,
    ParameterUpdate = 6,
    DistributedUpdate = 7,
}

impl PipelineStep {
    pub const ALL: [PipelineStep; 7] = [
        PipelineStep::ParameterRefresh,
        PipelineStep::DataLoading,
        PipelineStep::DataPreparation,
        PipelineStep::HostToGpu,
        PipelineStep::GpuProcessing,
        PipelineStep::ParameterUpdate,
        PipelineStep::DistributedUpdate,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            PipelineStep::ParameterRefresh => "parameter_refresh",
            PipelineStep::DataLoading => "data_loading",
            PipelineStep::DataPreparation => "data_preparation",
            PipelineStep::HostToGpu => "host_to_gpu",
            PipelineStep::GpuProcessing => "gpu_processing",
            PipelineStep::ParameterUpdate => "parameter_update",
            PipelineStep::DistributedUpdate => "distributed_update",
        }
    }
}

impl fmt::Display for PipelineStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineStep {
    type Err = String;

    /// Accepts the step number (`1`..`7`) or its snake_case name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|step| step.name() == s || step.number().to_string() == s)
            .ok_or_else(|| format!("unknown pipeline step {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadProfile {
    pub compute_time: f64,
    pub overhead_time: f64,
    pub overhead_ratio: f64,
}

/// Compute time is step 5; every other step that is not hidden behind it
/// counts as overhead.
pub fn estimate_overhead_ratio(
    step_times: &BTreeMap<PipelineStep, f64>,
    hidden_steps: &BTreeSet<PipelineStep>,
) -> Result<OverheadProfile, ScaleError> {
    let compute_time = match step_times.get(&PipelineStep::GpuProcessing) {
        Some(&t) if t.is_finite() && t > 0.0 => t,
        _ => return Err(ScaleError::MissingComputeStep),
    };
    let mut overhead_time = 0.0;
    for (&step, &t) in step_times {
        if !(t.is_finite() && t >= 0.0) {
            return Err(domain(format!("step {step} has invalid time {t}")));
        }
        if step != PipelineStep::GpuProcessing && !hidden_steps.contains(&step) {
            overhead_time += t;
        }
    }
    Ok(OverheadProfile {
        compute_time,
        overhead_time,
        overhead_ratio: overhead_time / compute_time,
    })
}

/// Inputs to parameter-server sizing. Sizes in bytes, bandwidth in
/// bytes per second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub worker_count: u64,
    pub param_size_bytes: f64,
    pub bandwidth_bytes_per_sec: f64,
    pub gpu_count: u32,
}

impl ClusterSpec {
    fn check(&self) -> Result<(), ScaleError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.worker_count == 0 || self.gpu_count == 0 {
            return Err(domain("worker and GPU counts must be at least 1"));
        }
        if !positive(self.param_size_bytes) {
            return Err(domain("parameter size must be positive"));
        }
        if !positive(self.bandwidth_bytes_per_sec) {
            return Err(domain("bandwidth must be positive"));
        }
        Ok(())
    }
}

/// Time to move one round of parameters through `servers` servers.
pub fn io_time(spec: &ClusterSpec, servers: u64) -> f64 {
    2.0 * spec.param_size_bytes * spec.worker_count as f64
        / (servers as f64 * spec.bandwidth_bytes_per_sec)
}

/// Whether `servers` servers hide communication behind `compute_time`.
pub fn masks_io(spec: &ClusterSpec, compute_time: f64, servers: u64) -> bool {
    compute_time >= io_time(spec, servers)
}

/// Least number of servers (at least 1) satisfying [`masks_io`].
pub fn min_parameter_servers(spec: &ClusterSpec, compute_time: f64) -> Result<u64, ScaleError> {
    spec.check()?;
    if !(compute_time.is_finite() && compute_time > 0.0) {
        return Err(domain("compute time must be positive"));
    }
    let ratio = 2.0 * spec.param_size_bytes * spec.worker_count as f64
        / (spec.bandwidth_bytes_per_sec * compute_time);
    if !ratio.is_finite() || ratio > 1e15 {
        return Err(domain("parameter server count is out of range"));
    }
    // The closed form may be off by one after rounding; settle on the
    // defining inequality.
    let mut n = (ratio.ceil() as u64).max(1);
    while !masks_io(spec, compute_time, n) {
        n += 1;
    }
    while n > 1 && masks_io(spec, compute_time, n - 1) {
        n -= 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_gpus_ten_percent() {
        let est = scaling_estimate(4, 0.10).unwrap();
        assert!((est.efficiency - 1.1 / 1.4).abs() < 1e-15);
        assert!(est.speedup >= 3.0);
        assert!((est.speedup - 3.142857142857143).abs() < 1e-12);
    }

    #[test]
    fn trivial_efficiencies() {
        for r in [0.0, 0.3, 5.0] {
            assert_eq!(efficiency(1, r).unwrap(), 1.0);
        }
        for g in 1..10 {
            let est = scaling_estimate(g, 0.0).unwrap();
            assert_eq!(est.efficiency, 1.0);
            assert_eq!(est.speedup, g as f64);
        }
    }

    #[test]
    fn efficiency_domain() {
        assert!(efficiency(0, 0.1).is_err());
        assert!(efficiency(2, -0.1).is_err());
        assert!(efficiency(2, f64::NAN).is_err());
    }

    #[test]
    fn max_overhead_for_80_percent() {
        let r = max_overhead_ratio(4, 0.8).unwrap();
        assert!((r - 1.0 / 11.0).abs() < 1e-12);
        assert!(r < 0.09 + 1e-3);
    }

    #[test]
    fn max_overhead_domain() {
        assert!(max_overhead_ratio(2, 0.5).is_err());
        assert!(max_overhead_ratio(4, 1.0).is_err());
        assert!(max_overhead_ratio(4, 0.25).is_err());
        assert!(max_overhead_ratio(1, 0.9).is_err());
        assert!(max_overhead_ratio(4, f64::NAN).is_err());
    }

    #[test]
    fn recommend_three_x() {
        match recommend_gpus(3.0, 0.10, 8).unwrap() {
            GpuRecommendation::Attainable(est) => assert_eq!(est.gpus, 4),
            other => panic!("{other:?}"),
        }
        for g in 1..4 {
            assert!(scaling_estimate(g, 0.10).unwrap().speedup < 3.0);
        }
    }

    #[test]
    fn recommend_one_x() {
        for r in [0.0, 0.5, 10.0] {
            assert!(matches!(
                recommend_gpus(1.0, r, 4).unwrap(),
                GpuRecommendation::Attainable(ScalingEstimate { gpus: 1, .. })
            ));
        }
    }

    #[test]
    fn twelve_x_is_capped() {
        match recommend_gpus(12.0, 0.10, 1000).unwrap() {
            GpuRecommendation::Unattainable { cap, best } => {
                assert!((cap.unwrap() - 11.0).abs() < 1e-12);
                assert_eq!(best.gpus, 1000);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gpu_max_limits_linear_scaling() {
        match recommend_gpus(5.0, 0.0, 4).unwrap() {
            GpuRecommendation::Unattainable { cap, .. } => assert_eq!(cap, None),
            other => panic!("{other:?}"),
        }
    }

    fn trace(times: &[(PipelineStep, f64)]) -> BTreeMap<PipelineStep, f64> {
        times.iter().copied().collect()
    }

    #[test]
    fn overhead_all_hidden() {
        let times = trace(&PipelineStep::ALL.map(|s| (s, 0.2)));
        let hidden: BTreeSet<_> = PipelineStep::ALL.into_iter().collect();
        let p = estimate_overhead_ratio(&times, &hidden).unwrap();
        assert_eq!(p.overhead_ratio, 0.0);
        assert_eq!(p.compute_time, 0.2);
    }

    #[test]
    fn overhead_seven_steps() {
        use PipelineStep::*;
        let times = trace(&[
            (ParameterRefresh, 0.03),
            (DataLoading, 0.25),
            (DataPreparation, 0.125),
            (HostToGpu, 0.0625),
            (GpuProcessing, 0.5),
            (ParameterUpdate, 0.015),
            (DistributedUpdate, 0.04),
        ]);
        let hidden = [DataLoading, DataPreparation].into_iter().collect();
        let p = estimate_overhead_ratio(&times, &hidden).unwrap();
        // 0.03 + 0.0625 + 0.015 + 0.04 = 0.1475 over 0.5
        assert!((p.overhead_time - 0.1475).abs() < 1e-15);
        assert!((p.overhead_ratio - 0.295).abs() < 1e-15);
    }

    #[test]
    fn overhead_needs_compute() {
        let times = trace(&[(PipelineStep::DataLoading, 0.1)]);
        assert_eq!(
            estimate_overhead_ratio(&times, &BTreeSet::new()),
            Err(ScaleError::MissingComputeStep)
        );
        let times = trace(&[(PipelineStep::GpuProcessing, 0.0)]);
        assert_eq!(
            estimate_overhead_ratio(&times, &BTreeSet::new()),
            Err(ScaleError::MissingComputeStep)
        );
    }

    #[test]
    fn step_names_parse() {
        assert_eq!("5".parse::<PipelineStep>().unwrap(), PipelineStep::GpuProcessing);
        assert_eq!("host_to_gpu".parse::<PipelineStep>().unwrap(), PipelineStep::HostToGpu);
        assert!("8".parse::<PipelineStep>().is_err());
    }

    fn cluster(param: f64, workers: u64, bw: f64) -> ClusterSpec {
        ClusterSpec {
            worker_count: workers,
            param_size_bytes: param,
            bandwidth_bytes_per_sec: bw,
            gpu_count: 1,
        }
    }

    #[test]
    fn alexnet_traffic_needs_two_servers() {
        // 2 * 180e6 * 4 / 1.25e9 = 1.152 -> 2
        let spec = cluster(180e6, 4, 1.25e9);
        assert_eq!(min_parameter_servers(&spec, 1.0).unwrap(), 2);
        assert!(!masks_io(&spec, 1.0, 1));
        assert!(masks_io(&spec, 1.0, 2));
    }

    #[test]
    fn tiny_parameters_clamp_to_one() {
        assert_eq!(min_parameter_servers(&cluster(1.0, 1, 1.25e9), 1.0).unwrap(), 1);
    }

    #[test]
    fn ps_domain() {
        assert!(min_parameter_servers(&cluster(0.0, 1, 1.0), 1.0).is_err());
        assert!(min_parameter_servers(&cluster(1.0, 0, 1.0), 1.0).is_err());
        assert!(min_parameter_servers(&cluster(1.0, 1, -1.0), 1.0).is_err());
        assert!(min_parameter_servers(&cluster(1.0, 1, 1.0), 0.0).is_err());
    }
}
