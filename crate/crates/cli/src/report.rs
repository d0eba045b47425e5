//! Plan report: the machine-readable result of `trainplan plan`.
//!
//! The JSON layout is versioned by [`SCHEMA`] and only grows by adding
//! fields. `generated_at` is the only field that differs between two runs
//! on the same inputs; everything else can be recomputed from `inputs`.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use trainplan_core::batch::{Advisory, BatchCandidateResult};
use trainplan_core::catalog::CostEntry;
use trainplan_core::memory::Bits;
use trainplan_core::network::{NetworkSpec, TensorShape};
use trainplan_core::scale::ScalingEstimate;

pub const SCHEMA: &str = "trainplan.plan.v1";

pub const MODEL_CAVEATS: [&str; 5] = [
    "convergence quality is assumed equal across the candidate batch sizes; only training time is optimized",
    "epoch time counts convolution compute only; non-overlapped overheads enter through the overhead ratio of the scaling table",
    "classifier memory is a coarse estimate (batch-independent outputs, (m - 1) * 3 * 32 bias bits)",
    "parameter-server update compute time is ignored; only network transfer is sized",
    "the overhead ratio is treated as a constant; real overheads fluctuate",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanInputs {
    pub network: NetworkSpec,
    pub catalog: Vec<CostEntry>,
    pub gpu_memory_bits: Bits,
    pub dataset_size: u64,
    pub candidates: Vec<u64>,
    pub overhead_ratio: f64,
    pub gpu_max: u32,
    pub workers: u64,
    pub bandwidth_bytes_per_sec: f64,
    /// Explicit parameter size; when absent it is derived from the network.
    pub param_size_bytes: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSection {
    pub candidates: Vec<BatchCandidateResult>,
    pub recommended: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterServerSection {
    pub param_size_bytes: f64,
    pub workers: u64,
    pub bandwidth_bytes_per_sec: f64,
    pub compute_time: f64,
    pub servers: u64,
    pub io_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub schema: String,
    pub generated_at: u64,
    pub inputs: PlanInputs,
    pub shapes: Vec<TensorShape>,
    /// Feature-layer position of each convolution layer, in catalog order.
    pub conv_layers: Vec<usize>,
    pub batch_plan: BatchSection,
    pub scaling: Vec<ScalingEstimate>,
    /// Absent when no batch size is feasible.
    pub parameter_servers: Option<ParameterServerSection>,
    pub advisories: Vec<Advisory>,
    pub caveats: Vec<String>,
}

impl PlanReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let i = &self.inputs;
        let _ = writeln!(out, "== shapes ==");
        for (idx, s) in self.shapes.iter().enumerate() {
            let label = if idx == 0 {
                "input".to_string()
            } else {
                let l = &i.network.feature_layers[idx - 1];
                format!("{idx:>2} {}", l.kind)
            };
            let _ = writeln!(out, "  {label:<8} {s}");
        }

        let _ = writeln!(
            out,
            "\n== batch sweep (GPU {:.2} GiB, dataset {}) ==",
            i.gpu_memory_bits as f64 / 8.0 / (1u64 << 30) as f64,
            i.dataset_size
        );
        let _ = writeln!(
            out,
            "  {:>6}  {:>12}  {:>10}  {:>12}  {:>12}  algorithms",
            "batch", "bound MiB", "step s", "epoch s", "samples/s"
        );
        for c in &self.batch_plan.candidates {
            let bound_mib = c.breakdown.bound as f64 / 8.0 / (1u64 << 20) as f64;
            let mark = if Some(c.batch_size) == self.batch_plan.recommended {
                "*"
            } else {
                " "
            };
            match c.selection() {
                Some(sel) => {
                    let algos: Vec<&str> = sel.assignment.values().map(|a| a.as_str()).collect();
                    let _ = writeln!(
                        out,
                        "{mark} {:>6}  {:>12.1}  {:>10.4}  {:>12.2}  {:>12.2}  {}",
                        c.batch_size,
                        bound_mib,
                        sel.total_time,
                        c.epoch_time().unwrap_or_default(),
                        c.throughput().unwrap_or_default(),
                        algos.join(",")
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "{mark} {:>6}  {:>12.1}  {:>10}  {:>12}  {:>12}  infeasible",
                        c.batch_size, bound_mib, "-", "-", "-"
                    );
                }
            }
        }
        match self.batch_plan.recommended {
            Some(b) => {
                let _ = writeln!(out, "recommended batch size: {b}");
            }
            None => {
                let _ = writeln!(out, "recommended batch size: none (all candidates infeasible)");
            }
        }

        let _ = writeln!(
            out,
            "\n== scaling (overhead ratio {}) ==\n  {:>4}  {:>10}  {:>8}",
            i.overhead_ratio, "G", "efficiency", "speedup"
        );
        for row in &self.scaling {
            let _ = writeln!(
                out,
                "  {:>4}  {:>10.4}  {:>8.4}",
                row.gpus, row.efficiency, row.speedup
            );
        }

        let _ = writeln!(out, "\n== parameter servers ==");
        match &self.parameter_servers {
            Some(ps) => {
                let _ = writeln!(
                    out,
                    "  {} server(s) for {} worker(s), {:.0} B parameters, {:.0} B/s each, compute {:.4} s (I/O {:.4} s)",
                    ps.servers, ps.workers, ps.param_size_bytes, ps.bandwidth_bytes_per_sec,
                    ps.compute_time, ps.io_time
                );
            }
            None => {
                let _ = writeln!(out, "  not sized: no feasible batch size");
            }
        }

        let _ = writeln!(out, "\n== advisories ==");
        for a in &self.advisories {
            let _ = writeln!(out, "  [{}] {}", a.kind, a.message);
        }
        let _ = writeln!(out, "\n== model caveats ==");
        for c in &self.caveats {
            let _ = writeln!(out, "  - {c}");
        }
        out
    }
}
