//! Subcommand implementations. Each returns the text to print and the exit
//! code; input and I/O failures come back as `Err` and map to exit code 1.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use trainplan_core::batch::{default_candidates, plan_batch_size};
use trainplan_core::catalog::{AlgorithmCatalog, CatalogFormat};
use trainplan_core::memory::parameter_bytes;
use trainplan_core::network::{propagate_shapes, validate_network};
use trainplan_core::scale::{
    estimate_overhead_ratio, io_time, min_parameter_servers, recommend_gpus, scaling_table,
    ClusterSpec, GpuRecommendation, OverheadProfile, ScalingEstimate,
};
use trainplan_core::select::{Instance, SelectError};

use crate::netfile::parse_network;
use crate::report::{BatchSection, ParameterServerSection, PlanInputs, PlanReport, MODEL_CAVEATS, SCHEMA};
use crate::steps::parse_steps;
use crate::units::{parse_bandwidth, parse_seconds, parse_size};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub stdout: String,
    /// Diagnostics for stderr.
    pub notes: Vec<String>,
    pub code: i32,
}

impl Output {
    fn new(stdout: String, code: i32) -> Self {
        Self {
            stdout,
            notes: Vec::new(),
            code,
        }
    }
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn load_catalog(path: &Path, format: Option<CatalogFormat>) -> Result<AlgorithmCatalog> {
    let file = fs::File::open(path)
        .with_context(|| format!("cannot read catalog file {}", path.display()))?;
    let format = format.unwrap_or_else(|| CatalogFormat::from_path(path));
    AlgorithmCatalog::load(std::io::BufReader::new(file), format)
        .with_context(|| format!("invalid catalog {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct PlanRequest {
    pub network_path: PathBuf,
    pub catalog_path: PathBuf,
    pub catalog_format: Option<CatalogFormat>,
    pub gpu_memory_bits: u128,
    pub dataset_size: u64,
    pub candidates: Option<Vec<u64>>,
    pub overhead_ratio: f64,
    pub gpu_max: u32,
    pub workers: u64,
    pub bandwidth_bytes_per_sec: f64,
    pub param_size_bytes: Option<f64>,
    pub format: OutputFormat,
    pub verify: bool,
}

/// Read the request's files and resolve defaults into a self-contained
/// input echo.
pub fn resolve_inputs(req: &PlanRequest) -> Result<PlanInputs> {
    let text = fs::read_to_string(&req.network_path)
        .with_context(|| format!("cannot read network file {}", req.network_path.display()))?;
    let network = parse_network(&text)
        .with_context(|| format!("invalid network file {}", req.network_path.display()))?;
    let catalog = load_catalog(&req.catalog_path, req.catalog_format)?;
    let candidates = match &req.candidates {
        Some(c) => c.clone(),
        None => {
            let c = default_candidates(&catalog);
            ensure!(
                !c.is_empty(),
                "none of the default batch sizes (32, 64, 128, 256, 512) is in the catalog; \
                 pass --batch explicitly (catalog has {:?})",
                catalog.batch_sizes()
            );
            c
        }
    };
    Ok(PlanInputs {
        network,
        catalog: catalog.entries().collect(),
        gpu_memory_bits: req.gpu_memory_bits,
        dataset_size: req.dataset_size,
        candidates,
        overhead_ratio: req.overhead_ratio,
        gpu_max: req.gpu_max,
        workers: req.workers,
        bandwidth_bytes_per_sec: req.bandwidth_bytes_per_sec,
        param_size_bytes: req.param_size_bytes,
    })
}

/// Run the whole pipeline on resolved inputs. Pure apart from the
/// timestamp passed in.
pub fn build_report(inputs: PlanInputs, generated_at: u64) -> Result<PlanReport> {
    let violations = validate_network(&inputs.network);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        bail!("invalid network:\n  {}", list.join("\n  "));
    }
    let shapes = propagate_shapes(&inputs.network)?;
    let catalog = AlgorithmCatalog::from_entries(inputs.catalog.clone())?;
    let plan = plan_batch_size(
        &inputs.network,
        &catalog,
        inputs.gpu_memory_bits,
        inputs.dataset_size,
        &inputs.candidates,
    )?;
    let scaling = scaling_table(inputs.gpu_max, inputs.overhead_ratio)?;

    let parameter_servers = match plan.recommended_result().and_then(|r| r.selection()) {
        Some(selection) => {
            let param_size_bytes = match inputs.param_size_bytes {
                Some(p) => p,
                None => parameter_bytes(&inputs.network)? as f64,
            };
            let spec = ClusterSpec {
                worker_count: inputs.workers,
                param_size_bytes,
                bandwidth_bytes_per_sec: inputs.bandwidth_bytes_per_sec,
                gpu_count: inputs.gpu_max,
            };
            let servers = min_parameter_servers(&spec, selection.total_time)?;
            Some(ParameterServerSection {
                param_size_bytes,
                workers: inputs.workers,
                bandwidth_bytes_per_sec: inputs.bandwidth_bytes_per_sec,
                compute_time: selection.total_time,
                servers,
                io_time: io_time(&spec, servers),
            })
        }
        None => None,
    };

    Ok(PlanReport {
        schema: SCHEMA.to_string(),
        generated_at,
        conv_layers: inputs.network.conv_layer_positions(),
        shapes,
        batch_plan: BatchSection {
            candidates: plan.candidates,
            recommended: plan.recommended,
        },
        scaling,
        parameter_servers,
        advisories: plan.advisories,
        caveats: MODEL_CAVEATS.iter().map(|s| s.to_string()).collect(),
        inputs,
    })
}

/// Cross-check every candidate's selection against exhaustive enumeration.
fn verify_report(report: &PlanReport) -> Result<Vec<String>> {
    let catalog = AlgorithmCatalog::from_entries(report.inputs.catalog.clone())?;
    let mut notes = Vec::new();
    for c in &report.batch_plan.candidates {
        let instance = Instance::from_catalog(&catalog, c.batch_size)?;
        let bound = c.breakdown.bound;
        let oracle = match instance.brute_force(bound) {
            Err(SelectError::InstanceTooLarge { assignments }) => {
                notes.push(format!(
                    "verify: batch {} skipped ({assignments} assignments)",
                    c.batch_size
                ));
                continue;
            }
            other => other,
        };
        let agree = match (c.selection(), &oracle) {
            (Some(sel), Ok(o)) => sel.total_time == o.total_time,
            (None, Err(SelectError::Infeasible { .. })) => true,
            _ => false,
        };
        ensure!(
            agree,
            "verification failed at batch {}: solver {:?}, enumeration {:?}",
            c.batch_size,
            c.selection().map(|s| s.total_time),
            oracle.as_ref().map(|s| s.total_time)
        );
        notes.push(format!("verify: batch {} matches enumeration", c.batch_size));
    }
    Ok(notes)
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn cmd_plan(req: &PlanRequest) -> Result<Output> {
    let inputs = resolve_inputs(req)?;
    let report = build_report(inputs, unix_now())?;
    let notes = if req.verify {
        verify_report(&report)?
    } else {
        Vec::new()
    };
    let stdout = match req.format {
        OutputFormat::Json => report.to_json(),
        OutputFormat::Text => report.to_text(),
    };
    let code = if report.batch_plan.recommended.is_some() {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    };
    Ok(Output {
        stdout,
        notes,
        code,
    })
}

#[derive(Debug, Clone)]
pub struct ScaleRequest {
    pub gpu_max: u32,
    pub overhead_ratio: Option<f64>,
    pub steps_path: Option<PathBuf>,
    pub target_speedup: Option<f64>,
    pub format: OutputFormat,
}

#[derive(Serialize)]
struct ScaleJson {
    overhead_ratio: f64,
    profile: Option<OverheadProfile>,
    table: Vec<ScalingEstimate>,
    target_speedup: Option<f64>,
    recommendation: Option<GpuRecommendation>,
}

pub fn cmd_scale(req: &ScaleRequest) -> Result<Output> {
    let (ratio, profile) = match (req.overhead_ratio, &req.steps_path) {
        (Some(r), None) => (r, None),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read step-times file {}", path.display()))?;
            let trace = parse_steps(&text)
                .with_context(|| format!("invalid step-times file {}", path.display()))?;
            let profile = estimate_overhead_ratio(&trace.times, &trace.hidden)?;
            (profile.overhead_ratio, Some(profile))
        }
        _ => bail!("give exactly one of --ro or --steps"),
    };
    let table = scaling_table(req.gpu_max, ratio)?;
    let recommendation = req
        .target_speedup
        .map(|t| recommend_gpus(t, ratio, req.gpu_max))
        .transpose()?;
    let code = match recommendation {
        Some(GpuRecommendation::Unattainable { .. }) => EXIT_INFEASIBLE,
        _ => EXIT_OK,
    };

    let stdout = match req.format {
        OutputFormat::Json => json_line(&ScaleJson {
            overhead_ratio: ratio,
            profile,
            table,
            target_speedup: req.target_speedup,
            recommendation,
        }),
        OutputFormat::Text => {
            let mut out = String::new();
            if let Some(p) = profile {
                let _ = writeln!(
                    out,
                    "compute {} s, unhidden overhead {} s",
                    p.compute_time, p.overhead_time
                );
            }
            let _ = writeln!(out, "overhead ratio R_O = {ratio}");
            let _ = writeln!(out, "  {:>4}  {:>10}  {:>8}", "G", "efficiency", "speedup");
            for row in &table {
                let _ = writeln!(
                    out,
                    "  {:>4}  {:>10.4}  {:>8.4}",
                    row.gpus, row.efficiency, row.speedup
                );
            }
            match (req.target_speedup, recommendation) {
                (Some(t), Some(GpuRecommendation::Attainable(est))) => {
                    let _ = writeln!(
                        out,
                        "target {t}x: {} GPU(s) (efficiency {:.4}, speedup {:.4})",
                        est.gpus, est.efficiency, est.speedup
                    );
                }
                (Some(t), Some(GpuRecommendation::Unattainable { cap, best })) => {
                    let why = match cap {
                        Some(c) if t >= c => format!("exceeds the asymptotic cap {c:.4}x"),
                        _ => format!("needs more than {} GPUs", best.gpus),
                    };
                    let _ = writeln!(
                        out,
                        "target {t}x: unattainable ({why}; best {:.4}x with {} GPUs)",
                        best.speedup, best.gpus
                    );
                }
                _ => {}
            }
            out
        }
    };
    Ok(Output::new(stdout, code))
}

#[derive(Debug, Clone)]
pub struct PsRequest {
    pub param_size: String,
    pub workers: u64,
    pub bandwidth: String,
    pub compute_time: String,
    pub format: OutputFormat,
}

#[derive(Serialize)]
struct PsJson {
    param_size_bytes: f64,
    workers: u64,
    bandwidth_bytes_per_sec: f64,
    compute_time: f64,
    servers: u64,
    io_time: f64,
}

pub fn cmd_ps(req: &PsRequest) -> Result<Output> {
    let param_size_bytes = parse_size(&req.param_size)?;
    let bandwidth = parse_bandwidth(&req.bandwidth)?;
    let compute_time = parse_seconds(&req.compute_time)?;
    let spec = ClusterSpec {
        worker_count: req.workers,
        param_size_bytes,
        bandwidth_bytes_per_sec: bandwidth,
        gpu_count: 1,
    };
    let servers = min_parameter_servers(&spec, compute_time)?;
    let io = io_time(&spec, servers);
    let stdout = match req.format {
        OutputFormat::Json => json_line(&PsJson {
            param_size_bytes,
            workers: req.workers,
            bandwidth_bytes_per_sec: bandwidth,
            compute_time,
            servers,
            io_time: io,
        }),
        OutputFormat::Text => format!(
            "N_ps = {servers}\n\
             T_C = {compute_time} s >= 2 * S_p * N_w / (N_ps * B_ps) \
             = 2 * {param_size_bytes} B * {} / ({servers} * {bandwidth} B/s) = {io} s\n",
            req.workers
        ),
    };
    Ok(Output::new(stdout, EXIT_OK))
}

pub fn cmd_catalog_validate(path: &Path, format: Option<CatalogFormat>) -> Result<Output> {
    let catalog = load_catalog(path, format)?;
    let algos: Vec<String> = catalog.algorithms().iter().map(|a| a.to_string()).collect();
    let stdout = format!(
        "{}: ok, {} entries, {} conv layers, algorithms [{}], batch sizes {:?}\n",
        path.display(),
        catalog.len(),
        catalog.layer_count(),
        algos.join(", "),
        catalog.batch_sizes()
    );
    Ok(Output::new(stdout, EXIT_OK))
}
