use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trainplan_cli::commands::{
    cmd_catalog_validate, cmd_plan, cmd_ps, cmd_scale, OutputFormat, PlanRequest, PsRequest,
    ScaleRequest, EXIT_ERROR,
};
use trainplan_cli::units::{parse_bandwidth, parse_memory_bits, parse_size};
use trainplan_core::catalog::CatalogFormat;

#[derive(Parser)]
#[command(name = "trainplan", version, about = "Capacity planner for data-parallel CNN training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CatalogFormatArg {
    Csv,
    Json,
}

impl From<CatalogFormatArg> for CatalogFormat {
    fn from(f: CatalogFormatArg) -> Self {
        match f {
            CatalogFormatArg::Csv => CatalogFormat::Csv,
            CatalogFormatArg::Json => CatalogFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Recommend batch size, per-layer algorithms, GPU scaling and parameter servers.
    Plan {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        /// Catalog format; inferred from the file extension when omitted.
        #[arg(long, value_enum)]
        catalog_format: Option<CatalogFormatArg>,
        /// GPU memory, e.g. 12GiB or 16GB.
        #[arg(long, value_parser = parse_memory_bits)]
        gpu_memory: u128,
        /// Training samples per epoch.
        #[arg(long)]
        dataset_size: u64,
        /// Candidate batch sizes (repeat or comma-separate). Defaults to
        /// 32,64,128,256,512 restricted to the catalog.
        #[arg(long = "batch", value_delimiter = ',')]
        batch: Vec<u64>,
        /// Overhead ratio R_O for the scaling table.
        #[arg(long)]
        ro: f64,
        #[arg(long, default_value_t = 8)]
        gpu_max: u32,
        #[arg(long, default_value_t = 1)]
        workers: u64,
        /// Per-server bandwidth, e.g. 10Gbps.
        #[arg(long, default_value = "10Gbps", value_parser = parse_bandwidth)]
        bandwidth: f64,
        /// Parameter size, e.g. 180MB; derived from the network when omitted.
        #[arg(long, value_parser = parse_size)]
        param_size: Option<f64>,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
        /// Cross-check every selection against exhaustive enumeration.
        #[arg(long)]
        verify: bool,
    },
    /// Multi-GPU efficiency table and GPU count for a target speedup.
    Scale {
        #[arg(long, default_value_t = 8)]
        gmax: u32,
        #[arg(long, conflicts_with = "steps", required_unless_present = "steps")]
        ro: Option<f64>,
        /// Step-times file to derive R_O from.
        #[arg(long)]
        steps: Option<PathBuf>,
        #[arg(long)]
        target: Option<f64>,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
    },
    /// Minimum parameter servers: PARAM_SIZE WORKERS BANDWIDTH COMPUTE_TIME.
    Ps {
        /// e.g. 180MB, 180MiB
        param_size: String,
        workers: u64,
        /// e.g. 10Gbps, 1.25GB/s
        bandwidth: String,
        /// seconds, e.g. 1.0 or 250ms
        compute_time: String,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
    },
    /// Load and validate a cost catalog.
    CatalogValidate {
        path: PathBuf,
        #[arg(long, value_enum)]
        format: Option<CatalogFormatArg>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan {
            network,
            catalog,
            catalog_format,
            gpu_memory,
            dataset_size,
            batch,
            ro,
            gpu_max,
            workers,
            bandwidth,
            param_size,
            format,
            verify,
        } => cmd_plan(&PlanRequest {
            network_path: network,
            catalog_path: catalog,
            catalog_format: catalog_format.map(Into::into),
            gpu_memory_bits: gpu_memory,
            dataset_size,
            candidates: (!batch.is_empty()).then_some(batch),
            overhead_ratio: ro,
            gpu_max,
            workers,
            bandwidth_bytes_per_sec: bandwidth,
            param_size_bytes: param_size,
            format,
            verify,
        }),
        Command::Scale {
            gmax,
            ro,
            steps,
            target,
            format,
        } => cmd_scale(&ScaleRequest {
            gpu_max: gmax,
            overhead_ratio: ro,
            steps_path: steps,
            target_speedup: target,
            format,
        }),
        Command::Ps {
            param_size,
            workers,
            bandwidth,
            compute_time,
            format,
        } => cmd_ps(&PsRequest {
            param_size,
            workers,
            bandwidth,
            compute_time,
            format,
        }),
        Command::CatalogValidate { path, format } => {
            cmd_catalog_validate(&path, format.map(Into::into))
        }
    };

    match result {
        Ok(out) => {
            for note in &out.notes {
                eprintln!("{note}");
            }
            print!("{}", out.stdout);
            ExitCode::from(out.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
