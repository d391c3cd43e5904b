//! `pasta` — trace-driven accelerator analysis from the command line.
//!
//! Subcommands: `gen` synthesizes workload traces, `run` feeds a trace
//! through an analysis tool on either engine, `sim-uvm` replays a trace
//! under the demand-paging simulator, and `validate` checks stream
//! invariants.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
//! trace, unwritable output), 3 tool failure.

mod emit;

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pasta_core::engine::{run_parallel, run_serial, EngineConfig, EngineError, EngineStats};
use pasta_core::event::{validate_stream, Event};
use pasta_core::tool::{RangeFilter, ToolContext, ToolError, ToolRegistry};
use pasta_core::tools::{register_builtin_tools, Report};
use pasta_core::trace::{
    read_jsonl_iter, read_trace, read_trace_raw, to_jsonl, write_trace, Dialect, TraceError,
};
use pasta_core::uvm::{
    build_prefetch_plan, compare_policies, set_capacity, simulate, PlanGranularity, SimError,
    UvmConfig, DEFAULT_PAGE_SIZE,
};
use pasta_core::workload::{generate_trace, Mode, Parallelism, SpecError, ToyModel, WorkloadSpec};

const ENV_TOOL: &str = "PASTA_TOOL";
const ENV_START_GRID: &str = "START_GRID_ID";
const ENV_END_GRID: &str = "END_GRID_ID";

#[derive(Parser)]
#[command(
    name = "pasta",
    version,
    about = "Trace-driven program analysis for accelerators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload trace.
    Gen(GenArgs),
    /// Run an analysis tool over a trace.
    Run(RunArgs),
    /// Replay a trace under the demand-paging simulator.
    #[command(name = "sim-uvm")]
    SimUvm(SimArgs),
    /// Check a trace against the stream invariants.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Cnn,
    TransformerEncoder,
    TransformerDecoder,
}

#[derive(Clone, Copy, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum PresetArg {
    BertToy,
    Gpt2Toy,
    CnnToy,
    HighWsToy,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Inference,
    Train,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParallelismArg {
    None,
    Dp,
    Tp,
    Pp,
}

#[derive(Clone, Copy, ValueEnum)]
enum DialectArg {
    Unified,
    Nvx,
    Rmx,
}

#[derive(Args)]
struct GenArgs {
    /// Output path; `.pasta` writes binary, `.jsonl` writes JSON lines.
    #[arg(long)]
    out: PathBuf,
    /// Start from a named preset instead of individual flags.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Load the spec from a key = value config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long)]
    layers: Option<u32>,
    #[arg(long)]
    batch: Option<u32>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    devices: Option<u32>,
    #[arg(long, value_enum)]
    parallelism: Option<ParallelismArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction (0, 1] of touched-region bytes accessed per kernel.
    #[arg(long)]
    access_rate: Option<f64>,
    /// Fraction [0, 1) of kernel arguments that are never accessed.
    #[arg(long)]
    untouched_rate: Option<f64>,
    /// Binary encoding dialect.
    #[arg(long, value_enum, default_value = "unified")]
    dialect: DialectArg,
}

#[derive(Args)]
struct RunArgs {
    /// Input trace (`.pasta` or `.jsonl`).
    #[arg(long)]
    trace: PathBuf,
    /// Tool name; overrides the PASTA_TOOL environment variable.
    #[arg(long)]
    tool: Option<String>,
    #[arg(long, default_value = "serial")]
    engine: EngineArg,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// First grid id to analyze (inclusive); overrides START_GRID_ID.
    #[arg(long)]
    start_grid_id: Option<u64>,
    /// Last grid id to analyze (inclusive); overrides END_GRID_ID.
    #[arg(long)]
    end_grid_id: Option<u64>,
    /// Keep only events inside ranges carrying this label (repeatable).
    #[arg(long)]
    marker_label: Vec<String>,
    /// Enable an attribution knob (repeatable).
    #[arg(long)]
    knob: Vec<String>,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    #[arg(long, default_value_t = 1_000_000)]
    hotness_window_ns: u64,
    /// Device pair for the timeline difference series, e.g. `0,1`.
    #[arg(long)]
    timeline_devices: Option<String>,
    #[arg(long, default_value_t = 65_536)]
    buffer_capacity: usize,
    #[arg(long, default_value_t = 4_096)]
    batch_size: usize,
    /// Inject per-event analysis latency (throughput experiments).
    #[arg(long, default_value_t = 0)]
    slowdown_ns: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Zero timing-dependent fields for byte-stable output.
    #[arg(long)]
    no_timings: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Serial,
    Parallel,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Jsonl,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Prefetch policy; omit to compare all three.
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Oversubscription factor: capacity = footprint / factor.
    #[arg(long, default_value_t = 1.0)]
    oversub: f64,
    #[arg(long, default_value_t = DEFAULT_PAGE_SIZE)]
    page_size: u64,
    /// Explicit capacity in bytes (overrides --oversub).
    #[arg(long)]
    capacity_bytes: Option<u64>,
    #[arg(long, default_value_t = 20_000)]
    fault_latency_ns: u64,
    #[arg(long, default_value_t = 8.0)]
    migration_bw: f64,
    #[arg(long, default_value_t = 16.0)]
    prefetch_bw: f64,
    /// Charge prefetch staging in full instead of overlapping it with the
    /// previous kernel.
    #[arg(long)]
    no_overlap: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    None,
    Object,
    Tensor,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Print at most this many violations.
    #[arg(long, default_value_t = 20)]
    max: usize,
}

/// Errors mapped onto process exit codes.
enum CliError {
    Usage(String),
    Data(String),
    Tool(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Tool(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Tool(m) => m,
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ToolError> for CliError {
    fn from(e: ToolError) -> Self {
        match e {
            ToolError::UnknownTool { .. }
            | ToolError::NoToolSpecified
            | ToolError::UnknownKnob { .. }
            | ToolError::NoKnobEnabled
            | ToolError::DuplicateName(_) => CliError::Usage(e.to_string()),
            _ => CliError::Tool(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) | EngineError::ToolNotMergeable(_) => {
                CliError::Usage(e.to_string())
            }
            EngineError::Trace(inner) => CliError::Data(inner.to_string()),
            EngineError::Tool { .. } => CliError::Tool(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::EmptyProfile | SimError::PlanMismatch(_) => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap handles --help/--version with success
            if err.use_stderr() {
                eprintln!("{err}");
                return ExitCode::from(1);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::SimUvm(args) => cmd_sim(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

// ---------------------------------------------------------------------------
// gen

fn cmd_gen(args: GenArgs) -> Result<ExitCode, CliError> {
    let mut spec = if let Some(preset) = args.preset {
        match preset {
            PresetArg::BertToy => WorkloadSpec::bert_toy(),
            PresetArg::Gpt2Toy => WorkloadSpec::gpt2_toy(),
            PresetArg::CnnToy => WorkloadSpec::cnn_toy(),
            PresetArg::HighWsToy => WorkloadSpec::high_ws_toy(),
        }
    } else if let Some(config) = &args.config {
        let text = std::fs::read_to_string(config)?;
        WorkloadSpec::from_config_str(&text)?
    } else {
        WorkloadSpec::cnn_toy()
    };
    if let Some(model) = args.model {
        spec.model = match model {
            ModelArg::Cnn => ToyModel::CnnToy,
            ModelArg::TransformerEncoder => ToyModel::TransformerEncoderToy,
            ModelArg::TransformerDecoder => ToyModel::TransformerDecoderToy,
        };
    }
    if let Some(layers) = args.layers {
        spec.layers = layers;
    }
    if let Some(batch) = args.batch {
        spec.batch = batch;
    }
    if let Some(mode) = args.mode {
        spec.mode = match mode {
            ModeArg::Inference => Mode::Inference,
            ModeArg::Train => Mode::Train,
        };
    }
    if let Some(devices) = args.devices {
        spec.devices = devices;
    }
    if let Some(parallelism) = args.parallelism {
        spec.parallelism = match parallelism {
            ParallelismArg::None => Parallelism::None,
            ParallelismArg::Dp => Parallelism::Dp,
            ParallelismArg::Tp => Parallelism::Tp,
            ParallelismArg::Pp => Parallelism::Pp,
        };
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(rate) = args.access_rate {
        spec.access_sample_rate = rate;
    }
    if let Some(rate) = args.untouched_rate {
        spec.untouched_arg_rate = rate;
    }

    let events = generate_trace(&spec)?;
    if is_jsonl(&args.out) {
        let file = std::fs::File::create(&args.out)?;
        to_jsonl(&events, std::io::BufWriter::new(file))?;
    } else {
        let dialect = match args.dialect {
            DialectArg::Unified => Dialect::Unified,
            DialectArg::Nvx => Dialect::Nvx,
            DialectArg::Rmx => Dialect::Rmx,
        };
        write_trace(&events, dialect, &args.out)?;
    }
    eprintln!("wrote {} events to {}", events.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().map(|e| e == "jsonl").unwrap_or(false)
}

// ---------------------------------------------------------------------------
// run

fn load_events(path: &Path) -> Result<Vec<Event>, CliError> {
    if is_jsonl(path) {
        let file = std::fs::File::open(path)?;
        read_jsonl_iter(BufReader::new(file))
            .collect::<Result<Vec<_>, _>>()
            .map_err(Into::into)
    } else {
        let (_, reader) = read_trace(path)?;
        reader.collect::<Result<Vec<_>, _>>().map_err(Into::into)
    }
}

fn env_grid(name: &str) -> Result<Option<u64>, CliError> {
    match std::env::var(name) {
        Ok(value) => value
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|e| CliError::Usage(format!("{name}={value}: {e}"))),
        Err(_) => Ok(None),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, CliError> {
    let mut registry = ToolRegistry::new();
    register_builtin_tools(&mut registry)?;

    let env_tool = std::env::var(ENV_TOOL).ok();
    let descriptor = registry.select(args.tool.as_deref(), env_tool.as_deref())?;

    let timeline_devices = match &args.timeline_devices {
        Some(pair) => {
            let (a, b) = pair
                .split_once(',')
                .ok_or_else(|| CliError::Usage("--timeline-devices expects `A,B`".into()))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<u32>()
                    .map_err(|e| CliError::Usage(format!("--timeline-devices: {e}")))
            };
            Some((parse(a)?, parse(b)?))
        }
        None => None,
    };
    let mut ctx = ToolContext {
        top_k: args.top_k,
        hotness_window_ns: args.hotness_window_ns,
        timeline_devices,
        ..ToolContext::default()
    };
    for name in &args.knob {
        ctx.knobs.enable(name)?;
    }

    let start_grid = match args.start_grid_id {
        Some(v) => Some(v),
        None => env_grid(ENV_START_GRID)?,
    };
    let end_grid = match args.end_grid_id {
        Some(v) => Some(v),
        None => env_grid(ENV_END_GRID)?,
    };
    let filter = RangeFilter {
        grid_window: match (start_grid, end_grid) {
            (None, None) => None,
            (start, end) => Some((start.unwrap_or(0), end.unwrap_or(u64::MAX))),
        },
        marker_labels: if args.marker_label.is_empty() {
            None
        } else {
            Some(args.marker_label.iter().cloned().collect())
        },
    };
    filter.validate().map_err(CliError::Usage)?;

    let mut config = match args.engine {
        EngineArg::Serial => EngineConfig::serial(),
        EngineArg::Parallel => EngineConfig::parallel(args.workers),
    };
    config.buffer_capacity = args.buffer_capacity;
    config.batch_size = args.batch_size.min(args.buffer_capacity);
    config.analyzer_slowdown_ns = args.slowdown_ns;

    let mut tool = registry.build(descriptor.name, &ctx)?;

    // Stream the trace through the filter into the engine.
    let (report, mut stats): (Report, EngineStats) = if is_jsonl(&args.trace) {
        let file = std::fs::File::open(&args.trace)?;
        let source = filter.filter_stream(read_jsonl_iter(BufReader::new(file)));
        match args.engine {
            EngineArg::Serial => run_serial(source, tool.as_mut(), &config)?,
            EngineArg::Parallel => run_parallel(source, tool.as_mut(), &config)?,
        }
    } else {
        let (_, reader) = read_trace(&args.trace)?;
        let source = filter.filter_stream(reader);
        match args.engine {
            EngineArg::Serial => run_serial(source, tool.as_mut(), &config)?,
            EngineArg::Parallel => run_parallel(source, tool.as_mut(), &config)?,
        }
    };

    if args.no_timings {
        stats.clear_timings();
    }
    let format = match args.format {
        FormatArg::Json => emit::Format::Json,
        FormatArg::Csv => emit::Format::Csv,
        FormatArg::Jsonl => emit::Format::Jsonl,
    };
    emit::emit_report(&report, &stats, format, args.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// sim-uvm

fn cmd_sim(args: SimArgs) -> Result<ExitCode, CliError> {
    let events = load_events(&args.trace)?;

    let capacity = match args.capacity_bytes {
        Some(bytes) => bytes,
        None => {
            let footprint = pasta_core::tools::working_set(&events).footprint_bytes;
            set_capacity(footprint, args.oversub, args.page_size)?
        }
    };
    let config = UvmConfig {
        device_capacity_bytes: capacity,
        page_size_bytes: args.page_size,
        fault_latency_ns: args.fault_latency_ns,
        migration_bw_bytes_per_ns: args.migration_bw,
        prefetch_bw_bytes_per_ns: args.prefetch_bw,
        overlap: !args.no_overlap,
    };

    let format = match args.format {
        FormatArg::Json => emit::Format::Json,
        FormatArg::Csv => emit::Format::Csv,
        FormatArg::Jsonl => emit::Format::Json,
    };
    match args.policy {
        Some(policy) => {
            let plan = match policy {
                PolicyArg::None => None,
                PolicyArg::Object => Some(build_prefetch_plan(&events, PlanGranularity::Object)?),
                PolicyArg::Tensor => Some(build_prefetch_plan(&events, PlanGranularity::Tensor)?),
            };
            let result = simulate(&events, plan.as_ref(), &config)?;
            emit::emit_sim_results(&[(result, 1.0)], format, args.out.as_deref())?;
        }
        None => {
            let cmp = compare_policies(&events, &config)?;
            let rows = [
                (cmp.none.clone(), 1.0),
                (cmp.object.clone(), cmp.normalized(&cmp.object)),
                (cmp.tensor.clone(), cmp.normalized(&cmp.tensor)),
            ];
            emit::emit_sim_results(&rows, format, args.out.as_deref())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// validate

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode, CliError> {
    let events = if is_jsonl(&args.trace) {
        let file = std::fs::File::open(&args.trace)?;
        read_jsonl_iter(BufReader::new(file)).collect::<Result<Vec<_>, _>>()?
    } else {
        let (_, reader) = read_trace_raw(&args.trace)?;
        reader.collect::<Result<Vec<_>, _>>()?
    };
    let report = validate_stream(&events);
    if report.is_valid() {
        println!("ok: {} events, no violations", events.len());
        Ok(ExitCode::SUCCESS)
    } else {
        for violation in report.violations.iter().take(args.max) {
            eprintln!("{violation}");
        }
        if report.violations.len() > args.max {
            eprintln!("... and {} more", report.violations.len() - args.max);
        }
        Err(CliError::Data(format!(
            "{} violations",
            report.violations.len()
        )))
    }
}
