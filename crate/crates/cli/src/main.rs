//! `fieldtier`: layouts, profiles, placement optimization and workload benchmarks.

mod commands;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fieldtier::collections::CollectionError;
use fieldtier::placement::PlacementError;
use fieldtier::store::StoreError;
use fieldtier::tiers::TierError;
use fieldtier::workloads::{LayoutMode, WorkloadError};

#[derive(Parser, Debug)]
#[command(name = "fieldtier", version, about = "Field-level tiered object store tools")]
pub struct Cli {
    /// Tier config, one `name,capacity_bytes,backing[,ns_per_access[,read_ns_per_byte[,write_ns_per_byte]]]` per line.
    /// Relative backing paths are resolved inside the run's store directory.
    #[arg(long, global = true, value_name = "PATH")]
    pub tiers: Option<PathBuf>,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print field offsets, widths and tiers for a schema file.
    Layout {
        schema: PathBuf,
        /// Override a field's tier.
        #[arg(long = "assign", value_name = "FIELD=TIER")]
        assign: Vec<String>,
    },
    /// Write a placement profile CSV.
    Profile {
        #[command(subcommand)]
        source: ProfileSource,
    },
    /// Solve the placement problem for a profile.
    Optimize(OptimizeArgs),
    /// Solve over a grid of parameter values.
    Sweep(SweepArgs),
    /// Run a workload and write its report CSV.
    Bench(BenchArgs),
    /// Write, sync, reopen and verify a batch of objects.
    StoreDemo(StoreDemoArgs),
}

#[derive(Subcommand, Debug)]
pub enum ProfileSource {
    /// Run an instrumented workload and derive F, B, C, R from it.
    Bench(ProfileBenchArgs),
    /// Two devices, fields whose recomputation grows with iteration count on the volatile one.
    Iterative(IterativeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Workload {
    Kmeans,
    Graph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Costs {
    /// Microbenchmark each tier.
    Measured,
    /// From the tier config latencies.
    Configured,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    NoPmem,
    AllPmem,
    SelectPmem,
}

impl From<Mode> for LayoutMode {
    fn from(m: Mode) -> LayoutMode {
        match m {
            Mode::NoPmem => LayoutMode::NoPmem,
            Mode::AllPmem => LayoutMode::AllPmem,
            Mode::SelectPmem => LayoutMode::SelectPmem,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct WorkloadArgs {
    /// Points (kmeans) or nodes (graph). Defaults: 100000 points, 10000 nodes.
    #[arg(long)]
    pub records: Option<u64>,
    #[arg(long, default_value_t = 12)]
    pub dims: usize,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Undirected edges; defaults to 5 per node.
    #[arg(long)]
    pub edges: Option<u64>,
    #[arg(long, default_value_t = 4)]
    pub features: usize,
    /// Opaque payload bytes per node.
    #[arg(long, default_value_t = 10240)]
    pub payload: usize,
    /// Share of nodes planted to match the default query.
    #[arg(long, default_value_t = 0.01)]
    pub planted: f64,
    /// Search constraint; repeatable. Defaults to the planted company and city.
    #[arg(long = "query", value_name = "FEATURE=VALUE")]
    pub query: Vec<String>,
    /// Dataset file to use; generated there first if missing.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Build the graph from a whitespace-separated edge list instead.
    #[arg(long, value_name = "PATH")]
    pub snap: Option<PathBuf>,
    /// Directory for generated datasets and store files; a temporary one otherwise.
    #[arg(long)]
    pub work: Option<PathBuf>,
    /// Scan records on the rayon pool.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Args, Debug)]
pub struct ProfileBenchArgs {
    #[arg(value_enum)]
    pub workload: Workload,
    #[command(flatten)]
    pub w: WorkloadArgs,
    /// Layout to profile under; the schema's preferred tags otherwise.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum, default_value_t = Costs::Measured)]
    pub costs: Costs,
    /// Failure probability of volatile tiers.
    #[arg(long, default_value_t = 0.01)]
    pub failure: f64,
    /// Recomputation ns per iteration per field on volatile tiers.
    #[arg(long, default_value_t = 1000.0)]
    pub recompute_ns: f64,
    /// Microbenchmark batches per size.
    #[arg(long, default_value_t = 15)]
    pub reps: usize,
    /// Also write the workload's schema here.
    #[arg(long, value_name = "PATH")]
    pub schema_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IterativeArgs {
    /// Iterations per field, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    pub iters: Vec<f64>,
    #[arg(long, default_value_t = 100_000.0)]
    pub ns_per_iter: f64,
    /// Access ns on dram and pmem.
    #[arg(long, value_delimiter = ',', default_value = "100,1000")]
    pub access_ns: Vec<f64>,
    /// Recomputation ns on pmem, independent of iterations.
    #[arg(long, default_value_t = 10_000.0)]
    pub durable_ns: f64,
    #[arg(long, default_value_t = 0.01)]
    pub failure: f64,
    /// Accesses per field.
    #[arg(long, default_value_t = 10.0)]
    pub accesses: f64,
    #[arg(long, default_value_t = 8)]
    pub bytes: u64,
    #[arg(long, default_value_t = 1 << 30)]
    pub capacity: u64,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub profile: PathBuf,
    /// Number of stored objects (X).
    #[arg(long)]
    pub objects: u64,
    /// Override a device capacity; repeatable.
    #[arg(long = "capacity", value_name = "DEVICE=BYTES")]
    pub capacity: Vec<String>,
    /// Schema to annotate with the chosen tiers.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Where to write the annotated schema; stdout after the CSV otherwise.
    #[arg(long, value_name = "PATH", requires = "schema")]
    pub schema_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, required_unless_present = "iterative", conflicts_with = "iterative")]
    pub profile: Option<PathBuf>,
    /// Use the `profile iterative` defaults as the template.
    #[arg(long)]
    pub iterative: bool,
    #[arg(long, default_value_t = 1)]
    pub objects: u64,
    /// `<param>@<start>:<end>:<count>`; param is `R:f:d`, `iters:f:d:ns`, `P:d`, `P:*`, `C:f:d` or `F:f`.
    #[arg(long, required_unless_present = "iterative")]
    pub axis1: Option<String>,
    #[arg(long)]
    pub axis2: Option<String>,
    #[arg(long)]
    pub parallel: bool,
    /// Print a character map of the first field's choices to stderr.
    #[arg(long)]
    pub map: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub workload: Workload,
    #[arg(long, value_enum, required_unless_present = "schema", conflicts_with = "schema")]
    pub mode: Option<Mode>,
    /// Place fields by this schema's tags, e.g. one written by `optimize`.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[command(flatten)]
    pub w: WorkloadArgs,
    /// Write 0 in the timing columns so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Args, Debug)]
pub struct StoreDemoArgs {
    /// Store directory; a temporary one otherwise.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub objects: u64,
    /// Bytes in each object's image field.
    #[arg(long, default_value_t = 1024)]
    pub image: usize,
}

/// Bad flag values found after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_CAPACITY: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(PlacementError::Infeasible { .. }) = cause.downcast_ref() {
            return EXIT_INFEASIBLE;
        }
        let capacity = cause.downcast_ref::<StoreError>().is_some_and(StoreError::is_capacity)
            || cause.downcast_ref::<WorkloadError>().is_some_and(WorkloadError::is_capacity)
            || cause.downcast_ref::<CollectionError>().is_some_and(CollectionError::is_capacity)
            || cause.downcast_ref::<TierError>().is_some_and(TierError::is_capacity);
        if capacity {
            return EXIT_CAPACITY;
        }
    }
    EXIT_OTHER
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
