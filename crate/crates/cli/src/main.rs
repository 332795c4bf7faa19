//! `vecpage`: build, lay out, calibrate and benchmark a disk-resident graph
//! index.
//!
//! Exit codes: 0 success, 2 usage or argument error, 3 data or format error,
//! 4 internal invariant violation.

mod commands;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vecpage::cache::Policy;
use vecpage::layout::LayoutKind;
use vecpage::workload::DynamicReset;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_INVARIANT: u8 = 4;

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        vecpage::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    }

    /// Prefixes the message with the pipeline stage that failed.
    pub fn during(self, stage: &str) -> Self {
        Self {
            code: self.code,
            message: format!("{stage}: {}", self.message),
        }
    }
}

impl From<vecpage::Error> for Failure {
    fn from(e: vecpage::Error) -> Self {
        use vecpage::Error as E;
        let code = match &e {
            E::Argument(_) | E::Config(_) | E::Dimension { .. } => EXIT_USAGE,
            E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
            E::Format { .. } | E::InconsistentDimension { .. } | E::EmptyDataset | E::Corruption(_) | E::Io { .. } => {
                EXIT_DATA
            }
            E::State(_) | E::Invariant(_) => EXIT_INVARIANT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "vecpage",
    version,
    about = "Disk-resident graph ANN index with a hybrid page cache"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Gaussian-blob dataset (and optional held-out queries).
    Synth(SynthArgs),
    /// Build the graph and PQ sidecars into an index directory.
    Build(BuildArgs),
    /// Write the paged index file and layout sidecar for one layout kind.
    Layout(LayoutArgs),
    /// Brute-force ground truth as an .ivecs file.
    Gt(GtArgs),
    /// Estimate the transition parameter theta from sampled dataset queries.
    Calibrate(CalibrateArgs),
    /// Run queries and print their results.
    Query(QueryArgs),
    /// Run a query workload and write a report.
    Bench(BenchArgs),
    /// Compare two bench reports.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "VECPAGE_N", default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, env = "VECPAGE_DIM", default_value_t = 16)]
    pub dim: usize,
    #[arg(long, env = "VECPAGE_BLOBS", default_value_t = 8)]
    pub blobs: usize,
    /// Per-component standard deviation around each blob center.
    #[arg(long, env = "VECPAGE_SPREAD", default_value_t = 1.0)]
    pub spread: f32,
    /// Blob centers are uniform in [-range, range]^dim.
    #[arg(long, env = "VECPAGE_CENTER_RANGE", default_value_t = 10.0)]
    pub center_range: f32,
    #[arg(long, env = "VECPAGE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Number of extra query vectors drawn from the same blobs.
    #[arg(long, env = "VECPAGE_QUERY_COUNT", default_value_t = 0)]
    pub queries: usize,
    #[arg(long, env = "VECPAGE_OUT")]
    pub out: PathBuf,
    /// Where to write the queries; required when --queries > 0.
    #[arg(long, env = "VECPAGE_QUERIES_OUT")]
    pub queries_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Base vectors (.fvecs).
    #[arg(long, env = "VECPAGE_DATA")]
    pub data: PathBuf,
    /// Index directory to create or overwrite.
    #[arg(long, env = "VECPAGE_OUT")]
    pub out: PathBuf,
    #[arg(long = "max-degree", env = "VECPAGE_MAX_DEGREE", default_value_t = 32)]
    pub max_degree: usize,
    #[arg(long = "build-list", env = "VECPAGE_BUILD_LIST", default_value_t = 64)]
    pub build_list: usize,
    #[arg(long, env = "VECPAGE_ALPHA", default_value_t = 1.2)]
    pub alpha: f32,
    #[arg(long, env = "VECPAGE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// PQ subspaces; defaults to the largest divisor of dim not above dim/8.
    #[arg(long = "pq-subspaces", env = "VECPAGE_PQ_SUBSPACES")]
    pub pq_subspaces: Option<usize>,
    #[arg(long = "pq-centroids", env = "VECPAGE_PQ_CENTROIDS", default_value_t = 256)]
    pub pq_centroids: usize,
    #[arg(long = "pq-iters", env = "VECPAGE_PQ_ITERS", default_value_t = 25)]
    pub pq_iters: usize,
}

#[derive(Debug, Args)]
pub struct LayoutArgs {
    #[arg(long, env = "VECPAGE_INDEX")]
    pub index: PathBuf,
    #[arg(long, env = "VECPAGE_LAYOUT", default_value = "similarity")]
    pub kind: LayoutKind,
    /// k-means cluster count; defaults to ceil(n / (4 * page_capacity)).
    #[arg(long, env = "VECPAGE_CLUSTERS")]
    pub clusters: Option<usize>,
    #[arg(long = "page-size", env = "VECPAGE_PAGE_SIZE", default_value_t = 4096)]
    pub page_size: usize,
    #[arg(long = "kmeans-iters", env = "VECPAGE_KMEANS_ITERS", default_value_t = 25)]
    pub kmeans_iters: usize,
    #[arg(long, env = "VECPAGE_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GtArgs {
    #[arg(long, env = "VECPAGE_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "VECPAGE_QUERIES")]
    pub queries: PathBuf,
    #[arg(long, env = "VECPAGE_K", default_value_t = 100)]
    pub k: usize,
    #[arg(long, env = "VECPAGE_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// Results per query.
    #[arg(long, env = "VECPAGE_K", default_value_t = 100)]
    pub k: usize,
    /// Candidate queue length; defaults to max(k, 100).
    #[arg(long, env = "VECPAGE_L")]
    pub l: Option<usize>,
    #[arg(long = "beam-width", env = "VECPAGE_BEAM_WIDTH", default_value_t = 4)]
    pub beam_width: usize,
    /// Pages per batched phase-2 read.
    #[arg(long = "window-pages", env = "VECPAGE_WINDOW_PAGES", default_value_t = 2)]
    pub window_pages: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CacheArgs {
    /// Total cache budget: a node count, or a percentage of the index file
    /// size such as "1%" (converted to node slots).
    #[arg(long = "cache-budget", env = "VECPAGE_CACHE_BUDGET", default_value = "1%")]
    pub cache_budget: String,
    /// Share of the budget given to the static node cache.
    #[arg(long = "static-frac", env = "VECPAGE_STATIC_FRAC", default_value_t = 0.2)]
    pub static_frac: f64,
    #[arg(long, env = "VECPAGE_POLICY", default_value = "lfu")]
    pub policy: Policy,
    /// Seed for the random replacement policy.
    #[arg(long = "cache-seed", env = "VECPAGE_CACHE_SEED", default_value_t = 0)]
    pub cache_seed: u64,
    /// Empty the dynamic cache once per run or before every query.
    #[arg(long, env = "VECPAGE_RESET", default_value = "run")]
    pub reset: DynamicReset,
    /// Ask the OS to bypass its page cache (O_DIRECT) where supported.
    #[arg(long = "direct-io", env = "VECPAGE_DIRECT_IO")]
    pub direct_io: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, env = "VECPAGE_INDEX")]
    pub index: PathBuf,
    #[arg(long, env = "VECPAGE_LAYOUT", default_value = "similarity")]
    pub kind: LayoutKind,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Fraction of dataset vectors sampled as calibration queries.
    #[arg(long, env = "VECPAGE_FRACTION", default_value_t = 0.01)]
    pub fraction: f64,
    #[arg(long, env = "VECPAGE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "VECPAGE_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long, env = "VECPAGE_INDEX")]
    pub index: PathBuf,
    #[arg(long, env = "VECPAGE_LAYOUT", default_value = "similarity")]
    pub kind: LayoutKind,
    #[arg(long, env = "VECPAGE_QUERIES")]
    pub queries: PathBuf,
    /// Only run the first N queries.
    #[arg(long, env = "VECPAGE_COUNT")]
    pub count: Option<usize>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Overrides the calibrated theta.
    #[arg(long, env = "VECPAGE_THETA")]
    pub theta: Option<f64>,
    #[command(flatten)]
    pub cache: CacheArgs,
    /// Write per-expansion trace records here.
    #[arg(long, env = "VECPAGE_TRACE")]
    pub trace: Option<PathBuf>,
    #[arg(long, env = "VECPAGE_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, env = "VECPAGE_INDEX")]
    pub index: PathBuf,
    #[arg(long, env = "VECPAGE_LAYOUT", default_value = "similarity")]
    pub kind: LayoutKind,
    #[arg(long, env = "VECPAGE_QUERIES")]
    pub queries: PathBuf,
    /// Ground truth (.ivecs); recall is reported as unavailable without it.
    #[arg(long, env = "VECPAGE_GT")]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Overrides the calibrated theta.
    #[arg(long, env = "VECPAGE_THETA")]
    pub theta: Option<f64>,
    #[command(flatten)]
    pub cache: CacheArgs,
    /// Worker threads; defaults to min(32, available cores).
    #[arg(long, env = "VECPAGE_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, env = "VECPAGE_REPETITIONS", default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long, env = "VECPAGE_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Baseline report.
    pub a: PathBuf,
    /// Candidate report.
    pub b: PathBuf,
    #[arg(long, env = "VECPAGE_OUT")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
