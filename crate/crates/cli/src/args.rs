use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gcdlab", version, about = "GCD sums, dilated sawtooth series and dyadic coupling experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every Monte Carlo stream.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output file; relative paths resolve against GCDLAB_OUT_DIR when set.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `key = value` file supplying flags not given on the command line.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Linear,
    Lacunary,
    Squares,
    /// Ascending 23-smooth numbers with exponents <= 2.
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Joint,
    Independent,
}

#[derive(Debug, Args)]
pub struct SetArgs {
    /// Comma-separated distinct positive integers.
    #[arg(long, value_delimiter = ',', conflicts_with = "set_file")]
    pub set: Vec<u64>,
    /// File with one term per line, `m` or `c m` for `2^c m`.
    #[arg(long)]
    pub set_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FunctionArg {
    /// `sawtooth`, `square` or a file of `start slope intercept` lines.
    #[arg(long, default_value = "sawtooth")]
    pub function: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalized GCD form of a set.
    GcdForm {
        #[command(flatten)]
        set: SetArgs,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
    },
    /// Gál-type sets and their growth ratios.
    GalBuild {
        #[arg(long, value_delimiter = ',', required = true)]
        psi: Vec<u64>,
    },
    /// Swap search started from a Gál set.
    GalSearch {
        #[arg(long)]
        psi: u64,
        #[arg(long, default_value_t = 1000)]
        budget: usize,
        /// Candidates are drawn from 1..=pool.
        #[arg(long, default_value_t = 1000)]
        pool: u64,
    },
    /// Upper bounds for the GCD form against Gál sets.
    BoundEval {
        #[arg(long)]
        alpha: f64,
        #[arg(long = "N", value_delimiter = ',', required = true)]
        n: Vec<u64>,
        /// Constant in the exponential factor of the product bound.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Constant of the simple bound; fitted on the Gál sets when absent.
        #[arg(long)]
        c4: Option<f64>,
    },
    /// The `J` schedule at `N`.
    ScheduleEval {
        #[arg(long = "N")]
        n: u64,
        /// `auto` for `1 / loglog N`, or a value in (0, 1).
        #[arg(long, default_value = "auto")]
        eps: String,
        #[arg(long, default_value_t = 4.0)]
        c6: f64,
    },
    /// Exact `∫ f(m x) f(n x) dx`.
    InnerProduct {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        n: u64,
        #[command(flatten)]
        function: FunctionArg,
    },
    /// Exact `‖Σ c_k f(n_k x)‖^2`, optionally with a Monte Carlo check.
    L2Norm {
        #[command(flatten)]
        set: SetArgs,
        /// Weight file of `lo hi value` lines.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[command(flatten)]
        function: FunctionArg,
    },
    /// Star and extreme discrepancy of points in [0, 1).
    Discrepancy {
        #[arg(long, value_delimiter = ',', required = true)]
        points: Vec<f64>,
    },
    /// Koksma's inequality for `{n_k x}`.
    Koksma {
        #[arg(long, value_enum, default_value_t = Family::Linear)]
        family: Family,
        #[arg(long = "N")]
        n: usize,
        /// Point, floored onto the `2^-64` grid.
        #[arg(long)]
        x: f64,
        #[command(flatten)]
        function: FunctionArg,
    },
    /// Distances, bounds and independence of coupled blocks.
    CouplingCheck {
        /// `p:q:terms` with terms `m` or `2^c*m`, comma separated; repeat or
        /// separate blocks with `;`.
        #[arg(long, required = true)]
        block: Vec<String>,
        #[command(flatten)]
        function: FunctionArg,
    },
    /// Frequency of `Z >= 1` for `r` shifted copies of a Gál set.
    CltProbe {
        #[arg(long, default_value_t = 16)]
        psi: u64,
        #[arg(long, default_value_t = 64)]
        r: u64,
        #[arg(long, default_value_t = 10000)]
        samples: usize,
        #[command(flatten)]
        function: FunctionArg,
    },
    /// Block schedule, shifted sets and weights of the divergent series.
    BuildCounterexample {
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Per-block sums of `c_i^2 (loglog i)^γ ε_i`.
    WeightCheck {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        /// Sequence `ε_i` in the sum: `one`, `inv-log` or `inv-loglog:a`.
        #[arg(long, default_value = "one")]
        weight_eps: String,
        /// Number of blocks summed (default: all).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Frequencies of `Z_k >= 1` per block.
    DivergenceProbe {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(long, default_value_t = 10000)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = Mode::Independent)]
        mode: Mode,
        #[arg(long)]
        zero_weights: bool,
        #[command(flatten)]
        function: FunctionArg,
    },
    /// Doubling and summability checks for `φ`.
    PhiCheck {
        /// `log:a`, `loglog:b`, `const:c` or comma-separated values.
        #[arg(long)]
        phi: String,
        #[arg(long, default_value_t = 1 << 24)]
        horizon: u64,
    },
    /// Monte Carlo `E max S_k^2 / (N (loglog N)^4)`.
    MaxStat {
        #[arg(long, value_enum, default_value_t = Family::Linear)]
        family: Family,
        #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096, 8192, 16384])]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[command(flatten)]
        function: FunctionArg,
    },
    /// Exceedance frequencies of `max |S_k|` against `C / φ^2`.
    TailProbe {
        #[arg(long, value_enum, default_value_t = Family::Linear)]
        family: Family,
        #[arg(long)]
        phi: String,
        #[arg(long, value_delimiter = ',', default_values_t = [10u32, 12, 14])]
        exponents: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5f64, 1.0, 2.0])]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[command(flatten)]
        function: FunctionArg,
    },
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Block sizes `ψ(k)`.
    #[arg(long, value_delimiter = ',', conflicts_with = "eps")]
    pub psi: Vec<u64>,
    /// Truncated set counts `r_k` (default `ψ(k)^3`).
    #[arg(long, value_delimiter = ',')]
    pub r: Vec<u128>,
    /// Choose `ψ` adaptively for `ε_i`: `inv-log` or `inv-loglog:a`.
    #[arg(long)]
    pub eps: Option<String>,
    /// Number of blocks for adaptive schedules.
    #[arg(long, default_value_t = 3)]
    pub blocks: usize,
}
