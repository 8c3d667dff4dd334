//! Experiment driver for the `desolve` command-line tool.

pub mod bench;
pub mod record;
pub mod run;

pub use bench::{bench, BenchSpec, CacheMode, Suite};
pub use record::{summarize, RunRecord, Stats, Summary, CSV_COLUMNS};
pub use run::{run_single, ApproxKind, RunOutput, RunSpec};

/// Environment variable naming the default cache directory.
pub const CACHE_DIR_ENV: &str = "DESOLVE_CACHE_DIR";

/// Cache directory used when neither the flag nor the variable is set.
pub const DEFAULT_CACHE_DIR: &str = ".desolve-cache";
