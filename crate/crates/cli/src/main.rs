use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use desolve::cache::CacheStore;
use desolve::problems::Variants;
use desolve_cli::bench::{bench, BenchSpec, CacheMode, Suite};
use desolve_cli::record::{summarize, write_csv, write_json, write_plot_data};
use desolve_cli::run::{benchmark, parse_grid, parse_method, problem_file, run_single, ApproxKind, RunSpec};
use desolve_cli::{CACHE_DIR_ENV, DEFAULT_CACHE_DIR};

#[derive(Parser)]
#[command(name = "desolve", version, about = "Residual-minimization solver for differential equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem once.
    Solve(SolveArgs),
    /// Repeated runs over a benchmark suite.
    Bench(BenchArgs),
    /// Inspect or empty the model cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
        #[arg(long, global = true, env = CACHE_DIR_ENV, default_value = DEFAULT_CACHE_DIR)]
        cache_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    List,
    Clear,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// mlp or grid
    #[arg(long, default_value = "mlp")]
    approx: ApproxKind,
    /// Hidden layer widths of the network, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "100,100,100")]
    hidden: Vec<usize>,
    /// adam or lm; defaults to adam for mlp and lm for grid.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 20_000)]
    max_iters: usize,
    /// Relative noise applied to cached parameters.
    #[arg(long, default_value_t = desolve::approx::DEFAULT_PERTURB_SIGMA)]
    sigma: f64,
    #[arg(long, env = CACHE_DIR_ENV, default_value = DEFAULT_CACHE_DIR)]
    cache_dir: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Use -2 t u instead of -2 t u' in the Legendre operator.
    #[arg(long)]
    legendre_as_printed: bool,
    /// Read the sixth Painleve coefficient list literally.
    #[arg(long)]
    painleve_vi_literal: bool,
}

impl Common {
    fn run_spec(&self, seed: u64) -> Result<RunSpec> {
        Ok(RunSpec {
            approx: self.approx,
            hidden: self.hidden.clone(),
            method: self.optimizer.as_deref().map(parse_method).transpose()?,
            seed,
            lambda: self.lambda,
            lr: self.lr,
            max_iters: self.max_iters,
            sigma: self.sigma,
        })
    }

    fn variants(&self) -> Variants {
        Variants { legendre_as_printed: self.legendre_as_printed, painleve_vi_literal: self.painleve_vi_literal }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Built-in problem name, e.g. legendre:3 or wave.
    #[arg(long, conflicts_with = "problem_file", required_unless_present = "problem_file")]
    problem: Option<String>,
    /// JSON problem description.
    #[arg(long)]
    problem_file: Option<PathBuf>,
    /// Points per axis: N or N,M.
    #[arg(long)]
    grid: String,
    #[arg(long, value_enum, default_value = "off")]
    cache: OnOff,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write coordinates, solution, reference and error as TSV.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    /// legendre, painleve, pde or all
    #[arg(long)]
    suite: Suite,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Points per axis, comma separated; overrides the suite defaults.
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<usize>>,
    /// on, off or both
    #[arg(long, default_value = "off")]
    cache: CacheMode,
    /// Base seed; run i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn solve(args: SolveArgs) -> Result<()> {
    let c = &args.common;
    let bench = match (&args.problem, &args.problem_file) {
        (Some(name), _) => benchmark(name, c.variants())?,
        (None, Some(path)) => problem_file(path)?,
        (None, None) => unreachable!("clap requires one of the problem flags"),
    };
    let resolution = parse_grid(&args.grid, bench.problem.domain.dimension())?;
    let store = match args.cache {
        OnOff::On => Some(CacheStore::open(&c.cache_dir)?),
        OnOff::Off => None,
    };
    let out = run_single(&bench, &resolution, &c.run_spec(args.seed)?, 0, store.as_ref())?;
    let records = [out.record];
    let mut w = output(c.out.as_deref())?;
    match c.format {
        Format::Csv => write_csv(&mut w, &records, None)?,
        Format::Json => {
            write_json(&mut w, &records, None)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    if let Some(path) = &args.plot_data {
        let file = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        let points: Vec<Vec<f64>> = out.grid.points().collect();
        write_plot_data(file, &out.grid.domain().axis_names().iter().map(|s| s.to_string()).collect::<Vec<_>>(), &points, &out.solution, out.reference.as_deref())?;
    }
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let c = &args.common;
    let spec = BenchSpec {
        suite: args.suite,
        runs: args.runs,
        grids: args.grids.clone(),
        cache: args.cache,
        cache_dir: c.cache_dir.clone(),
        seed: args.seed,
        run: c.run_spec(args.seed)?,
        variants: c.variants(),
    };
    let records = bench(&spec, |r| {
        log::info!(
            "{} grid {:?} run {} cache {}: {:.2}s loss {:.3e} rmse {:?}",
            r.problem, r.grid, r.run, r.cache, r.time_s, r.loss_total, r.rmse
        )
    })?;
    let summary = summarize(&records);
    let mut w = output(c.out.as_deref())?;
    match c.format {
        Format::Csv => write_csv(&mut w, &records, Some(&summary))?,
        Format::Json => {
            write_json(&mut w, &records, Some(&summary))?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cache(action: CacheAction, dir: &Path) -> Result<()> {
    let store = CacheStore::open(dir)?;
    match action {
        CacheAction::List => {
            let mut out = io::stdout().lock();
            writeln!(out, "key\tentries\tbest_norm")?;
            for k in store.list()? {
                let norm = k.best_norm.map(|n| format!("{n:e}")).unwrap_or_default();
                writeln!(out, "{}\t{}\t{}", k.key, k.entries, norm)?;
            }
        }
        CacheAction::Clear => {
            store.clear()?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Solve(args) => solve(args),
        Command::Bench(args) => run_bench(args),
        Command::Cache { action, cache_dir } => cache(action, &cache_dir),
    }
}
