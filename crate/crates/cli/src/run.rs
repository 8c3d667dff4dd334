//! One training run from a problem specification.

use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use desolve::approx::{FieldApprox, GridField, MlpField, DEFAULT_HIDDEN, DEFAULT_PERTURB_SIGMA};
use desolve::cache::CacheStore;
use desolve::mesh::Grid;
use desolve::problems::{self, Benchmark, Reference, Variants};
use desolve::residual::Shift;
use desolve::train::{train, AdamConfig, Method, Objective, StopCriterion, StopReason, TrainConfig};
use desolve::BoundaryProblem;

use crate::record::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxKind {
    Mlp,
    Grid,
}

impl FromStr for ApproxKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ApproxKind::Mlp),
            "grid" => Ok(ApproxKind::Grid),
            _ => bail!("unknown approximation `{s}` (expected mlp or grid)"),
        }
    }
}

impl ApproxKind {
    /// Grid fields are solved with Levenberg-Marquardt, networks with Adam.
    pub fn default_method(self) -> Method {
        match self {
            ApproxKind::Mlp => Method::Adam,
            ApproxKind::Grid => Method::LevenbergMarquardt,
        }
    }
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::Adam => "adam",
        Method::LevenbergMarquardt => "lm",
    }
}

pub fn parse_method(s: &str) -> Result<Method> {
    match s {
        "adam" => Ok(Method::Adam),
        "lm" => Ok(Method::LevenbergMarquardt),
        _ => bail!("unknown optimizer `{s}` (expected adam or lm)"),
    }
}

/// Resolves a built-in benchmark name.
pub fn benchmark(name: &str, variants: Variants) -> Result<Benchmark> {
    problems::by_name_with(name, variants)
        .ok_or_else(|| anyhow!("unknown problem `{name}`; known problems: {}", problems::names().join(", ")))
}

/// Loads a problem file as a benchmark without reference.
pub fn problem_file(path: &Path) -> Result<Benchmark> {
    let problem = BoundaryProblem::from_json_file(path).with_context(|| format!("{}", path.display()))?;
    let diagnostics = problem.validate();
    if !diagnostics.is_empty() {
        let text: Vec<String> = diagnostics.iter().map(|d| format!("{}: {}", d.path, d.message)).collect();
        bail!("{}: invalid problem: {}", path.display(), text.join("; "));
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "file".into());
    Ok(Benchmark { name, problem, reference: Reference::ResidualOnly })
}

/// Parses `N` or `N,M,...`; a single value is repeated for every axis.
pub fn parse_grid(text: &str, dimension: usize) -> Result<Vec<usize>> {
    let values: Vec<usize> = text
        .split([',', 'x'])
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad grid size `{s}` in `{text}`")))
        .collect::<Result<_>>()?;
    match values.len() {
        1 => Ok(vec![values[0]; dimension]),
        n if n == dimension => Ok(values),
        n => bail!("grid `{text}` has {n} sizes but the problem has {dimension} axes"),
    }
}

/// Everything needed to replay one run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub approx: ApproxKind,
    /// Hidden widths of the network.
    pub hidden: Vec<usize>,
    pub method: Option<Method>,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub lr: f64,
    pub max_iters: usize,
    pub sigma: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            approx: ApproxKind::Mlp,
            hidden: DEFAULT_HIDDEN.to_vec(),
            method: None,
            seed: 0,
            lambda: None,
            lr: AdamConfig::default().lr,
            max_iters: StopCriterion::default().max_iters,
            sigma: DEFAULT_PERTURB_SIGMA,
        }
    }
}

impl RunSpec {
    pub fn method(&self) -> Method {
        self.method.unwrap_or_else(|| self.approx.default_method())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: self.method(),
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
            stop: StopCriterion { max_iters: self.max_iters, ..StopCriterion::default() },
            perturb_sigma: self.sigma,
            seed: self.seed,
        }
    }
}

/// Result of [`run_single`]: the record plus the solution on the grid.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub grid: Grid,
    pub solution: Vec<f64>,
    pub reference: Option<Vec<f64>>,
}

pub fn run_single(
    bench: &Benchmark,
    resolution: &[usize],
    spec: &RunSpec,
    run: usize,
    cache: Option<&CacheStore>,
) -> Result<RunOutput> {
    let mut problem = bench.problem.clone();
    if let Some(lambda) = spec.lambda {
        problem.loss.lambda = lambda;
    }
    let grid = Grid::new(problem.domain.clone(), resolution)?;
    let objective = Objective::<f64>::new(&problem, &grid, &Shift::GridStep)
        .with_context(|| format!("{} on grid {resolution:?}", bench.name))?;
    let config = spec.train_config();
    let reference = bench.reference.on_grid(&grid);

    let (outcome, arch, solution) = match spec.approx {
        ApproxKind::Mlp => {
            let mut layers = vec![grid.dimension()];
            layers.extend(&spec.hidden);
            layers.push(1);
            let field = MlpField::<f64>::glorot(&layers, spec.seed)?;
            let out = train(&objective, field, &config, cache)?;
            let arch = out.field.architecture().to_string();
            let values = out.field.eval(&desolve::approx::EvalNodes::grid_nodes(&grid))?;
            (strip(out), arch, values)
        }
        ApproxKind::Grid => {
            let out = train(&objective, GridField::<f64>::zeros(&grid), &config, cache)?;
            let arch = out.field.architecture().to_string();
            let values = out.field.values().to_vec();
            (strip(out), arch, values)
        }
    };

    let rmse = reference.as_ref().map(|r| {
        let sum: f64 = solution.iter().zip(r).map(|(u, v)| (u - v).powi(2)).sum();
        (sum / solution.len() as f64).sqrt()
    });
    let stop_reason = match outcome.stop {
        StopReason::Converged => "converged".to_string(),
        StopReason::MaxIterations => "max_iterations".to_string(),
        StopReason::Diverged { iteration, .. } => format!("diverged@{iteration}"),
    };
    let record = RunRecord {
        problem: bench.name.clone(),
        grid: resolution.to_vec(),
        run,
        seed: spec.seed,
        cache: cache.is_some(),
        time_s: outcome.wall_time,
        loss_total: outcome.best[0],
        loss_interior: outcome.best[1],
        loss_boundary: outcome.best[2],
        rmse,
        lambda: problem.loss.lambda,
        lr: spec.lr,
        arch,
        stop_iters: spec.max_iters,
        method: method_name(spec.method()).into(),
        iterations: outcome.iterations,
        stop_reason,
        warm_started: outcome.warm_started,
    };
    Ok(RunOutput { record, grid, solution, reference })
}

struct Stripped {
    wall_time: f64,
    best: [f64; 3],
    iterations: usize,
    stop: StopReason,
    warm_started: bool,
}

fn strip<F>(out: desolve::train::TrainOutcome<f64, F>) -> Stripped {
    Stripped {
        wall_time: out.wall_time.as_secs_f64(),
        best: [out.best.total, out.best.interior, out.best.boundary],
        iterations: out.iterations,
        stop: out.stop,
        warm_started: out.warm_started,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("100", 1).unwrap(), vec![100]);
        assert_eq!(parse_grid("10", 2).unwrap(), vec![10, 10]);
        assert_eq!(parse_grid("10,20", 2).unwrap(), vec![10, 20]);
        assert_eq!(parse_grid("10x20", 2).unwrap(), vec![10, 20]);
        assert!(parse_grid("10,20", 1).is_err());
        assert!(parse_grid("ten", 1).is_err());
    }

    #[test]
    fn unknown_problem_lists_names() {
        let err = benchmark("burgers", Variants::default()).unwrap_err().to_string();
        assert!(err.contains("unknown problem `burgers`"));
        assert!(err.contains("legendre:3"));
    }

    #[test]
    fn default_methods() {
        assert_eq!(RunSpec::default().method(), Method::Adam);
        let grid = RunSpec { approx: ApproxKind::Grid, ..RunSpec::default() };
        assert_eq!(grid.method(), Method::LevenbergMarquardt);
        assert_eq!(parse_method("lm").unwrap(), Method::LevenbergMarquardt);
        assert!(parse_method("sgd").is_err());
    }
}
