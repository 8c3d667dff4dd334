//! Loss assembly, Adam, and the training loop.
//!
//! The loss is
//!
//! ```text
//! total = mean_interior |L u - f|^p + lambda * mean_conditions |b u - g|^q
//! ```
//!
//! where `p`, `q` are 1 or 2 depending on the configured norms and the
//! boundary mean pools the rows of all conditions.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{perturb, ApproxError, FieldApprox, DEFAULT_PERTURB_SIGMA};
use crate::cache::{cache_key, CacheEntry, CacheError, CacheStore};
use crate::mesh::Grid;
use crate::operators::{BoundaryProblem, LossConfig, Norm};
use crate::residual::{ResidualError, ResidualPlan, Shift};
use crate::Real;

/// Totals above this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("problem is invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue<T> {
    pub total: T,
    pub interior: T,
    pub boundary: T,
}

/// Loss and its gradient for one problem on one grid.
#[derive(Debug, Clone)]
pub struct Objective<T> {
    plan: ResidualPlan<T>,
    loss: LossConfig,
    resolution: Vec<usize>,
    key: String,
}

fn reduce<T: Real>(residuals: &[T], norm: Norm) -> T {
    if residuals.is_empty() {
        return T::zero();
    }
    let sum = residuals.iter().fold(T::zero(), |acc, &r| {
        acc + match norm {
            Norm::L1 => r.abs(),
            Norm::L2 => r * r,
        }
    });
    sum / T::of(residuals.len() as f64)
}

/// d(mean |r|^p)/dr, scaled by `scale`.
fn reduce_grad<T: Real>(residuals: &[T], norm: Norm, scale: T) -> Vec<T> {
    if residuals.is_empty() {
        return Vec::new();
    }
    let n = T::of(residuals.len() as f64);
    residuals
        .iter()
        .map(|&r| {
            let d = match norm {
                Norm::L1 => {
                    if r > T::zero() {
                        T::one()
                    } else if r < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                }
                Norm::L2 => (T::one() + T::one()) * r,
            };
            scale * d / n
        })
        .collect()
}

impl<T: Real> Objective<T> {
    pub fn new(problem: &BoundaryProblem, grid: &Grid, shift: &Shift) -> Result<Self, TrainError> {
        let diagnostics = problem.validate();
        if !diagnostics.is_empty() {
            let text: Vec<String> = diagnostics.iter().map(|d| d.to_string()).collect();
            return Err(TrainError::Invalid(text.join("; ")));
        }
        Ok(Objective {
            plan: ResidualPlan::build(problem, grid, shift)?,
            loss: problem.loss,
            resolution: grid.resolution().to_vec(),
            key: cache_key(problem, grid),
        })
    }

    pub fn plan(&self) -> &ResidualPlan<T> {
        &self.plan
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    /// Content hash of the problem and grid (the cache key).
    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    fn lambda(&self) -> T {
        T::of(self.loss.lambda)
    }

    fn value_of(&self, interior: &[T], boundary: &[T]) -> LossValue<T> {
        let i = reduce(interior, self.loss.interior_norm);
        let b = reduce(boundary, self.loss.boundary_norm);
        LossValue { total: i + self.lambda() * b, interior: i, boundary: b }
    }

    pub fn loss<F: FieldApprox<T>>(&self, field: &F) -> Result<LossValue<T>, TrainError> {
        let (interior, boundary) = self.plan.residuals(field)?;
        Ok(self.value_of(&interior, &boundary))
    }

    /// Loss and its exact gradient over the field parameters.
    pub fn loss_grad<F: FieldApprox<T>>(&self, field: &F) -> Result<(LossValue<T>, Vec<T>), TrainError> {
        let mut value = None;
        let (_, grad) = field.eval_and_backward(self.plan.nodes(), &mut |values| {
            let (interior, boundary) = self.plan.residuals_from_values(values);
            value = Some(self.value_of(&interior, &boundary));
            let wi = reduce_grad(&interior, self.loss.interior_norm, T::one());
            let wb = reduce_grad(&boundary, self.loss.boundary_norm, self.lambda());
            self.plan.adjoint(values, &wi, &wb)
        })?;
        Ok((value.expect("upstream closure ran"), grad))
    }

    /// Gradients of the interior part and of the unweighted boundary part,
    /// so that `grad(total) = interior + lambda * boundary`.
    pub fn loss_grad_parts<F: FieldApprox<T>>(&self, field: &F) -> Result<(Vec<T>, Vec<T>), TrainError> {
        let values = field.eval(self.plan.nodes())?;
        let (interior, boundary) = self.plan.residuals_from_values(&values);
        let wi = reduce_grad(&interior, self.loss.interior_norm, T::one());
        let wb = reduce_grad(&boundary, self.loss.boundary_norm, T::one());
        let zi = vec![T::zero(); interior.len()];
        let zb = vec![T::zero(); boundary.len()];
        let gi = field.backward(self.plan.nodes(), &self.plan.adjoint(&values, &wi, &zb))?;
        let gb = field.backward(self.plan.nodes(), &self.plan.adjoint(&values, &zi, &wb))?;
        Ok((gi, gb))
    }

    /// Root mean square of the interior residuals.
    pub fn interior_rms<F: FieldApprox<T>>(&self, field: &F) -> Result<T, TrainError> {
        let (interior, _) = self.plan.residuals(field)?;
        Ok(reduce(&interior, Norm::L2).sqrt())
    }
}

/// Convenience: loss of `field` for `problem` on `grid` with grid-step shift.
pub fn loss<T: Real, F: FieldApprox<T>>(
    problem: &BoundaryProblem,
    field: &F,
    grid: &Grid,
) -> Result<LossValue<T>, TrainError> {
    Objective::new(problem, grid, &Shift::GridStep)?.loss(field)
}

/// Convenience: loss and gradient with grid-step shift.
pub fn loss_grad<T: Real, F: FieldApprox<T>>(
    problem: &BoundaryProblem,
    field: &F,
    grid: &Grid,
) -> Result<(LossValue<T>, Vec<T>), TrainError> {
    Objective::new(problem, grid, &Shift::GridStep)?.loss_grad(field)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        OptimizerState { config, m: vec![T::zero(); len], v: vec![T::zero(); len], step: 0 }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), grad.len(), "parameter/gradient length");
        assert_eq!(params.len(), self.m.len(), "parameter/moment length");
        let c = self.config;
        self.step += 1;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let t = self.step.min(i32::MAX as u64) as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Patience on the windowed mean of the best-so-far loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCriterion {
    pub max_iters: usize,
    pub window: usize,
    pub min_rel_improvement: f64,
    /// Consecutive stagnant windows required before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_patience() -> usize {
    DEFAULT_PATIENCE
}

pub const DEFAULT_PATIENCE: usize = 5;

impl Default for StopCriterion {
    fn default() -> Self {
        StopCriterion { max_iters: 20_000, window: 100, min_rel_improvement: 1e-5, patience: DEFAULT_PATIENCE }
    }
}

impl StopCriterion {
    /// True once the mean best-so-far loss of each of the last `patience`
    /// windows failed to improve on the window before it by the required
    /// relative amount. Checked at window boundaries only.
    pub fn should_stop(&self, totals: &[f64]) -> bool {
        let w = self.window.max(1);
        let k = self.patience.max(1);
        let n = totals.len();
        if n < (k + 1) * w || n % w != 0 {
            return false;
        }
        let start = n - (k + 1) * w;
        let mut best = totals[..start].iter().copied().fold(f64::INFINITY, f64::min);
        let means: Vec<f64> = totals[start..]
            .chunks(w)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&v| {
                        best = best.min(v);
                        best
                    })
                    .sum::<f64>()
                    / w as f64
            })
            .collect();
        means.windows(2).all(|pair| {
            let (previous, current) = (pair[0], pair[1]);
            previous <= 0.0 || (previous - current) / previous < self.min_rel_improvement
        })
    }
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Adam,
    /// Damped Gauss-Newton on the weighted least-squares loss. Needs l2
    /// norms and a field whose parameters are the node values.
    LevenbergMarquardt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub method: Method,
    pub adam: AdamConfig,
    pub stop: StopCriterion,
    /// Relative noise applied to cached parameters on warm start.
    pub perturb_sigma: f64,
    /// Seed of the warm-start perturbation.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Adam,
            adam: AdamConfig::default(),
            stop: StopCriterion::default(),
            perturb_sigma: DEFAULT_PERTURB_SIGMA,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub iteration: usize,
    pub total: f64,
    pub interior: f64,
    pub boundary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// Loss became non-finite or exceeded [`DIVERGENCE_LIMIT`].
    Diverged { iteration: usize, loss: f64 },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T, F> {
    /// Parameters with the lowest recorded total loss.
    pub field: F,
    pub best: LossValue<T>,
    pub history: Vec<HistoryPoint>,
    pub wall_time: Duration,
    pub iterations: usize,
    pub stop: StopReason,
    pub warm_started: bool,
    pub state: OptimizerState<T>,
}

impl<T, F> TrainOutcome<T, F> {
    /// Best-so-far total loss after each iteration.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.history
            .iter()
            .map(|h| {
                best = best.min(h.total);
                best
            })
            .collect()
    }
}

/// Minimizes the objective starting from `field`.
///
/// With a cache store, the best cached entry for the same problem and
/// architecture (perturbed by `config.perturb_sigma`) replaces the initial
/// parameters and optimizer state, and the result is saved on completion.
pub fn train<T: Real, F: FieldApprox<T>>(
    objective: &Objective<T>,
    mut field: F,
    config: &TrainConfig,
    cache: Option<&CacheStore>,
) -> Result<TrainOutcome<T, F>, TrainError> {
    let started = Instant::now();
    let mut state = OptimizerState::new(config.adam, field.params().len());
    let mut warm_started = false;
    if let Some(store) = cache {
        if let Some(entry) = store.lookup(objective.key(), &field.architecture())? {
            field.set_params(&entry.params.iter().map(|&p| T::of(p)).collect::<Vec<_>>());
            perturb(&mut field, config.perturb_sigma, config.seed);
            state.m = entry.m.iter().map(|&p| T::of(p)).collect();
            state.v = entry.v.iter().map(|&p| T::of(p)).collect();
            state.step = entry.step;
            warm_started = true;
            log::debug!("warm start from cache entry with norm {}", entry.sobolev_norm);
        }
    }

    let mut rec = Recorder::default();
    let stop = match config.method {
        Method::Adam => adam_loop(objective, &mut field, &mut state, config, &mut rec)?,
        Method::LevenbergMarquardt => lm_loop(objective, &mut field, &mut state, config, &mut rec)?,
    };
    let Recorder { history, best, iterations, .. } = rec;

    let best = match best {
        Some((value, params)) => {
            field.set_params(&params);
            value
        }
        None => objective.loss(&field)?,
    };
    let wall_time = started.elapsed();

    if let Some(store) = cache {
        let norm = best.total.to_f64_lossy();
        if norm.is_finite() {
            store.save(
                objective.key(),
                &CacheEntry {
                    architecture: field.architecture(),
                    params: field.params().iter().map(|p| p.to_f64_lossy()).collect(),
                    m: state.m.iter().map(|p| p.to_f64_lossy()).collect(),
                    v: state.v.iter().map(|p| p.to_f64_lossy()).collect(),
                    step: state.step,
                    sobolev_norm: norm,
                    grid_resolution: objective.resolution().to_vec(),
                },
            )?;
        }
    }

    Ok(TrainOutcome { field, best, history, wall_time, iterations, stop, warm_started, state })
}

struct Recorder<T> {
    history: Vec<HistoryPoint>,
    totals: Vec<f64>,
    best: Option<(LossValue<T>, Vec<T>)>,
    iterations: usize,
}

impl<T> Default for Recorder<T> {
    fn default() -> Self {
        Recorder { history: Vec::new(), totals: Vec::new(), best: None, iterations: 0 }
    }
}

impl<T: Real> Recorder<T> {
    /// Logs one iterate. Returns the divergence stop reason if the loss is
    /// unusable.
    fn record(&mut self, value: LossValue<T>, params: &[T]) -> Option<StopReason> {
        let total = value.total.to_f64_lossy();
        if !total.is_finite() || total > DIVERGENCE_LIMIT {
            log::warn!("training diverged at iteration {}: loss {total}", self.iterations);
            return Some(StopReason::Diverged { iteration: self.iterations, loss: total });
        }
        self.history.push(HistoryPoint {
            iteration: self.iterations,
            total,
            interior: value.interior.to_f64_lossy(),
            boundary: value.boundary.to_f64_lossy(),
        });
        self.totals.push(total);
        if self.best.as_ref().map_or(true, |(b, _)| value.total < b.total) {
            self.best = Some((value, params.to_vec()));
        }
        self.iterations += 1;
        None
    }
}

fn adam_loop<T: Real, F: FieldApprox<T>>(
    objective: &Objective<T>,
    field: &mut F,
    state: &mut OptimizerState<T>,
    config: &TrainConfig,
    rec: &mut Recorder<T>,
) -> Result<StopReason, TrainError> {
    while rec.iterations < config.stop.max_iters {
        let (value, grad) = objective.loss_grad(field)?;
        if let Some(diverged) = rec.record(value, field.params()) {
            return Ok(diverged);
        }
        if config.stop.should_stop(&rec.totals) {
            return Ok(StopReason::Converged);
        }
        state.step(field.params_mut(), &grad);
    }
    Ok(StopReason::MaxIterations)
}

/// Largest damping tried before giving up on a step.
const LM_MAX_DAMPING: f64 = 1e20;

fn lm_loop<T: Real, F: FieldApprox<T>>(
    objective: &Objective<T>,
    field: &mut F,
    state: &mut OptimizerState<T>,
    config: &TrainConfig,
    rec: &mut Recorder<T>,
) -> Result<StopReason, TrainError> {
    use nalgebra::{DMatrix, DVector};

    let loss = objective.loss_config();
    if loss.interior_norm != Norm::L2 || loss.boundary_norm != Norm::L2 {
        return Err(TrainError::Invalid("levenberg-marquardt needs l2 norms".into()));
    }
    let plan = objective.plan();
    let index = field.node_params(plan.nodes()).ok_or_else(|| {
        TrainError::Invalid("levenberg-marquardt needs a field whose parameters are node values".into())
    })?;
    let n_int = plan.interior().len();
    let n_bnd = plan.boundary_len();
    let row_weight = |r: usize| {
        if r < n_int {
            1.0 / n_int as f64
        } else {
            loss.lambda / n_bnd as f64
        }
    };
    let n = field.params().len();
    let mut damping = 1e-3;
    let mut current = objective.loss(field)?;
    while rec.iterations < config.stop.max_iters {
        if let Some(diverged) = rec.record(current, field.params()) {
            return Ok(diverged);
        }
        let before = current.total.to_f64_lossy();
        if before == 0.0 {
            return Ok(StopReason::Converged);
        }

        let values = field.eval(plan.nodes())?;
        let (interior, boundary) = plan.residuals_from_values(&values);
        let residuals: Vec<f64> = interior.iter().chain(&boundary).map(|r| r.to_f64_lossy()).collect();
        let mut normal = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for (r, row) in plan.jacobian(&values).into_iter().enumerate() {
            let w = row_weight(r);
            let mut dense: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (node, g) in row {
                let p = index[node];
                match dense.iter_mut().find(|(q, _)| *q == p) {
                    Some(entry) => entry.1 += g.to_f64_lossy(),
                    None => dense.push((p, g.to_f64_lossy())),
                }
            }
            for &(a, ga) in &dense {
                rhs[a] -= w * ga * residuals[r];
                for &(b, gb) in &dense {
                    normal[(a, b)] += w * ga * gb;
                }
            }
        }

        let start: Vec<f64> = field.params().iter().map(|p| p.to_f64_lossy()).collect();
        let accepted = loop {
            if damping > LM_MAX_DAMPING {
                break None;
            }
            let mut damped = normal.clone();
            for i in 0..n {
                damped[(i, i)] += damping * normal[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let step = chol.solve(&rhs);
            let trial: Vec<T> = start.iter().zip(step.iter()).map(|(&p, &d)| T::of(p + d)).collect();
            field.set_params(&trial);
            let value = objective.loss(field)?;
            let after = value.total.to_f64_lossy();
            if after.is_finite() && after < before {
                damping = (damping / 3.0).max(1e-15);
                break Some(value);
            }
            damping *= 4.0;
        };
        let Some(value) = accepted else {
            field.set_params(&start.iter().map(|&p| T::of(p)).collect::<Vec<_>>());
            return Ok(StopReason::Converged);
        };
        state.step += 1;
        current = value;
        let after = current.total.to_f64_lossy();
        if (before - after) / before < config.stop.min_rel_improvement {
            rec.record(current, field.params());
            return Ok(StopReason::Converged);
        }
    }
    Ok(StopReason::MaxIterations)
}
