//! Discrete residuals of a boundary problem over a grid.
//!
//! A [`ResidualPlan`] is built once per (problem, grid, shift). Every
//! derivative factor of every term at every residual point becomes a short
//! list of `(node, weight)` pairs into a shared node table. Evaluating the
//! residuals is then one batched field evaluation followed by sparse dot
//! products, and the adjoint is the transpose of the same lists.

use std::collections::HashMap;

use ndarray::Array2;
use thiserror::Error;

use crate::approx::{ApproxError, EvalNodes, FieldApprox};
use crate::expr::{BoundExpr, Expr, ExprError};
use crate::fdiff::{stencil_at_with_steps, StencilError};
use crate::mesh::{Grid, PointClass};
use crate::operators::{resolve_locations, BoundaryProblem, LocationError, Term};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidualError {
    #[error("{context}: {source}")]
    Expr { context: String, source: ExprError },
    #[error("{context}: {source}")]
    Stencil { context: String, source: StencilError },
    #[error("{context}: {source}")]
    Location { context: String, source: LocationError },
    #[error("field evaluation failed: {0}")]
    Approx(#[from] ApproxError),
    #[error("shift must have one positive entry per axis")]
    BadShift,
}

/// Finite-difference shift used when sampling the field.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Shift {
    /// Use the grid step per axis; every sample lands on a grid node.
    #[default]
    GridStep,
    /// Explicit per-axis shift; samples are continuous coordinates
    /// (mesh-free evaluation, not usable with a grid field).
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone)]
struct PlannedFactor<T> {
    entries: Vec<(usize, T)>,
    power: u32,
}

#[derive(Debug, Clone)]
struct PlannedTerm<T> {
    coeff: T,
    factors: Vec<PlannedFactor<T>>,
}

#[derive(Debug, Clone)]
struct Row<T> {
    point: usize,
    target: T,
    terms: Vec<PlannedTerm<T>>,
}

/// Precomputed residual rows for a set of grid points.
#[derive(Debug, Clone)]
pub struct RowSet<T> {
    rows: Vec<Row<T>>,
}

impl<T: Real> RowSet<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Grid index of every row.
    pub fn points(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.point).collect()
    }

    /// `sum_terms coeff * prod (D u)^p - target` per row.
    pub fn residuals(&self, values: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|row| {
                let lhs = row.terms.iter().fold(T::zero(), |acc, term| {
                    let product = term
                        .factors
                        .iter()
                        .fold(term.coeff, |p, f| p * derivative(f, values).powi(f.power as i32));
                    acc + product
                });
                lhs - row.target
            })
            .collect()
    }

    /// Adds `sum_r weights_r * d residual_r / d values` into `out`.
    pub fn accumulate_adjoint(&self, values: &[T], weights: &[T], out: &mut [T]) {
        let mut scratch = Scratch::default();
        for (row, &w) in self.rows.iter().zip(weights) {
            if w != T::zero() {
                row_gradient(row, values, w, &mut scratch, |node, g| out[node] = out[node] + g);
            }
        }
    }

    /// Sparse Jacobian: per row, `(node, d residual / d value)` pairs. A node
    /// may appear more than once in a row.
    pub fn jacobian(&self, values: &[T]) -> Vec<Vec<(usize, T)>> {
        let mut scratch = Scratch::default();
        self.rows
            .iter()
            .map(|row| {
                let mut out = Vec::new();
                row_gradient(row, values, T::one(), &mut scratch, |node, g| out.push((node, g)));
                out
            })
            .collect()
    }
}

struct Scratch<T> {
    derivs: Vec<T>,
    powered: Vec<T>,
}

impl<T> Default for Scratch<T> {
    fn default() -> Self {
        Scratch { derivs: Vec::new(), powered: Vec::new() }
    }
}

fn row_gradient<T: Real>(row: &Row<T>, values: &[T], w: T, scratch: &mut Scratch<T>, mut emit: impl FnMut(usize, T)) {
    for term in &row.terms {
        scratch.derivs.clear();
        scratch.powered.clear();
        for f in &term.factors {
            let d = derivative(f, values);
            scratch.derivs.push(d);
            scratch.powered.push(d.powi(f.power as i32));
        }
        for (j, f) in term.factors.iter().enumerate() {
            let others = scratch
                .powered
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .fold(T::one(), |p, (_, &v)| p * v);
            let dpow = T::of(f.power as f64) * scratch.derivs[j].powi(f.power as i32 - 1);
            let scale = w * term.coeff * dpow * others;
            if scale == T::zero() {
                continue;
            }
            for &(node, weight) in &f.entries {
                emit(node, scale * weight);
            }
        }
    }
}

fn derivative<T: Real>(f: &PlannedFactor<T>, values: &[T]) -> T {
    f.entries.iter().fold(T::zero(), |acc, &(node, w)| acc + w * values[node])
}

/// Deduplicating table of field sample points.
struct NodeTable<'g> {
    grid: &'g Grid,
    shift: Option<Vec<f64>>,
    index: HashMap<Vec<i64>, usize>,
    coords: Vec<f64>,
    grid_index: Vec<Option<usize>>,
}

impl<'g> NodeTable<'g> {
    fn new(grid: &'g Grid, shift: &Shift) -> Result<Self, ResidualError> {
        let shift = match shift {
            Shift::GridStep => None,
            Shift::Fixed(h) => {
                if h.len() != grid.dimension() || h.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(ResidualError::BadShift);
                }
                if h.as_slice() == grid.steps() {
                    None
                } else {
                    Some(h.clone())
                }
            }
        };
        Ok(NodeTable { grid, shift, index: HashMap::new(), coords: Vec::new(), grid_index: Vec::new() })
    }

    fn node(&mut self, point: usize, offset: &[i32]) -> usize {
        let dim = self.grid.dimension();
        let multi = self.grid.multi_index(point);
        let (key, coord, on_grid) = match &self.shift {
            None => {
                let lattice: Vec<i64> = multi.iter().zip(offset).map(|(&i, &o)| i as i64 + o as i64).collect();
                let on_grid = self.grid.flat_index(&lattice);
                let coord: Vec<f64> = match on_grid {
                    Some(g) => self.grid.point(g),
                    None => (0..dim)
                        .map(|k| self.grid.domain().axes()[k].lo + lattice[k] as f64 * self.grid.steps()[k])
                        .collect(),
                };
                (lattice, coord, on_grid)
            }
            Some(h) => {
                let mut key = vec![point as i64];
                key.extend(offset.iter().map(|&o| o as i64));
                let base = self.grid.point(point);
                let coord = (0..dim).map(|k| base[k] + offset[k] as f64 * h[k]).collect();
                let on_grid = offset.iter().all(|&o| o == 0).then_some(point);
                (key, coord, on_grid)
            }
        };
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.grid_index.len();
        self.index.insert(key, id);
        self.coords.extend(coord);
        self.grid_index.push(on_grid);
        id
    }

    fn finish(self) -> EvalNodes {
        let n = self.grid_index.len();
        let coords = Array2::from_shape_vec((n, self.grid.dimension()), self.coords).expect("node table shape");
        EvalNodes { coords, grid: self.grid_index }
    }
}

struct BoundTerm {
    coeff: BoundExpr,
    factors: Vec<(Vec<u32>, u32)>,
}

fn bind_terms(terms: &[Term], grid: &Grid, context: &str) -> Result<Vec<BoundTerm>, ResidualError> {
    let axes = grid.domain().axis_names();
    terms
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let ctx = || format!("{context}[{i}]");
            let coeff = t
                .coeff
                .bind(&axes)
                .map_err(|source| ResidualError::Expr { context: ctx(), source })?;
            let factors = t
                .factors
                .iter()
                .map(|f| {
                    let orders = f
                        .derivative
                        .per_axis(grid.domain())
                        .map_err(|source| ResidualError::Location { context: ctx(), source })?;
                    Ok((orders, f.power))
                })
                .collect::<Result<_, ResidualError>>()?;
            Ok(BoundTerm { coeff, factors })
        })
        .collect()
}

fn plan_rows<T: Real>(
    terms: &[Term],
    target: &Expr,
    grid: &Grid,
    points: &[usize],
    nodes: &mut NodeTable<'_>,
    context: &str,
) -> Result<RowSet<T>, ResidualError> {
    let bound = bind_terms(terms, grid, context)?;
    let axes = grid.domain().axis_names();
    let target = target
        .bind(&axes)
        .map_err(|source| ResidualError::Expr { context: format!("{context} target"), source })?;
    let mut rows = Vec::with_capacity(points.len());
    for &p in points {
        let x = grid.point(p);
        let eval = |e: &BoundExpr, what: &str| {
            e.eval(&x).map_err(|source| ResidualError::Expr {
                context: format!("{context} {what} at {x:?}"),
                source,
            })
        };
        let mut planned = Vec::with_capacity(bound.len());
        for term in &bound {
            let coeff = eval(&term.coeff, "coefficient")?;
            let mut factors = Vec::with_capacity(term.factors.len());
            for (orders, power) in &term.factors {
                let steps = nodes.shift.as_deref().unwrap_or(grid.steps());
                let stencil = stencil_at_with_steps(grid, orders, p, steps).map_err(|source| ResidualError::Stencil {
                    context: format!("{context} at point {p}"),
                    source,
                })?;
                let entries = stencil
                    .entries()
                    .iter()
                    .map(|(offset, w)| (nodes.node(p, offset), T::of(*w)))
                    .collect();
                factors.push(PlannedFactor { entries, power: *power });
            }
            planned.push(PlannedTerm { coeff: T::of(coeff), factors });
        }
        rows.push(Row { point: p, target: T::of(eval(&target, "target")?), terms: planned });
    }
    Ok(RowSet { rows })
}

/// Interior and boundary residual rows of a problem on a grid.
#[derive(Debug, Clone)]
pub struct ResidualPlan<T> {
    nodes: EvalNodes,
    interior: RowSet<T>,
    /// One row set per condition, in declaration order.
    conditions: Vec<RowSet<T>>,
}

impl<T: Real> ResidualPlan<T> {
    pub fn build(problem: &BoundaryProblem, grid: &Grid, shift: &Shift) -> Result<Self, ResidualError> {
        let mut nodes = NodeTable::new(grid, shift)?;
        let interior_points: Vec<usize> = (0..grid.len())
            .filter(|&i| grid.classify(i) == Ok(PointClass::Interior))
            .collect();
        let interior = plan_rows(
            &problem.operator.terms,
            &problem.operator.rhs,
            grid,
            &interior_points,
            &mut nodes,
            "terms",
        )?;
        let mut conditions = Vec::with_capacity(problem.conditions.len());
        for (i, bc) in problem.conditions.iter().enumerate() {
            let context = format!("conditions[{i}]");
            let points = resolve_locations(bc, grid)
                .map_err(|source| ResidualError::Location { context: context.clone(), source })?;
            conditions.push(plan_rows(&bc.operator, &bc.target, grid, &points, &mut nodes, &context)?);
        }
        Ok(ResidualPlan { nodes: nodes.finish(), interior, conditions })
    }

    pub fn nodes(&self) -> &EvalNodes {
        &self.nodes
    }

    pub fn interior(&self) -> &RowSet<T> {
        &self.interior
    }

    pub fn conditions(&self) -> &[RowSet<T>] {
        &self.conditions
    }

    pub fn boundary_len(&self) -> usize {
        self.conditions.iter().map(RowSet::len).sum()
    }

    /// Interior residuals and the pooled condition residuals for the given
    /// node values.
    pub fn residuals_from_values(&self, values: &[T]) -> (Vec<T>, Vec<T>) {
        let interior = self.interior.residuals(values);
        let boundary = self.conditions.iter().flat_map(|c| c.residuals(values)).collect();
        (interior, boundary)
    }

    pub fn residuals<F: FieldApprox<T>>(&self, field: &F) -> Result<(Vec<T>, Vec<T>), ResidualError> {
        let values = field.eval(&self.nodes)?;
        Ok(self.residuals_from_values(&values))
    }

    /// Sparse Jacobian rows of the interior residuals followed by the pooled
    /// condition residuals.
    pub fn jacobian(&self, values: &[T]) -> Vec<Vec<(usize, T)>> {
        let mut rows = self.interior.jacobian(values);
        for c in &self.conditions {
            rows.extend(c.jacobian(values));
        }
        rows
    }

    /// Adjoint of [`Self::residuals_from_values`].
    pub fn adjoint(&self, values: &[T], interior_weights: &[T], boundary_weights: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); values.len()];
        self.interior.accumulate_adjoint(values, interior_weights, &mut out);
        let mut start = 0;
        for c in &self.conditions {
            c.accumulate_adjoint(values, &boundary_weights[start..start + c.len()], &mut out);
            start += c.len();
        }
        out
    }
}

/// Residual of `sum terms - rhs` at the given grid points.
pub fn apply_operator<T: Real, F: FieldApprox<T>>(
    terms: &[Term],
    rhs: &Expr,
    field: &F,
    grid: &Grid,
    points: &[usize],
    shift: &Shift,
) -> Result<Vec<T>, ResidualError> {
    let mut nodes = NodeTable::new(grid, shift)?;
    let rows = plan_rows::<T>(terms, rhs, grid, points, &mut nodes, "terms")?;
    let values = field.eval(&nodes.finish())?;
    Ok(rows.residuals(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{GridField, MlpField};
    use crate::mesh::{Axis, Domain};
    use crate::operators::{DerivativeSpec, Factor};
    use proptest::prelude::*;

    fn line(n: usize) -> Grid {
        Grid::new(Domain::interval("t", 0.0, 1.0).unwrap(), &[n]).unwrap()
    }

    fn grid_field_of(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> GridField<f64> {
        GridField::from_values(grid, grid.points().map(|p| f(&p)).collect()).unwrap()
    }

    #[test]
    fn identity_term_gives_pointwise_difference() {
        let g = line(7);
        let field = grid_field_of(&g, |p| p[0] * p[0]);
        let rhs = Expr::parse("sin(t)").unwrap();
        let pts: Vec<usize> = (0..7).collect();
        let r = apply_operator(&[Term::identity()], &rhs, &field, &g, &pts, &Shift::GridStep).unwrap();
        for (i, p) in g.points().enumerate() {
            assert!((r[i] - (p[0] * p[0] - p[0].sin())).abs() < 1e-15);
        }
    }

    #[test]
    fn legendre_cubic_is_captured_exactly() {
        let g = line(100);
        let field = grid_field_of(&g, |p| (5.0 * p[0].powi(3) - 3.0 * p[0]) / 2.0);
        let terms = vec![
            Term::linear(Expr::parse("1 - t^2").unwrap(), DerivativeSpec::along("t", 2)),
            Term::linear(Expr::parse("-2*t").unwrap(), DerivativeSpec::along("t", 1)),
            Term::linear(Expr::Const(12.0), DerivativeSpec::identity()),
        ];
        let interior = g.interior_indices();
        let r = apply_operator(&terms, &Expr::Const(0.0), &field, &g, &interior, &Shift::GridStep).unwrap();
        // second differences are exact on cubics; the central first difference
        // of t^3 carries an extra h^2, so the residual is exactly -5 t h^2
        let h = g.steps()[0];
        for (res, &i) in r.iter().zip(&interior) {
            let t = g.point(i)[0];
            assert!((res + 5.0 * t * h * h).abs() <= 1e-8, "{res} at {t}");
        }
    }

    #[test]
    fn mesh_free_shift_samples_off_grid() {
        let g = line(5);
        let mut net = MlpField::<f64>::zeros(&[1, 1]).unwrap();
        net.set_params(&[1.0, 0.0]); // u(t) = t
        let terms = vec![Term::linear(Expr::Const(1.0), DerivativeSpec::along("t", 1))];
        let r = apply_operator(&terms, &Expr::Const(1.0), &net, &g, &[2], &Shift::Fixed(vec![0.01])).unwrap();
        assert!(r[0].abs() < 1e-12, "{r:?}");
        let grid = GridField::<f64>::zeros(&g);
        assert!(matches!(
            apply_operator(&terms, &Expr::Const(1.0), &grid, &g, &[2], &Shift::Fixed(vec![0.01])),
            Err(ResidualError::Approx(ApproxError::OffGrid))
        ));
    }

    #[test]
    fn plan_shares_grid_nodes() {
        let d = Domain::new(vec![Axis::new("x", 0.0, 1.0), Axis::new("t", 0.0, 1.0)]).unwrap();
        let g = Grid::new(d, &[6, 6]).unwrap();
        let p = crate::problems::wave().problem;
        let plan = ResidualPlan::<f64>::build(&p, &g, &Shift::GridStep).unwrap();
        assert_eq!(plan.nodes().len(), 36);
        assert_eq!(plan.interior().len(), 16);
        assert_eq!(plan.boundary_len(), 24);
    }

    fn wave_operator() -> Vec<Term> {
        vec![
            Term::linear(Expr::Const(1.0), DerivativeSpec::along("t", 2)),
            Term::linear(Expr::Const(-0.25), DerivativeSpec::along("x", 2)),
        ]
    }

    #[test]
    fn wave_truncation_is_second_order() {
        let exact = |p: &[f64]| {
            use std::f64::consts::PI;
            (PI * p[0]).sin() * ((PI * p[1] / 2.0).cos() + (PI * p[1] / 2.0).sin())
        };
        let mut worst = Vec::new();
        for n in [10, 20, 30] {
            let d = Domain::new(vec![Axis::new("x", 0.0, 1.0), Axis::new("t", 0.0, 1.0)]).unwrap();
            let g = Grid::new(d, &[n, n]).unwrap();
            let f = grid_field_of(&g, exact);
            let pts = g.interior_indices();
            let r = apply_operator(&wave_operator(), &Expr::Const(0.0), &f, &g, &pts, &Shift::GridStep).unwrap();
            let m = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let h = g.steps()[0];
            assert!(m <= 30.0 * h * h, "n={n}: {m} vs {}", 30.0 * h * h);
            worst.push(m);
        }
        assert!(worst[2] < worst[1] && worst[1] < worst[0]);
    }

    fn random_terms() -> Vec<Term> {
        vec![
            Term::linear(Expr::parse("1 + x*t").unwrap(), DerivativeSpec::along("t", 1)),
            Term::linear(Expr::parse("cos(x)").unwrap(), DerivativeSpec::along("x", 2)),
            Term::linear(Expr::Const(-3.0), DerivativeSpec::new([("x", 1), ("t", 1)])),
            Term::linear(Expr::Const(0.5), DerivativeSpec::identity()),
        ]
    }

    proptest! {
        #[test]
        fn linear_operator_is_linear_in_field(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let d = Domain::new(vec![Axis::new("x", 0.0, 1.0), Axis::new("t", 0.0, 2.0)]).unwrap();
            let g = Grid::new(d, &[5, 6]).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let rhs = Expr::parse("x - t").unwrap();
            let pts: Vec<usize> = (0..g.len()).collect();
            let eval = |vals: Vec<f64>| {
                let f = GridField::from_values(&g, vals).unwrap();
                apply_operator(&random_terms(), &rhs, &f, &g, &pts, &Shift::GridStep).unwrap()
            };
            let (ru, rv, rm) = (eval(u), eval(v), eval(mix));
            let f: Vec<f64> = g.points().map(|p| p[0] - p[1]).collect();
            for i in 0..pts.len() {
                let lhs = rm[i] + f[i];
                let rhs = a * (ru[i] + f[i]) + b * (rv[i] + f[i]);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0) * 10.0);
            }
        }

        #[test]
        fn term_order_does_not_change_residuals(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let d = Domain::new(vec![Axis::new("x", 0.0, 1.0), Axis::new("t", 0.0, 2.0)]).unwrap();
            let g = Grid::new(d, &[5, 5]).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = GridField::from_values(&g, (0..g.len()).map(|_| rng.gen_range(-1.0f64..1.0)).collect()).unwrap();
            let mut terms = random_terms();
            terms.push(Term::new(Expr::Const(6.0), vec![
                Factor::new(DerivativeSpec::identity(), 1),
                Factor::new(DerivativeSpec::along("x", 1), 2),
            ]));
            let pts: Vec<usize> = (0..g.len()).collect();
            let a = apply_operator(&terms, &Expr::Const(0.0), &f, &g, &pts, &Shift::GridStep).unwrap();
            terms.reverse();
            let b = apply_operator(&terms, &Expr::Const(0.0), &f, &g, &pts, &Shift::GridStep).unwrap();
            for (&x, &y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0));
            }
        }
    }
}
