//! Boundary problems as data.
//!
//! An operator is a sum of terms; each term is a coefficient expression times
//! a product of powered derivatives of the unknown `u`:
//!
//! ```text
//! L u = sum_k c_k(x) * prod_j (D^{s_kj} u)^{p_kj}
//! ```
//!
//! Boundary conditions use the same term shape, so Dirichlet, Neumann and
//! Robin-type conditions (and conditions placed inside the domain) share one
//! representation.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::mesh::{Axis, Domain, Grid, MeshError};

/// Problem file format version understood by this crate.
pub const PROBLEM_FORMAT: u32 = 1;

pub const DEFAULT_LAMBDA: f64 = 100.0;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Expr { path: String, source: ExprError },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("cannot read problem file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocationError {
    #[error("unknown axis `{0}`")]
    UnknownAxis(String),
    #[error("point is missing a coordinate for axis `{0}`")]
    MissingCoordinate(String),
    #[error("coordinate {axis} = {value} is not within half a step of a grid node")]
    OffGrid { axis: String, value: f64 },
    #[error("condition locations resolve to no grid points")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn exponent(self) -> u32 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

/// Weighting of the interior and boundary residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub interior_norm: Norm,
    pub boundary_norm: Norm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: DEFAULT_LAMBDA, interior_norm: Norm::L2, boundary_norm: Norm::L2 }
    }
}

/// Derivative orders per axis. An empty spec is the identity (`u` itself).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct DerivativeSpec {
    orders: Vec<(String, u32)>,
}

impl DerivativeSpec {
    pub fn identity() -> Self {
        DerivativeSpec::default()
    }

    /// Repeated axes accumulate; zero orders are dropped.
    pub fn new<S: Into<String>>(orders: impl IntoIterator<Item = (S, u32)>) -> Self {
        let mut merged: Vec<(String, u32)> = Vec::new();
        for (axis, order) in orders {
            let axis = axis.into();
            match merged.iter_mut().find(|(a, _)| *a == axis) {
                Some(entry) => entry.1 += order,
                None => merged.push((axis, order)),
            }
        }
        merged.retain(|(_, o)| *o > 0);
        merged.sort();
        DerivativeSpec { orders: merged }
    }

    pub fn along(axis: &str, order: u32) -> Self {
        DerivativeSpec::new([(axis, order)])
    }

    pub fn orders(&self) -> &[(String, u32)] {
        &self.orders
    }

    pub fn is_identity(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn total_order(&self) -> u32 {
        self.orders.iter().map(|(_, o)| o).sum()
    }

    /// Orders laid out in the domain's axis order.
    pub fn per_axis(&self, domain: &Domain) -> Result<Vec<u32>, LocationError> {
        let mut out = vec![0; domain.dimension()];
        for (axis, order) in &self.orders {
            let k = domain.axis_index(axis).ok_or_else(|| LocationError::UnknownAxis(axis.clone()))?;
            out[k] = *order;
        }
        Ok(out)
    }
}

impl fmt::Display for DerivativeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.orders.is_empty() {
            return f.write_str("u");
        }
        f.write_str("D[")?;
        for (i, (axis, order)) in self.orders.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{axis}:{order}")?;
        }
        f.write_str("]u")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Factor {
    pub derivative: DerivativeSpec,
    pub power: u32,
}

impl Factor {
    pub fn new(derivative: DerivativeSpec, power: u32) -> Self {
        Factor { derivative, power }
    }
}

/// `coeff * prod (D u)^p`. A term without factors is a pure coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: Expr,
    pub factors: Vec<Factor>,
}

impl Term {
    pub fn new(coeff: Expr, factors: Vec<Factor>) -> Self {
        Term { coeff, factors }
    }

    /// Parses `coeff` and attaches the given factors.
    pub fn parse(coeff: &str, factors: Vec<Factor>) -> Result<Self, ExprError> {
        Ok(Term { coeff: Expr::parse(coeff)?, factors })
    }

    /// Term `coeff * D^spec u` with power one.
    pub fn linear(coeff: Expr, derivative: DerivativeSpec) -> Self {
        Term { coeff, factors: vec![Factor::new(derivative, 1)] }
    }

    /// `1 * u`, the Dirichlet operator.
    pub fn identity() -> Self {
        Term::linear(Expr::Const(1.0), DerivativeSpec::identity())
    }

    pub fn is_pure_coefficient(&self) -> bool {
        self.factors.is_empty()
    }

    /// Stable textual form used for canonical ordering and hashing.
    pub fn canonical(&self) -> String {
        let mut factors: Vec<String> =
            self.factors.iter().map(|f| format!("({})^{}", f.derivative, f.power)).collect();
        factors.sort();
        format!("{} * [{}]", self.coeff, factors.join(" * "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialOperator {
    pub terms: Vec<Term>,
    pub rhs: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lo,
    Hi,
}

/// Where a condition is imposed.
#[derive(Debug, Clone, PartialEq)]
pub enum Locations {
    /// Every grid point whose coordinate along `axis` is at the given extreme.
    Slice { axis: String, side: Side },
    /// Explicit named-coordinate points, snapped to the nearest grid node.
    Points(Vec<Vec<(String, f64)>>),
}

impl Locations {
    pub fn slice(axis: &str, side: Side) -> Self {
        Locations::Slice { axis: axis.to_string(), side }
    }

    /// Single point of a one-dimensional domain.
    pub fn at(axis: &str, value: f64) -> Self {
        Locations::Points(vec![vec![(axis.to_string(), value)]])
    }

    fn canonical(&self) -> String {
        match self {
            Locations::Slice { axis, side } => format!("slice({axis},{side:?})"),
            Locations::Points(points) => {
                let pts: Vec<String> = points
                    .iter()
                    .map(|p| {
                        let mut coords: Vec<String> = p.iter().map(|(a, v)| format!("{a}={v:?}")).collect();
                        coords.sort();
                        coords.join(",")
                    })
                    .collect();
                format!("points[{}]", pts.join(";"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    pub operator: Vec<Term>,
    pub locations: Locations,
    pub target: Expr,
}

impl BoundaryCondition {
    pub fn dirichlet(locations: Locations, target: Expr) -> Self {
        BoundaryCondition { operator: vec![Term::identity()], locations, target }
    }

    pub fn canonical(&self) -> String {
        let mut terms: Vec<String> = self.operator.iter().map(Term::canonical).collect();
        terms.sort();
        format!("{{{}}} at {} = {}", terms.join(" + "), self.locations.canonical(), self.target)
    }
}

/// Resolves a condition's locations to sorted, duplicate-free grid indices.
pub fn resolve_locations(bc: &BoundaryCondition, grid: &Grid) -> Result<Vec<usize>, LocationError> {
    let domain = grid.domain();
    let mut found = BTreeSet::new();
    match &bc.locations {
        Locations::Slice { axis, side } => {
            let k = domain.axis_index(axis).ok_or_else(|| LocationError::UnknownAxis(axis.clone()))?;
            let target = match side {
                Side::Lo => 0,
                Side::Hi => grid.resolution()[k] - 1,
            };
            for index in 0..grid.len() {
                if grid.multi_index(index)[k] == target {
                    found.insert(index);
                }
            }
        }
        Locations::Points(points) => {
            for point in points {
                for (name, _) in point {
                    if domain.axis_index(name).is_none() {
                        return Err(LocationError::UnknownAxis(name.clone()));
                    }
                }
                let mut multi = Vec::with_capacity(domain.dimension());
                for (k, axis) in domain.axes().iter().enumerate() {
                    let value = point
                        .iter()
                        .find(|(n, _)| *n == axis.name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| LocationError::MissingCoordinate(axis.name.clone()))?;
                    multi.push(snap(grid, k, &axis.name, value)?);
                }
                found.insert(grid.flat_index(&multi).expect("snapped index is on grid"));
            }
        }
    }
    if found.is_empty() {
        return Err(LocationError::Empty);
    }
    Ok(found.into_iter().collect())
}

fn snap(grid: &Grid, k: usize, name: &str, value: f64) -> Result<i64, LocationError> {
    let lo = grid.domain().axes()[k].lo;
    let h = grid.steps()[k];
    let n = grid.resolution()[k] as i64;
    let off_grid = || LocationError::OffGrid { axis: name.to_string(), value };
    if !value.is_finite() {
        return Err(off_grid());
    }
    let i = ((value - lo) / h).round();
    if i < 0.0 || i >= n as f64 {
        return Err(off_grid());
    }
    let i = i as i64;
    if (grid.coordinate(k, i as usize) - value).abs() > 0.5 * h {
        return Err(off_grid());
    }
    Ok(i)
}

/// A complete boundary problem with its loss weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryProblem {
    pub domain: Domain,
    pub operator: DifferentialOperator,
    pub conditions: Vec<BoundaryCondition>,
    pub loss: LossConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl BoundaryProblem {
    pub fn new(domain: Domain, operator: DifferentialOperator, conditions: Vec<BoundaryCondition>) -> Self {
        BoundaryProblem { domain, operator, conditions, loss: LossConfig::default() }
    }

    pub fn with_loss(mut self, loss: LossConfig) -> Self {
        self.loss = loss;
        self
    }

    /// Structural checks. Well-posedness is deliberately not checked:
    /// under- and over-determined condition sets are accepted.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let axes = self.domain.axis_names();
        let mut push = |path: String, message: String| out.push(Diagnostic { path, message });

        if !(self.loss.lambda > 0.0) || !self.loss.lambda.is_finite() {
            push("lambda".into(), "lambda must be positive".into());
        }
        if self.operator.terms.is_empty() {
            push("terms".into(), "operator has no terms".into());
        }
        for (i, term) in self.operator.terms.iter().enumerate() {
            let path = format!("terms[{i}]");
            if term.is_pure_coefficient() {
                push(path.clone(), "operator term has no factors; move it into rhs".into());
            }
            check_term(term, &axes, &path, &mut push);
        }
        check_expr(&self.operator.rhs, &axes, "rhs", &mut push);
        if self.conditions.is_empty() {
            push("conditions".into(), "at least one condition is required".into());
        }
        for (i, bc) in self.conditions.iter().enumerate() {
            let path = format!("conditions[{i}]");
            if bc.operator.is_empty() {
                push(format!("{path}.operator"), "condition operator has no terms".into());
            }
            for (j, term) in bc.operator.iter().enumerate() {
                check_term(term, &axes, &format!("{path}.operator[{j}]"), &mut push);
            }
            check_expr(&bc.target, &axes, &format!("{path}.target"), &mut push);
            match &bc.locations {
                Locations::Slice { axis, .. } => {
                    if !axes.contains(&axis.as_str()) {
                        push(format!("{path}.where.slice.axis"), format!("unknown axis `{axis}`"));
                    }
                }
                Locations::Points(points) => {
                    if points.is_empty() {
                        push(format!("{path}.where.points"), "no points given".into());
                    }
                    for (j, p) in points.iter().enumerate() {
                        for (name, _) in p {
                            if !axes.contains(&name.as_str()) {
                                push(format!("{path}.where.points[{j}]"), format!("unknown axis `{name}`"));
                            }
                        }
                        for axis in &axes {
                            if !p.iter().any(|(n, _)| n == axis) {
                                push(format!("{path}.where.points[{j}]"), format!("missing coordinate `{axis}`"));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Canonical text over every part of the problem that affects the
    /// solution. Operator terms and conditions are sorted, so declaration
    /// order does not matter.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        s.push_str("domain:");
        for a in self.domain.axes() {
            s.push_str(&format!("{}[{:?},{:?}];", a.name, a.lo, a.hi));
        }
        let mut terms: Vec<String> = self.operator.terms.iter().map(Term::canonical).collect();
        terms.sort();
        s.push_str(&format!("\nterms:{}", terms.join(" + ")));
        s.push_str(&format!("\nrhs:{}", self.operator.rhs));
        let mut conds: Vec<String> = self.conditions.iter().map(BoundaryCondition::canonical).collect();
        conds.sort();
        for c in conds {
            s.push_str(&format!("\ncond:{c}"));
        }
        s.push_str(&format!(
            "\nlambda:{:?}\nnorms:{},{}",
            self.loss.lambda, self.loss.interior_norm, self.loss.boundary_norm
        ));
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self, ProblemError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ProblemFile = serde_path_to_error::deserialize(de).map_err(|e| ProblemError::Json {
            path: e.path().to_string(),
            source: e.into_inner(),
        })?;
        file.into_problem()
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ProblemError> {
        BoundaryProblem::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ProblemFile::from_problem(self)).expect("problem serializes")
    }
}

fn check_term(term: &Term, axes: &[&str], path: &str, push: &mut impl FnMut(String, String)) {
    check_expr(&term.coeff, axes, &format!("{path}.coeff"), push);
    for (k, f) in term.factors.iter().enumerate() {
        if f.power == 0 {
            push(format!("{path}.factors[{k}].power"), "power must be positive".into());
        }
        for (axis, _) in f.derivative.orders() {
            if !axes.contains(&axis.as_str()) {
                push(format!("{path}.factors[{k}].axes"), format!("unknown axis `{axis}`"));
            }
        }
    }
}

fn check_expr(e: &Expr, axes: &[&str], path: &str, push: &mut impl FnMut(String, String)) {
    for v in e.variables() {
        if !axes.contains(&v) {
            push(path.to_string(), format!("unknown variable `{v}`"));
        }
    }
}

// ---------------------------------------------------------------------------
// Problem file (JSON) schema.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    format: u32,
    domain: Vec<Axis>,
    terms: Vec<TermFile>,
    #[serde(default = "zero_expr")]
    rhs: String,
    conditions: Vec<ConditionFile>,
    #[serde(default = "default_lambda")]
    lambda: f64,
    #[serde(default)]
    norms: NormsFile,
}

fn zero_expr() -> String {
    "0".into()
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormsFile {
    interior: Norm,
    boundary: Norm,
}

impl Default for NormsFile {
    fn default() -> Self {
        NormsFile { interior: Norm::L2, boundary: Norm::L2 }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermFile {
    coeff: String,
    #[serde(default)]
    factors: Vec<FactorFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorFile {
    #[serde(default)]
    axes: Vec<AxisOrderFile>,
    #[serde(default = "one")]
    power: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisOrderFile {
    axis: String,
    order: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionFile {
    operator: Vec<TermFile>,
    #[serde(rename = "where")]
    location: WhereFile,
    target: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum WhereFile {
    Slice { axis: String, side: Side },
    Points(Vec<serde_json::Map<String, serde_json::Value>>),
}

impl ProblemFile {
    fn into_problem(self) -> Result<BoundaryProblem, ProblemError> {
        if self.format != PROBLEM_FORMAT {
            return Err(ProblemError::Invalid {
                path: "format".into(),
                message: format!("unsupported format {}, expected {PROBLEM_FORMAT}", self.format),
            });
        }
        let domain = Domain::new(self.domain)?;
        let parse = |src: &str, path: String| {
            Expr::parse(src).map_err(|source| ProblemError::Expr { path, source })
        };
        let terms = |list: Vec<TermFile>, path: &str| -> Result<Vec<Term>, ProblemError> {
            list.into_iter()
                .enumerate()
                .map(|(i, t)| {
                    Ok(Term {
                        coeff: parse(&t.coeff, format!("{path}[{i}].coeff"))?,
                        factors: t
                            .factors
                            .into_iter()
                            .map(|f| {
                                Factor::new(
                                    DerivativeSpec::new(f.axes.into_iter().map(|a| (a.axis, a.order))),
                                    f.power,
                                )
                            })
                            .collect(),
                    })
                })
                .collect()
        };
        let operator = DifferentialOperator { terms: terms(self.terms, "terms")?, rhs: parse(&self.rhs, "rhs".into())? };
        let mut conditions = Vec::new();
        for (i, c) in self.conditions.into_iter().enumerate() {
            let locations = match c.location {
                WhereFile::Slice { axis, side } => Locations::Slice { axis, side },
                WhereFile::Points(points) => {
                    let mut out = Vec::new();
                    for (j, p) in points.into_iter().enumerate() {
                        let mut coords = Vec::new();
                        for (name, value) in p {
                            let v = value.as_f64().ok_or_else(|| ProblemError::Invalid {
                                path: format!("conditions[{i}].where.points[{j}].{name}"),
                                message: "coordinate must be a number".into(),
                            })?;
                            coords.push((name, v));
                        }
                        out.push(coords);
                    }
                    Locations::Points(out)
                }
            };
            conditions.push(BoundaryCondition {
                operator: terms(c.operator, &format!("conditions[{i}].operator"))?,
                locations,
                target: parse(&c.target, format!("conditions[{i}].target"))?,
            });
        }
        Ok(BoundaryProblem {
            domain,
            operator,
            conditions,
            loss: LossConfig {
                lambda: self.lambda,
                interior_norm: self.norms.interior,
                boundary_norm: self.norms.boundary,
            },
        })
    }

    fn from_problem(p: &BoundaryProblem) -> Self {
        let terms = |list: &[Term]| -> Vec<TermFile> {
            list.iter()
                .map(|t| TermFile {
                    coeff: t.coeff.to_string(),
                    factors: t
                        .factors
                        .iter()
                        .map(|f| FactorFile {
                            axes: f
                                .derivative
                                .orders()
                                .iter()
                                .map(|(a, o)| AxisOrderFile { axis: a.clone(), order: *o })
                                .collect(),
                            power: f.power,
                        })
                        .collect(),
                })
                .collect()
        };
        ProblemFile {
            format: PROBLEM_FORMAT,
            domain: p.domain.axes().to_vec(),
            terms: terms(&p.operator.terms),
            rhs: p.operator.rhs.to_string(),
            conditions: p
                .conditions
                .iter()
                .map(|c| ConditionFile {
                    operator: terms(&c.operator),
                    location: match &c.locations {
                        Locations::Slice { axis, side } => WhereFile::Slice { axis: axis.clone(), side: *side },
                        Locations::Points(points) => WhereFile::Points(
                            points
                                .iter()
                                .map(|pt| pt.iter().map(|(n, v)| (n.clone(), serde_json::json!(v))).collect())
                                .collect(),
                        ),
                    },
                    target: c.target.to_string(),
                })
                .collect(),
            lambda: p.loss.lambda,
            norms: NormsFile { interior: p.loss.interior_norm, boundary: p.loss.boundary_norm },
        }
    }
}
