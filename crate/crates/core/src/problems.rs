//! Built-in benchmark problems and reference solutions.
//!
//! Names: `legendre:3` .. `legendre:9`, `painleve:1` .. `painleve:6`,
//! `wave`, `heat`, `kdv`.

use std::f64::consts::PI;

use crate::approx::{ApproxError, EvalNodes, FieldApprox};
use crate::expr::Expr;
use crate::mesh::{Axis, Domain, Grid};
use crate::operators::{
    BoundaryCondition, BoundaryProblem, DerivativeSpec, DifferentialOperator, Factor, Locations, Side, Term,
};
use crate::Real;

/// Step of the Runge-Kutta reference integrator.
pub const RK4_STEP: f64 = 1e-4;

/// Default truncation of the heat-equation Fourier series.
pub const HEAT_SERIES_TERMS: usize = 100;

/// How a reference value is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// Legendre polynomial via the Bonnet recurrence.
    Legendre { n: usize },
    /// Initial-value integration with classical RK4 from `t0`.
    Rk4 { painleve: usize, t0: f64, u0: f64, du0: f64, step: f64 },
    /// `sin(pi x) (cos(pi t / 2) + sin(pi t / 2))`.
    WaveClosedForm,
    /// Truncated Fourier series of the heat problem.
    HeatSeries { terms: usize },
    /// No independent solution; error is reported through the loss.
    ResidualOnly,
}

impl Reference {
    pub fn provenance(&self) -> &'static str {
        match self {
            Reference::Legendre { .. } => "recurrence",
            Reference::Rk4 { .. } => "rk4",
            Reference::WaveClosedForm => "closed-form",
            Reference::HeatSeries { .. } => "series",
            Reference::ResidualOnly => "residual-only",
        }
    }

    /// Reference value at a point, `None` for residual-only problems.
    pub fn eval(&self, point: &[f64]) -> Option<f64> {
        match *self {
            Reference::Legendre { n } => Some(legendre_p(n, point[0])),
            Reference::Rk4 { painleve, t0, u0, du0, step } => {
                Some(rk4_solve(painleve_rhs(painleve), t0, u0, du0, point[0], step).0)
            }
            Reference::WaveClosedForm => Some(wave_solution(point[0], point[1])),
            Reference::HeatSeries { terms } => Some(heat_series(point[0], point[1], terms)),
            Reference::ResidualOnly => None,
        }
    }

    /// Values at every grid point, `None` for residual-only problems.
    pub fn on_grid(&self, grid: &Grid) -> Option<Vec<f64>> {
        if let Reference::Rk4 { painleve, t0, u0, du0, step } = *self {
            // one sweep instead of an integration per point
            let ts: Vec<f64> = grid.points().map(|p| p[0]).collect();
            return Some(rk4_dense(painleve_rhs(painleve), t0, u0, du0, &ts, step));
        }
        grid.points().map(|p| self.eval(&p)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: String,
    pub problem: BoundaryProblem,
    pub reference: Reference,
}

pub fn names() -> Vec<String> {
    let mut out: Vec<String> = (3..=9).map(|n| format!("legendre:{n}")).collect();
    out.extend((1..=6).map(|i| format!("painleve:{i}")));
    out.extend(["wave", "heat", "kdv"].map(String::from));
    out
}

/// Options for the two places where the printed equations are ambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Variants {
    /// Use `-2 t u` instead of `-2 t u'` in the Legendre operator.
    pub legendre_as_printed: bool,
    /// Read the sixth Painleve coefficients literally (duplicate index).
    pub painleve_vi_literal: bool,
}

pub fn by_name(name: &str) -> Option<Benchmark> {
    by_name_with(name, Variants::default())
}

pub fn by_name_with(name: &str, variants: Variants) -> Option<Benchmark> {
    let parse_index = |s: &str| s.parse::<usize>().ok();
    match name.split_once(':') {
        Some(("legendre", n)) => {
            let n = parse_index(n)?;
            Some(legendre_with(n, variants.legendre_as_printed))
        }
        Some(("painleve", i)) => {
            let i = parse_index(i).filter(|i| (1..=6).contains(i))?;
            Some(painleve_with(i, PainleveParams::default(), variants.painleve_vi_literal))
        }
        None => match name {
            "wave" => Some(wave()),
            "heat" => Some(heat()),
            "kdv" => Some(kdv()),
            _ => None,
        },
        _ => None,
    }
}

fn expr(src: &str) -> Expr {
    Expr::parse(src).unwrap_or_else(|e| panic!("built-in expression `{src}`: {e}"))
}

fn u(power: u32) -> Factor {
    Factor::new(DerivativeSpec::identity(), power)
}

fn d(axis: &str, order: u32, power: u32) -> Factor {
    Factor::new(DerivativeSpec::along(axis, order), power)
}

fn term(coeff: &str, factors: Vec<Factor>) -> Term {
    Term::new(expr(coeff), factors)
}

fn condition(operator: Vec<Term>, locations: Locations, target: &str) -> BoundaryCondition {
    BoundaryCondition { operator, locations, target: expr(target) }
}

fn unit_square() -> Domain {
    Domain::new(vec![Axis::new("x", 0.0, 1.0), Axis::new("t", 0.0, 1.0)]).expect("unit square")
}

// ---------------------------------------------------------------------------
// Legendre

/// `P_n(t)` by the Bonnet recurrence `(k+1) P_{k+1} = (2k+1) t P_k - k P_{k-1}`.
pub fn legendre_p(n: usize, t: f64) -> f64 {
    legendre_pair(n, t).0
}

/// `(P_n(t), P_n'(t))`; the derivative follows `P'_{k+1} = P'_{k-1} + (2k+1) P_k`.
pub fn legendre_pair(n: usize, t: f64) -> (f64, f64) {
    let (mut p_prev, mut p) = (1.0, t);
    let (mut dp_prev, mut dp) = (0.0, 1.0);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * t * p - kf * p_prev) / (kf + 1.0);
        let dp_next = dp_prev + (2.0 * kf + 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp)
}

pub fn legendre(n: usize) -> Benchmark {
    legendre_with(n, false)
}

/// `(1 - t^2) u'' - 2 t u' + n (n+1) u = 0` on `[0, 1]` with
/// `u(0) = P_n(0)` and `u'(1) = P_n'(1)`.
pub fn legendre_with(n: usize, as_printed: bool) -> Benchmark {
    if !(3..=9).contains(&n) {
        log::warn!("legendre:{n} is outside the benchmarked range 3..=9");
    }
    let first_order = if as_printed { u(1) } else { d("t", 1, 1) };
    let terms = vec![
        term("1 - t^2", vec![d("t", 2, 1)]),
        term("-2*t", vec![first_order]),
        Term::new(Expr::Const((n * (n + 1)) as f64), vec![u(1)]),
    ];
    let conditions = vec![
        BoundaryCondition::dirichlet(Locations::at("t", 0.0), Expr::Const(legendre_p(n, 0.0))),
        BoundaryCondition {
            operator: vec![term("1", vec![d("t", 1, 1)])],
            locations: Locations::at("t", 1.0),
            target: Expr::Const(legendre_pair(n, 1.0).1),
        },
    ];
    let problem = BoundaryProblem::new(
        Domain::interval("t", 0.0, 1.0).expect("unit interval"),
        DifferentialOperator { terms, rhs: Expr::Const(0.0) },
        conditions,
    );
    Benchmark { name: format!("legendre:{n}"), problem, reference: Reference::Legendre { n } }
}

// ---------------------------------------------------------------------------
// Painleve transcendents

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PainleveParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for PainleveParams {
    fn default() -> Self {
        PainleveParams { alpha: 1.0, beta: 1.0, gamma: 1.0, delta: 1.0 }
    }
}

/// Coefficient expressions `c_0 .. c_14` of the polynomial form of the sixth
/// equation. The printed list has fifteen entries with index 10 repeated;
/// the default reading assigns them to `c_0 .. c_14` in order. The literal
/// reading lets the second index-10 entry overwrite the first and leaves
/// `c_14` at zero.
pub fn painleve_vi_coefficients(p: &PainleveParams, literal: bool) -> [String; 15] {
    let (a, b, g, dl) = (
        format!("({:?})", p.alpha),
        format!("({:?})", p.beta),
        format!("({:?})", p.gamma),
        format!("({:?})", p.delta),
    );
    let printed: [String; 15] = [
        format!("-t^3*{b}"),
        format!("2*{b}*t^2*(t+1)"),
        format!("-t*({b} - {dl} + t*({a} + {dl} + {b}*(t+4) + {g}*(t-1)))"),
        format!("2*t*({a}*(t+1) + {b}*(t+1) + (t-1)*({g} + {dl}))"),
        format!("-{a} + {g} - {a}*t*(t+4) - t*({b} + {g} + {dl}*(t-1))"),
        format!("2*{a}*(t+1)"),
        "(t-1)*t^3".into(),
        "-t*(t*(t^2+t-3)+1)".into(),
        "(t-1)*t*(2*t-1)".into(),
        "-(1/2)*(t-1)^2*t^3".into(),
        "(t-1)^2*t^2*(t+1)".into(),
        "-(3/2)*(t-1)^2*t^2".into(),
        "(t-1)^2*t^3".into(),
        "-(t-1)^2*t^2*(t+1)".into(),
        "(t-1)^2*t^2".into(),
    ];
    if !literal {
        return printed;
    }
    let mut out = printed.clone();
    out[10] = printed[11].clone();
    out[11] = printed[12].clone();
    out[12] = printed[13].clone();
    out[13] = printed[14].clone();
    out[14] = "0".into();
    out
}

/// Second-derivative right-hand side `u'' = F(t, u, u')` of the transcendents
/// that are posed as initial-value problems.
fn painleve_rhs(index: usize) -> fn(f64, f64, f64) -> f64 {
    match index {
        1 => |t, u, _| 6.0 * u * u + t,
        2 => |t, u, _| 1.0 + 2.0 * u * u * u + t * u,
        _ => panic!("no initial-value form for painleve:{index}"),
    }
}

/// Classical RK4 for `u'' = f(t, u, u')` from `t0` to `t1` with at most
/// `step` per stage. Returns `(u(t1), u'(t1))`.
pub fn rk4_solve(f: fn(f64, f64, f64) -> f64, t0: f64, u0: f64, du0: f64, t1: f64, step: f64) -> (f64, f64) {
    let span = t1 - t0;
    let n = (span.abs() / step).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let (mut t, mut y, mut z) = (t0, u0, du0);
    for _ in 0..n {
        let (k1y, k1z) = (z, f(t, y, z));
        let (k2y, k2z) = (z + 0.5 * h * k1z, f(t + 0.5 * h, y + 0.5 * h * k1y, z + 0.5 * h * k1z));
        let (k3y, k3z) = (z + 0.5 * h * k2z, f(t + 0.5 * h, y + 0.5 * h * k2y, z + 0.5 * h * k2z));
        let (k4y, k4z) = (z + h * k3z, f(t + h, y + h * k3y, z + h * k3z));
        y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
        t += h;
    }
    (y, z)
}

/// RK4 values at increasing times `ts >= t0`, integrating piecewise.
fn rk4_dense(f: fn(f64, f64, f64) -> f64, t0: f64, u0: f64, du0: f64, ts: &[f64], step: f64) -> Vec<f64> {
    let (mut t, mut y, mut z) = (t0, u0, du0);
    let mut out = Vec::with_capacity(ts.len());
    for &target in ts {
        if target < t {
            out.push(rk4_solve(f, t0, u0, du0, target, step).0);
            continue;
        }
        if target > t {
            let (ny, nz) = rk4_solve(f, t, y, z, target, step);
            y = ny;
            z = nz;
            t = target;
        }
        out.push(y);
    }
    out
}

pub fn painleve(index: usize) -> Benchmark {
    painleve_with(index, PainleveParams::default(), false)
}

/// Transcendent `index` (1..=6), all terms moved to the left-hand side.
pub fn painleve_with(index: usize, p: PainleveParams, vi_literal: bool) -> Benchmark {
    let PainleveParams { alpha, beta, gamma, delta } = p;
    let c = |v: f64| format!("({v:?})");
    let du = |power| d("t", 1, power);
    let ddu = |power| d("t", 2, power);
    let point = |t: f64| Locations::at("t", t);
    let dirichlet = |t: f64, v: f64| BoundaryCondition::dirichlet(point(t), Expr::Const(v));
    let neumann = |t: f64, v: f64| condition(vec![term("1", vec![du(1)])], point(t), &format!("{v:?}"));

    let (domain, terms, rhs, conditions, reference) = match index {
        // u'' = 6 u^2 + t
        1 => (
            (0.0, 1.0),
            vec![term("1", vec![ddu(1)]), term("-6", vec![u(2)])],
            "t".to_string(),
            vec![dirichlet(0.0, 0.0), neumann(0.0, 0.0)],
            Reference::Rk4 { painleve: 1, t0: 0.0, u0: 0.0, du0: 0.0, step: RK4_STEP },
        ),
        // u'' = alpha + 2 u^3 + t u
        2 => (
            (0.0, 1.0),
            vec![term("1", vec![ddu(1)]), term("-2", vec![u(3)]), term("-t", vec![u(1)])],
            c(alpha),
            vec![dirichlet(0.0, 0.0), neumann(0.0, 0.0)],
            Reference::Rk4 { painleve: 2, t0: 0.0, u0: 0.0, du0: 0.0, step: RK4_STEP },
        ),
        // t u u'' = delta t - u u' + t u'^2 + alpha u^3 + beta u + gamma t u^4
        3 => (
            (0.25, 2.1),
            vec![
                term("t", vec![u(1), ddu(1)]),
                term("1", vec![u(1), du(1)]),
                term("-t", vec![du(2)]),
                term(&format!("-{}", c(alpha)), vec![u(3)]),
                term(&format!("-{}", c(beta)), vec![u(1)]),
                term(&format!("-{}*t", c(gamma)), vec![u(4)]),
            ],
            format!("{}*t", c(delta)),
            vec![dirichlet(1.0, 0.0), neumann(1.0, 0.0)],
            Reference::ResidualOnly,
        ),
        // u u'' = beta + 2 (t^2 - alpha) u^2 + u'^2 / 2 + 3 u^4 / 2 + 4 t u^3
        4 => (
            (0.25, 1.75),
            vec![
                term("1", vec![u(1), ddu(1)]),
                term(&format!("-2*(t^2 - {})", c(alpha)), vec![u(2)]),
                term("-1/2", vec![du(2)]),
                term("-3/2", vec![u(4)]),
                term("-4*t", vec![u(3)]),
            ],
            c(beta),
            vec![dirichlet(1.0, 0.0), neumann(1.0, 0.0)],
            Reference::ResidualOnly,
        ),
        // 2 t^2 (1 - u) u u'' = 2 beta + 2 u^2 (alpha + 3 beta - delta t^2 + gamma t + t u')
        //   - u (6 beta + 3 t^2 u'^2 + 2 t u') + t^2 u'^2
        //   - 2 u^3 (3 alpha + beta + t (gamma + delta t)) - 2 alpha u^5 + 6 alpha u^4
        5 => (
            (0.9, 1.2),
            vec![
                term("2*t^2", vec![u(1), ddu(1)]),
                term("-2*t^2", vec![u(2), ddu(1)]),
                term(
                    &format!("-2*({a} + 3*{b} - {d}*t^2 + {g}*t)", a = c(alpha), b = c(beta), d = c(delta), g = c(gamma)),
                    vec![u(2)],
                ),
                term("-2*t", vec![u(2), du(1)]),
                term(&format!("6*{}", c(beta)), vec![u(1)]),
                term("3*t^2", vec![u(1), du(2)]),
                term("2*t", vec![u(1), du(1)]),
                term("-t^2", vec![du(2)]),
                term(
                    &format!("2*(3*{a} + {b} + t*({g} + {d}*t))", a = c(alpha), b = c(beta), d = c(delta), g = c(gamma)),
                    vec![u(3)],
                ),
                term(&format!("2*{}", c(alpha)), vec![u(5)]),
                term(&format!("-6*{}", c(alpha)), vec![u(4)]),
            ],
            format!("2*{}", c(beta)),
            vec![dirichlet(0.9, 3.0), dirichlet(1.2, 4.0)],
            Reference::ResidualOnly,
        ),
        // sum_k c_k(t) * monomial_k(u, u', u'') - alpha u^6 = 0
        6 => {
            let cs = painleve_vi_coefficients(&p, vi_literal);
            let monomials: [Vec<Factor>; 14] = [
                vec![u(1)],
                vec![u(2)],
                vec![u(3)],
                vec![u(4)],
                vec![u(5)],
                vec![u(1), du(1)],
                vec![u(2), du(1)],
                vec![u(3), du(1)],
                vec![du(2)],
                vec![u(1), du(2)],
                vec![u(2), du(2)],
                vec![u(1), ddu(1)],
                vec![u(2), ddu(1)],
                vec![u(3), ddu(1)],
            ];
            let mut terms: Vec<Term> = cs[1..6]
                .iter()
                .zip(&monomials[..5])
                .map(|(coeff, m)| term(coeff, m.clone()))
                .collect();
            terms.push(term(&format!("-{}", c(alpha)), vec![u(6)]));
            for (coeff, m) in cs[6..].iter().zip(&monomials[5..]) {
                if coeff != "0" {
                    terms.push(term(coeff, m.clone()));
                }
            }
            (
                (1.2, 1.4),
                terms,
                format!("-({})", cs[0]),
                vec![dirichlet(1.2, 2.0), dirichlet(1.4, 2.0)],
                Reference::ResidualOnly,
            )
        }
        _ => panic!("painleve index must be 1..=6, got {index}"),
    };
    let problem = BoundaryProblem::new(
        Domain::interval("t", domain.0, domain.1).expect("painleve domain"),
        DifferentialOperator { terms, rhs: expr(&rhs) },
        conditions,
    );
    Benchmark { name: format!("painleve:{index}"), problem, reference }
}

// ---------------------------------------------------------------------------
// PDEs on the unit square, axes (x, t)

pub fn wave_solution(x: f64, t: f64) -> f64 {
    (PI * x).sin() * ((PI * t / 2.0).cos() + (PI * t / 2.0).sin())
}

/// `u_tt - u_xx / 4 = 0`, `u(0,t) = u(1,t) = 0`, `u(x,0) = u(x,1) = sin(pi x)`.
pub fn wave() -> Benchmark {
    let problem = BoundaryProblem::new(
        unit_square(),
        DifferentialOperator {
            terms: vec![term("1", vec![d("t", 2, 1)]), term("-1/4", vec![d("x", 2, 1)])],
            rhs: Expr::Const(0.0),
        },
        vec![
            BoundaryCondition::dirichlet(Locations::slice("x", Side::Lo), Expr::Const(0.0)),
            BoundaryCondition::dirichlet(Locations::slice("x", Side::Hi), Expr::Const(0.0)),
            BoundaryCondition::dirichlet(Locations::slice("t", Side::Lo), expr("sin(pi*x)")),
            BoundaryCondition::dirichlet(Locations::slice("t", Side::Hi), expr("sin(pi*x)")),
        ],
    );
    Benchmark { name: "wave".into(), problem, reference: Reference::WaveClosedForm }
}

/// Fourier series solution of the heat problem truncated after `terms` terms.
pub fn heat_series(x: f64, t: f64, terms: usize) -> f64 {
    let mut sum = 0.0;
    for k in 1..=terms {
        let m = (2 * k - 1) as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let decay = (-0.25 * PI * PI * t * m * m).exp();
        if decay == 0.0 {
            break;
        }
        sum += decay * (250.0 * PI * (1.0 - 2.0 * k as f64) + sign) * (PI * x * m / 2.0).sin() / (m * m);
    }
    500.0 + x + 8.0 / (PI * PI) * sum
}

/// `u_t - u_xx = 0`, `u(0,t) = 500`, `u_x(1,t) = 1`, `u(x,0) = 0`.
pub fn heat() -> Benchmark {
    let problem = BoundaryProblem::new(
        unit_square(),
        DifferentialOperator {
            terms: vec![term("1", vec![d("t", 1, 1)]), term("-1", vec![d("x", 2, 1)])],
            rhs: Expr::Const(0.0),
        },
        vec![
            BoundaryCondition::dirichlet(Locations::slice("x", Side::Lo), Expr::Const(500.0)),
            condition(vec![term("1", vec![d("x", 1, 1)])], Locations::slice("x", Side::Hi), "1"),
            BoundaryCondition::dirichlet(Locations::slice("t", Side::Lo), Expr::Const(0.0)),
        ],
    );
    Benchmark { name: "heat".into(), problem, reference: Reference::HeatSeries { terms: HEAT_SERIES_TERMS } }
}

/// `u_t + 6 u u_x + u_xxx = cos(t) sin(x)` with Robin-type conditions.
pub fn kdv() -> Benchmark {
    let problem = BoundaryProblem::new(
        unit_square(),
        DifferentialOperator {
            terms: vec![
                term("1", vec![d("t", 1, 1)]),
                term("6", vec![u(1), d("x", 1, 1)]),
                term("1", vec![d("x", 3, 1)]),
            ],
            rhs: expr("cos(t)*sin(x)"),
        },
        vec![
            BoundaryCondition::dirichlet(Locations::slice("t", Side::Lo), Expr::Const(0.0)),
            condition(
                vec![term("1", vec![d("x", 2, 1)]), term("2", vec![d("x", 1, 1)]), term("1", vec![u(1)])],
                Locations::slice("x", Side::Lo),
                "0",
            ),
            condition(
                vec![term("2", vec![d("x", 2, 1)]), term("1", vec![d("x", 1, 1)]), term("3", vec![u(1)])],
                Locations::slice("x", Side::Hi),
                "0",
            ),
            condition(
                vec![term("5", vec![d("x", 1, 1)]), term("5", vec![u(1)])],
                Locations::slice("x", Side::Hi),
                "0",
            ),
        ],
    );
    Benchmark { name: "kdv".into(), problem, reference: Reference::ResidualOnly }
}

// ---------------------------------------------------------------------------

/// Root mean square error of `field` against reference values over every
/// grid point.
pub fn rmse<T: Real, F: FieldApprox<T>>(field: &F, reference: &[f64], grid: &Grid) -> Result<f64, ApproxError> {
    let values = field.eval(&EvalNodes::grid_nodes(grid))?;
    if values.len() != reference.len() {
        return Err(ApproxError::Shape { expected: values.len(), got: reference.len() });
    }
    let sum: f64 = values
        .iter()
        .zip(reference)
        .map(|(v, r)| (v.to_f64_lossy() - r).powi(2))
        .sum();
    Ok((sum / values.len() as f64).sqrt())
}
