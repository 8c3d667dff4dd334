//! Finite-difference stencils and their composition.
//!
//! A stencil is a list of integer lattice offsets with weights; the step `h`
//! is folded into the weights. First-order forward, backward and central
//! differences are the building blocks. Higher and mixed derivatives come
//! from discrete convolution (`compose`):
//!
//! | order | interior                    | lo edge  | hi edge  |
//! |-------|-----------------------------|----------|----------|
//! | 1     | central                     | forward  | backward |
//! | 2k    | (forward o backward)^k      | forward^m | backward^m |
//! | 2k+1  | central o (forward o backward)^k | forward^m | backward^m |
//!
//! Weights only need [`num_traits::Num`], so the same code runs on `f64`
//! and on exact rationals.

use std::collections::BTreeMap;

use num_traits::Num;
use thiserror::Error;

use crate::mesh::{AxisPosition, Grid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StencilError {
    #[error("step must be positive")]
    NonPositiveStep,
    #[error("axis {axis} has {points} points; a derivative of order {order} needs at least {needed}")]
    GridTooSmall { axis: usize, points: usize, order: u32, needed: usize },
    #[error("stencil dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Forward,
    Backward,
    Central,
}

/// Offsets are full lattice vectors (one integer per axis).
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil<T> {
    dim: usize,
    entries: Vec<(Vec<i32>, T)>,
}

impl<T: Num + Clone> Stencil<T> {
    /// `u` itself: a single unit weight at the origin.
    pub fn identity(dim: usize) -> Self {
        Stencil { dim, entries: vec![(vec![0; dim], T::one())] }
    }

    /// Merges duplicate offsets and drops exact zeros. Entries are sorted by
    /// offset so equal stencils compare equal.
    pub fn from_entries(dim: usize, entries: impl IntoIterator<Item = (Vec<i32>, T)>) -> Self {
        let mut merged: BTreeMap<Vec<i32>, T> = BTreeMap::new();
        for (offset, weight) in entries {
            assert_eq!(offset.len(), dim, "offset arity");
            match merged.get_mut(&offset) {
                Some(w) => *w = w.clone() + weight,
                None => {
                    merged.insert(offset, weight);
                }
            }
        }
        Stencil { dim, entries: merged.into_iter().filter(|(_, w)| !w.is_zero()).collect() }
    }

    /// First-order difference along `axis` with step `h`.
    pub fn first_order(scheme: Scheme, axis: usize, dim: usize, h: T) -> Result<Self, StencilError>
    where
        T: PartialOrd,
    {
        if !(h > T::zero()) {
            return Err(StencilError::NonPositiveStep);
        }
        let unit = |k: i32| {
            let mut o = vec![0; dim];
            o[axis] = k;
            o
        };
        let inv = T::one() / h;
        let entries = match scheme {
            Scheme::Forward => vec![(unit(1), inv.clone()), (unit(0), T::zero() - inv)],
            Scheme::Backward => vec![(unit(0), inv.clone()), (unit(-1), T::zero() - inv)],
            Scheme::Central => {
                let half = inv / (T::one() + T::one());
                vec![(unit(1), half.clone()), (unit(-1), T::zero() - half)]
            }
        };
        Ok(Stencil::from_entries(dim, entries))
    }

    /// Discrete convolution: offsets add, weights multiply.
    pub fn compose(&self, other: &Stencil<T>) -> Result<Self, StencilError> {
        if self.dim != other.dim {
            return Err(StencilError::DimensionMismatch(self.dim, other.dim));
        }
        let mut out = Vec::with_capacity(self.entries.len() * other.entries.len());
        for (oa, wa) in &self.entries {
            for (ob, wb) in &other.entries {
                let offset = oa.iter().zip(ob).map(|(a, b)| a + b).collect();
                out.push((offset, wa.clone() * wb.clone()));
            }
        }
        Ok(Stencil::from_entries(self.dim, out))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(Vec<i32>, T)] {
        &self.entries
    }

    pub fn weight_sum(&self) -> T {
        self.entries.iter().fold(T::zero(), |acc, (_, w)| acc + w.clone())
    }

    /// `sum_k w_k * f(offset_k)`.
    pub fn apply(&self, mut f: impl FnMut(&[i32]) -> T) -> T {
        self.entries.iter().fold(T::zero(), |acc, (o, w)| acc + w.clone() * f(o))
    }

    /// Smallest and largest offset along `axis`.
    pub fn span(&self, axis: usize) -> (i32, i32) {
        let lo = self.entries.iter().map(|(o, _)| o[axis]).min().unwrap_or(0);
        let hi = self.entries.iter().map(|(o, _)| o[axis]).max().unwrap_or(0);
        (lo, hi)
    }
}

/// One-axis stencil of the given order for a point at `position`.
pub fn axis_stencil<T: Num + Clone + PartialOrd>(
    order: u32,
    position: AxisPosition,
    axis: usize,
    dim: usize,
    h: T,
) -> Result<Stencil<T>, StencilError> {
    let first = |s| Stencil::first_order(s, axis, dim, h.clone());
    let mut out = Stencil::identity(dim);
    match position {
        AxisPosition::Interior => {
            let compact = first(Scheme::Forward)?.compose(&first(Scheme::Backward)?)?;
            for _ in 0..order / 2 {
                out = out.compose(&compact)?;
            }
            if order % 2 == 1 {
                out = out.compose(&first(Scheme::Central)?)?;
            }
        }
        AxisPosition::Lo | AxisPosition::Hi => {
            let one = first(if position == AxisPosition::Lo { Scheme::Forward } else { Scheme::Backward })?;
            for _ in 0..order {
                out = out.compose(&one)?;
            }
        }
    }
    Ok(out)
}

/// Tensor composition of per-axis stencils for a mixed derivative at a point
/// with the given per-axis placement.
pub fn build_stencil<T: Num + Clone + PartialOrd>(
    orders: &[u32],
    placement: &[AxisPosition],
    steps: &[T],
) -> Result<Stencil<T>, StencilError> {
    let dim = orders.len();
    let mut out = Stencil::identity(dim);
    for (axis, (&order, &position)) in orders.iter().zip(placement).enumerate() {
        if order > 0 {
            out = out.compose(&axis_stencil(order, position, axis, dim, steps[axis].clone())?)?;
        }
    }
    Ok(out)
}

/// Stencil for grid point `index`. Per axis, the interior scheme is used
/// unless some offset would leave the grid, in which case the axis falls back
/// to the one-sided scheme pointing into the domain.
pub fn stencil_at(grid: &Grid, orders: &[u32], index: usize) -> Result<Stencil<f64>, StencilError> {
    stencil_at_with_steps(grid, orders, index, grid.steps())
}

/// Like [`stencil_at`], with the shape chosen from the grid but weights
/// scaled by `steps` instead of the grid spacing.
pub fn stencil_at_with_steps(
    grid: &Grid,
    orders: &[u32],
    index: usize,
    steps: &[f64],
) -> Result<Stencil<f64>, StencilError> {
    if steps.len() != grid.dimension() {
        return Err(StencilError::DimensionMismatch(grid.dimension(), steps.len()));
    }
    let dim = grid.dimension();
    let multi = grid.multi_index(index);
    let mut out = Stencil::identity(dim);
    for axis in 0..dim {
        let order = orders[axis];
        if order == 0 {
            continue;
        }
        let n = grid.resolution()[axis];
        let needed = order as usize + 1;
        if n < needed {
            return Err(StencilError::GridTooSmall { axis, points: n, order, needed });
        }
        let i = multi[axis] as i64;
        let fits = |s: &Stencil<f64>| {
            let (lo, hi) = s.span(axis);
            i + lo as i64 >= 0 && i + (hi as i64) < n as i64
        };
        let h = steps[axis];
        let preferred = grid.axis_positions(index)[axis];
        let mut s = axis_stencil(order, preferred, axis, dim, h)?;
        if !fits(&s) {
            let (lo, _) = s.span(axis);
            let side = if i + (lo as i64) < 0 { AxisPosition::Lo } else { AxisPosition::Hi };
            s = axis_stencil(order, side, axis, dim, h)?;
            if !fits(&s) {
                return Err(StencilError::GridTooSmall { axis, points: n, order, needed });
            }
        }
        out = out.compose(&s)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Axis, Domain};
    use num_rational::Rational64;
    use proptest::prelude::*;

    fn at_x(s: &Stencil<f64>, x: f64, h: f64, f: impl Fn(f64) -> f64) -> f64 {
        s.apply(|o| f(x + o[0] as f64 * h))
    }

    #[test]
    fn first_order_entries() {
        let h = 0.5;
        let fwd = Stencil::first_order(Scheme::Forward, 0, 1, h).unwrap();
        assert_eq!(fwd.entries(), &[(vec![0], -2.0), (vec![1], 2.0)]);
        let bwd = Stencil::first_order(Scheme::Backward, 0, 1, h).unwrap();
        assert_eq!(bwd.entries(), &[(vec![-1], -2.0), (vec![0], 2.0)]);
        let cen = Stencil::first_order(Scheme::Central, 0, 1, h).unwrap();
        assert_eq!(cen.entries(), &[(vec![-1], -1.0), (vec![1], 1.0)]);
        assert_eq!(
            Stencil::first_order(Scheme::Central, 0, 1, 0.0),
            Err(StencilError::NonPositiveStep)
        );
    }

    #[test]
    fn first_order_examples() {
        let h = 0.1;
        let cen = Stencil::first_order(Scheme::Central, 0, 1, h).unwrap();
        assert!((at_x(&cen, 1.0, h, |x| x * x) - 2.0).abs() < 1e-12);
        for h in [0.3, 0.01, 2.0] {
            let fwd = Stencil::first_order(Scheme::Forward, 0, 1, h).unwrap();
            assert!((at_x(&fwd, 0.7, h, |x| x) - 1.0).abs() < 1e-12);
            let bwd = Stencil::first_order(Scheme::Backward, 0, 1, h).unwrap();
            assert_eq!(at_x(&bwd, 0.7, h, |_| 3.5), 0.0);
        }
    }

    #[test]
    fn compact_second_difference() {
        let h = Rational64::new(1, 10);
        let f = Stencil::first_order(Scheme::Forward, 0, 1, h).unwrap();
        let b = Stencil::first_order(Scheme::Backward, 0, 1, h).unwrap();
        let fb = f.compose(&b).unwrap();
        let inv_h2 = Rational64::new(100, 1);
        assert_eq!(
            fb.entries(),
            &[(vec![-1], inv_h2), (vec![0], -inv_h2 * 2), (vec![1], inv_h2)]
        );
    }

    #[test]
    fn identity_is_neutral() {
        let h = Rational64::new(1, 7);
        let s = Stencil::first_order(Scheme::Central, 0, 1, h).unwrap();
        assert_eq!(Stencil::identity(1).compose(&s).unwrap(), s);
        assert_eq!(s.compose(&Stencil::identity(1)).unwrap(), s);
    }

    #[test]
    fn third_order_interior_on_cubic() {
        let h = 0.1;
        let s = axis_stencil(3, AxisPosition::Interior, 0, 1, h).unwrap();
        let offsets: Vec<i32> = s.entries().iter().map(|(o, _)| o[0]).collect();
        assert_eq!(offsets, vec![-2, -1, 1, 2]);
        let v = at_x(&s, 0.0, h, |x| x * x * x);
        assert!((v - 6.0).abs() < 1e-10, "{v}");

        // Same stencil in exact arithmetic: weights {-1, 2, -2, 1} / (2 h^3).
        let hr = Rational64::new(1, 10);
        let exact = axis_stencil(3, AxisPosition::Interior, 0, 1, hr).unwrap();
        let c = Rational64::new(1000, 2);
        assert_eq!(
            exact.entries(),
            &[(vec![-2], -c), (vec![-1], c * 2), (vec![1], -c * 2), (vec![2], c)]
        );
    }

    #[test]
    fn third_order_lo_edge_is_forward_cubed() {
        let hr = Rational64::new(1, 10);
        let s = axis_stencil(3, AxisPosition::Lo, 0, 1, hr).unwrap();
        let k = Rational64::new(1000, 1);
        assert_eq!(
            s.entries(),
            &[(vec![0], -k), (vec![1], k * 3), (vec![2], -k * 3), (vec![3], k)]
        );
        let sf = axis_stencil(3, AxisPosition::Lo, 0, 1, 0.1).unwrap();
        assert!((at_x(&sf, 0.4, 0.1, |x| x * x * x) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn mixed_cross_stencil() {
        let (hx, ht) = (Rational64::new(1, 4), Rational64::new(1, 3));
        let s = build_stencil(&[1, 1], &[AxisPosition::Interior, AxisPosition::Interior], &[hx, ht]).unwrap();
        let w = Rational64::new(1, 1) / (hx * ht * 4);
        assert_eq!(
            s.entries(),
            &[(vec![-1, -1], w), (vec![-1, 1], -w), (vec![1, -1], -w), (vec![1, 1], w)]
        );
    }

    #[test]
    fn grid_fallback_and_errors() {
        let g = Grid::new(Domain::interval("t", 0.0, 1.0).unwrap(), &[6]).unwrap();
        // index 1: interior third-order stencil reaches -1, falls back to forward
        let s = stencil_at(&g, &[3], 1).unwrap();
        assert_eq!(s.span(0), (0, 3));
        let s = stencil_at(&g, &[3], 4).unwrap();
        assert_eq!(s.span(0), (-3, 0));
        let s = stencil_at(&g, &[2], 1).unwrap();
        assert_eq!(s.span(0), (-1, 1));
        let s = stencil_at(&g, &[2], 5).unwrap();
        assert_eq!(s.span(0), (-2, 0));

        let small = Grid::new(Domain::interval("t", 0.0, 1.0).unwrap(), &[3]).unwrap();
        assert!(matches!(stencil_at(&small, &[3], 1), Err(StencilError::GridTooSmall { .. })));
        let four = Grid::new(Domain::interval("t", 0.0, 1.0).unwrap(), &[4]).unwrap();
        assert!(matches!(stencil_at(&four, &[3], 1), Err(StencilError::GridTooSmall { .. })));
        assert!(stencil_at(&four, &[3], 0).is_ok());
    }

    #[test]
    fn grid_mixed_derivative_on_corner() {
        let d = Domain::new(vec![Axis::new("x", 0.0, 1.0), Axis::new("t", 0.0, 2.0)]).unwrap();
        let g = Grid::new(d, &[5, 5]).unwrap();
        let corner = g.flat_index(&[0, 4]).unwrap();
        let s = stencil_at(&g, &[1, 1], corner).unwrap();
        assert_eq!(s.span(0), (0, 1));
        assert_eq!(s.span(1), (-1, 0));
        // exact on x*t
        let (hx, ht) = (g.steps()[0], g.steps()[1]);
        let v = s.apply(|o| (o[0] as f64 * hx) * (2.0 + o[1] as f64 * ht));
        assert!((v - 1.0).abs() < 1e-12);
    }

    fn monomial_derivative(k: u32, m: u32, x: f64) -> f64 {
        if m > k {
            return 0.0;
        }
        let coeff: f64 = ((k - m + 1)..=k).map(f64::from).product();
        coeff * x.powi((k - m) as i32)
    }

    #[test]
    fn interior_polynomial_exactness() {
        let h = 0.1;
        let x0 = 0.37;
        for m in 1..=6u32 {
            let s = axis_stencil(m, AxisPosition::Interior, 0, 1, h).unwrap();
            let max_degree = if m == 1 { 2 } else { m };
            for k in 0..=max_degree {
                let got = at_x(&s, x0, h, |x| x.powi(k as i32));
                let want = monomial_derivative(k, m, x0);
                // rounding grows like h^-m
                let tol = 1e-13 * want.abs().max(1.0) / h.powi(m as i32);
                assert!((got - want).abs() <= tol, "m={m} k={k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn consistency_weights_sum_to_zero() {
        let h = Rational64::new(1, 9);
        for m in 1..=5 {
            for pos in [AxisPosition::Interior, AxisPosition::Lo, AxisPosition::Hi] {
                let s = axis_stencil(m, pos, 0, 1, h).unwrap();
                assert_eq!(s.weight_sum(), Rational64::new(0, 1));
            }
        }
    }

    fn arb_stencil() -> impl Strategy<Value = Stencil<Rational64>> {
        proptest::collection::vec(((-3i32..=3, -3i32..=3), (-20i64..20, 1i64..10)), 1..5).prop_map(|entries| {
            Stencil::from_entries(
                2,
                entries.into_iter().map(|((a, b), (n, d))| (vec![a, b], Rational64::new(n, d))),
            )
        })
    }

    proptest! {
        #[test]
        fn composition_is_associative(a in arb_stencil(), b in arb_stencil(), c in arb_stencil()) {
            let left = a.compose(&b.compose(&c).unwrap()).unwrap();
            let right = a.compose(&b).unwrap().compose(&c).unwrap();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn composition_is_commutative(a in arb_stencil(), b in arb_stencil()) {
            prop_assert_eq!(a.compose(&b).unwrap(), b.compose(&a).unwrap());
        }

        #[test]
        fn float_composition_associative_to_rounding(h in 0.01f64..1.0, m in 1u32..4) {
            let f = Stencil::first_order(Scheme::Forward, 0, 1, h).unwrap();
            let b = Stencil::first_order(Scheme::Backward, 0, 1, h).unwrap();
            let c = axis_stencil(m, AxisPosition::Interior, 0, 1, h).unwrap();
            let left = f.compose(&b.compose(&c).unwrap()).unwrap();
            let right = f.compose(&b).unwrap().compose(&c).unwrap();
            prop_assert_eq!(left.entries().len(), right.entries().len());
            for ((ol, wl), (or, wr)) in left.entries().iter().zip(right.entries()) {
                prop_assert_eq!(ol, or);
                prop_assert!((wl - wr).abs() <= 1e-15 * wl.abs().max(wr.abs()) * 4.0);
            }
        }
    }
}
