//! Rectangular domains and uniform tensor-product grids.
//!
//! Points are ordered lexicographically with the last axis varying fastest.
//! Every consumer (residual vectors, plot output, cache hashing) relies on
//! this ordering.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("domain has no axes")]
    NoAxes,
    #[error("axis `{name}` is degenerate: lo = {lo} must be below hi = {hi}")]
    DegenerateAxis { name: String, lo: f64, hi: f64 },
    #[error("axis name `{0}` is used twice")]
    DuplicateAxis(String),
    #[error("expected {expected} resolution entries, got {got}")]
    ResolutionArity { expected: usize, got: usize },
    #[error("axis `{name}` needs at least 2 points, got {count}")]
    TooFewPoints { name: String, count: usize },
    #[error("point index {index} out of range for a grid of {len} points")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl Axis {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Axis { name: name.into(), lo, hi }
    }
}

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Domain {
    axes: Vec<Axis>,
}

impl Domain {
    pub fn new(axes: Vec<Axis>) -> Result<Self, MeshError> {
        if axes.is_empty() {
            return Err(MeshError::NoAxes);
        }
        let mut seen = HashSet::new();
        for axis in &axes {
            // `!(lo < hi)` also rejects NaN bounds.
            if !(axis.lo < axis.hi) || !axis.lo.is_finite() || !axis.hi.is_finite() {
                return Err(MeshError::DegenerateAxis {
                    name: axis.name.clone(),
                    lo: axis.lo,
                    hi: axis.hi,
                });
            }
            if !seen.insert(axis.name.as_str()) {
                return Err(MeshError::DuplicateAxis(axis.name.clone()));
            }
        }
        Ok(Domain { axes })
    }

    /// Single interval `[lo, hi]` named `name`.
    pub fn interval(name: &str, lo: f64, hi: f64) -> Result<Self, MeshError> {
        Domain::new(vec![Axis::new(name, lo, hi)])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    pub fn axis_index(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    pub fn axis_names(&self) -> Vec<&str> {
        self.axes.iter().map(|a| a.name.as_str()).collect()
    }
}

/// Where a point sits along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AxisPosition {
    Lo,
    Interior,
    Hi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointClass {
    Interior,
    Boundary,
}

/// Uniform grid including the domain boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: Domain,
    resolution: Vec<usize>,
    steps: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(domain: Domain, resolution: &[usize]) -> Result<Self, MeshError> {
        if resolution.len() != domain.dimension() {
            return Err(MeshError::ResolutionArity {
                expected: domain.dimension(),
                got: resolution.len(),
            });
        }
        for (axis, &n) in domain.axes().iter().zip(resolution) {
            if n < 2 {
                return Err(MeshError::TooFewPoints { name: axis.name.clone(), count: n });
            }
        }
        let steps = domain
            .axes()
            .iter()
            .zip(resolution)
            .map(|(a, &n)| (a.hi - a.lo) / (n - 1) as f64)
            .collect();
        let mut strides = vec![1; resolution.len()];
        for k in (0..resolution.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * resolution[k + 1];
        }
        let len = resolution.iter().product();
        Ok(Grid { domain, resolution: resolution.to_vec(), steps, strides, len })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dimension(&self) -> usize {
        self.resolution.len()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn multi_index(&self, index: usize) -> Vec<usize> {
        debug_assert!(index < self.len);
        self.strides
            .iter()
            .zip(&self.resolution)
            .map(|(&stride, &n)| (index / stride) % n)
            .collect()
    }

    /// Flat index of a multi-index, or `None` when it falls outside the grid.
    pub fn flat_index(&self, multi: &[i64]) -> Option<usize> {
        let mut flat = 0;
        for ((&i, &n), &stride) in multi.iter().zip(&self.resolution).zip(&self.strides) {
            if i < 0 || i as usize >= n {
                return None;
            }
            flat += i as usize * stride;
        }
        Some(flat)
    }

    /// Coordinate of sample `i` along `axis`; the last sample is exactly `hi`.
    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        let a = &self.domain.axes()[axis];
        if i + 1 == self.resolution[axis] {
            a.hi
        } else {
            a.lo + i as f64 * self.steps[axis]
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        self.multi_index(index)
            .into_iter()
            .enumerate()
            .map(|(k, i)| self.coordinate(k, i))
            .collect()
    }

    /// All points in grid order.
    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len).map(move |i| self.point(i))
    }

    pub fn axis_positions(&self, index: usize) -> Vec<AxisPosition> {
        self.multi_index(index)
            .into_iter()
            .zip(&self.resolution)
            .map(|(i, &n)| {
                if i == 0 {
                    AxisPosition::Lo
                } else if i + 1 == n {
                    AxisPosition::Hi
                } else {
                    AxisPosition::Interior
                }
            })
            .collect()
    }

    pub fn classify(&self, index: usize) -> Result<PointClass, MeshError> {
        if index >= self.len {
            return Err(MeshError::IndexOutOfRange { index, len: self.len });
        }
        let on_edge = self
            .axis_positions(index)
            .into_iter()
            .any(|p| p != AxisPosition::Interior);
        Ok(if on_edge { PointClass::Boundary } else { PointClass::Interior })
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len)
            .filter(|&i| self.classify(i) == Ok(PointClass::Interior))
            .collect()
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.len)
            .filter(|&i| self.classify(i) == Ok(PointClass::Boundary))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square(n: usize) -> Grid {
        let d = Domain::new(vec![Axis::new("x", 0.0, 1.0), Axis::new("t", 0.0, 1.0)]).unwrap();
        Grid::new(d, &[n, n]).unwrap()
    }

    #[test]
    fn ten_points_on_unit_interval() {
        let g = Grid::new(Domain::interval("t", 0.0, 1.0).unwrap(), &[10]).unwrap();
        assert_eq!(g.steps()[0], 1.0 / 9.0);
        assert_eq!(g.len(), 10);
    }

    #[test]
    fn two_points_are_both_boundary() {
        let g = Grid::new(Domain::interval("t", 0.0, 1.0).unwrap(), &[2]).unwrap();
        assert_eq!(g.point(0), vec![0.0]);
        assert_eq!(g.point(1), vec![1.0]);
        assert!(g.interior_indices().is_empty());
        assert_eq!(g.boundary_indices(), vec![0, 1]);
    }

    #[test]
    fn three_by_three_has_single_interior_point() {
        let g = unit_square(3);
        assert_eq!(g.len(), 9);
        let interior = g.interior_indices();
        assert_eq!(interior.len(), 1);
        assert_eq!(g.point(interior[0]), vec![0.5, 0.5]);
        assert_eq!(g.boundary_indices().len(), 8);
    }

    #[test]
    fn last_axis_varies_fastest() {
        let g = unit_square(3);
        assert_eq!(g.point(1), vec![0.0, 0.5]);
        assert_eq!(g.point(3), vec![0.5, 0.0]);
    }

    #[test]
    fn classify_examples() {
        let g = Grid::new(Domain::interval("t", 0.0, 1.0).unwrap(), &[10]).unwrap();
        assert_eq!(g.classify(0), Ok(PointClass::Boundary));
        assert_eq!(g.classify(4), Ok(PointClass::Interior));
        assert!((g.point(4)[0] - 4.0 / 9.0).abs() < 1e-16);
        assert!(matches!(g.classify(10), Err(MeshError::IndexOutOfRange { .. })));

        let sq = unit_square(3);
        let idx = sq.flat_index(&[0, 1]).unwrap();
        assert_eq!(sq.point(idx), vec![0.0, 0.5]);
        assert_eq!(sq.classify(idx), Ok(PointClass::Boundary));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Domain::interval("t", 1.0, 1.0),
            Err(MeshError::DegenerateAxis { .. })
        ));
        assert!(matches!(
            Domain::new(vec![Axis::new("x", 0.0, 1.0), Axis::new("x", 0.0, 2.0)]),
            Err(MeshError::DuplicateAxis(_))
        ));
        let d = Domain::interval("t", 0.0, 1.0).unwrap();
        assert!(matches!(Grid::new(d.clone(), &[1]), Err(MeshError::TooFewPoints { .. })));
        assert!(matches!(Grid::new(d, &[3, 3]), Err(MeshError::ResolutionArity { .. })));
    }

    proptest! {
        #[test]
        fn boundary_count_formula(dims in proptest::collection::vec(2usize..7, 1..4)) {
            let axes = dims
                .iter()
                .enumerate()
                .map(|(k, _)| Axis::new(format!("a{k}"), -1.0, 2.0))
                .collect();
            let g = Grid::new(Domain::new(axes).unwrap(), &dims).unwrap();
            let total: usize = dims.iter().product();
            let inner: usize = dims.iter().map(|&n| n.saturating_sub(2)).product();
            prop_assert_eq!(g.len(), total);
            prop_assert_eq!(g.boundary_indices().len(), total - inner);
            prop_assert_eq!(g.interior_indices().len() + g.boundary_indices().len(), total);
        }

        #[test]
        fn coordinates_match_affine_formula(n in 2usize..200, lo in -5.0f64..5.0, width in 0.1f64..10.0) {
            let g = Grid::new(Domain::interval("s", lo, lo + width).unwrap(), &[n]).unwrap();
            let h = g.steps()[0];
            for i in 0..n {
                let expected = lo + i as f64 * h;
                let got = g.point(i)[0];
                let ulp = f64::EPSILON * expected.abs().max(lo.abs()).max(width);
                prop_assert!((got - expected).abs() <= 2.0 * ulp);
            }
        }
    }
}
