//! Parametric field approximations `u(x; theta)`.
//!
//! Two implementations share the [`FieldApprox`] interface:
//!
//! * [`MlpField`]: a tanh multilayer perceptron, evaluable at arbitrary
//!   coordinates (mesh-free).
//! * [`GridField`]: one free value per grid node; evaluable only at nodes.
//!
//! Both keep their parameters in one flat vector so the optimizer and the
//! cache treat them uniformly.

use std::fmt;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Grid;
use crate::Real;

/// Default hidden layer widths of the perceptron.
pub const DEFAULT_HIDDEN: [usize; 3] = [100, 100, 100];

/// Default relative magnitude of the warm-start perturbation.
pub const DEFAULT_PERTURB_SIGMA: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("expected points of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("grid field can only be evaluated at grid nodes")]
    OffGrid,
    #[error("architecture {0} is invalid")]
    InvalidArchitecture(String),
}

/// Shape descriptor; two fields are interchangeable iff their descriptors
/// are equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// Layer widths from input to output, e.g. `[1, 100, 100, 100, 1]`.
    Mlp { layers: Vec<usize> },
    /// One value per node of a grid with this resolution.
    Grid { resolution: Vec<usize> },
}

impl Architecture {
    pub fn mlp(input: usize, hidden: &[usize]) -> Self {
        let mut layers = vec![input];
        layers.extend_from_slice(hidden);
        layers.push(1);
        Architecture::Mlp { layers }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Architecture::Mlp { layers } => layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum(),
            Architecture::Grid { resolution } => resolution.iter().product(),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize], sep: &str| v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(sep);
        match self {
            Architecture::Mlp { layers } => write!(f, "mlp:{}", join(layers, "-")),
            Architecture::Grid { resolution } => write!(f, "grid:{}", join(resolution, "x")),
        }
    }
}

/// Points at which a field is sampled during one loss evaluation.
///
/// `coords` holds continuous coordinates (one row per node). `grid` holds the
/// grid index of each node when it coincides with a grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalNodes {
    pub coords: Array2<f64>,
    pub grid: Vec<Option<usize>>,
}

impl EvalNodes {
    /// Every node of `grid`, in grid order.
    pub fn grid_nodes(grid: &Grid) -> Self {
        let dim = grid.dimension();
        let mut coords = Array2::zeros((grid.len(), dim));
        for (i, p) in grid.points().enumerate() {
            for k in 0..dim {
                coords[[i, k]] = p[k];
            }
        }
        EvalNodes { coords, grid: (0..grid.len()).map(Some).collect() }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// A parametrized field `u(x; theta)`.
pub trait FieldApprox<T: Real>: Clone + Send + Sync {
    fn architecture(&self) -> Architecture;

    fn params(&self) -> &[T];

    fn params_mut(&mut self) -> &mut [T];

    /// Replaces all parameters. Panics on a length mismatch.
    fn set_params(&mut self, params: &[T]) {
        self.params_mut().copy_from_slice(params);
    }

    /// Field values at the nodes.
    fn eval(&self, nodes: &EvalNodes) -> Result<Vec<T>, ApproxError>;

    /// Field values at the nodes plus the gradient over the parameters of
    /// `sum_p upstream(values)_p * u(node_p)`. The closure maps the forward
    /// values to per-node weights, so a single forward pass serves both.
    fn eval_and_backward(
        &self,
        nodes: &EvalNodes,
        upstream: &mut dyn FnMut(&[T]) -> Vec<T>,
    ) -> Result<(Vec<T>, Vec<T>), ApproxError>;

    /// Gradient of `sum_p upstream_p * u(node_p)` over the parameters.
    fn backward(&self, nodes: &EvalNodes, upstream: &[T]) -> Result<Vec<T>, ApproxError> {
        if upstream.len() != nodes.len() {
            return Err(ApproxError::Shape { expected: nodes.len(), got: upstream.len() });
        }
        let weights = upstream.to_vec();
        Ok(self.eval_and_backward(nodes, &mut |_| weights.clone())?.1)
    }

    /// Parameter index of every node when each node value is a single
    /// parameter, `None` otherwise.
    fn node_params(&self, _nodes: &EvalNodes) -> Option<Vec<usize>> {
        None
    }
}

/// Adds seeded zero-mean Gaussian noise to every parameter. The standard
/// deviation is `sigma * max(rms(theta), 1e-3)`.
pub fn perturb<T: Real, F: FieldApprox<T>>(field: &mut F, sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let params = field.params_mut();
    if params.is_empty() {
        return;
    }
    let rms = (params.iter().map(|p| p.to_f64_lossy().powi(2)).sum::<f64>() / params.len() as f64).sqrt();
    let std = sigma * rms.max(1e-3);
    let normal = Normal::new(0.0, std).expect("finite standard deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params.iter_mut() {
        *p = *p + T::of(normal.sample(&mut rng));
    }
}

// ---------------------------------------------------------------------------

/// Fully connected network: `affine -> tanh` per hidden layer, affine output.
///
/// Parameters are stored flat, layer by layer: the weight matrix
/// (`out x in`, row-major) followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpField<T> {
    layers: Vec<usize>,
    params: Vec<T>,
}

impl<T: Real> MlpField<T> {
    /// All-zero parameters.
    pub fn zeros(layers: &[usize]) -> Result<Self, ApproxError> {
        if layers.len() < 2 || layers.contains(&0) || *layers.last().unwrap() != 1 {
            return Err(ApproxError::InvalidArchitecture(format!("{layers:?}")));
        }
        let n = Architecture::Mlp { layers: layers.to_vec() }.param_count();
        Ok(MlpField { layers: layers.to_vec(), params: vec![T::zero(); n] })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(layers: &[usize], seed: u64) -> Result<Self, ApproxError> {
        let mut field = MlpField::zeros(layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in layers.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for p in &mut field.params[offset..offset + fan_in * fan_out] {
                *p = T::of(rng.sample(dist));
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(field)
    }

    /// Default architecture for a `dimension`-dimensional domain.
    pub fn default_layers(dimension: usize) -> Vec<usize> {
        let mut l = vec![dimension];
        l.extend_from_slice(&DEFAULT_HIDDEN);
        l.push(1);
        l
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    fn layer_views(&self) -> Vec<(ArrayView2<'_, T>, &[T])> {
        let mut out = Vec::with_capacity(self.layers.len() - 1);
        let mut offset = 0;
        for w in self.layers.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = ArrayView2::from_shape((fan_out, fan_in), &self.params[offset..offset + fan_in * fan_out])
                .expect("layer shape");
            offset += fan_in * fan_out;
            let bias = &self.params[offset..offset + fan_out];
            offset += fan_out;
            out.push((weights, bias));
        }
        out
    }

    fn input(&self, coords: &Array2<f64>) -> Result<Array2<T>, ApproxError> {
        if coords.ncols() != self.layers[0] {
            return Err(ApproxError::Dimension { expected: self.layers[0], got: coords.ncols() });
        }
        Ok(coords.mapv(T::of))
    }

    /// Activations of every layer (input first, output last).
    fn forward_tape(&self, x: Array2<T>) -> Vec<Array2<T>> {
        let views = self.layer_views();
        let last = views.len() - 1;
        let mut tape = Vec::with_capacity(views.len() + 1);
        tape.push(x);
        for (l, (w, b)) in views.iter().enumerate() {
            let mut z = tape[l].dot(&w.t());
            for mut row in z.rows_mut() {
                for (v, &bias) in row.iter_mut().zip(b.iter()) {
                    *v = *v + bias;
                }
            }
            if l != last {
                z.mapv_inplace(|v| v.tanh());
            }
            tape.push(z);
        }
        tape
    }

    /// Batched forward pass over coordinate rows.
    pub fn forward(&self, points: &Array2<f64>) -> Result<Vec<T>, ApproxError> {
        let tape = self.forward_tape(self.input(points)?);
        Ok(tape.last().expect("output layer").column(0).to_vec())
    }

    /// Reverse-mode gradient of `sum_p upstream_p * u(point_p)`.
    pub fn backward_points(&self, points: &Array2<f64>, upstream: &[T]) -> Result<Vec<T>, ApproxError> {
        if upstream.len() != points.nrows() {
            return Err(ApproxError::Shape { expected: points.nrows(), got: upstream.len() });
        }
        let tape = self.forward_tape(self.input(points)?);
        Ok(self.backprop(&tape, upstream))
    }

    fn backprop(&self, tape: &[Array2<T>], upstream: &[T]) -> Vec<T> {
        let views = self.layer_views();
        let mut grad = vec![T::zero(); self.params.len()];
        let n = upstream.len();
        let mut delta = Array2::from_shape_vec((n, 1), upstream.to_vec()).expect("upstream shape");
        let mut offsets = Vec::with_capacity(views.len());
        let mut offset = 0;
        for w in self.layers.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        for l in (0..views.len()).rev() {
            let (w, _) = &views[l];
            let (fan_out, fan_in) = w.dim();
            let a_prev = &tape[l];
            let dw = delta.t().dot(a_prev);
            let start = offsets[l];
            grad[start..start + fan_in * fan_out]
                .iter_mut()
                .zip(dw.iter())
                .for_each(|(g, &d)| *g = d);
            let db = delta.sum_axis(Axis(0));
            grad[start + fan_in * fan_out..start + fan_in * fan_out + fan_out]
                .iter_mut()
                .zip(db.iter())
                .for_each(|(g, &d)| *g = d);
            if l > 0 {
                let mut d_prev = delta.dot(w);
                // tanh' = 1 - tanh^2, with the hidden activation stored in the tape
                ndarray::Zip::from(&mut d_prev)
                    .and(a_prev)
                    .for_each(|d, &a| *d = *d * (T::one() - a * a));
                delta = d_prev;
            }
        }
        grad
    }
}

impl<T: Real> FieldApprox<T> for MlpField<T> {
    fn architecture(&self) -> Architecture {
        Architecture::Mlp { layers: self.layers.clone() }
    }

    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn eval(&self, nodes: &EvalNodes) -> Result<Vec<T>, ApproxError> {
        self.forward(&nodes.coords)
    }

    fn eval_and_backward(
        &self,
        nodes: &EvalNodes,
        upstream: &mut dyn FnMut(&[T]) -> Vec<T>,
    ) -> Result<(Vec<T>, Vec<T>), ApproxError> {
        let tape = self.forward_tape(self.input(&nodes.coords)?);
        let values = tape.last().expect("output layer").slice(s![.., 0]).to_vec();
        let weights = upstream(&values);
        if weights.len() != values.len() {
            return Err(ApproxError::Shape { expected: values.len(), got: weights.len() });
        }
        let grad = self.backprop(&tape, &weights);
        Ok((values, grad))
    }
}

// ---------------------------------------------------------------------------

/// One value per grid node, ordered like the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField<T> {
    resolution: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> GridField<T> {
    pub fn zeros(grid: &Grid) -> Self {
        GridField { resolution: grid.resolution().to_vec(), values: vec![T::zero(); grid.len()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<T>) -> Result<Self, ApproxError> {
        if values.len() != grid.len() {
            return Err(ApproxError::Shape { expected: grid.len(), got: values.len() });
        }
        Ok(GridField { resolution: grid.resolution().to_vec(), values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    fn indices(&self, nodes: &EvalNodes) -> Result<Vec<usize>, ApproxError> {
        nodes
            .grid
            .iter()
            .map(|g| g.filter(|&i| i < self.values.len()).ok_or(ApproxError::OffGrid))
            .collect()
    }
}

impl<T: Real> FieldApprox<T> for GridField<T> {
    fn architecture(&self) -> Architecture {
        Architecture::Grid { resolution: self.resolution.clone() }
    }

    fn params(&self) -> &[T] {
        &self.values
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    fn eval(&self, nodes: &EvalNodes) -> Result<Vec<T>, ApproxError> {
        Ok(self.indices(nodes)?.into_iter().map(|i| self.values[i]).collect())
    }

    fn eval_and_backward(
        &self,
        nodes: &EvalNodes,
        upstream: &mut dyn FnMut(&[T]) -> Vec<T>,
    ) -> Result<(Vec<T>, Vec<T>), ApproxError> {
        let idx = self.indices(nodes)?;
        let values: Vec<T> = idx.iter().map(|&i| self.values[i]).collect();
        let weights = upstream(&values);
        if weights.len() != values.len() {
            return Err(ApproxError::Shape { expected: values.len(), got: weights.len() });
        }
        // Adjoint of node gathering is a scatter-add.
        let mut grad = vec![T::zero(); self.values.len()];
        for (i, w) in idx.into_iter().zip(weights) {
            grad[i] = grad[i] + w;
        }
        Ok((values, grad))
    }

    fn node_params(&self, nodes: &EvalNodes) -> Option<Vec<usize>> {
        self.indices(nodes).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Axis, Domain};
    use ndarray::array;
    use proptest::prelude::*;

    fn unit_square(n: usize) -> Grid {
        let d = Domain::new(vec![Axis::new("x", 0.0, 1.0), Axis::new("t", 0.0, 1.0)]).unwrap();
        Grid::new(d, &[n, n]).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpField::<f64>::zeros(&[2, 8, 8, 1]).unwrap();
        let out = net.forward(&array![[0.3, 0.1], [5.0, -2.0]]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_preactivation_gives_output_bias() {
        let mut net = MlpField::<f64>::zeros(&[1, 1, 1]).unwrap();
        // params: w1, b1, w2, b2
        net.set_params(&[0.0, 0.0, 3.0, 0.25]);
        assert_eq!(net.forward(&array![[0.7]]).unwrap(), vec![0.25]);
    }

    #[test]
    fn single_unit_tanh() {
        let mut net = MlpField::<f64>::zeros(&[1, 1, 1]).unwrap();
        net.set_params(&[1.0, 0.0, 1.0, 0.0]);
        let y = net.forward(&array![[0.5]]).unwrap()[0];
        assert!((y - 0.4621171572600098).abs() < 1e-10);
        assert!((y - 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let net = MlpField::<f64>::zeros(&[2, 4, 1]).unwrap();
        assert_eq!(net.forward(&array![[0.1]]), Err(ApproxError::Dimension { expected: 2, got: 1 }));
        assert!(MlpField::<f64>::zeros(&[2, 4, 2]).is_err());
        assert!(MlpField::<f64>::zeros(&[2]).is_err());
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let net = MlpField::<f64>::glorot(&[2, 5, 5, 1], 3).unwrap();
        let pts = array![[0.1, 0.2], [0.3, 0.9]];
        let g = net.backward_points(&pts, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(matches!(net.backward_points(&pts, &[1.0]), Err(ApproxError::Shape { .. })));
    }

    #[test]
    fn linear_model_gradient() {
        let mut net = MlpField::<f64>::zeros(&[2, 1]).unwrap();
        net.set_params(&[0.5, -1.5, 0.2]);
        let pts = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let up = [0.1, -2.0, 4.0];
        let g = net.backward_points(&pts, &up).unwrap();
        let expect_w0: f64 = (0..3).map(|p| up[p] * pts[[p, 0]]).sum();
        let expect_w1: f64 = (0..3).map(|p| up[p] * pts[[p, 1]]).sum();
        let expect_b: f64 = up.iter().sum();
        assert!((g[0] - expect_w0).abs() < 1e-14);
        assert!((g[1] - expect_w1).abs() < 1e-14);
        assert!((g[2] - expect_b).abs() < 1e-14);
    }

    /// Central differences over parameters, independent of `backprop`.
    fn fd_gradient(net: &MlpField<f64>, pts: &Array2<f64>, up: &[f64], step: f64) -> Vec<f64> {
        let objective = |n: &MlpField<f64>| -> f64 {
            n.forward(pts).unwrap().iter().zip(up).map(|(v, u)| v * u).sum()
        };
        let mut probe = net.clone();
        (0..net.params().len())
            .map(|k| {
                let orig = probe.params()[k];
                probe.params_mut()[k] = orig + step;
                let plus = objective(&probe);
                probe.params_mut()[k] = orig - step;
                let minus = objective(&probe);
                probe.params_mut()[k] = orig;
                (plus - minus) / (2.0 * step)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
        diff / scale
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn backward_matches_finite_differences(
            seed in 0u64..1000,
            hidden in proptest::collection::vec(1usize..7, 0..3),
            rows in proptest::collection::vec((-1.5f64..1.5, -1.5f64..1.5, -2.0f64..2.0), 1..6),
        ) {
            let mut layers = vec![2];
            layers.extend(hidden);
            layers.push(1);
            let mut net = MlpField::<f64>::glorot(&layers, seed).unwrap();
            // non-zero biases so every parameter is exercised
            perturb(&mut net, 0.3, seed + 1);
            let pts = Array2::from_shape_fn((rows.len(), 2), |(i, k)| if k == 0 { rows[i].0 } else { rows[i].1 });
            let up: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let g = net.backward_points(&pts, &up).unwrap();
            let fd = fd_gradient(&net, &pts, &up, 1e-6);
            prop_assert!(rel_err(&g, &fd) <= 1e-4, "rel err {}", rel_err(&g, &fd));
        }

        #[test]
        fn params_round_trip(seed in 0u64..500) {
            let net = MlpField::<f64>::glorot(&[2, 6, 4, 1], seed).unwrap();
            let mut other = MlpField::<f64>::zeros(&[2, 6, 4, 1]).unwrap();
            other.set_params(net.params());
            let pts = array![[0.2, 0.4], [0.9, 0.1]];
            prop_assert_eq!(other.forward(&pts).unwrap(), net.forward(&pts).unwrap());
        }
    }

    #[test]
    fn glorot_is_seeded() {
        let a = MlpField::<f64>::glorot(&[2, 10, 1], 42).unwrap();
        let b = MlpField::<f64>::glorot(&[2, 10, 1], 42).unwrap();
        let c = MlpField::<f64>::glorot(&[2, 10, 1], 43).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn default_init_stays_in_envelope() {
        let g = unit_square(21);
        let nodes = EvalNodes::grid_nodes(&g);
        for seed in 0..10 {
            let net = MlpField::<f64>::glorot(&MlpField::<f64>::default_layers(2), seed).unwrap();
            let out = net.eval(&nodes).unwrap();
            assert!(out.iter().all(|v| v.abs() <= 3.0), "seed {seed}");
        }
    }

    #[test]
    fn single_precision_network() {
        let net64 = MlpField::<f64>::glorot(&[1, 4, 1], 9).unwrap();
        let mut net32 = MlpField::<f32>::zeros(&[1, 4, 1]).unwrap();
        let p32: Vec<f32> = net64.params().iter().map(|&p| p as f32).collect();
        net32.set_params(&p32);
        let pts = array![[0.25], [0.75]];
        let a = net64.forward(&pts).unwrap();
        let b = net32.forward(&pts).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - *y as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn perturb_is_deterministic() {
        let base = MlpField::<f64>::glorot(&[1, 8, 1], 1).unwrap();
        let mut a = base.clone();
        perturb(&mut a, 0.0, 5);
        assert_eq!(a, base);
        let mut b = base.clone();
        let mut c = base.clone();
        perturb(&mut b, 0.01, 5);
        perturb(&mut c, 0.01, 5);
        assert_eq!(b, c);
        assert_ne!(b, base);
    }

    #[test]
    fn grid_field_basics() {
        let g = unit_square(3);
        let f = GridField::<f64>::zeros(&g);
        assert!(f.params().iter().all(|&v| v == 0.0));
        let f = GridField::from_values(&g, (0..9).map(f64::from).collect()).unwrap();
        let nodes = EvalNodes::grid_nodes(&g);
        assert_eq!(f.eval(&nodes).unwrap(), (0..9).map(f64::from).collect::<Vec<_>>());
        let off = EvalNodes { coords: array![[0.1, 0.1]], grid: vec![None] };
        assert_eq!(f.eval(&off), Err(ApproxError::OffGrid));
        let sub = EvalNodes { coords: array![[0.0, 0.5], [0.0, 0.5]], grid: vec![Some(1), Some(1)] };
        let grad = f.backward(&sub, &[2.0, 3.0]).unwrap();
        assert_eq!(grad[1], 5.0);
        assert_eq!(grad.iter().sum::<f64>(), 5.0);
        assert_eq!(f.architecture().param_count(), 9);
    }
}
