//! Dense feed-forward binary classifiers with a scalar output `f(x)`.
//!
//! Training never sees a loss value. The backward pass is seeded with
//! per-sample loss-derivatives `g_b` supplied by the caller, and the weight
//! gradient is `(1/B) sum_b y_b g_b grad f(x_b)`, which is the chain rule
//! applied to the margin `y_b f(x_b)`.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::derivgen::DerivativeBatch;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Multilayer perceptron. `layer_dims = [d, h_1, ..., h_L, 1]`; with no
/// hidden layers it is a linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layer_dims: Vec<usize>,
    /// `weights[l]` has shape `(layer_dims[l + 1], layer_dims[l])`.
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
    activation: Activation,
    dropout_rate: f64,
    weight_decay: f64,
    version: u64,
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

/// Cached intermediate values of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Layer inputs: the batch itself, then every hidden activation after dropout.
    inputs: Vec<Array2<T>>,
    /// Activation derivative times dropout scale, per hidden layer.
    gates: Vec<Array2<T>>,
    version: u64,
}

#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub scores: Array1<T>,
    pub cache: ForwardCache<T>,
}

fn validate_rates(dropout_rate: f64, weight_decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {dropout_rate}")));
    }
    if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
        return Err(Error::Config(format!("weight decay must be finite and >= 0, got {weight_decay}")));
    }
    Ok(())
}

impl<T: Scalar> Mlp<T> {
    /// He-uniform initialization: weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// zero biases.
    pub fn new(
        layer_dims: Vec<usize>,
        activation: Activation,
        dropout_rate: f64,
        weight_decay: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut model = Self::zeros(layer_dims, activation, dropout_rate, weight_decay)?;
        for w in &mut model.weights {
            let fan_in = w.ncols() as f64;
            let bound = (6.0 / fan_in).sqrt();
            w.mapv_inplace(|_| T::from_f64_lossy((2.0 * rng.uniform() - 1.0) * bound));
        }
        Ok(model)
    }

    /// All-zero parameters.
    pub fn zeros(layer_dims: Vec<usize>, activation: Activation, dropout_rate: f64, weight_decay: f64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dims {layer_dims:?}")));
        }
        if *layer_dims.last().unwrap_or(&0) != 1 {
            return Err(Error::Config("the output layer must have a single unit".into()));
        }
        validate_rates(dropout_rate, weight_decay)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self {
            layer_dims,
            weights,
            biases,
            activation,
            dropout_rate,
            weight_decay,
            version: 0,
        })
    }

    /// `[input_dim, hidden..., 1]` for `depth` hidden layers of `width` units.
    pub fn dims(input_dim: usize, depth: usize, width: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(width, depth));
        dims.push(1);
        dims
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<T>] {
        self.version += 1;
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<T>] {
        self.version += 1;
        &mut self.biases
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Inverse of [`Mlp::to_flat`].
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().unwrap_or_default());
            b.iter_mut().for_each(|v| *v = it.next().unwrap_or_default());
        }
        self.version += 1;
        Ok(())
    }

    pub fn params_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn activate(&self, z: &mut Array2<T>) -> Array2<T> {
        match self.activation {
            Activation::Relu => {
                let gate = z.mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
                z.mapv_inplace(|v| v.max(T::zero()));
                gate
            }
            Activation::Tanh => {
                z.mapv_inplace(|v| v.tanh());
                z.mapv(|a| T::one() - a * a)
            }
        }
    }

    /// Scores `f(x_b)` for every row of `x`.
    ///
    /// In train mode with a positive dropout rate, hidden activations are
    /// multiplied by masks drawn from `rng` and scaled by `1/(1 - rate)`
    /// (inverted dropout), so evaluation mode needs no rescaling.
    pub fn forward(&self, x: ArrayView2<T>, train_mode: bool, rng: &mut Rng) -> Result<ForwardPass<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let n_layers = self.weights.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut gates = Vec::with_capacity(n_layers.saturating_sub(1));
        let keep = 1.0 - self.dropout_rate;
        let use_dropout = train_mode && self.dropout_rate > 0.0;
        let scale = T::from_f64_lossy(1.0 / keep);

        let mut a = x.to_owned();
        for l in 0..n_layers {
            let mut z = a.dot(&self.weights[l].t()) + &self.biases[l];
            inputs.push(a);
            if l + 1 == n_layers {
                let scores = z.index_axis_move(Axis(1), 0);
                return Ok(ForwardPass {
                    scores,
                    cache: ForwardCache {
                        inputs,
                        gates,
                        version: self.version,
                    },
                });
            }
            let mut gate = self.activate(&mut z);
            if use_dropout {
                for (zv, gv) in z.iter_mut().zip(gate.iter_mut()) {
                    if rng.uniform() < keep {
                        *zv = *zv * scale;
                        *gv = *gv * scale;
                    } else {
                        *zv = T::zero();
                        *gv = T::zero();
                    }
                }
            }
            gates.push(gate);
            a = z;
        }
        unreachable!("a model has at least one layer")
    }

    /// Evaluation-mode scores.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        // eval mode never touches the rng
        let mut rng = Rng::new(0);
        Ok(self.forward(x, false, &mut rng)?.scores)
    }

    /// `(1/B) sum_b y_b g_b grad f(x_b)`, plus `weight_decay * W` on weights.
    pub fn backward_with_derivs(&self, cache: &ForwardCache<T>, y: &[T], g: &DerivativeBatch<T>) -> Result<Gradients<T>> {
        if cache.version != self.version {
            return Err(Error::Contract("forward cache is stale: parameters changed since the forward pass".into()));
        }
        let batch = cache.inputs[0].nrows();
        if y.len() != batch || g.derivs.len() != batch {
            return Err(Error::Shape(format!(
                "batch of {batch} rows with {} labels and {} derivatives",
                y.len(),
                g.derivs.len()
            )));
        }
        let inv_b = T::from_f64_lossy(1.0 / batch as f64);
        let seeds: Array1<T> = y.iter().zip(&g.derivs).map(|(&yb, &gb)| yb * gb * inv_b).collect();
        let mut delta = seeds.insert_axis(Axis(1));

        let n_layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); n_layers];
        let mut gb = vec![Array1::zeros(0); n_layers];
        for l in (0..n_layers).rev() {
            gw[l] = delta.t().dot(&cache.inputs[l]);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&self.weights[l]) * &cache.gates[l - 1];
            }
        }
        if self.weight_decay > 0.0 {
            let wd = T::from_f64_lossy(self.weight_decay);
            for (g, w) in gw.iter_mut().zip(&self.weights) {
                g.scaled_add(wd, w);
            }
        }
        Ok(Gradients { weights: gw, biases: gb })
    }

    /// Plain SGD update `theta <- theta - lr * grad`.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        if grads.weights.len() != self.weights.len()
            || grads.weights.iter().zip(&self.weights).any(|(g, w)| g.dim() != w.dim())
            || grads.biases.iter().zip(&self.biases).any(|(g, b)| g.dim() != b.dim())
        {
            return Err(Error::Shape("gradient shapes do not match the model".into()));
        }
        if !grads.all_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.scaled_add(-lr, g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.scaled_add(-lr, g);
        }
        self.version += 1;
        if !self.params_finite() {
            return Err(Error::Divergence("parameters became non-finite".into()));
        }
        Ok(())
    }
}
