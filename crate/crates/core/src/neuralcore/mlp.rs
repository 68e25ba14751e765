use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    /// Checkpoint code: 0 rectifier, 1 sigmoid, 2 identity.
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and activation `a`.
    /// The rectifier's derivative at exactly 0 is 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A fully connected layer; `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
}

/// Intermediates of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Validation("a model needs at least input and output dims".into()));
    }
    if dims.contains(&0) {
        return Err(Error::Validation(format!("layer dims must be positive, got {dims:?}")));
    }
    Ok(())
}

/// `x · Wᵀ + b` for each row of `x`; a single row takes the matrix-vector path.
fn affine(layer: &DenseLayer, x: &Array2<f64>) -> Array2<f64> {
    if x.nrows() == 1 {
        (layer.weights.dot(&x.row(0)) + &layer.bias).insert_axis(Axis(0))
    } else {
        x.dot(&layer.weights.t()) + &layer.bias
    }
}

impl MlpModel {
    /// Validates that layers chain and every parameter is finite.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("a model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} != out_dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if l.in_dim() == 0 || l.out_dim() == 0 {
                return Err(Error::Validation(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.in_dim(),
                    i - 1,
                    layers[i - 1].out_dim()
                )));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases, rectifier hidden layers and a
    /// sigmoid output.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        Self::init_with_output(dims, Activation::Sigmoid, seed)
    }

    pub fn init_with_output(dims: &[usize], output: Activation, seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (d_in, d_out) = (w[0], w[1]);
                let bound = (6.0 / (d_in + d_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let weights = Array2::from_shape_simple_fn((d_out, d_in), || dist.sample(&mut rng));
                DenseLayer {
                    weights,
                    bias: Array1::zeros(d_out),
                    activation: if i + 1 == n { output } else { Activation::Relu },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// All-zero parameters.
    pub fn zeros(dims: &[usize], output: Activation) -> Result<Self> {
        check_dims(dims)?;
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
                activation: if i + 1 == n { output } else { Activation::Relu },
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Every parameter, layer by layer (weights row-major, then bias).
    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects input width {}, found {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Batched forward pass over rows of `x`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let z = affine(layer, &current);
            let a = z.mapv(|v| layer.activation.apply(v));
            inputs.push(current);
            pre_activations.push(z);
            current = a;
        }
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("forward pass produced non-finite outputs".into()));
        }
        let cache = ForwardCache {
            inputs,
            pre_activations,
            output: current.clone(),
        };
        Ok((current, cache))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut current = x.to_owned();
        for layer in &self.layers {
            let mut z = affine(layer, &current);
            z.mapv_inplace(|v| layer.activation.apply(v));
            current = z;
        }
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("forward pass produced non-finite outputs".into()));
        }
        Ok(current)
    }

    /// Reverse-mode pass given `∂loss/∂output` for each row of the batch.
    pub fn backward(&self, cache: &ForwardCache, grad_output: ArrayView2<f64>) -> Result<Gradients> {
        if cache.inputs.len() != self.layers.len()
            || cache
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(x, l)| x.ncols() != l.in_dim())
        {
            return Err(Error::Shape("forward cache does not match this model".into()));
        }
        if grad_output.dim() != cache.output.dim() {
            return Err(Error::Shape(format!(
                "output gradient is {:?}, expected {:?}",
                grad_output.dim(),
                cache.output.dim()
            )));
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut upstream = grad_output.to_owned();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let z = &cache.pre_activations[i];
            let a = if i + 1 == n { &cache.output } else { &cache.inputs[i + 1] };
            let mut delta = upstream;
            ndarray::Zip::from(&mut delta)
                .and(z)
                .and(a)
                .for_each(|d, &z, &a| *d *= layer.activation.derivative(z, a));
            weights.push(delta.t().dot(&cache.inputs[i]));
            biases.push(delta.sum_axis(Axis(0)));
            upstream = if i > 0 { delta.dot(&layer.weights) } else { Array2::zeros((0, 0)) };
        }
        weights.reverse();
        biases.reverse();
        Ok(Gradients { weights, biases })
    }
}
