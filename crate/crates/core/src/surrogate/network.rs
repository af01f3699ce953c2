//! Dense feedforward network: initialization, forward pass with inverted
//! dropout, backpropagation and the Adam update.
//!
//! Shapes follow the batch-rows convention: activations are `m × n_l`, layer
//! `l` holds weights `W[l]` of shape `n_{l-1} × n_l` and biases of length
//! `n_l`. Hidden layers use ReLU, the output layer is linear.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::SurrogateError;
use crate::dataset::NormStats;
use crate::rng::Prng;

/// Hyper-parameters of the dense surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_split: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_dim: 4,
            output_dim: 24,
            hidden_layers: 10,
            hidden_width: 200,
            dropout: 0.1,
            learning_rate: 0.01,
            epochs: 500,
            batch_size: 64,
            validation_split: 0.1,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(SurrogateError::InvalidConfig(
                "input_dim and output_dim must be positive".into(),
            ));
        }
        if self.hidden_layers < 1 || self.hidden_width < 1 {
            return Err(SurrogateError::InvalidConfig(
                "need at least one hidden layer of width >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SurrogateError::InvalidConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return Err(SurrogateError::InvalidConfig(format!(
                "validation_split must lie in (0, 1), got {}",
                self.validation_split
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SurrogateError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SurrogateError::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Layer widths `[input, hidden..., output]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 2);
        dims.push(self.input_dim);
        dims.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        dims.push(self.output_dim);
        dims
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// `n_in × n_out` weight matrix.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// The surrogate network: layer parameters plus (after training) the
/// normalization statistics of the dataset it was fitted to.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub layers: Vec<Layer>,
    pub norm: Option<NormStats>,
}

impl Network {
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// He-style initialization: `W ~ Normal(0, 2/n_in)`, biases zero, drawn
/// row-major per layer from a generator seeded with `config.seed`.
pub fn init(config: &NetworkConfig) -> Result<Network, SurrogateError> {
    config.validate()?;
    let mut rng = Prng::from_seed(config.seed);
    let dims = config.dims();
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (n_in, n_out) = (pair[0], pair[1]);
        let std = (2.0 / n_in as f64).sqrt();
        let mut data = Vec::with_capacity(n_in * n_out);
        for _ in 0..n_in * n_out {
            data.push(std * rng.standard_normal());
        }
        layers.push(Layer {
            w: Array2::from_shape_vec((n_in, n_out), data).expect("shape matches fill"),
            b: Array1::zeros(n_out),
        });
    }
    Ok(Network {
        config: config.clone(),
        layers,
        norm: None,
    })
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Intermediate quantities of one forward pass, kept for backpropagation.
pub struct ForwardCache {
    /// Pre-activations per layer.
    pub zs: Vec<Array2<f64>>,
    /// Post-activation (and post-dropout) outputs per layer; `activations[0]`
    /// is the input batch.
    pub activations: Vec<Array2<f64>>,
    /// Scaled dropout masks (entries 0 or 1/(1-p)) per hidden layer.
    pub masks: Vec<Option<Array2<f64>>>,
}

fn check_input_dim(net: &Network, x: &Array2<f64>, context: &str) -> Result<(), SurrogateError> {
    if x.ncols() != net.config.input_dim {
        return Err(SurrogateError::DimensionMismatch {
            context: context.into(),
            expected: net.config.input_dim,
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Forward pass over a standardized batch. With `dropout_rng` present and a
/// positive dropout rate, inverted dropout is applied to every hidden
/// activation (masks drawn row-major, layer by layer).
pub fn forward_cached(
    net: &Network,
    x: &Array2<f64>,
    mut dropout_rng: Option<&mut Prng>,
) -> Result<ForwardCache, SurrogateError> {
    check_input_dim(net, x, "forward")?;
    let p = net.config.dropout;
    let n_layers = net.layers.len();
    let mut zs = Vec::with_capacity(n_layers);
    let mut activations = Vec::with_capacity(n_layers + 1);
    let mut masks = Vec::with_capacity(n_layers);
    activations.push(x.clone());
    for (l, layer) in net.layers.iter().enumerate() {
        let z = activations[l].dot(&layer.w) + &layer.b;
        let is_output = l == n_layers - 1;
        let mut a = if is_output { z.clone() } else { z.mapv(relu) };
        let mask = if !is_output && p > 0.0 {
            if let Some(rng) = dropout_rng.as_deref_mut() {
                let scale = 1.0 / (1.0 - p);
                let m = Array2::from_shape_fn(a.dim(), |_| {
                    if rng.u01() >= p {
                        scale
                    } else {
                        0.0
                    }
                });
                a = &a * &m;
                Some(m)
            } else {
                None
            }
        } else {
            None
        };
        zs.push(z);
        masks.push(mask);
        activations.push(a);
    }
    Ok(ForwardCache {
        zs,
        activations,
        masks,
    })
}

/// Public forward pass: training mode applies seeded inverted dropout,
/// evaluation mode is deterministic and mask-free.
pub fn forward(
    net: &Network,
    x: &Array2<f64>,
    train_mode: bool,
    seed: u64,
) -> Result<Array2<f64>, SurrogateError> {
    let mut rng;
    let rng_opt = if train_mode && net.config.dropout > 0.0 {
        rng = Prng::from_seed(seed);
        Some(&mut rng)
    } else {
        None
    };
    let cache = forward_cached(net, x, rng_opt)?;
    Ok(cache.activations.last().expect("at least one layer").clone())
}

/// Mean squared error averaged over every entry of the batch.
pub fn mse(y: &Array2<f64>, y_hat: &Array2<f64>) -> Result<f64, SurrogateError> {
    if y.dim() != y_hat.dim() {
        return Err(SurrogateError::DimensionMismatch {
            context: "mse".into(),
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    let n = y.len() as f64;
    let sum: f64 = y
        .iter()
        .zip(y_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

/// Gradients of [`mse`] with respect to every layer parameter.
pub struct Gradients {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

/// Backpropagation through a seeded forward pass; returns the gradients and
/// the loss of that same (dropout-masked) pass.
pub fn backward_with_loss(
    net: &Network,
    x: &Array2<f64>,
    y: &Array2<f64>,
    seed: u64,
) -> Result<(Gradients, f64), SurrogateError> {
    check_input_dim(net, x, "backward")?;
    if y.ncols() != net.config.output_dim || y.nrows() != x.nrows() {
        return Err(SurrogateError::DimensionMismatch {
            context: "backward targets".into(),
            expected: net.config.output_dim * x.nrows(),
            got: y.len(),
        });
    }
    let mut rng;
    let rng_opt = if net.config.dropout > 0.0 {
        rng = Prng::from_seed(seed);
        Some(&mut rng)
    } else {
        None
    };
    let cache = forward_cached(net, x, rng_opt)?;
    let y_hat = cache.activations.last().expect("nonempty network");
    let loss = mse(y, y_hat)?;

    let n_layers = net.layers.len();
    let scale = 2.0 / y.len() as f64;
    // dL/dZ of the linear output layer.
    let mut delta = (y_hat - y) * scale;
    let mut grads_w = vec![Array2::zeros((0, 0)); n_layers];
    let mut grads_b = vec![Array1::zeros(0); n_layers];
    for l in (0..n_layers).rev() {
        grads_w[l] = cache.activations[l].t().dot(&delta);
        grads_b[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut upstream = delta.dot(&net.layers[l].w.t());
            if let Some(mask) = &cache.masks[l - 1] {
                upstream = &upstream * mask;
            }
            let dz = cache.zs[l - 1].mapv(relu_grad);
            delta = &upstream * &dz;
        }
    }
    Ok((
        Gradients {
            w: grads_w,
            b: grads_b,
        },
        loss,
    ))
}

/// Backpropagation alone (see [`backward_with_loss`]).
pub fn backward(
    net: &Network,
    x: &Array2<f64>,
    y: &Array2<f64>,
    seed: u64,
) -> Result<Gradients, SurrogateError> {
    backward_with_loss(net, x, y, seed).map(|(g, _)| g)
}

/// Bias-corrected first/second-moment optimizer (Adam) with the standard
/// constants β1 = 0.9, β2 = 0.999, ε = 1e-8.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(net: &Network, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m_w: net.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            v_w: net.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            m_b: net.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
            v_b: net.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        }
    }

    pub fn step_index(&self) -> u64 {
        self.t
    }

    /// One update over every parameter; `t` advances to `>= 1` on first call.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for l in 0..net.layers.len() {
            update_param(
                &mut net.layers[l].w,
                &grads.w[l],
                &mut self.m_w[l],
                &mut self.v_w[l],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
            update_param(
                &mut net.layers[l].b,
                &grads.b[l],
                &mut self.m_b[l],
                &mut self.v_b[l],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_param<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        });
}
