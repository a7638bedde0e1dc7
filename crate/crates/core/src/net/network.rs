use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Mish,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "mish" => Ok(Activation::Mish),
            other => Err(Error::InvalidParameter(format!("unknown activation `{other}`"))),
        }
    }
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// mish(u) = u · tanh(ln(1 + eᵘ))
pub fn mish(u: f64) -> f64 {
    u * softplus(u).tanh()
}

pub fn mish_grad(u: f64) -> f64 {
    let t = softplus(u).tanh();
    let sigmoid = 1.0 / (1.0 + (-u).exp());
    t + u * (1.0 - t * t) * sigmoid
}

impl Activation {
    #[inline]
    fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::Mish => mish(u),
        }
    }

    #[inline]
    fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Mish => mish_grad(u),
        }
    }
}

/// A stack of affine layers. Hidden layers apply the activation; the last
/// layer is linear. With `residual` set, hidden layers after the first whose
/// input and output widths agree add their input back (`h + act(Wh + b)`).
///
/// Parameters live in one flat vector, layer by layer, each layer stored as
/// its row-major `out × in` weight matrix followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_dims: Vec<usize>,
    activation: Activation,
    residual: bool,
    params: Vec<f64>,
}

/// Activations cached by [`Network::forward_trace`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn into_output(self) -> Vec<f64> {
        self.output
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidDims(format!(
            "need at least input and output widths, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidDims(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}

impl Network {
    /// All-zero parameters.
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        validate_dims(layer_dims)?;
        Ok(Network {
            layer_dims: layer_dims.to_vec(),
            activation,
            residual: false,
            params: vec![0.0; param_count(layer_dims)],
        })
    }

    /// Fan-in scaled uniform weights, zero biases. Hidden layers use the
    /// He bound √(6 / fan_in); the output layer uses 1 / √fan_in.
    pub fn new(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, activation)?;
        let mut rng = rng::stream(seed, "init", 0);
        let layers = net.num_layers();
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let bound = if l + 1 == layers {
                1.0 / (fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(
        layer_dims: &[usize],
        activation: Activation,
        residual: bool,
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_dims(layer_dims)?;
        check_dim("network parameters", param_count(layer_dims), params.len())?;
        Ok(Network {
            layer_dims: layer_dims.to_vec(),
            activation,
            residual,
            params,
        })
    }

    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.layer_dims[..=layer])
    }

    /// `(weights, biases)` of one layer; weights are row-major `out × in`.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let (fan_in, fan_out) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        let start = self.layer_offset(layer);
        let (w, rest) = self.params[start..].split_at(fan_in * fan_out);
        (w, &rest[..fan_out])
    }

    fn skips(&self, layer: usize) -> bool {
        self.residual
            && layer > 0
            && layer + 1 < self.num_layers()
            && self.layer_dims[layer] == self.layer_dims[layer + 1]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), x.len())?;
        let mut h = x.to_vec();
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let fan_in = h.len();
            let last = l + 1 == self.num_layers();
            let skip = self.skips(l);
            h = b
                .iter()
                .enumerate()
                .map(|(o, bias)| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let z = bias + dot(row, &h);
                    if last {
                        z
                    } else if skip {
                        h[o] + self.activation.apply(z)
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        check_dim("network input", self.input_dim(), x.len())?;
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut h = x.to_vec();
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let fan_in = h.len();
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, bias)| bias + dot(&w[o * fan_in..(o + 1) * fan_in], &h))
                .collect();
            let next = if l + 1 == layers {
                z.clone()
            } else if self.skips(l) {
                h.iter()
                    .zip(&z)
                    .map(|(hi, zi)| hi + self.activation.apply(*zi))
                    .collect()
            } else {
                z.iter().map(|zi| self.activation.apply(*zi)).collect()
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        Ok(Trace {
            inputs,
            pre,
            output: h,
        })
    }

    /// Accumulate ∂⟨grad_output, f(x)⟩/∂θ into `param_grads` and return the
    /// gradient with respect to the input.
    pub fn backward_trace(
        &self,
        trace: &Trace,
        grad_output: &[f64],
        param_grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        check_dim("network grad_output", self.output_dim(), grad_output.len())?;
        check_dim("network param grads", self.num_params(), param_grads.len())?;
        let layers = self.num_layers();
        let mut g = grad_output.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let input = &trace.inputs[l];
            let z = &trace.pre[l];
            let last = l + 1 == layers;
            let gz: Vec<f64> = if last {
                g.clone()
            } else {
                g.iter()
                    .zip(z)
                    .map(|(gi, zi)| gi * self.activation.derivative(*zi))
                    .collect()
            };

            let start = self.layer_offset(l);
            let (gw, rest) = param_grads[start..].split_at_mut(fan_in * fan_out);
            for (o, gzo) in gz.iter().enumerate() {
                if *gzo == 0.0 {
                    continue;
                }
                for (gwi, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *gwi += gzo * xi;
                }
                rest[o] += gzo;
            }

            let (w, _) = self.layer(l);
            let mut g_in = if self.skips(l) { g.clone() } else { vec![0.0; fan_in] };
            for (o, gzo) in gz.iter().enumerate() {
                if *gzo == 0.0 {
                    continue;
                }
                for (gi, wi) in g_in.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *gi += gzo * wi;
                }
            }
            g = g_in;
        }
        Ok(g)
    }

    /// Gradients of ⟨grad_output, f(x)⟩ as `(parameter grads, input grad)`.
    pub fn backward(&self, x: &[f64], grad_output: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        let mut grads = vec![0.0; self.num_params()];
        let input = self.backward_trace(&trace, grad_output, &mut grads)?;
        Ok((grads, input))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
