use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use crate::error::{Error, Result};

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::LeakyRelu => g.leaky_relu(x, LEAKY_RELU_SLOPE),
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Hands out contiguous ranges of a flat parameter vector.
#[derive(Clone, Debug, Default)]
pub struct ParamLayout {
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        ParamLayout { len: 0 }
    }

    pub fn alloc(&mut self, n: usize) -> usize {
        let offset = self.len;
        self.len += n;
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
}

/// Fully connected network. Weights are stored `fan_in × fan_out` row-major,
/// followed by the bias; the activation is applied between layers only.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    layers: Vec<Layer>,
    offset: usize,
    len: usize,
}

impl Mlp {
    pub fn new(widths: &[usize], activation: Activation, layout: &mut ParamLayout) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config(format!("invalid MLP widths {widths:?}")));
        }
        let offset = layout.len();
        let layers = widths
            .windows(2)
            .map(|w| {
                let weight = layout.alloc(w[0] * w[1]);
                let bias = layout.alloc(w[1]);
                Layer { fan_in: w[0], fan_out: w[1], weight, bias }
            })
            .collect();
        Ok(Mlp {
            widths: widths.to_vec(),
            activation,
            layers,
            offset,
            len: layout.len() - offset,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.len
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) for every weight and bias.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        for layer in &self.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let n = layer.fan_in * layer.fan_out;
            for p in &mut params[layer.weight..layer.weight + n] {
                *p = rng.random_range(-bound..bound);
            }
            for p in &mut params[layer.bias..layer.bias + layer.fan_out] {
                *p = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn zero(&self, params: &mut [f64]) {
        params[self.param_range()].iter_mut().for_each(|p| *p = 0.0);
    }

    /// Zeroes the last layer so the network outputs exactly zero.
    pub fn zero_output_layer(&self, params: &mut [f64]) {
        let last = self.layers.last().unwrap();
        let n = last.fan_in * last.fan_out;
        params[last.weight..last.weight + n].iter_mut().for_each(|p| *p = 0.0);
        params[last.bias..last.bias + last.fan_out].iter_mut().for_each(|p| *p = 0.0);
    }

    /// Mutable views of layer `i`'s weight matrix (row-major `fan_in × fan_out`) and bias.
    pub fn layer_mut<'a>(&self, params: &'a mut [f64], i: usize) -> (&'a mut [f64], &'a mut [f64]) {
        let l = self.layers[i];
        let (w, rest) = params[l.weight..].split_at_mut(l.fan_in * l.fan_out);
        (w, &mut rest[..l.fan_out])
    }

    /// Records the network on the tape for a batch `input` of shape `m × widths[0]`.
    pub fn forward(&self, g: &mut Graph, params: &[f64], input: NodeId) -> Result<NodeId> {
        let (_, cols) = g.shape(input);
        if cols != self.input_dim() {
            return Err(Error::config(format!(
                "MLP expects input width {}, got {cols}",
                self.input_dim()
            )));
        }
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let w = g.param(params, l.weight, l.fan_in, l.fan_out);
            let b = g.param(params, l.bias, 1, l.fan_out);
            let z = g.matmul(h, w);
            h = g.add_bias(z, b);
            if i < last {
                h = self.activation.apply(g, h);
            }
        }
        Ok(h)
    }
}
