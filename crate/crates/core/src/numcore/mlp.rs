use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{Binding, ParamSet};
use super::tensor::{matmul_into, Tensor};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Layer layout of a fully connected network. `activations[i]` follows layer `i`;
/// there is one more layer than hidden sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    /// Hidden layers share `hidden_act`; the output layer uses `output_act`.
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, hidden_act: Activation, output_act: Activation) -> Self {
        let mut activations = vec![hidden_act; hidden.len()];
        activations.push(output_act);
        Self { input_dim, hidden: hidden.to_vec(), output_dim, activations }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Invalid(format!("MLP dimensions must be positive: {self:?}")));
        }
        if self.activations.len() != self.hidden.len() + 1 {
            return Err(Error::Invalid("one activation per layer required".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}l{layer}.w")
    }

    pub fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}l{layer}.b")
    }

    /// Adds freshly initialised weights under `prefix` to `params`.
    ///
    /// Weights are uniform in ±sqrt(6 / (fan_in + fan_out)) scaled by
    /// `output_gain` on the last layer; biases start at zero.
    pub fn init(&self, prefix: &str, params: &mut ParamSet, rng: &mut Rng, output_gain: f64) -> Result<()> {
        self.validate()?;
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let mut bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if l == last {
                bound *= output_gain;
            }
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-1.0..=1.0) * bound).collect();
            params.insert(Self::weight_name(prefix, l), Tensor::matrix(fan_in, fan_out, w)?);
            params.insert(Self::bias_name(prefix, l), Tensor::zeros(&[fan_out]));
        }
        Ok(())
    }

    /// Zero weights everywhere, except for an identity first layer when the
    /// network is a single square layer.
    pub fn init_zero(&self, prefix: &str, params: &mut ParamSet) -> Result<()> {
        self.validate()?;
        for (l, &(fan_in, fan_out)) in self.layer_dims().iter().enumerate() {
            params.insert(Self::weight_name(prefix, l), Tensor::zeros(&[fan_in, fan_out]));
            params.insert(Self::bias_name(prefix, l), Tensor::zeros(&[fan_out]));
        }
        Ok(())
    }

    /// Differentiable forward pass of a `[batch, input_dim]` node.
    pub fn forward(&self, graph: &mut Graph, binding: &Binding, prefix: &str, input: Var) -> Result<Var> {
        let x = graph.value(input);
        if x.shape().len() != 2 || x.cols() != self.input_dim {
            return Err(Error::Shape(format!("MLP expects [_, {}], got {:?}", self.input_dim, x.shape())));
        }
        let mut h = input;
        for (l, act) in self.activations.iter().enumerate() {
            let w = binding.var(&Self::weight_name(prefix, l))?;
            let b = binding.var(&Self::bias_name(prefix, l))?;
            let z = graph.matmul(h, w)?;
            let z = graph.add_row(z, b)?;
            h = match act {
                Activation::Relu => graph.relu(z),
                Activation::Tanh => graph.tanh(z),
                Activation::Identity => z,
            };
        }
        if !graph.value(h).is_finite() {
            return Err(Error::NonFinite(format!("MLP `{prefix}` forward")));
        }
        Ok(h)
    }

    /// Tape-free forward pass over `batch` rows stored contiguously in `input`.
    ///
    /// Uses the same kernels as [`MlpSpec::forward`], so results are bit-identical.
    pub fn infer(&self, params: &ParamSet, prefix: &str, input: &[f64]) -> Result<Vec<f64>> {
        if input.is_empty() || !input.len().is_multiple_of(self.input_dim) {
            return Err(Error::Shape(format!("MLP input length {} not a multiple of {}", input.len(), self.input_dim)));
        }
        let batch = input.len() / self.input_dim;
        let mut h = input.to_vec();
        for (l, (&(fan_in, fan_out), act)) in self.layer_dims().iter().zip(&self.activations).enumerate() {
            let w = params.require(&Self::weight_name(prefix, l))?;
            let b = params.require(&Self::bias_name(prefix, l))?;
            if w.shape() != [fan_in, fan_out] {
                return Err(Error::Shape(format!("layer {l} of `{prefix}` has shape {:?}", w.shape())));
            }
            let mut out = vec![0.0; batch * fan_out];
            matmul_into(&h, w.data(), &mut out, batch, fan_in, fan_out);
            for row in out.chunks_mut(fan_out) {
                for (o, bias) in row.iter_mut().zip(b.data()) {
                    *o = act.apply(*o + bias);
                }
            }
            h = out;
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("MLP `{prefix}` inference")));
        }
        Ok(h)
    }
}
