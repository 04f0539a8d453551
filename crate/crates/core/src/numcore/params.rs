use std::collections::BTreeMap;

use super::graph::{Graph, Gradients, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

pub type Grads = BTreeMap<String, Tensor>;

/// Adam hyperparameters. Defaults are β1 = 0.9, β2 = 0.999, ε = 1e-5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-5 }
    }
}

/// Named parameters with their Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
    first_moment: BTreeMap<String, Tensor>,
    second_moment: BTreeMap<String, Tensor>,
    step: u64,
    pub adam: AdamConfig,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        self.first_moment.insert(name.clone(), Tensor::zeros(t.shape()));
        self.second_moment.insert(name.clone(), Tensor::zeros(t.shape()));
        self.params.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        Some((self.first_moment.get(name)?, self.second_moment.get(name)?))
    }

    /// Restores optimizer state, e.g. from a checkpoint.
    pub fn set_optimizer_state(&mut self, name: &str, m: Tensor, v: Tensor) -> Result<()> {
        let p = self.require(name)?;
        if p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(Error::Shape(format!("moment shapes for `{name}`")));
        }
        self.first_moment.insert(name.to_string(), m);
        self.second_moment.insert(name.to_string(), v);
        Ok(())
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Adds every parameter to `graph` as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph) -> Binding {
        let vars = self.params.iter().map(|(k, t)| (k.clone(), graph.param(t.clone()))).collect();
        Binding { vars }
    }

    /// Adds every parameter as a constant (no gradient flows into it).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Binding {
        let vars = self.params.iter().map(|(k, t)| (k.clone(), graph.constant(t.clone()))).collect();
        Binding { vars }
    }

    /// One Adam step with bias correction. Parameters without an entry in
    /// `grads` are an error; zero gradients leave parameters untouched.
    pub fn adam_step(&mut self, grads: &Grads, lr: f64) -> Result<()> {
        for name in self.params.keys() {
            let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
            if g.shape() != self.params[name].shape() {
                return Err(Error::Shape(format!("gradient for `{name}`")));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in self.params.iter_mut() {
            let g = grads[name].data();
            let m = self.first_moment.get_mut(name).expect("moment exists").data_mut();
            let v = self.second_moment.get_mut(name).expect("moment exists").data_mut();
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                if g[i] == 0.0 && m[i] == 0.0 {
                    continue;
                }
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Plain gradient step `p += scale · g` over the parameters present in `grads`.
    pub fn sgd_apply(&mut self, grads: &Grads, scale: f64) -> Result<()> {
        for (name, g) in grads {
            let p = self.params.get_mut(name).ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient for `{name}`")));
            }
            for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                *w += scale * d;
            }
        }
        Ok(())
    }

    /// Merges another set under `prefix` (used to checkpoint several nets together).
    pub fn merged_with(&self, other: &ParamSet, prefix: &str) -> ParamSet {
        let mut out = self.clone();
        for (k, t) in &other.params {
            let name = format!("{prefix}{k}");
            out.params.insert(name.clone(), t.clone());
            out.first_moment.insert(name.clone(), other.first_moment[k].clone());
            out.second_moment.insert(name, other.second_moment[k].clone());
        }
        out
    }
}

/// Graph handles for a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Invalid(format!("unbound parameter `{name}`")))
    }

    /// Collects gradients for every bound parameter; unreachable ones get zeros.
    pub fn collect(&self, graph: &Graph, grads: &Gradients) -> Result<Grads> {
        let mut out = Grads::new();
        for (name, &v) in &self.vars {
            let g = match grads.get(v) {
                Some(g) => g.clone(),
                None => Tensor::zeros(graph.value(v).shape()),
            };
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

/// Backpropagates `loss` and returns one gradient per parameter of `binding`.
pub fn loss_and_grads(graph: &Graph, loss: Var, binding: &Binding) -> Result<Grads> {
    let grads = graph.backward(loss)?;
    binding.collect(graph, &grads)
}

pub fn grad_norm(grads: &Grads) -> f64 {
    grads.values().map(Tensor::squared_norm).sum::<f64>().sqrt()
}
