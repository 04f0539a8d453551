use rand::Rng as _;

use crate::gridworld::{Action, Observation, OBS_DIM};
use crate::numcore::{log_softmax, softmax, Activation, Binding, Graph, MlpSpec, ParamSet, Tensor, Var};
use crate::rng::{derive_seed, seeded, stream, Rng};
use crate::{Error, Result};

const ACTOR: &str = "actor/";
const CRITIC: &str = "critic/";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActOutput {
    pub action: Action,
    pub log_prob: f64,
    pub value: f64,
}

/// Actor and critic over `[one_hot(s) ++ z]`. The flat baseline has
/// `cond_dim = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub obs_dim: usize,
    pub cond_dim: usize,
    pub hidden: Vec<usize>,
    pub params: ParamSet,
}

impl PolicyNet {
    pub fn new(obs_dim: usize, cond_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self { obs_dim, cond_dim, hidden: hidden.to_vec(), params: ParamSet::new() };
        let mut rng = seeded(derive_seed(seed, stream::INIT, 10));
        net.actor_spec().init(ACTOR, &mut net.params, &mut rng, 0.01)?;
        net.critic_spec().init(CRITIC, &mut net.params, &mut rng, 1.0)?;
        Ok(net)
    }

    pub fn for_grid(cond_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        Self::new(OBS_DIM, cond_dim, hidden, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.cond_dim
    }

    pub fn actor_spec(&self) -> MlpSpec {
        MlpSpec::new(self.input_dim(), &self.hidden, Action::COUNT, Activation::Tanh, Activation::Identity)
    }

    pub fn critic_spec(&self) -> MlpSpec {
        MlpSpec::new(self.input_dim(), &self.hidden, 1, Activation::Tanh, Activation::Identity)
    }

    /// Input row for an observation and subtask embedding.
    pub fn input(&self, obs: &Observation, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.cond_dim {
            return Err(Error::Shape(format!("conditioning vector of length {} (expected {})", z.len(), self.cond_dim)));
        }
        let mut row = vec![0.0; self.input_dim()];
        obs.write_one_hot(&mut row[..self.obs_dim]);
        row[self.obs_dim..].copy_from_slice(z);
        Ok(row)
    }

    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.actor_spec().infer(&self.params, ACTOR, input)
    }

    pub fn value(&self, input: &[f64]) -> Result<f64> {
        Ok(self.critic_spec().infer(&self.params, CRITIC, input)?[0])
    }

    pub fn act(&self, input: &[f64], mode: ActMode, rng: &mut Rng) -> Result<ActOutput> {
        let logits = self.logits(input)?;
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("policy logits".into()));
        }
        let id = match mode {
            ActMode::Greedy => logits.iter().enumerate().fold(0, |best, (i, l)| if *l > logits[best] { i } else { best }),
            ActMode::Sample => sample_categorical(&softmax(&logits)?, rng),
        };
        let log_prob = log_softmax(&logits)?[id];
        Ok(ActOutput { action: Action::from_id(id)?, log_prob, value: self.value(input)? })
    }

    /// `(logits [n, 7], values [n])` for rows `x: [n, input_dim]`.
    pub fn forward_var(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<(Var, Var)> {
        let logits = self.actor_spec().forward(g, b, ACTOR, x)?;
        let v = self.critic_spec().forward(g, b, CRITIC, x)?;
        let n = g.value(v).rows();
        let v = g.reshape(v, vec![n])?;
        Ok((logits, v))
    }

    pub fn input_var(&self, g: &mut Graph, rows: &[f64]) -> Result<Var> {
        let n = rows.len() / self.input_dim();
        Ok(g.constant(Tensor::matrix(n, self.input_dim(), rows.to_vec())?))
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let mut u = rng.gen::<f64>();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}
