use rand::seq::SliceRandom as _;
use serde::{Deserialize, Serialize};

use super::policy::PolicyNet;
use crate::numcore::{loss_and_grads, Binding, Graph, Tensor, Var};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub steps_per_update: usize,
    pub epochs: usize,
    pub minibatch: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gae_lambda: 0.95,
            gamma: 0.99,
            value_coef: 1.0,
            entropy_coef: 0.01,
            lr: 1e-4,
            steps_per_update: 2048,
            epochs: 4,
            minibatch: 256,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("ppo: {what}")));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must be in (0, 1)");
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma and gae_lambda must be in (0, 1]");
        }
        if !(self.lr > 0.0) || self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return bad("lr must be positive and coefficients non-negative");
        }
        if self.steps_per_update == 0 || self.epochs == 0 || self.minibatch == 0 {
            return bad("steps_per_update, epochs and minibatch must be positive");
        }
        Ok(())
    }
}

/// Per-step records of one collection phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub input_dim: usize,
    pub inputs: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Executing subtask per step (`None` for the flat baseline).
    pub subtasks: Vec<Option<usize>>,
    /// Value of the state after the last step, used when it is not terminal.
    pub last_value: f64,
}

impl RolloutBuffer {
    pub fn new(input_dim: usize) -> Self {
        Self { input_dim, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, input: &[f64], action: usize, log_prob: f64, value: f64, reward: f64, done: bool, subtask: Option<usize>) {
        debug_assert_eq!(input.len(), self.input_dim);
        self.inputs.extend_from_slice(input);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
        self.subtasks.push(subtask);
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.input_dim);
    }
}

/// Generalised advantage estimates and value targets (`A + V`).
///
/// `dones[t]` cuts bootstrapping after step `t`; after the final step the
/// estimate bootstraps from `last_value` unless that step is terminal.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if n == 0 {
        return Err(Error::Invalid("GAE over an empty buffer".into()));
    }
    if values.len() != n || dones.len() != n {
        return Err(Error::Shape("rewards, values and dones differ in length".into()));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let next = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to mean 0, std 1 (left centred only when the std is 0).
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    xs.iter().map(|x| if std > 1e-12 { (x - mean) / std } else { x - mean }).collect()
}

/// `min(i·A, clip(i, 1−ε, 1+ε)·A)` per sample with `i = exp(lp − old)`.
pub fn clipped_surrogate_var(g: &mut Graph, log_probs: Var, old_log_probs: &[f64], advantages: &[f64], clip: f64) -> Result<Var> {
    let old = g.constant(Tensor::vector(old_log_probs.to_vec()));
    let adv = g.constant(Tensor::vector(advantages.to_vec()));
    let diff = g.sub(log_probs, old)?;
    let ratio = g.exp(diff);
    if !g.value(ratio).is_finite() {
        return Err(Error::NonFinite("importance ratio".into()));
    }
    let unclipped = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let clipped = g.mul(clipped, adv)?;
    g.min(unclipped, clipped)
}

/// Rows of one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatch {
    pub inputs: Vec<f64>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

pub struct PpoLoss {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
}

/// `−mean(surrogate) + c_v·mean((V − R)²) − c_e·mean(H)`.
pub fn ppo_loss_var(policy: &PolicyNet, g: &mut Graph, b: &Binding, batch: &PpoBatch, cfg: &PpoConfig) -> Result<PpoLoss> {
    let x = policy.input_var(g, &batch.inputs)?;
    let (logits, v) = policy.forward_var(g, b, x)?;
    let ls = g.log_softmax(logits)?;
    let lp = g.pick(ls, batch.actions.clone())?;
    let surr = clipped_surrogate_var(g, lp, &batch.old_log_probs, &batch.advantages, cfg.clip)?;
    let surr = g.mean(surr);
    let policy_loss = g.scale(surr, -1.0);
    let ret = g.constant(Tensor::vector(batch.returns.clone()));
    let err = g.sub(v, ret)?;
    let err = g.square(err);
    let value_loss = g.mean(err);
    let p = g.exp(ls);
    let plogp = g.mul(p, ls)?;
    let h = g.sum_cols(plogp);
    let h = g.mean(h);
    let entropy = g.scale(h, -1.0);
    let vl = g.scale(value_loss, cfg.value_coef);
    let el = g.scale(entropy, -cfg.entropy_coef);
    let total = g.add(policy_loss, vl)?;
    let total = g.add(total, el)?;
    Ok(PpoLoss { total, policy: policy_loss, value: value_loss, entropy })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Several epochs of shuffled minibatch Adam steps on the clipped objective.
/// Returns the losses averaged over all minibatches.
pub fn ppo_update(policy: &mut PolicyNet, buffer: &RolloutBuffer, cfg: &PpoConfig, rng: &mut Rng) -> Result<PpoStats> {
    let (adv, returns) = gae(&buffer.rewards, &buffer.values, &buffer.dones, buffer.last_value, cfg.gamma, cfg.gae_lambda)?;
    let adv = normalize(&adv);
    let d = buffer.input_dim;
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut stats = PpoStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let batch = PpoBatch {
                inputs: chunk.iter().flat_map(|&i| buffer.inputs[i * d..(i + 1) * d].iter().copied()).collect(),
                actions: chunk.iter().map(|&i| buffer.actions[i]).collect(),
                old_log_probs: chunk.iter().map(|&i| buffer.log_probs[i]).collect(),
                advantages: chunk.iter().map(|&i| adv[i]).collect(),
                returns: chunk.iter().map(|&i| returns[i]).collect(),
            };
            let mut g = Graph::new();
            let b = policy.params.bind(&mut g);
            let loss = ppo_loss_var(policy, &mut g, &b, &batch, cfg)?;
            stats.policy_loss += g.value(loss.policy).item();
            stats.value_loss += g.value(loss.value).item();
            stats.entropy += g.value(loss.entropy).item();
            count += 1.0;
            let grads = loss_and_grads(&g, loss.total, &b)?;
            policy.params.adam_step(&grads, cfg.lr)?;
        }
    }
    stats.policy_loss /= count;
    stats.value_loss /= count;
    stats.entropy /= count;
    Ok(stats)
}
