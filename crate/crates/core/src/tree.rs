//! Top-K subtask planning trees: query/key attention over subtask
//! embeddings, ordered sampling without replacement, an m-step state
//! predictor for imagined rollouts, and the two tree-side learning updates.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::gridworld::{Action, Observation, Subtask, OBS_DIM};
use crate::numcore::{grad_norm, loss_and_grads, softmax, Activation, Binding, Graph, MlpSpec, ParamSet, Tensor, Var};
use crate::repr::{pair_features, PAIR_DIM};
use crate::rng::{derive_seed, seeded, stream, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Children per expanded node.
    pub width: usize,
    /// Nodes on every root-to-leaf path.
    pub depth: usize,
    pub horizon: usize,
    pub key_dim: usize,
    pub query_hidden: Vec<usize>,
    pub predictor_hidden: Vec<usize>,
    pub attention_lr: f64,
    pub predictor_lr: f64,
    pub gamma: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            width: 2,
            depth: 3,
            horizon: 5,
            key_dim: 8,
            query_hidden: vec![32, 16, 8],
            predictor_hidden: vec![64],
            attention_lr: 1e-4,
            predictor_lr: 1e-4,
            gamma: 0.99,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self, num_subtasks: usize) -> Result<()> {
        if self.width == 0 || self.width >= num_subtasks {
            return Err(Error::Config(format!("tree width {} must be in [1, {num_subtasks})", self.width)));
        }
        if self.depth == 0 || self.horizon == 0 || self.key_dim == 0 {
            return Err(Error::Config("tree depth, horizon and key_dim must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }
}

const QUERY: &str = "query/";
const W_Q: &str = "attn/wq";
const W_K: &str = "attn/wk";

/// Query encoder and the two attention projections (the parameters ω).
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub input_dim: usize,
    pub embedding_dim: usize,
    pub key_dim: usize,
    pub query_hidden: Vec<usize>,
    pub params: ParamSet,
}

impl TreeModel {
    pub fn new(input_dim: usize, embedding_dim: usize, key_dim: usize, query_hidden: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self { input_dim, embedding_dim, key_dim, query_hidden: query_hidden.to_vec(), params: ParamSet::new() };
        let mut rng = seeded(derive_seed(seed, stream::INIT, 1));
        model.query_spec().init(QUERY, &mut model.params, &mut rng, 1.0)?;
        let bound = (6.0 / (key_dim + embedding_dim) as f64).sqrt();
        for name in [W_Q, W_K] {
            let w = (0..key_dim * embedding_dim).map(|_| rng.gen_range(-bound..=bound)).collect();
            model.params.insert(name, Tensor::matrix(key_dim, embedding_dim, w)?);
        }
        Ok(model)
    }

    pub fn query_spec(&self) -> MlpSpec {
        MlpSpec::new(self.input_dim, &self.query_hidden, self.embedding_dim, Activation::Relu, Activation::Identity)
    }

    /// `v^q = E^q(s, a)` for one feature row.
    pub fn query(&self, pair: &[f64]) -> Result<Vec<f64>> {
        if pair.len() != self.input_dim {
            return Err(Error::Shape(format!("query input has {} values, expected {}", pair.len(), self.input_dim)));
        }
        self.query_spec().infer(&self.params, QUERY, pair)
    }

    fn project(&self, name: &str, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.embedding_dim {
            return Err(Error::Shape(format!("embedding of length {} (expected {})", v.len(), self.embedding_dim)));
        }
        let w = self.params.require(name)?;
        Ok(w.data().chunks(self.embedding_dim).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect())
    }

    /// `β_i = (W_φ v^q)·(W_φ′ v^i)` and `α = softmax(β)`.
    pub fn attention(&self, vq: &[f64], keys: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        if keys.is_empty() {
            return Err(Error::Invalid("attention over zero keys".into()));
        }
        let q = self.project(W_Q, vq)?;
        let beta = keys
            .iter()
            .map(|k| Ok(self.project(W_K, k)?.iter().zip(&q).map(|(a, b)| a * b).sum()))
            .collect::<Result<Vec<f64>>>()?;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("attention score".into()));
        }
        let alpha = softmax(&beta)?;
        Ok((beta, alpha))
    }

    /// `log α_selected` at feature row `pair` as a graph node.
    pub fn log_prob_var(&self, g: &mut Graph, b: &Binding, pair: &[f64], keys: &[Vec<f64>], selected: usize) -> Result<Var> {
        if selected >= keys.len() {
            return Err(Error::Invalid(format!("selected subtask {selected} out of {}", keys.len())));
        }
        let x = g.constant(Tensor::matrix(1, self.input_dim, pair.to_vec())?);
        let vq = self.query_spec().forward(g, b, QUERY, x)?;
        let flat: Vec<f64> = keys.iter().flatten().copied().collect();
        let k = g.constant(Tensor::matrix(keys.len(), self.embedding_dim, flat)?);
        let qp = g.matmul_t(vq, b.var(W_Q)?)?;
        let kp = g.matmul_t(k, b.var(W_K)?)?;
        let beta = g.matmul_t(qp, kp)?;
        let ls = g.log_softmax(beta)?;
        g.pick(ls, vec![selected])
    }
}

/// Probability of drawing the ordered ids under sequential sampling without
/// replacement: `∏_i α_{c_i} / Σ_{ι ∉ {c_1..c_{i−1}}} α_ι`.
pub fn joint_probability(alpha: &[f64], ids: &[usize]) -> Result<f64> {
    let mut used = vec![false; alpha.len()];
    let mut p = 1.0;
    for &c in ids {
        if c >= alpha.len() || used[c] {
            return Err(Error::Invalid(format!("ids {ids:?} repeat or exceed {}", alpha.len())));
        }
        let mass: f64 = alpha.iter().zip(&used).filter(|(_, u)| !**u).map(|(a, _)| a).sum();
        if mass <= 0.0 {
            return Err(Error::Invalid("remaining domain has zero mass".into()));
        }
        p *= alpha[c] / mass;
        used[c] = true;
    }
    Ok(p)
}

/// Draws `k` distinct ids in order, renormalising over the remaining ids
/// after each draw. Returns the ids and their joint probability.
pub fn sample_topk(alpha: &[f64], k: usize, rng: &mut Rng) -> Result<(Vec<usize>, f64)> {
    if k == 0 || k >= alpha.len() {
        return Err(Error::Invalid(format!("top-K needs 1 ≤ K < n, got K={k}, n={}", alpha.len())));
    }
    if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::Invalid("α must be a finite non-negative vector".into()));
    }
    let mut used = vec![false; alpha.len()];
    let mut ids = Vec::with_capacity(k);
    let mut joint = 1.0;
    for _ in 0..k {
        let mass: f64 = alpha.iter().zip(&used).filter(|(_, u)| !**u).map(|(a, _)| a).sum();
        if mass <= 0.0 {
            return Err(Error::Invalid("remaining domain has zero mass".into()));
        }
        let mut u = rng.gen::<f64>() * mass;
        let mut pick = None;
        for (i, &a) in alpha.iter().enumerate() {
            if used[i] || a == 0.0 {
                continue;
            }
            pick = Some(i);
            if u < a {
                break;
            }
            u -= a;
        }
        let c = pick.expect("positive mass implies a candidate");
        joint *= alpha[c] / mass;
        used[c] = true;
        ids.push(c);
    }
    Ok((ids, joint))
}

const PREDICTOR: &str = "pm/";

/// Maps `(s_t, a_t)` features to the state `horizon` steps later.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepPredictor {
    pub spec: MlpSpec,
    pub horizon: usize,
    pub params: ParamSet,
}

impl MStepPredictor {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, horizon: usize, seed: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Invalid("predictor horizon must be at least 1".into()));
        }
        let spec = MlpSpec::new(input_dim, hidden, output_dim, Activation::Relu, Activation::Identity);
        let mut params = ParamSet::new();
        spec.init(PREDICTOR, &mut params, &mut seeded(derive_seed(seed, stream::INIT, 2)), 1.0)?;
        Ok(Self { spec, horizon, params })
    }

    /// Gridworld-sized predictor over one-hot observations.
    pub fn for_grid(hidden: &[usize], horizon: usize, seed: u64) -> Result<Self> {
        Self::new(PAIR_DIM, hidden, OBS_DIM, horizon, seed)
    }

    pub fn predict(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        self.spec.infer(&self.params, PREDICTOR, inputs)
    }

    /// `mean_n ‖ŝ_{t+m} − s_{t+m}‖²` over rows.
    pub fn loss_var(&self, g: &mut Graph, b: &Binding, inputs: &[f64], targets: &[f64]) -> Result<Var> {
        let n = inputs.len() / self.spec.input_dim;
        if n == 0 || targets.len() != n * self.spec.output_dim {
            return Err(Error::Shape("m-step targets do not match inputs".into()));
        }
        let x = g.constant(Tensor::matrix(n, self.spec.input_dim, inputs.to_vec())?);
        let y = g.constant(Tensor::matrix(n, self.spec.output_dim, targets.to_vec())?);
        let pred = self.spec.forward(g, b, PREDICTOR, x)?;
        let d = g.sub(pred, y)?;
        let d = g.square(d);
        let d = g.sum_cols(d);
        Ok(g.mean(d))
    }

    /// One Adam step on a batch; returns the pre-step loss.
    pub fn train_step(&mut self, inputs: &[f64], targets: &[f64], lr: f64) -> Result<f64> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let loss = self.loss_var(&mut g, &b, inputs, targets)?;
        let value = g.value(loss).item();
        let grads = loss_and_grads(&g, loss, &b)?;
        self.params.adam_step(&grads, lr)?;
        Ok(value)
    }
}

/// `(t, t + m)` index pairs of an episode with `len` actions.
pub fn m_step_pairs(len: usize, m: usize) -> Result<Vec<(usize, usize)>> {
    if m == 0 || len < m {
        return Err(Error::Invalid(format!("episode of {len} steps is shorter than the horizon {m}")));
    }
    Ok((0..=len - m).map(|t| (t, t + m)).collect())
}

/// Deterministic 1D chain: the state moves by `0.1·(a − 1)` per step for
/// `a ∈ {0, 1, 2}`; the action is held for `m` steps. Inputs are
/// `[s, one_hot(a)]`, targets `[s_{+m}]`.
pub fn chain_batch(n: usize, m: usize, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut inputs = Vec::with_capacity(n * 4);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let s: f64 = rng.gen_range(-1.0..1.0);
        let a = rng.gen_range(0..3usize);
        inputs.push(s);
        inputs.extend((0..3).map(|i| if i == a { 1.0 } else { 0.0 }));
        targets.push(s + 0.1 * m as f64 * (a as f64 - 1.0));
    }
    (inputs, targets)
}

/// What tree expansion needs from the rest of the agent.
pub trait TreeContext {
    /// Key embeddings `v^i = E^i(s, a)` for every subtask.
    fn keys(&mut self, obs: &Observation, action: Option<Action>) -> Result<Vec<Vec<f64>>>;
    /// Greedy policy action at `obs` conditioned on subtask embedding `z`.
    fn greedy_action(&mut self, obs: &Observation, z: &[f64]) -> Result<Action>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanNode {
    pub subtask: usize,
    pub depth: usize,
    /// Weight of the edge from the parent (`None` at the root).
    pub alpha: Option<f64>,
    /// Real state at the root, imagined state elsewhere.
    #[serde(skip)]
    pub state: Observation,
    /// The subtask's key embedding where the node was sampled.
    pub embedding: Vec<f64>,
    /// Greedy action used to imagine the children's state.
    pub action: Option<Action>,
    /// Full α vector over subtasks from which the children were drawn.
    pub candidate_alpha: Vec<f64>,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanTree {
    pub width: usize,
    pub depth: usize,
    /// α over subtasks from which the root was drawn.
    pub root_alpha: Vec<f64>,
    pub nodes: Vec<PlanNode>,
}

impl PlanTree {
    pub fn root(&self) -> &PlanNode {
        &self.nodes[0]
    }

    /// Every root-to-leaf path as node indices, children in stored order.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![vec![0usize]];
        while let Some(path) = stack.pop() {
            let last = *path.last().expect("non-empty");
            let children = &self.nodes[last].children;
            if children.is_empty() {
                out.push(path);
            } else {
                for &c in children.iter().rev() {
                    let mut p = path.clone();
                    p.push(c);
                    stack.push(p);
                }
            }
        }
        out
    }

    fn label(&self, i: usize) -> String {
        let n = &self.nodes[i];
        let name = Subtask::from_id(n.subtask).map(|s| s.name().to_string()).unwrap_or_else(|_| n.subtask.to_string());
        format!("{name} (d{})", n.depth)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph plan {\n  node [shape=box];\n");
        for i in 0..self.nodes.len() {
            let _ = writeln!(out, "  n{i} [label=\"{}\"];", self.label(i));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            for &c in &n.children {
                let _ = writeln!(out, "  n{i} -> n{c} [label=\"{:.3}\"];", self.nodes[c].alpha.unwrap_or(0.0));
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Expands a full `width`-ary tree of `depth` layers.
///
/// The root subtask is drawn (K = 1) from attention at the last real pair
/// `(s_{t−1}, a_{t−1})`; the root's state is the current observation. Each
/// internal node takes the policy's greedy action, imagines the state
/// `horizon` steps ahead with the predictor (snapped to the nearest valid
/// observation) and draws `width` distinct children from attention there.
#[allow(clippy::too_many_arguments)]
pub fn build_tree(
    ctx: &mut dyn TreeContext,
    model: &TreeModel,
    predictor: &MStepPredictor,
    last_obs: &Observation,
    last_action: Option<Action>,
    current: &Observation,
    width: usize,
    depth: usize,
    rng: &mut Rng,
) -> Result<PlanTree> {
    if depth == 0 {
        return Err(Error::Invalid("tree depth must be at least 1".into()));
    }
    let pair = pair_features(last_obs, last_action);
    let keys = ctx.keys(last_obs, last_action)?;
    if width == 0 || width >= keys.len() {
        return Err(Error::Invalid(format!("tree width {width} must be in [1, {})", keys.len())));
    }
    let (_, root_alpha) = model.attention(&model.query(&pair)?, &keys)?;
    let (root_id, _) = sample_topk(&root_alpha, 1, rng)?;
    let root = PlanNode {
        subtask: root_id[0],
        depth: 0,
        alpha: None,
        state: current.clone(),
        embedding: keys[root_id[0]].clone(),
        action: None,
        candidate_alpha: Vec::new(),
        children: Vec::new(),
        parent: None,
    };
    let mut tree = PlanTree { width, depth, root_alpha, nodes: vec![root] };
    let mut frontier = vec![0usize];
    for d in 1..depth {
        let mut next = Vec::with_capacity(frontier.len() * width);
        for &i in &frontier {
            let (state, z) = (tree.nodes[i].state.clone(), tree.nodes[i].embedding.clone());
            let a = ctx.greedy_action(&state, &z)?;
            let imagined = Observation::nearest(&predictor.predict(&pair_features(&state, Some(a)))?)?;
            let keys = ctx.keys(&imagined, Some(a))?;
            let (_, alpha) = model.attention(&model.query(&pair_features(&imagined, Some(a)))?, &keys)?;
            let (ids, _) = sample_topk(&alpha, width, rng)?;
            for id in ids {
                let c = tree.nodes.len();
                tree.nodes.push(PlanNode {
                    subtask: id,
                    depth: d,
                    alpha: Some(alpha[id]),
                    state: imagined.clone(),
                    embedding: keys[id].clone(),
                    action: None,
                    candidate_alpha: Vec::new(),
                    children: Vec::new(),
                    parent: Some(i),
                });
                tree.nodes[i].children.push(c);
                next.push(c);
            }
            tree.nodes[i].action = Some(a);
            tree.nodes[i].candidate_alpha = alpha;
        }
        frontier = next;
    }
    Ok(tree)
}

/// Steps of one executed subtask.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubtaskSegment {
    pub start: usize,
    pub subtask: usize,
    pub rewards: Vec<f64>,
}

/// `R = Σ_j γ^j r_{t+j}` over the segment.
pub fn segment_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Value of each segment computed backwards:
/// `G(last) = R(last)`, `G(k) = R(k) + γ·G(k + 1)`.
pub fn intra_subtask_return(segments: &[SubtaskSegment], gamma: f64) -> Result<Vec<f64>> {
    if segments.is_empty() {
        return Err(Error::Invalid("no segments".into()));
    }
    let mut g = vec![0.0; segments.len()];
    let mut next = 0.0;
    for (k, seg) in segments.iter().enumerate().rev() {
        next = segment_return(&seg.rewards, gamma) + if k + 1 < segments.len() { gamma * next } else { 0.0 };
        g[k] = next;
    }
    Ok(g)
}

/// A recorded subtask choice: features of the pair before the segment, the
/// keys there, the chosen subtask and its return weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEvent {
    pub pair: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
    pub selected: usize,
    pub weight: f64,
}

/// `Σ_e G_e · log P_β(T_e | s, a)` and its gradient with respect to ω.
pub fn selection_objective(model: &TreeModel, events: &[SelectionEvent]) -> Result<(f64, crate::numcore::Grads)> {
    if events.is_empty() {
        return Err(Error::Invalid("no recorded selection events".into()));
    }
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let mut total: Option<Var> = None;
    for e in events {
        let lp = model.log_prob_var(&mut g, &b, &e.pair, &e.keys, e.selected)?;
        let w = g.scale(lp, e.weight);
        let w = g.sum(w);
        total = Some(match total {
            Some(t) => g.add(t, w)?,
            None => w,
        });
    }
    let total = total.expect("non-empty");
    let value = g.value(total).item();
    Ok((value, loss_and_grads(&g, total, &b)?))
}

/// Plain gradient ascent `ω ← ω + lr·Σ_e ∇log P_β(T_e)·G_e`. Returns the
/// gradient norm.
pub fn attention_pg_update(model: &mut TreeModel, events: &[SelectionEvent], lr: f64) -> Result<f64> {
    let (_, grads) = selection_objective(model, events)?;
    model.params.sgd_apply(&grads, lr)?;
    Ok(grad_norm(&grads))
}
