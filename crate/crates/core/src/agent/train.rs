use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::policy::{ActMode, PolicyNet};
use super::ppo::{ppo_update, PpoConfig, PpoStats, RolloutBuffer};
use crate::gridworld::{reset, Action, GridState, Level, LevelConfig, Observation, Subtask};
use crate::numcore::Checkpoint;
use crate::plan::{select_plan, should_terminate, Plan, UcbStats, UcbTable};
use crate::repr::{pair_features, LossRecord, ReprConfig, ReprModel, PAIR_DIM};
use crate::rng::{derive_seed, seeded, stream, Rng};
use crate::tree::{
    attention_pg_update, build_tree, intra_subtask_return, segment_return, MStepPredictor, SelectionEvent, SubtaskSegment,
    TreeConfig, TreeContext, TreeModel,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub level: Level,
    pub seed: u64,
    pub total_steps: usize,
    /// Steps between evaluations; the run always evaluates at step 0 and at
    /// the end.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub policy_hidden: Vec<usize>,
    pub ppo: PpoConfig,
    pub tree: TreeConfig,
    pub kappa: f64,
    pub delta: f64,
    /// Steps kept for m-step predictor training.
    pub predictor_window: usize,
    pub predictor_batch: usize,
    /// Predictor Adam steps per PPO update.
    pub predictor_steps: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            level: Level::GoToSeqLite,
            seed: 0,
            total_steps: 200_000,
            eval_interval: 20_000,
            eval_episodes: 100,
            policy_hidden: vec![64, 64],
            ppo: PpoConfig::default(),
            tree: TreeConfig::default(),
            kappa: crate::plan::DEFAULT_KAPPA,
            delta: crate::plan::DEFAULT_DELTA,
            predictor_window: 10_000,
            predictor_batch: 64,
            predictor_steps: 32,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.tree.validate(Subtask::COUNT)?;
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::Config(format!("kappa {} outside (0, 1]", self.kappa)));
        }
        if !(-1.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta {} outside [-1, 1]", self.delta)));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 || self.policy_hidden.is_empty() {
            return Err(Error::Config("eval_interval, eval_episodes and policy_hidden must be non-empty".into()));
        }
        if self.predictor_window <= self.tree.horizon || self.predictor_batch == 0 {
            return Err(Error::Config("predictor_window must exceed the horizon and predictor_batch be positive".into()));
        }
        Ok(())
    }
}

/// Frozen subtask encoders memoised per `(observation, action, subtask)`.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    map: HashMap<(Observation, Option<Action>, usize), Vec<f64>>,
}

const CACHE_LIMIT: usize = 200_000;

impl EmbeddingCache {
    pub fn embed(&mut self, repr: &ReprModel, obs: &Observation, action: Option<Action>, subtask: usize) -> Result<Vec<f64>> {
        let key = (obs.clone(), action, subtask);
        if let Some(z) = self.map.get(&key) {
            return Ok(z.clone());
        }
        if self.map.len() >= CACHE_LIMIT {
            self.map.clear();
        }
        let z = repr.encode(subtask, &pair_features(obs, action))?;
        self.map.insert(key, z.clone());
        Ok(z)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Everything the tree-auxiliary agent needs at decision time.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeAgent {
    pub config: AgentConfig,
    pub policy: PolicyNet,
    pub tree: TreeModel,
    pub predictor: MStepPredictor,
    pub repr: ReprModel,
    pub ucb: UcbTable,
}

struct Context<'a> {
    repr: &'a ReprModel,
    policy: &'a PolicyNet,
    cache: &'a mut EmbeddingCache,
}

impl TreeContext for Context<'_> {
    fn keys(&mut self, obs: &Observation, action: Option<Action>) -> Result<Vec<Vec<f64>>> {
        (0..self.repr.num_subtasks).map(|i| self.cache.embed(self.repr, obs, action, i)).collect()
    }

    fn greedy_action(&mut self, obs: &Observation, z: &[f64]) -> Result<Action> {
        let mut unused = seeded(0);
        Ok(self.policy.act(&self.policy.input(obs, z)?, ActMode::Greedy, &mut unused)?.action)
    }
}

impl TreeAgent {
    pub fn new(config: AgentConfig, repr: ReprModel) -> Result<Self> {
        config.validate()?;
        if repr.input_dim != PAIR_DIM || repr.num_subtasks != Subtask::COUNT {
            return Err(Error::Invalid(format!(
                "representation model has input {} and {} subtasks; expected {PAIR_DIM} and {}",
                repr.input_dim,
                repr.num_subtasks,
                Subtask::COUNT
            )));
        }
        let e = repr.config.embedding_dim;
        let seed = config.seed;
        Ok(Self {
            policy: PolicyNet::for_grid(e, &config.policy_hidden, seed)?,
            tree: TreeModel::new(PAIR_DIM, e, config.tree.key_dim, &config.tree.query_hidden, seed)?,
            predictor: MStepPredictor::for_grid(&config.tree.predictor_hidden, config.tree.horizon, seed)?,
            ucb: UcbTable::new(Subtask::COUNT),
            repr,
            config,
        })
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.put_params("policy/", &self.policy.params);
        ck.put_params("tree/", &self.tree.params);
        ck.put_params("pm/", &self.predictor.params);
        ck.put_params("repr/", &self.repr.params);
        ck.meta.insert("kind".into(), "agent".into());
        ck.meta.insert("config".into(), serde_json::to_value(&self.config)?);
        ck.meta.insert("repr_config".into(), serde_json::to_value(&self.repr.config)?);
        let ucb: Vec<(u64, f64)> = (0..self.ucb.len()).map(|i| self.ucb.get(i).map(|s| (s.count, s.mean_return))).collect::<Result<_>>()?;
        ck.meta.insert("ucb".into(), serde_json::to_value(ucb)?);
        ck.save(base)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let ck = Checkpoint::load(base)?;
        let field = |k: &str| ck.meta.get(k).cloned().ok_or_else(|| Error::Format(format!("agent checkpoint lacks `{k}`")));
        if field("kind")? != "agent" {
            return Err(Error::Format(format!("{} is not an agent checkpoint", base.display())));
        }
        let config: AgentConfig = serde_json::from_value(field("config")?)?;
        let repr_config: ReprConfig = serde_json::from_value(field("repr_config")?)?;
        let mut repr = ReprModel::new(repr_config, PAIR_DIM, crate::gridworld::OBS_DIM, Subtask::COUNT)?;
        repr.params = ck.get_params("repr/")?;
        let mut agent = Self::new(config, repr)?;
        agent.policy.params = ck.get_params("policy/")?;
        agent.tree.params = ck.get_params("tree/")?;
        agent.predictor.params = ck.get_params("pm/")?;
        let ucb: Vec<(u64, f64)> = serde_json::from_value(field("ucb")?)?;
        agent.ucb = UcbTable::from_stats(ucb.into_iter().map(|(count, mean_return)| UcbStats { count, mean_return }).collect());
        Ok(agent)
    }
}

/// What one environment step of the tree agent produced.
struct StepInfo {
    input: Vec<f64>,
    action: Action,
    log_prob: f64,
    value: f64,
    reward: f64,
    done: bool,
    subtask: usize,
    closed: Option<SubtaskSegment>,
}

/// Per-episode control state: current plan, executing subtask and its
/// frozen embedding, and the segments executed so far.
struct Episode {
    state: GridState,
    obs: Observation,
    prev_obs: Observation,
    prev_action: Option<Action>,
    plan: Plan,
    subtask: usize,
    z: Vec<f64>,
    seg_start: usize,
    seg_rewards: Vec<f64>,
    segments: Vec<SubtaskSegment>,
    events: Vec<SelectionEvent>,
    plans_built: usize,
    trace: Vec<(Observation, Action)>,
}

impl Episode {
    fn start(agent: &TreeAgent, cache: &mut EmbeddingCache, level: Level, env_seed: u64, rng: &mut Rng) -> Result<Self> {
        let (state, _) = reset(&LevelConfig::new(level), env_seed)?;
        let obs = state.observe();
        let mut ep = Self {
            state,
            prev_obs: obs.clone(),
            obs,
            prev_action: None,
            plan: Plan { subtasks: Vec::new(), nodes: Vec::new(), cursor: 0 },
            subtask: 0,
            z: Vec::new(),
            seg_start: 0,
            seg_rewards: Vec::new(),
            segments: Vec::new(),
            events: Vec::new(),
            plans_built: 0,
            trace: Vec::new(),
        };
        ep.replan(agent, cache, rng)?;
        ep.begin_segment(agent, cache)?;
        Ok(ep)
    }

    fn replan(&mut self, agent: &TreeAgent, cache: &mut EmbeddingCache, rng: &mut Rng) -> Result<()> {
        let c = &agent.config;
        let mut ctx = Context { repr: &agent.repr, policy: &agent.policy, cache };
        let tree = build_tree(
            &mut ctx,
            &agent.tree,
            &agent.predictor,
            &self.prev_obs,
            self.prev_action,
            &self.obs,
            c.tree.width,
            c.tree.depth,
            rng,
        )?;
        self.plan = select_plan(&tree, &agent.ucb, c.kappa)?;
        self.plans_built += 1;
        Ok(())
    }

    /// Starts executing the plan's current subtask with `z = E^T(s_{t−1}, a_{t−1})`.
    fn begin_segment(&mut self, agent: &TreeAgent, cache: &mut EmbeddingCache) -> Result<()> {
        self.subtask = self.plan.current().ok_or_else(|| Error::Invalid("plan exhausted".into()))?;
        let keys: Vec<Vec<f64>> =
            (0..agent.repr.num_subtasks).map(|i| cache.embed(&agent.repr, &self.prev_obs, self.prev_action, i)).collect::<Result<_>>()?;
        self.z = keys[self.subtask].clone();
        self.events.push(SelectionEvent {
            pair: pair_features(&self.prev_obs, self.prev_action),
            keys,
            selected: self.subtask,
            weight: 0.0,
        });
        self.seg_start = self.trace.len();
        self.seg_rewards.clear();
        Ok(())
    }

    fn close_segment(&mut self) -> SubtaskSegment {
        let seg = SubtaskSegment { start: self.seg_start, subtask: self.subtask, rewards: std::mem::take(&mut self.seg_rewards) };
        self.segments.push(seg.clone());
        seg
    }

    fn step(&mut self, agent: &TreeAgent, cache: &mut EmbeddingCache, rng: &mut Rng) -> Result<StepInfo> {
        if self.plan.current() != Some(self.subtask) {
            return Err(Error::Invalid("executing subtask is not the plan's current subtask".into()));
        }
        let input = agent.policy.input(&self.obs, &self.z)?;
        let out = agent.policy.act(&input, ActMode::Sample, rng)?;
        let res = self.state.step(out.action)?;
        self.trace.push((self.obs.clone(), out.action));
        self.seg_rewards.push(res.reward);
        let subtask = self.subtask;
        let mut closed = None;
        if res.done {
            closed = Some(self.close_segment());
        } else {
            let vq = agent.tree.query(&pair_features(&self.obs, Some(out.action)))?;
            let vt = cache.embed(&agent.repr, &self.obs, Some(out.action), self.subtask)?;
            let terminate = should_terminate(&vq, &vt, agent.config.delta)?;
            self.prev_obs = std::mem::replace(&mut self.obs, res.observation.clone());
            self.prev_action = Some(out.action);
            if terminate {
                closed = Some(self.close_segment());
                self.plan.advance();
                if self.plan.is_exhausted() {
                    self.replan(agent, cache, rng)?;
                }
                self.begin_segment(agent, cache)?;
            }
        }
        if res.done {
            self.obs = res.observation;
        }
        Ok(StepInfo {
            input,
            action: out.action,
            log_prob: out.log_prob,
            value: out.value,
            reward: res.reward,
            done: res.done,
            subtask,
            closed,
        })
    }

    /// Selection events weighted by their segment's intra-subtask return.
    fn weighted_events(&mut self, gamma: f64) -> Result<Vec<SelectionEvent>> {
        let g = intra_subtask_return(&self.segments, gamma)?;
        let mut events = std::mem::take(&mut self.events);
        for (e, w) in events.iter_mut().zip(g) {
            e.weight = w;
        }
        Ok(events)
    }
}

/// Frozen-parameter evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
    /// Executed segments per subtask (empty for the flat baseline).
    pub segment_counts: Vec<u64>,
    pub mean_segments: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

fn eval_seeds(seed: u64, i: usize) -> (u64, Rng) {
    let base = derive_seed(seed, stream::EVAL, i as u64);
    (derive_seed(base, stream::ENV, 0), seeded(derive_seed(base, stream::POLICY, 0)))
}

/// Runs `episodes` episodes without any parameter or statistics update.
pub fn evaluate(agent: &TreeAgent, level: Level, episodes: usize, seed: u64) -> Result<EvalReport> {
    let mut cache = EmbeddingCache::default();
    evaluate_with_cache(agent, &mut cache, level, episodes, seed)
}

fn evaluate_with_cache(agent: &TreeAgent, cache: &mut EmbeddingCache, level: Level, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Invalid("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    let mut counts = vec![0u64; agent.repr.num_subtasks];
    let mut segments = 0usize;
    for i in 0..episodes {
        let (env_seed, mut rng) = eval_seeds(seed, i);
        let mut ep = Episode::start(agent, cache, level, env_seed, &mut rng)?;
        let mut total = 0.0;
        loop {
            let info = ep.step(agent, cache, &mut rng)?;
            total += info.reward;
            if info.done {
                break;
            }
        }
        for s in &ep.segments {
            counts[s.subtask] += 1;
        }
        segments += ep.segments.len();
        returns.push(total);
    }
    let (mean, std) = mean_std(&returns);
    Ok(EvalReport { mean, std, returns, segment_counts: counts, mean_segments: segments as f64 / episodes as f64 })
}

/// Flat-policy counterpart of [`evaluate`].
pub fn evaluate_flat(policy: &PolicyNet, level: Level, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Invalid("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let (env_seed, mut rng) = eval_seeds(seed, i);
        let (mut state, _) = reset(&LevelConfig::new(level), env_seed)?;
        let mut total = 0.0;
        while !state.is_done() {
            let out = policy.act(&policy.input(&state.observe(), &[])?, ActMode::Sample, &mut rng)?;
            total += state.step(out.action)?.reward;
        }
        returns.push(total);
    }
    let (mean, std) = mean_std(&returns);
    Ok(EvalReport { mean, std, returns, segment_counts: Vec::new(), mean_segments: 0.0 })
}

/// Uniform-random actions, for reference.
pub fn evaluate_random(level: Level, episodes: usize, seed: u64) -> Result<EvalReport> {
    let mut returns = Vec::with_capacity(episodes.max(1));
    for i in 0..episodes.max(1) {
        let (env_seed, mut rng) = eval_seeds(seed, i);
        let (mut state, _) = reset(&LevelConfig::new(level), env_seed)?;
        let mut total = 0.0;
        while !state.is_done() {
            total += state.step(Action::ALL[rng.gen_range(0..Action::COUNT)])?.reward;
        }
        returns.push(total);
    }
    let (mean, std) = mean_std(&returns);
    Ok(EvalReport { mean, std, returns, segment_counts: Vec::new(), mean_segments: 0.0 })
}

/// One row of the metrics CSV. Missing values are written as empty fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub episode: usize,
    pub mean_eval_reward: f64,
    pub eval_std: f64,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub contrastive_loss: Option<f64>,
    pub pred_loss: Option<f64>,
    pub m_step_loss: Option<f64>,
    pub attention_pg_norm: Option<f64>,
    pub segments_per_episode: Option<f64>,
    /// Segments executed per subtask since the previous row.
    pub subtask_counts: [u64; Subtask::COUNT],
}

pub const METRICS_COLUMNS: [&str; 12] = [
    "step",
    "episode",
    "mean_eval_reward",
    "eval_std",
    "policy_loss",
    "value_loss",
    "entropy",
    "contrastive_loss",
    "pred_loss",
    "m_step_loss",
    "attention_pg_norm",
    "segments_per_episode",
];

pub fn metrics_header() -> String {
    let mut cols: Vec<String> = METRICS_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend(Subtask::ALL.iter().map(|s| format!("count_{}", s.name())));
    cols.join(",")
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = metrics_header() + "\n";
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.episode,
            r.mean_eval_reward,
            r.eval_std,
            opt(r.policy_loss),
            opt(r.value_loss),
            opt(r.entropy),
            opt(r.contrastive_loss),
            opt(r.pred_loss),
            opt(r.m_step_loss),
            opt(r.attention_pg_norm),
            opt(r.segments_per_episode)
        );
        for c in r.subtask_counts {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// Running averages between two metrics rows.
#[derive(Default)]
struct Interval {
    ppo: Option<PpoStats>,
    updates: f64,
    m_step: Option<f64>,
    attention: Option<f64>,
    attention_updates: f64,
    tree: bool,
    episodes: usize,
    segments: usize,
    counts: [u64; Subtask::COUNT],
}

impl Interval {
    fn add_ppo(&mut self, s: PpoStats) {
        let acc = self.ppo.get_or_insert_with(PpoStats::default);
        acc.policy_loss += s.policy_loss;
        acc.value_loss += s.value_loss;
        acc.entropy += s.entropy;
        self.updates += 1.0;
    }

    fn row(&self, step: usize, episode: usize, eval: &EvalReport, pretrain: Option<&LossRecord>) -> MetricsRow {
        let avg = |x: f64| x / self.updates;
        MetricsRow {
            step,
            episode,
            mean_eval_reward: eval.mean,
            eval_std: eval.std,
            policy_loss: self.ppo.map(|p| avg(p.policy_loss)),
            value_loss: self.ppo.map(|p| avg(p.value_loss)),
            entropy: self.ppo.map(|p| avg(p.entropy)),
            contrastive_loss: pretrain.map(|l| l.contrastive),
            pred_loss: pretrain.map(|l| l.prediction),
            m_step_loss: self.m_step,
            attention_pg_norm: self.attention.map(|a| a / self.attention_updates),
            segments_per_episode: (self.tree && self.episodes > 0).then(|| self.segments as f64 / self.episodes as f64),
            subtask_counts: self.counts,
        }
    }
}

/// Sliding window of recent `(s, a)` steps for m-step predictor training.
struct PredictorWindow {
    /// `(episode, observation, action)`; the action is `None` on an
    /// episode's final observation.
    steps: VecDeque<(usize, Observation, Option<Action>)>,
    capacity: usize,
}

impl PredictorWindow {
    fn push(&mut self, episode: usize, obs: Observation, action: Option<Action>) {
        if self.steps.len() == self.capacity {
            self.steps.pop_front();
        }
        self.steps.push_back((episode, obs, action));
    }

    fn valid_starts(&self, m: usize) -> Vec<usize> {
        (0..self.steps.len().saturating_sub(m))
            .filter(|&t| self.steps[t].2.is_some() && self.steps[t].0 == self.steps[t + m].0)
            .collect()
    }

    fn train(&self, pm: &mut MStepPredictor, batch: usize, iters: usize, lr: f64, rng: &mut Rng) -> Result<Option<f64>> {
        let starts = self.valid_starts(pm.horizon);
        if starts.is_empty() {
            return Ok(None);
        }
        let mut total = 0.0;
        for _ in 0..iters {
            let mut x = Vec::with_capacity(batch * PAIR_DIM);
            let mut y = Vec::with_capacity(batch * crate::gridworld::OBS_DIM);
            for _ in 0..batch {
                let t = starts[rng.gen_range(0..starts.len())];
                x.extend(pair_features(&self.steps[t].1, self.steps[t].2));
                y.extend(self.steps[t + pm.horizon].1.one_hot());
            }
            total += pm.train_step(&x, &y, lr)?;
        }
        Ok(Some(total / iters as f64))
    }
}

/// A trained agent and its metrics stream.
pub struct TrainOutcome {
    pub agent: TreeAgent,
    pub metrics: Vec<MetricsRow>,
}

/// Tree-auxiliary training. Each episode starts from a fresh tree; a plan
/// is executed subtask by subtask, advancing on the termination rule and
/// rebuilding the tree when the plan runs out. PPO and the m-step
/// predictor update every `steps_per_update` steps; subtask statistics on
/// every closed segment; attention at episode end, once the segment
/// returns are known.
pub fn train(
    config: &AgentConfig,
    repr: ReprModel,
    pretrain: Option<&LossRecord>,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    let mut agent = TreeAgent::new(config.clone(), repr)?;
    let c = config;
    let mut cache = EmbeddingCache::default();
    let mut rng = seeded(derive_seed(c.seed, stream::POLICY, 0));
    let mut tree_rng = seeded(derive_seed(c.seed, stream::TREE, 0));
    let mut buffer = RolloutBuffer::new(agent.policy.input_dim());
    let mut window = PredictorWindow { steps: VecDeque::new(), capacity: c.predictor_window };
    let mut metrics = Vec::new();
    let mut interval = Interval { tree: true, ..Interval::default() };
    let eval_seed = derive_seed(c.seed, stream::EVAL, u64::MAX);

    let first = evaluate_with_cache(&agent, &mut cache, c.level, c.eval_episodes, eval_seed)?;
    let row = interval.row(0, 0, &first, pretrain);
    on_row(&row);
    metrics.push(row);

    let mut episode = 0usize;
    let mut ep = Episode::start(&agent, &mut cache, c.level, derive_seed(c.seed, stream::ENV, 0), &mut tree_rng)?;
    for step in 1..=c.total_steps {
        let info = ep.step(&agent, &mut cache, &mut rng)?;
        buffer.push(&info.input, info.action.id(), info.log_prob, info.value, info.reward, info.done, Some(info.subtask));
        window.push(episode, ep.trace.last().expect("stepped").0.clone(), Some(info.action));
        if let Some(seg) = &info.closed {
            agent.ucb.record_segment(seg.subtask, segment_return(&seg.rewards, c.tree.gamma))?;
            interval.counts[seg.subtask] += 1;
            interval.segments += 1;
        }
        if info.done {
            window.push(episode, ep.obs.clone(), None);
            let events = ep.weighted_events(c.tree.gamma)?;
            if events.iter().any(|e| e.weight != 0.0) {
                let norm = attention_pg_update(&mut agent.tree, &events, c.tree.attention_lr)?;
                *interval.attention.get_or_insert(0.0) += norm;
                interval.attention_updates += 1.0;
            }
            interval.episodes += 1;
            episode += 1;
            ep = Episode::start(&agent, &mut cache, c.level, derive_seed(c.seed, stream::ENV, episode as u64), &mut tree_rng)?;
        }
        if buffer.len() == c.ppo.steps_per_update {
            buffer.last_value = agent.policy.value(&agent.policy.input(&ep.obs, &ep.z)?)?;
            let stats = ppo_update(&mut agent.policy, &buffer, &c.ppo, &mut rng)?;
            interval.add_ppo(stats);
            buffer.clear();
            if let Some(l) = window.train(&mut agent.predictor, c.predictor_batch, c.predictor_steps, c.tree.predictor_lr, &mut rng)? {
                interval.m_step = Some(l);
            }
        }
        if step % c.eval_interval == 0 || step == c.total_steps {
            let report = evaluate_with_cache(&agent, &mut cache, c.level, c.eval_episodes, eval_seed)?;
            let row = interval.row(step, episode, &report, pretrain);
            on_row(&row);
            metrics.push(row);
            interval = Interval { tree: true, ..Interval::default() };
        }
    }
    Ok(TrainOutcome { agent, metrics })
}

pub struct FlatOutcome {
    pub policy: PolicyNet,
    pub metrics: Vec<MetricsRow>,
}

/// PPO on the observation alone, with the same seeds, update cadence,
/// evaluation protocol and metrics schema as [`train`].
pub fn train_flat_baseline(config: &AgentConfig, mut on_row: impl FnMut(&MetricsRow)) -> Result<FlatOutcome> {
    config.validate()?;
    let c = config;
    let mut policy = PolicyNet::for_grid(0, &c.policy_hidden, c.seed)?;
    let mut rng = seeded(derive_seed(c.seed, stream::POLICY, 0));
    let mut buffer = RolloutBuffer::new(policy.input_dim());
    let mut metrics = Vec::new();
    let mut interval = Interval::default();
    let eval_seed = derive_seed(c.seed, stream::EVAL, u64::MAX);

    let row = interval.row(0, 0, &evaluate_flat(&policy, c.level, c.eval_episodes, eval_seed)?, None);
    on_row(&row);
    metrics.push(row);

    let mut episode = 0usize;
    let (mut state, _) = reset(&LevelConfig::new(c.level), derive_seed(c.seed, stream::ENV, 0))?;
    for step in 1..=c.total_steps {
        let input = policy.input(&state.observe(), &[])?;
        let out = policy.act(&input, ActMode::Sample, &mut rng)?;
        let res = state.step(out.action)?;
        buffer.push(&input, out.action.id(), out.log_prob, out.value, res.reward, res.done, None);
        if res.done {
            interval.episodes += 1;
            episode += 1;
            state = reset(&LevelConfig::new(c.level), derive_seed(c.seed, stream::ENV, episode as u64))?.0;
        }
        if buffer.len() == c.ppo.steps_per_update {
            buffer.last_value = policy.value(&policy.input(&state.observe(), &[])?)?;
            interval.add_ppo(ppo_update(&mut policy, &buffer, &c.ppo, &mut rng)?);
            buffer.clear();
        }
        if step % c.eval_interval == 0 || step == c.total_steps {
            let report = evaluate_flat(&policy, c.level, c.eval_episodes, eval_seed)?;
            let row = interval.row(step, episode, &report, None);
            on_row(&row);
            metrics.push(row);
            interval = Interval::default();
        }
    }
    Ok(FlatOutcome { policy, metrics })
}

pub fn save_flat(policy: &PolicyNet, config: &AgentConfig, base: &Path) -> Result<()> {
    let mut ck = Checkpoint::new();
    ck.put_params("policy/", &policy.params);
    ck.meta.insert("kind".into(), "flat".into());
    ck.meta.insert("config".into(), serde_json::to_value(config)?);
    ck.save(base)
}

pub fn load_flat(base: &Path) -> Result<(PolicyNet, AgentConfig)> {
    let ck = Checkpoint::load(base)?;
    if ck.meta.get("kind").and_then(|k| k.as_str()) != Some("flat") {
        return Err(Error::Format(format!("{} is not a flat-policy checkpoint", base.display())));
    }
    let config: AgentConfig =
        serde_json::from_value(ck.meta.get("config").cloned().ok_or_else(|| Error::Format("flat checkpoint lacks `config`".into()))?)?;
    let mut policy = PolicyNet::for_grid(0, &config.policy_hidden, config.seed)?;
    policy.params = ck.get_params("policy/")?;
    Ok((policy, config))
}
