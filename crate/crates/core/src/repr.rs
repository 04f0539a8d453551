//! Subtask representation pretraining: one encoder per subtask, a shared
//! predictor, a contrastive objective across subtasks and a dynamics /
//! reward prediction objective.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::SubtaskDataset;
use crate::gridworld::{Action, Observation, OBS_DIM};
use crate::numcore::{loss_and_grads, Activation, Binding, Checkpoint, Graph, MlpSpec, ParamSet, Tensor, Var};
use crate::rng::{derive_seed, seeded, stream, Rng};
use crate::{Error, Result};

/// Width of the `(state, action)` feature vector fed to encoders.
pub const PAIR_DIM: usize = OBS_DIM + Action::COUNT;

/// One-hot observation followed by the one-hot action.
pub fn write_pair_features(obs: &Observation, action: Option<Action>, out: &mut [f64]) {
    obs.write_one_hot(&mut out[..OBS_DIM]);
    out[OBS_DIM..].iter_mut().for_each(|x| *x = 0.0);
    if let Some(a) = action {
        out[OBS_DIM + a.id()] = 1.0;
    }
}

pub fn pair_features(obs: &Observation, action: Option<Action>) -> Vec<f64> {
    let mut v = vec![0.0; PAIR_DIM];
    write_pair_features(obs, action, &mut v);
    v
}

/// Transitions of a single subtask, exposed as dense feature rows.
pub trait TransitionSet {
    fn len(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn write_input(&self, i: usize, out: &mut [f64]);
    fn write_next(&self, i: usize, out: &mut [f64]);
    fn reward(&self, i: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// In-memory rows, used for synthetic benchmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSet {
    pub input_dim: usize,
    pub state_dim: usize,
    pub inputs: Vec<f64>,
    pub next: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl TransitionSet for DenseSet {
    fn len(&self) -> usize {
        self.rewards.len()
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn write_input(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.inputs[i * self.input_dim..(i + 1) * self.input_dim]);
    }
    fn write_next(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.next[i * self.state_dim..(i + 1) * self.state_dim]);
    }
    fn reward(&self, i: usize) -> f64 {
        self.rewards[i]
    }
}

/// A gridworld dataset viewed transition by transition; features are
/// one-hot encoded on demand.
pub struct GridTransitions<'a> {
    ds: &'a SubtaskDataset,
    index: Vec<(usize, usize)>,
}

impl<'a> GridTransitions<'a> {
    pub fn new(ds: &'a SubtaskDataset) -> Self {
        Self { ds, index: ds.transition_index() }
    }
}

impl TransitionSet for GridTransitions<'_> {
    fn len(&self) -> usize {
        self.index.len()
    }
    fn input_dim(&self) -> usize {
        PAIR_DIM
    }
    fn state_dim(&self) -> usize {
        OBS_DIM
    }
    fn write_input(&self, i: usize, out: &mut [f64]) {
        let t = self.ds.transition(self.index[i]);
        write_pair_features(t.s, Some(t.a), out);
    }
    fn write_next(&self, i: usize, out: &mut [f64]) {
        self.ds.transition(self.index[i]).s_next.write_one_hot(out);
    }
    fn reward(&self, i: usize) -> f64 {
        self.ds.transition(self.index[i]).r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprConfig {
    pub encoder_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub predictor_hidden: Vec<usize>,
    pub batch_size: usize,
    pub negatives: usize,
    pub lr: f64,
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub iterations: usize,
    /// Ablation: one encoder shared by every subtask.
    pub shared_encoder: bool,
    pub seed: u64,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![256, 256, 128, 128, 32],
            embedding_dim: 5,
            predictor_hidden: vec![64, 128],
            batch_size: 64,
            negatives: 16,
            lr: 3e-4,
            lambda_r: 0.9,
            lambda_s: 1.0,
            iterations: 2000,
            shared_encoder: false,
            seed: 0,
        }
    }
}

impl ReprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.batch_size == 0 || self.predictor_hidden.is_empty() {
            return Err(Error::Config("embedding_dim, batch_size and predictor_hidden must be non-empty / positive".into()));
        }
        if !(self.lr > 0.0) || self.lambda_r < 0.0 || self.lambda_s < 0.0 {
            return Err(Error::Config("lr must be positive and loss weights non-negative".into()));
        }
        Ok(())
    }
}

/// Encoder bank plus shared predictor, all in one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprModel {
    pub config: ReprConfig,
    pub input_dim: usize,
    pub state_dim: usize,
    pub num_subtasks: usize,
    pub params: ParamSet,
}

const PRED_TRUNK: &str = "pred/trunk/";
const PRED_REWARD: &str = "pred/reward/";
const PRED_STATE: &str = "pred/state/";

impl ReprModel {
    pub fn new(config: ReprConfig, input_dim: usize, state_dim: usize, num_subtasks: usize) -> Result<Self> {
        config.validate()?;
        if num_subtasks == 0 {
            return Err(Error::Invalid("at least one subtask encoder required".into()));
        }
        let mut model = Self { config, input_dim, state_dim, num_subtasks, params: ParamSet::new() };
        let mut rng = seeded(derive_seed(model.config.seed, stream::INIT, 0));
        let enc = model.encoder_spec();
        for i in 0..model.num_encoders() {
            enc.init(&model.encoder_prefix(i), &mut model.params, &mut rng, 1.0)?;
        }
        let (trunk, reward, state) = model.predictor_specs();
        trunk.init(PRED_TRUNK, &mut model.params, &mut rng, 1.0)?;
        reward.init(PRED_REWARD, &mut model.params, &mut rng, 1.0)?;
        state.init(PRED_STATE, &mut model.params, &mut rng, 1.0)?;
        Ok(model)
    }

    fn num_encoders(&self) -> usize {
        if self.config.shared_encoder {
            1
        } else {
            self.num_subtasks
        }
    }

    pub fn encoder_spec(&self) -> MlpSpec {
        MlpSpec::new(self.input_dim, &self.config.encoder_hidden, self.config.embedding_dim, Activation::Relu, Activation::Identity)
    }

    /// `(trunk, reward head, next-state head)`; the trunk's last hidden size is
    /// its output width.
    fn predictor_specs(&self) -> (MlpSpec, MlpSpec, MlpSpec) {
        let h = &self.config.predictor_hidden;
        let width = *h.last().expect("validated non-empty");
        let trunk = MlpSpec::new(self.config.embedding_dim, &h[..h.len() - 1], width, Activation::Relu, Activation::Relu);
        let reward = MlpSpec::new(width, &[], 1, Activation::Identity, Activation::Identity);
        let state = MlpSpec::new(width, &[], self.state_dim, Activation::Identity, Activation::Identity);
        (trunk, reward, state)
    }

    pub fn encoder_prefix(&self, subtask: usize) -> String {
        let i = if self.config.shared_encoder { 0 } else { subtask };
        format!("enc{i}/")
    }

    /// Embeds rows of `(state, action)` features with subtask `subtask`'s encoder.
    pub fn encode(&self, subtask: usize, inputs: &[f64]) -> Result<Vec<f64>> {
        if subtask >= self.num_subtasks {
            return Err(Error::Invalid(format!("no encoder for subtask {subtask}")));
        }
        self.encoder_spec().infer(&self.params, &self.encoder_prefix(subtask), inputs)
    }

    pub fn encode_var(&self, g: &mut Graph, b: &Binding, subtask: usize, rows: Vec<f64>) -> Result<Var> {
        let n = rows.len() / self.input_dim;
        let x = g.constant(Tensor::matrix(n, self.input_dim, rows)?);
        self.encoder_spec().forward(g, b, &self.encoder_prefix(subtask), x)
    }

    /// Predicted `(r̂, ŝ′)` nodes for embeddings `z: [n, e]`.
    pub fn predict_var(&self, g: &mut Graph, b: &Binding, z: Var) -> Result<(Var, Var)> {
        let (trunk, reward, state) = self.predictor_specs();
        let h = trunk.forward(g, b, PRED_TRUNK, z)?;
        let r = reward.forward(g, b, PRED_REWARD, h)?;
        let s = state.forward(g, b, PRED_STATE, h)?;
        Ok((r, s))
    }

    pub fn save(&self, base: &Path, subtask_names: &[String]) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.put_params("", &self.params);
        ck.meta.insert("kind".into(), "repr".into());
        ck.meta.insert("config".into(), serde_json::to_value(&self.config)?);
        ck.meta.insert("input_dim".into(), self.input_dim.into());
        ck.meta.insert("state_dim".into(), self.state_dim.into());
        ck.meta.insert("num_subtasks".into(), self.num_subtasks.into());
        ck.meta.insert("subtasks".into(), serde_json::to_value(subtask_names)?);
        ck.save(base)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let ck = Checkpoint::load(base)?;
        let field = |k: &str| ck.meta.get(k).cloned().ok_or_else(|| Error::Format(format!("representation checkpoint lacks `{k}`")));
        if field("kind")? != "repr" {
            return Err(Error::Format(format!("{} is not a representation checkpoint", base.display())));
        }
        let dim = |k: &str| -> Result<usize> {
            field(k)?.as_u64().map(|v| v as usize).ok_or_else(|| Error::Format(format!("`{k}` is not an integer")))
        };
        Ok(Self {
            config: serde_json::from_value(field("config")?)?,
            input_dim: dim("input_dim")?,
            state_dim: dim("state_dim")?,
            num_subtasks: dim("num_subtasks")?,
            params: ck.get_params("")?,
        })
    }
}

/// A negative pair drawn from subtask `source` for anchor `anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct Negative {
    pub anchor: usize,
    pub source: usize,
    pub input: Vec<f64>,
}

/// Anchors and positives share `subtask`; every negative comes from another
/// subtask and is encoded by that subtask's encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub subtask: usize,
    pub anchors: Vec<f64>,
    pub positives: Vec<f64>,
    pub negatives: Vec<Negative>,
}

impl ContrastiveBatch {
    pub fn len(&self, input_dim: usize) -> usize {
        self.anchors.len() / input_dim
    }
}

/// InfoNCE with raw dot products, averaged over anchors. With no negatives
/// the log-softmax over a single logit is exactly zero.
pub fn contrastive_loss_var(model: &ReprModel, g: &mut Graph, b: &Binding, batch: &ContrastiveBatch) -> Result<Var> {
    let n = batch.len(model.input_dim);
    if n == 0 || batch.positives.len() != batch.anchors.len() {
        return Err(Error::Shape("contrastive batch needs equally many anchors and positives".into()));
    }
    if batch.negatives.iter().any(|neg| neg.source == batch.subtask || neg.anchor >= n) {
        return Err(Error::Invalid("negatives must come from other subtasks".into()));
    }
    let q = model.encode_var(g, b, batch.subtask, batch.anchors.clone())?;
    let kp = model.encode_var(g, b, batch.subtask, batch.positives.clone())?;
    let pos = g.row_dot(q, kp)?;
    let mut logits = g.reshape(pos, vec![n, 1])?;

    let k = batch.negatives.len() / n;
    if k > 0 {
        if batch.negatives.len() != n * k {
            return Err(Error::Shape("every anchor needs the same number of negatives".into()));
        }
        // Slot (anchor, rank) → row in the concatenation of per-source embeddings.
        let mut slots: Vec<Vec<usize>> = vec![Vec::with_capacity(k); n];
        let mut blocks = Vec::new();
        let mut offset = 0;
        for source in 0..model.num_subtasks {
            let mut rows = Vec::new();
            for neg in batch.negatives.iter().filter(|neg| neg.source == source) {
                slots[neg.anchor].push(offset + rows.len() / model.input_dim);
                rows.extend_from_slice(&neg.input);
            }
            if rows.is_empty() {
                continue;
            }
            offset += rows.len() / model.input_dim;
            blocks.push(model.encode_var(g, b, source, rows)?);
        }
        if slots.iter().any(|s| s.len() != k) {
            return Err(Error::Shape("every anchor needs the same number of negatives".into()));
        }
        let all = g.concat_rows(&blocks)?;
        let kn = g.gather_rows(all, slots.concat())?;
        let qn = g.gather_rows(q, (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect())?;
        let neg = g.row_dot(qn, kn)?;
        let neg = g.reshape(neg, vec![n, k])?;
        logits = g.concat_cols(logits, neg)?;
    }
    let ls = g.log_softmax(logits)?;
    let picked = g.pick(ls, vec![0; n])?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

/// `λ_r·mean (r̂ − r)² + λ_s·mean ‖ŝ′ − s′‖²` for embeddings `z: [n, e]`.
pub fn prediction_loss_var(
    model: &ReprModel,
    g: &mut Graph,
    b: &Binding,
    z: Var,
    rewards: &[f64],
    next: &[f64],
) -> Result<Var> {
    let n = rewards.len();
    if g.value(z).rows() != n || next.len() != n * model.state_dim {
        return Err(Error::Shape("prediction targets do not match the batch".into()));
    }
    let (r_hat, s_hat) = model.predict_var(g, b, z)?;
    let r = g.constant(Tensor::matrix(n, 1, rewards.to_vec())?);
    let s = g.constant(Tensor::matrix(n, model.state_dim, next.to_vec())?);
    let dr = g.sub(r_hat, r)?;
    let dr = g.square(dr);
    let lr = g.mean(dr);
    let ds = g.sub(s_hat, s)?;
    let ds = g.square(ds);
    let ds = g.sum_cols(ds);
    let ls = g.mean(ds);
    let lr = g.scale(lr, model.config.lambda_r);
    let ls = g.scale(ls, model.config.lambda_s);
    g.add(lr, ls)
}

/// Prediction loss evaluated on the anchors of a batch, whose rewards and
/// next states are given.
pub struct PredictionTargets {
    pub rewards: Vec<f64>,
    pub next: Vec<f64>,
}

fn rows_of(set: &dyn TransitionSet, idx: &[usize]) -> Vec<f64> {
    let d = set.input_dim();
    let mut out = vec![0.0; idx.len() * d];
    for (row, &i) in out.chunks_mut(d).zip(idx) {
        set.write_input(i, row);
    }
    out
}

/// Draws one contrastive batch for `subtask` plus the anchors' prediction targets.
pub fn sample_batch(
    sets: &[&dyn TransitionSet],
    subtask: usize,
    batch_size: usize,
    negatives: usize,
    rng: &mut Rng,
) -> Result<(ContrastiveBatch, PredictionTargets)> {
    let set = sets[subtask];
    if set.is_empty() {
        return Err(Error::Invalid(format!("subtask {subtask} has no transitions")));
    }
    let anchors: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..set.len())).collect();
    let positives: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..set.len())).collect();
    let others: Vec<usize> = (0..sets.len()).filter(|&j| j != subtask && !sets[j].is_empty()).collect();
    let mut negs = Vec::with_capacity(batch_size * negatives);
    if !others.is_empty() {
        for anchor in 0..batch_size {
            for _ in 0..negatives {
                let source = others[rng.gen_range(0..others.len())];
                let i = rng.gen_range(0..sets[source].len());
                negs.push(Negative { anchor, source, input: rows_of(sets[source], &[i]) });
            }
        }
    }
    let sd = set.state_dim();
    let mut next = vec![0.0; batch_size * sd];
    for (row, &i) in next.chunks_mut(sd).zip(&anchors) {
        set.write_next(i, row);
    }
    let targets = PredictionTargets { rewards: anchors.iter().map(|&i| set.reward(i)).collect(), next };
    let batch = ContrastiveBatch { subtask, anchors: rows_of(set, &anchors), positives: rows_of(set, &positives), negatives: negs };
    Ok((batch, targets))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub contrastive: f64,
    pub prediction: f64,
    pub total: f64,
}

pub struct PretrainResult {
    pub model: ReprModel,
    pub history: Vec<LossRecord>,
}

/// Joint objective `Σ_i (L_c^i + L_p^i)` of one set of batches; returns the
/// loss node and its two components.
fn joint_loss(
    model: &ReprModel,
    g: &mut Graph,
    b: &Binding,
    batches: &[(ContrastiveBatch, PredictionTargets)],
) -> Result<(Var, f64, f64)> {
    let mut terms = Vec::new();
    let (mut lc_sum, mut lp_sum) = (0.0, 0.0);
    for (batch, targets) in batches {
        let lc = contrastive_loss_var(model, g, b, batch)?;
        let z = model.encode_var(g, b, batch.subtask, batch.anchors.clone())?;
        let lp = prediction_loss_var(model, g, b, z, &targets.rewards, &targets.next)?;
        lc_sum += g.value(lc).item();
        lp_sum += g.value(lp).item();
        terms.push(g.add(lc, lp)?);
    }
    let mut total = *terms.first().ok_or_else(|| Error::Invalid("no batches".into()))?;
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok((total, lc_sum, lp_sum))
}

/// Trains encoders and predictor jointly with Adam. Set `i` feeds encoder `i`.
pub fn pretrain(sets: &[&dyn TransitionSet], config: &ReprConfig) -> Result<PretrainResult> {
    if sets.len() < 2 {
        return Err(Error::Invalid("pretraining needs at least two subtask datasets".into()));
    }
    let (input_dim, state_dim) = (sets[0].input_dim(), sets[0].state_dim());
    if sets.iter().any(|s| s.input_dim() != input_dim || s.state_dim() != state_dim) {
        return Err(Error::Shape("subtask datasets disagree on feature sizes".into()));
    }
    let mut model = ReprModel::new(config.clone(), input_dim, state_dim, sets.len())?;
    let mut rng = seeded(derive_seed(config.seed, stream::SAMPLING, 0));
    let mut history = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let batches = (0..sets.len())
            .map(|i| sample_batch(sets, i, config.batch_size, config.negatives, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut g = Graph::new();
        let b = model.params.bind(&mut g);
        let (loss, contrastive, prediction) = joint_loss(&model, &mut g, &b, &batches)?;
        let total = g.value(loss).item();
        let grads = loss_and_grads(&g, loss, &b)?;
        model.params.adam_step(&grads, config.lr)?;
        history.push(LossRecord { iteration, contrastive, prediction, total });
    }
    Ok(PretrainResult { model, history })
}

/// Embeds up to `limit` transitions of each set with its own encoder.
/// Returns `(subtask, embedding)` rows.
pub fn embed_sets(model: &ReprModel, sets: &[&dyn TransitionSet], limit: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut out = Vec::new();
    for (i, set) in sets.iter().enumerate() {
        let n = set.len().min(limit);
        if n == 0 {
            continue;
        }
        let idx: Vec<usize> = (0..n).map(|k| k * set.len() / n).collect();
        let z = model.encode(i, &rows_of(*set, &idx))?;
        out.extend(z.chunks(model.config.embedding_dim).map(|r| (i, r.to_vec())));
    }
    Ok(out)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum distance between cluster centroids divided by the mean distance
/// of points to their own centroid.
pub fn separation_ratio(points: &[(usize, Vec<f64>)]) -> Result<f64> {
    let k = points.iter().map(|p| p.0).max().map_or(0, |m| m + 1);
    let d = points.first().map_or(0, |p| p.1.len());
    let mut centroids = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (c, z) in points {
        counts[*c] += 1;
        centroids[*c].iter_mut().zip(z).for_each(|(a, b)| *a += b);
    }
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::Invalid("separation ratio needs at least two clusters".into()));
    }
    for &c in &present {
        centroids[c].iter_mut().for_each(|x| *x /= counts[c] as f64);
    }
    let intra = points.iter().map(|(c, z)| dist(z, &centroids[*c])).sum::<f64>() / points.len() as f64;
    let mut inter = f64::INFINITY;
    for (a, &i) in present.iter().enumerate() {
        for &j in &present[a + 1..] {
            inter = inter.min(dist(&centroids[i], &centroids[j]));
        }
    }
    Ok(if intra == 0.0 { f64::INFINITY } else { inter / intra })
}

/// Projects rows onto their top `k` principal components (descending
/// variance). Each component's sign is fixed so that its largest-magnitude
/// loading is positive.
pub fn pca(rows: &[Vec<f64>], k: usize) -> Result<Vec<Vec<f64>>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || k == 0 || k > d {
        return Err(Error::Invalid(format!("PCA of {n} rows of width {d} onto {k} components")));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n as f64);
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(d, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let lead = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v = -v;
        }
        basis.set_column(c, &v);
    }
    let proj = x * basis;
    Ok((0..n).map(|i| proj.row(i).iter().copied().collect()).collect())
}

/// Writes `subtask, z0..z(e-1), pc1, pc2` rows; returns the number of rows.
pub fn export_embeddings(points: &[(usize, Vec<f64>)], subtask_names: &[String], path: &Path) -> Result<usize> {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.1.clone()).collect();
    let e = rows.first().map_or(0, Vec::len);
    let proj = if e >= 2 { pca(&rows, 2)? } else { vec![vec![0.0, 0.0]; rows.len()] };
    let mut out = String::from("subtask");
    for i in 0..e {
        let _ = write!(out, ",z{i}");
    }
    out.push_str(",pc1,pc2\n");
    for ((c, z), p) in points.iter().zip(&proj) {
        let name = subtask_names.get(*c).cloned().unwrap_or_else(|| c.to_string());
        out.push_str(&name);
        for v in z.iter().chain(p) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(points.len())
}

/// Synthetic subtasks sharing one `(s, a)` distribution on a ring of
/// `positions` cells but with different deterministic dynamics and rewards:
/// subtask `k` moves by `(k + 1)·(a − 1) + k` and pays 1 on landing on cell `k`.
pub fn toy_subtasks(num_subtasks: usize, samples: usize, positions: usize, seed: u64) -> Vec<DenseSet> {
    let actions = 3;
    let mut rng = seeded(derive_seed(seed, stream::TOY, 0));
    let draws: Vec<(usize, usize)> = (0..samples).map(|_| (rng.gen_range(0..positions), rng.gen_range(0..actions))).collect();
    (0..num_subtasks)
        .map(|k| {
            let mut set = DenseSet {
                input_dim: positions + actions,
                state_dim: positions,
                inputs: vec![0.0; samples * (positions + actions)],
                next: vec![0.0; samples * positions],
                rewards: Vec::with_capacity(samples),
            };
            for (i, &(s, a)) in draws.iter().enumerate() {
                let shift = (k as i64 + 1) * (a as i64 - 1) + k as i64;
                let s2 = (s as i64 + shift).rem_euclid(positions as i64) as usize;
                set.inputs[i * (positions + actions) + s] = 1.0;
                set.inputs[i * (positions + actions) + positions + a] = 1.0;
                set.next[i * positions + s2] = 1.0;
                set.rewards.push(if s2 == k % positions { 1.0 } else { 0.0 });
            }
            set
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::finite_diff_check;

    fn small_config(seed: u64) -> ReprConfig {
        ReprConfig {
            encoder_hidden: vec![6],
            embedding_dim: 3,
            predictor_hidden: vec![4, 5],
            batch_size: 4,
            negatives: 3,
            iterations: 10,
            seed,
            ..ReprConfig::default()
        }
    }

    fn as_dyn(sets: &[DenseSet]) -> Vec<&dyn TransitionSet> {
        sets.iter().map(|s| s as &dyn TransitionSet).collect()
    }

    fn scalar_loss(model: &ReprModel, batch: &ContrastiveBatch) -> f64 {
        let d = model.input_dim;
        let n = batch.len(d);
        let enc = |s: usize, row: &[f64]| model.encode(s, row).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut total = 0.0;
        for i in 0..n {
            let q = enc(batch.subtask, &batch.anchors[i * d..(i + 1) * d]);
            let kp = enc(batch.subtask, &batch.positives[i * d..(i + 1) * d]);
            let pos = dot(&q, &kp).exp();
            let neg: f64 = batch.negatives.iter().filter(|n| n.anchor == i).map(|n| dot(&q, &enc(n.source, &n.input)).exp()).sum();
            total += -(pos / (pos + neg)).ln();
        }
        total / n as f64
    }

    /// Random biases keep zero-initialised layers off the relu kink.
    fn jitter_biases(params: &mut ParamSet, seed: u64) {
        let mut rng = seeded(seed);
        let names: Vec<String> = params.names().filter(|n| n.ends_with(".b")).cloned().collect();
        for n in names {
            params.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
    }

    fn one_batch(seed: u64) -> (ReprModel, ContrastiveBatch, PredictionTargets) {
        let sets = toy_subtasks(3, 20, 5, seed);
        let mut model = ReprModel::new(small_config(seed), 8, 5, 3).unwrap();
        jitter_biases(&mut model.params, seed);
        let (batch, targets) = sample_batch(&as_dyn(&sets), (seed % 3) as usize, 4, 3, &mut seeded(seed)).unwrap();
        (model, batch, targets)
    }

    #[test]
    fn zero_weight_encoder_gives_zero_embedding() {
        let mut model = ReprModel::new(small_config(0), 8, 5, 2).unwrap();
        model.encoder_spec().init_zero("enc0/", &mut model.params).unwrap();
        let z = model.encode(0, &[1.0; 8]).unwrap();
        assert_eq!(z, vec![0.0; 3]);
        let z2 = model.encode(1, &[1.0; 8]).unwrap();
        assert_eq!(z2, model.encode(1, &[1.0; 8]).unwrap());
    }

    #[test]
    fn no_negatives_means_zero_loss() {
        let (model, mut batch, _) = one_batch(1);
        batch.negatives.clear();
        let mut g = Graph::new();
        let b = model.params.bind(&mut g);
        let l = contrastive_loss_var(&model, &mut g, &b, &batch).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn orthogonal_pair_and_negative_give_ln2() {
        let mut model = ReprModel::new(small_config(0), 8, 5, 2).unwrap();
        model.encoder_spec().init_zero("enc0/", &mut model.params).unwrap();
        model.encoder_spec().init_zero("enc1/", &mut model.params).unwrap();
        let batch = ContrastiveBatch {
            subtask: 0,
            anchors: vec![1.0; 8],
            positives: vec![0.5; 8],
            negatives: vec![Negative { anchor: 0, source: 1, input: vec![0.25; 8] }],
        };
        let mut g = Graph::new();
        let b = model.params.bind(&mut g);
        let l = contrastive_loss_var(&model, &mut g, &b, &batch).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn contrastive_matches_scalar_reference_and_is_permutation_invariant() {
        for seed in 0..5 {
            let (model, batch, _) = one_batch(seed);
            let mut g = Graph::new();
            let b = model.params.bind(&mut g);
            let v = contrastive_loss_var(&model, &mut g, &b, &batch).unwrap();
            let l = g.value(v).item();
            assert!((l - scalar_loss(&model, &batch)).abs() < 1e-12);
            assert!(l >= 0.0);
            let mut shuffled = batch.clone();
            shuffled.negatives.reverse();
            let mut g = Graph::new();
            let b = model.params.bind(&mut g);
            let v = contrastive_loss_var(&model, &mut g, &b, &shuffled).unwrap();
            let l2 = g.value(v).item();
            assert!((l - l2).abs() < 1e-12);
        }
    }

    #[test]
    fn contrastive_and_prediction_gradients_match_finite_differences() {
        for seed in 0..20 {
            let (model, batch, targets) = one_batch(seed);
            let worst = finite_diff_check(&model.params, 1e-5, |p| {
                let m = ReprModel { params: p.clone(), ..model.clone() };
                let mut g = Graph::new();
                let b = m.params.bind(&mut g);
                let (loss, _, _) = joint_loss(&m, &mut g, &b, &[(batch.clone(), targets_clone(&targets))])?;
                Ok((g.value(loss).item(), loss_and_grads(&g, loss, &b)?))
            })
            .unwrap();
            assert!(worst < 1e-4, "seed {seed}: {worst}");
        }
    }

    fn targets_clone(t: &PredictionTargets) -> PredictionTargets {
        PredictionTargets { rewards: t.rewards.clone(), next: t.next.clone() }
    }

    #[test]
    fn perfect_or_unweighted_prediction_is_free() {
        let (mut model, batch, targets) = one_batch(2);
        let mut g = Graph::new();
        let b = model.params.bind(&mut g);
        let z = model.encode_var(&mut g, &b, batch.subtask, batch.anchors.clone()).unwrap();
        let (r, s) = model.predict_var(&mut g, &b, z).unwrap();
        let (r, s) = (g.value(r).data().to_vec(), g.value(s).data().to_vec());
        let l = prediction_loss_var(&model, &mut g, &b, z, &r, &s).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        model.config.lambda_r = 0.0;
        model.config.lambda_s = 0.0;
        let l = prediction_loss_var(&model, &mut g, &b, z, &targets.rewards, &targets.next).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn pretraining_reduces_loss_and_is_deterministic() {
        let sets = toy_subtasks(2, 64, 6, 3);
        let cfg = ReprConfig {
            encoder_hidden: vec![16],
            embedding_dim: 5,
            predictor_hidden: vec![16, 16],
            batch_size: 16,
            negatives: 4,
            iterations: 150,
            lr: 3e-3,
            seed: 3,
            ..ReprConfig::default()
        };
        let a = pretrain(&as_dyn(&sets), &cfg).unwrap();
        let b = pretrain(&as_dyn(&sets), &cfg).unwrap();
        assert_eq!(a.history, b.history);
        let first: f64 = a.history[..10].iter().map(|r| r.total).sum();
        let last: f64 = a.history[a.history.len() - 10..].iter().map(|r| r.total).sum();
        assert!(last < first, "{first} -> {last}");
        assert!(pretrain(&as_dyn(&sets[..1]), &cfg).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("repr");
        let model = ReprModel::new(small_config(4), 8, 5, 3).unwrap();
        model.save(&base, &["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(ReprModel::load(&base).unwrap(), model);
    }

    #[test]
    fn pca_of_isotropic_2d_data_preserves_distances() {
        let rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let p = pca(&rows, 2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((dist(&rows[i], &rows[j]) - dist(&p[i], &p[j])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_components_are_variance_ordered() {
        let mut rng = seeded(8);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let (a, b, c): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
                vec![3.0 * a, a + 0.5 * b, 0.1 * c, b - a, 0.2 * c]
            })
            .collect();
        let p = pca(&rows, 2).unwrap();
        let var = |k: usize| p.iter().map(|r| r[k] * r[k]).sum::<f64>();
        assert!(var(0) >= var(1));
    }

    #[test]
    fn export_writes_one_row_per_embedding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        let pts: Vec<(usize, Vec<f64>)> = (0..7).map(|i| (i % 2, vec![i as f64, 1.0, (i * i) as f64])).collect();
        assert_eq!(export_embeddings(&pts, &["x".into(), "y".into()], &path).unwrap(), 7);
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 8);
    }

    #[test]
    fn separation_ratio_oracle() {
        let pts = vec![(0, vec![0.0, 1.0]), (0, vec![0.0, -1.0]), (1, vec![10.0, 1.0]), (1, vec![10.0, -1.0])];
        assert!((separation_ratio(&pts).unwrap() - 10.0).abs() < 1e-12);
    }
}
