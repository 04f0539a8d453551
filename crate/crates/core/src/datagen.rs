//! Offline per-subtask trajectory collection and the JSON-lines dataset format.
//!
//! A dataset file is a header line, one line per episode and a trailing
//! line holding the SHA-256 of everything before it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gridworld::{reset, scripted_expert, Action, Level, LevelConfig, Observation, Subtask};
use crate::rng::{derive_seed, seeded, stream};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "subplan-dataset";

/// Data quality tier, realised as scripted-expert action noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Expert,
    Medium,
    Random,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Expert, Tier::Medium, Tier::Random];

    pub fn noise(self) -> f64 {
        match self {
            Tier::Expert => 0.0,
            Tier::Medium => 0.5,
            Tier::Random => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Expert => "expert",
            Tier::Medium => "medium",
            Tier::Random => "random",
        }
    }
}

/// One `(s, a, r, s′, done)` tuple borrowed from an [`Episode`].
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub s: &'a Observation,
    pub a: Action,
    pub r: f64,
    pub s_next: &'a Observation,
    pub done: bool,
}

/// `observations` has one more entry than `actions`: the final next-state.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub tier: Tier,
    pub seed: u64,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn transition(&self, t: usize) -> Transition<'_> {
        Transition {
            s: &self.observations[t],
            a: self.actions[t],
            r: self.rewards[t],
            s_next: &self.observations[t + 1],
            done: self.dones[t],
        }
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_>> {
        (0..self.len()).map(|t| self.transition(t))
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        if self.observations.len() != n + 1 || self.rewards.len() != n || self.dones.len() != n {
            return Err(Error::Format("episode arrays have inconsistent lengths".into()));
        }
        if self.rewards.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Format("reward outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskDataset {
    pub subtask: Subtask,
    pub seed: u64,
    pub episodes: Vec<Episode>,
}

impl SubtaskDataset {
    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    /// `(episode, step)` index of every transition, in storage order.
    pub fn transition_index(&self) -> Vec<(usize, usize)> {
        self.episodes.iter().enumerate().flat_map(|(e, ep)| (0..ep.len()).map(move |t| (e, t))).collect()
    }

    pub fn transition(&self, (e, t): (usize, usize)) -> Transition<'_> {
        self.episodes[e].transition(t)
    }

    pub fn tier_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for ep in &self.episodes {
            c[ep.tier as usize] += 1;
        }
        c
    }
}

/// Splits `n` into three counts proportional to `fractions` (largest remainder).
pub fn tier_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("tier fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, x) in counts.iter_mut().zip(&exact) {
        *c = x.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - counts.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    Ok(counts)
}

/// Rolls out one episode of the subtask's single-instruction level with the
/// scripted expert at the given noise, stopping at success or `max_steps`.
pub fn rollout(subtask: Subtask, tier: Tier, episode_seed: u64, expert_seed: u64) -> Result<Episode> {
    let (mut state, _) = reset(&LevelConfig::new(Level::for_subtask(subtask)), episode_seed)?;
    let mut rng = seeded(expert_seed);
    let mut ep = Episode {
        tier,
        seed: episode_seed,
        observations: vec![state.observe()],
        actions: Vec::new(),
        rewards: Vec::new(),
        dones: Vec::new(),
    };
    while !state.is_done() {
        let instr = *state.current_instruction().expect("mission in progress");
        // Noisy actions can strand the expert (e.g. a key dropped out of
        // reach); it then acts randomly until the step budget runs out.
        let a = match scripted_expert(&state, &instr, tier.noise(), &mut rng) {
            Err(Error::Unreachable(_)) => Action::from_id(rng.gen_range(0..Action::COUNT))?,
            other => other?,
        };
        let out = state.step(a)?;
        ep.actions.push(a);
        ep.rewards.push(out.reward);
        ep.dones.push(out.done);
        ep.observations.push(out.observation);
    }
    Ok(ep)
}

/// Collects `n_episodes` episodes split across tiers by `fractions`
/// (expert, medium, random). Episode `i` uses seeds derived from `(seed, i)`.
pub fn collect(subtask: Subtask, n_episodes: usize, fractions: [f64; 3], seed: u64) -> Result<SubtaskDataset> {
    let counts = tier_counts(n_episodes, fractions)?;
    let tiers = Tier::ALL.iter().zip(counts).flat_map(|(&t, c)| std::iter::repeat_n(t, c));
    let episodes = tiers
        .enumerate()
        .map(|(i, tier)| {
            rollout(subtask, tier, derive_seed(seed, stream::ENV, i as u64), derive_seed(seed, stream::EXPERT, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubtaskDataset { subtask, seed, episodes })
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    subtask: Subtask,
    seed: u64,
    episodes: usize,
    tiers: Vec<TierRow>,
}

#[derive(Serialize, Deserialize)]
struct TierRow {
    tier: Tier,
    noise: f64,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    s: String,
    a: usize,
    r: f64,
    done: bool,
}

#[derive(Serialize, Deserialize)]
struct EpisodeRecord {
    tier: Tier,
    seed: u64,
    steps: Vec<StepRecord>,
    last: String,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    sha256: String,
}

/// Serialises to the JSON-lines format (byte-deterministic).
pub fn to_bytes(ds: &SubtaskDataset) -> Result<Vec<u8>> {
    let mut body = String::new();
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        subtask: ds.subtask,
        seed: ds.seed,
        episodes: ds.episodes.len(),
        tiers: Tier::ALL.iter().map(|&tier| TierRow { tier, noise: tier.noise() }).collect(),
    };
    body.push_str(&serde_json::to_string(&header)?);
    body.push('\n');
    for ep in &ds.episodes {
        ep.validate()?;
        let rec = EpisodeRecord {
            tier: ep.tier,
            seed: ep.seed,
            steps: ep
                .transitions()
                .map(|t| StepRecord { s: t.s.to_digits(), a: t.a.id(), r: t.r, done: t.done })
                .collect(),
            last: ep.observations.last().expect("validated").to_digits(),
        };
        body.push_str(&serde_json::to_string(&rec)?);
        body.push('\n');
    }
    let sha256 = hex::encode(Sha256::digest(body.as_bytes()));
    body.push_str(&serde_json::to_string(&Trailer { sha256 })?);
    body.push('\n');
    Ok(body.into_bytes())
}

fn parse(bytes: &[u8], path: &Path) -> Result<SubtaskDataset> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Checksum(path.to_path_buf()))?;
    let body_end = text.trim_end_matches('\n').rfind('\n').map(|i| i + 1).ok_or_else(|| Error::Format("truncated dataset".into()))?;
    let (body, trailer) = text.split_at(body_end);
    let trailer: Trailer =
        serde_json::from_str(trailer.trim_end()).map_err(|_| Error::Format("missing checksum line (truncated file?)".into()))?;
    if hex::encode(Sha256::digest(body.as_bytes())) != trailer.sha256 {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    let mut lines = body.lines();
    let header: Header = serde_json::from_str(lines.next().ok_or_else(|| Error::Format("missing header".into()))?)?;
    if header.format != FORMAT_NAME {
        return Err(Error::Format(format!("not a dataset file: format `{}`", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Version { expected: FORMAT_VERSION, found: header.version });
    }
    let mut episodes = Vec::with_capacity(header.episodes);
    for line in lines {
        let rec: EpisodeRecord = serde_json::from_str(line)?;
        let mut observations = rec.steps.iter().map(|s| Observation::from_digits(&s.s)).collect::<Result<Vec<_>>>()?;
        observations.push(Observation::from_digits(&rec.last)?);
        let ep = Episode {
            tier: rec.tier,
            seed: rec.seed,
            observations,
            actions: rec.steps.iter().map(|s| Action::from_id(s.a)).collect::<Result<_>>()?,
            rewards: rec.steps.iter().map(|s| s.r).collect(),
            dones: rec.steps.iter().map(|s| s.done).collect(),
        };
        ep.validate()?;
        episodes.push(ep);
    }
    if episodes.len() != header.episodes {
        return Err(Error::Format(format!("header announces {} episodes, found {}", header.episodes, episodes.len())));
    }
    Ok(SubtaskDataset { subtask: header.subtask, seed: header.seed, episodes })
}

pub fn save(ds: &SubtaskDataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_bytes(ds)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SubtaskDataset> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "run `subplan collect` first".into(),
        },
        _ => Error::Io(e),
    })?;
    parse(&bytes, path)
}

/// Conventional file name for a subtask's dataset inside a data directory.
pub fn dataset_path(dir: &Path, subtask: Subtask) -> PathBuf {
    dir.join(format!("{}.jsonl", subtask.name()))
}

/// Loads every `*.jsonl` dataset in `dir`, ordered by subtask id.
pub fn load_dir(dir: &Path) -> Result<Vec<SubtaskDataset>> {
    let mut out = Vec::new();
    for s in Subtask::ALL {
        let p = dataset_path(dir, s);
        if p.exists() {
            out.push(load(&p)?);
        }
    }
    if out.is_empty() {
        return Err(Error::MissingArtifact { path: dir.to_path_buf(), hint: "no datasets found; run `subplan collect`".into() });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierStats {
    pub tier: Tier,
    pub episodes: usize,
    pub transitions: usize,
    pub mean_length: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub episodes: usize,
    pub transitions: usize,
    pub mean_episode_length: f64,
    pub tiers: Vec<TierStats>,
}

fn mean(total: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub fn stats(ds: &SubtaskDataset) -> DatasetStats {
    let tiers = Tier::ALL
        .iter()
        .map(|&tier| {
            let eps: Vec<&Episode> = ds.episodes.iter().filter(|e| e.tier == tier).collect();
            let transitions: usize = eps.iter().map(|e| e.len()).sum();
            TierStats {
                tier,
                episodes: eps.len(),
                transitions,
                mean_length: mean(transitions as f64, eps.len()),
                mean_return: mean(eps.iter().map(|e| e.total_return()).sum(), eps.len()),
            }
        })
        .collect();
    let transitions = ds.num_transitions();
    DatasetStats {
        episodes: ds.episodes.len(),
        transitions,
        mean_episode_length: mean(transitions as f64, ds.episodes.len()),
        tiers,
    }
}

/// Plain-text collection summary, one row per subtask.
pub fn report(datasets: &[SubtaskDataset]) -> String {
    let mut out = String::from("subtask      episodes  transitions  mean_len  ret_expert  ret_medium  ret_random\n");
    for ds in datasets {
        let st = stats(ds);
        let _ = writeln!(
            out,
            "{:<12} {:>8}  {:>11}  {:>8.2}  {:>10.3}  {:>10.3}  {:>10.3}",
            ds.subtask.name(),
            st.episodes,
            st.transitions,
            st.mean_episode_length,
            st.tiers[0].mean_return,
            st.tiers[1].mean_return,
            st.tiers[2].mean_return
        );
    }
    out
}
