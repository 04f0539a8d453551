//! Run configuration in a plain `key = value` format with `[section]`
//! headers. Top-level keys come before the first header; `#` starts a
//! comment. Every key is validated and unknown keys are rejected.
//!
//! ```text
//! seed = 0
//! level = GoToSeqLite
//!
//! [tree]
//! width = 2
//! depth = 3
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::AgentConfig;
use crate::gridworld::Level;
use crate::repr::ReprConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub level: Level,
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub metrics_dir: PathBuf,
    pub collect_episodes: usize,
    /// Expert, medium and random tier shares.
    pub tier_fractions: [f64; 3],
    pub repr: ReprConfig,
    pub agent: AgentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            level: Level::GoToSeqLite,
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            metrics_dir: "metrics".into(),
            collect_episodes: 300,
            tier_fractions: [1.0 / 3.0; 3],
            repr: ReprConfig::default(),
            agent: AgentConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// The representation config with the run seed applied.
    pub fn repr_config(&self) -> ReprConfig {
        ReprConfig { seed: self.seed, ..self.repr.clone() }
    }

    /// The agent config with the run seed and level applied.
    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig { seed: self.seed, level: self.level, ..self.agent.clone() }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (r, a) = (&mut self.repr, &mut self.agent);
        match key {
            "seed" => self.seed = parse(key, value)?,
            "level" => self.level = value.trim().parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "paths.data_dir" => self.data_dir = value.trim().into(),
            "paths.checkpoint_dir" => self.checkpoint_dir = value.trim().into(),
            "paths.metrics_dir" => self.metrics_dir = value.trim().into(),
            "collect.episodes" => self.collect_episodes = parse(key, value)?,
            "collect.tier_fractions" => {
                let v: Vec<f64> = parse_list(key, value)?;
                self.tier_fractions = v.try_into().map_err(|_| Error::Config(format!("`{key}` needs three values")))?;
            }
            "repr.embedding_dim" => r.embedding_dim = parse(key, value)?,
            "repr.encoder_hidden" => r.encoder_hidden = parse_list(key, value)?,
            "repr.predictor_hidden" => r.predictor_hidden = parse_list(key, value)?,
            "repr.batch_size" => r.batch_size = parse(key, value)?,
            "repr.negatives" => r.negatives = parse(key, value)?,
            "repr.lr" => r.lr = parse(key, value)?,
            "repr.lambda_r" => r.lambda_r = parse(key, value)?,
            "repr.lambda_s" => r.lambda_s = parse(key, value)?,
            "repr.iterations" => r.iterations = parse(key, value)?,
            "repr.shared_encoder" => r.shared_encoder = parse(key, value)?,
            "tree.width" => a.tree.width = parse(key, value)?,
            "tree.depth" => a.tree.depth = parse(key, value)?,
            "tree.horizon" => a.tree.horizon = parse(key, value)?,
            "tree.key_dim" => a.tree.key_dim = parse(key, value)?,
            "tree.query_hidden" => a.tree.query_hidden = parse_list(key, value)?,
            "tree.predictor_hidden" => a.tree.predictor_hidden = parse_list(key, value)?,
            "tree.attention_lr" => a.tree.attention_lr = parse(key, value)?,
            "tree.predictor_lr" => a.tree.predictor_lr = parse(key, value)?,
            "tree.gamma" => a.tree.gamma = parse(key, value)?,
            "tree.kappa" => a.kappa = parse(key, value)?,
            "tree.delta" => a.delta = parse(key, value)?,
            "ppo.clip" => a.ppo.clip = parse(key, value)?,
            "ppo.gae_lambda" => a.ppo.gae_lambda = parse(key, value)?,
            "ppo.gamma" => a.ppo.gamma = parse(key, value)?,
            "ppo.value_coef" => a.ppo.value_coef = parse(key, value)?,
            "ppo.entropy_coef" => a.ppo.entropy_coef = parse(key, value)?,
            "ppo.lr" => a.ppo.lr = parse(key, value)?,
            "ppo.steps_per_update" => a.ppo.steps_per_update = parse(key, value)?,
            "ppo.epochs" => a.ppo.epochs = parse(key, value)?,
            "ppo.minibatch" => a.ppo.minibatch = parse(key, value)?,
            "train.total_steps" => a.total_steps = parse(key, value)?,
            "train.eval_interval" => a.eval_interval = parse(key, value)?,
            "train.eval_episodes" => a.eval_episodes = parse(key, value)?,
            "train.policy_hidden" => a.policy_hidden = parse_list(key, value)?,
            "train.predictor_window" => a.predictor_window = parse(key, value)?,
            "train.predictor_batch" => a.predictor_batch = parse(key, value)?,
            "train.predictor_steps" => a.predictor_steps = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Config(format!("line {}: unterminated section", n + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
            cfg.set(&key, v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.tier_fractions;
        if f.iter().any(|x| !(*x >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("tier fractions {f:?} must be non-negative and sum to 1")));
        }
        if self.collect_episodes == 0 {
            return Err(Error::Config("collect.episodes must be positive".into()));
        }
        if self.repr.encoder_hidden.iter().chain(&self.repr.predictor_hidden).any(|&h| h == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.repr_config().validate()?;
        self.agent_config().validate()
    }

    /// Writes every key; parsing the output reproduces this config.
    pub fn dump(&self) -> String {
        let (r, a) = (&self.repr, &self.agent);
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}\nlevel = {}", self.seed, self.level);
        let _ = writeln!(
            out,
            "\n[paths]\ndata_dir = {}\ncheckpoint_dir = {}\nmetrics_dir = {}",
            self.data_dir.display(),
            self.checkpoint_dir.display(),
            self.metrics_dir.display()
        );
        let _ = writeln!(out, "\n[collect]\nepisodes = {}\ntier_fractions = {}", self.collect_episodes, list(&self.tier_fractions));
        let _ = writeln!(
            out,
            "\n[repr]\nembedding_dim = {}\nencoder_hidden = {}\npredictor_hidden = {}\nbatch_size = {}\nnegatives = {}\nlr = {}\nlambda_r = {}\nlambda_s = {}\niterations = {}\nshared_encoder = {}",
            r.embedding_dim,
            list(&r.encoder_hidden),
            list(&r.predictor_hidden),
            r.batch_size,
            r.negatives,
            r.lr,
            r.lambda_r,
            r.lambda_s,
            r.iterations,
            r.shared_encoder
        );
        let t = &a.tree;
        let _ = writeln!(
            out,
            "\n[tree]\nwidth = {}\ndepth = {}\nhorizon = {}\nkey_dim = {}\nquery_hidden = {}\npredictor_hidden = {}\nattention_lr = {}\npredictor_lr = {}\ngamma = {}\nkappa = {}\ndelta = {}",
            t.width,
            t.depth,
            t.horizon,
            t.key_dim,
            list(&t.query_hidden),
            list(&t.predictor_hidden),
            t.attention_lr,
            t.predictor_lr,
            t.gamma,
            a.kappa,
            a.delta
        );
        let p = &a.ppo;
        let _ = writeln!(
            out,
            "\n[ppo]\nclip = {}\ngae_lambda = {}\ngamma = {}\nvalue_coef = {}\nentropy_coef = {}\nlr = {}\nsteps_per_update = {}\nepochs = {}\nminibatch = {}",
            p.clip, p.gae_lambda, p.gamma, p.value_coef, p.entropy_coef, p.lr, p.steps_per_update, p.epochs, p.minibatch
        );
        let _ = writeln!(
            out,
            "\n[train]\ntotal_steps = {}\neval_interval = {}\neval_episodes = {}\npolicy_hidden = {}\npredictor_window = {}\npredictor_batch = {}\npredictor_steps = {}",
            a.total_steps,
            a.eval_interval,
            a.eval_episodes,
            list(&a.policy_hidden),
            a.predictor_window,
            a.predictor_batch,
            a.predictor_steps
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse_str(&cfg.dump()).unwrap(), cfg);
        let mut other = RunConfig::default();
        other.set("tree.kappa", "0.9").unwrap();
        other.set("repr.encoder_hidden", "16, 8").unwrap();
        other.set("collect.tier_fractions", "0.5, 0.25, 0.25").unwrap();
        assert_eq!(RunConfig::parse_str(&other.dump()).unwrap(), other);
    }

    #[test]
    fn defaults_follow_the_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.repr.embedding_dim, 5);
        assert_eq!((c.agent.tree.width, c.agent.tree.depth, c.agent.tree.horizon), (2, 3, 5));
        assert_eq!((c.agent.kappa, c.agent.delta, c.agent.ppo.clip), (0.8, 0.5, 0.2));
        assert_eq!((c.repr.lambda_r, c.repr.lambda_s, c.repr.lr, c.agent.ppo.lr), (0.9, 1.0, 3e-4, 1e-4));
    }

    #[test]
    fn sections_comments_and_errors() {
        let cfg = RunConfig::parse_str("seed = 7 # run seed\nlevel = bosslite\n\n[ppo]\nlr = 0.001\n").unwrap();
        assert_eq!((cfg.seed, cfg.level, cfg.agent.ppo.lr), (7, Level::BossLite, 1e-3));
        assert_eq!(cfg.agent_config().seed, 7);
        for bad in ["nope = 1", "[ppo]\nclip = 1.5", "seed = x", "[tree\nwidth = 2", "[tree]\nwidth = 4", "just words"] {
            assert!(matches!(RunConfig::parse_str(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
