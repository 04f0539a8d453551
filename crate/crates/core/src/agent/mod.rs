//! Tree-auxiliary actor-critic: the subtask-conditioned policy, PPO with
//! GAE, the training loop that executes d-UCB plans, a flat PPO baseline
//! and frozen evaluation.

mod policy;
mod ppo;
mod train;

pub use policy::{sample_categorical, ActMode, ActOutput, PolicyNet};
pub use ppo::{clipped_surrogate_var, gae, normalize, ppo_loss_var, ppo_update, PpoBatch, PpoConfig, PpoLoss, PpoStats, RolloutBuffer};
pub use train::{
    evaluate, evaluate_flat, evaluate_random, load_flat, metrics_csv, metrics_header, save_flat, train, train_flat_baseline,
    AgentConfig, EmbeddingCache, EvalReport, FlatOutcome, MetricsRow, TrainOutcome, TreeAgent, METRICS_COLUMNS,
};

#[cfg(test)]
mod tests;
