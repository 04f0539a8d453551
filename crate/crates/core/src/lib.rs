//! Subtask representation pretraining and top-K subtask planning trees for
//! tree-guided policy learning on a small BabyAI-style gridworld.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: dense f64 tensors, a reverse-mode tape, MLPs and Adam.
//! - [`gridworld`]: the partially observable grid environment, its levels and
//!   a scripted BFS expert.
//! - [`datagen`]: offline per-subtask trajectory collection and the JSON-lines
//!   dataset format.
//! - [`repr`]: per-subtask encoders trained with a contrastive objective and a
//!   shared reward / next-state predictor.
//! - [`tree`]: query encoder, attention over subtask keys, top-K sampling
//!   without replacement, the m-step predictor and tree construction.
//! - [`plan`]: discounted-UCB path selection and subtask termination.
//! - [`agent`]: the tree-auxiliary actor-critic, PPO, the training loop, the
//!   flat baseline and evaluation.
//! - [`config`] and [`plot`]: run configuration and SVG output used by the CLI.

pub mod agent;
pub mod config;
pub mod datagen;
mod error;
pub mod gridworld;
pub mod numcore;
pub mod plan;
pub mod plot;
pub mod repr;
pub mod rng;
pub mod tree;

pub use error::{Error, Result};
