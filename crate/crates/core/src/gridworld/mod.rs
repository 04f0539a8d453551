//! BabyAI-style gridworld: egocentric partial observations, instruction
//! missions built from four subtasks, a scripted expert and level generators.

mod env;
mod expert;
mod levels;
mod mission;
mod observe;
mod world;

pub use env::{completion_reward, step, GridState, StepOutcome};
pub use expert::{expert_action, scripted_expert};
pub use levels::{certify, reset, step_budget, Level, LevelConfig, GOTO_SEQ_OBJECTS, MAX_GENERATION_ATTEMPTS};
pub use mission::{Mission, Subtask, SubtaskInstruction, Target};
pub use observe::{observe, Observation, MISSION_CODES, OBS_CODES, OBS_DIM, VIEW, VIEW_CELLS, VIEW_CODES};
pub use world::{code, Action, Cell, Color, DoorState, Grid, Heading, ObjKind, Pos};
