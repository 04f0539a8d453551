use std::fmt;

use super::mission::{Mission, Subtask, SubtaskInstruction};
use super::observe::{observe, Observation};
use super::world::{agent_glyph, cell_glyph, Action, Cell, Color, DoorState, Grid, Heading, ObjKind, Pos};
use crate::{Error, Result};

/// Reward on mission completion after `steps` of `max_steps`.
pub fn completion_reward(steps: usize, max_steps: usize) -> f64 {
    1.0 - 0.9 * (steps as f64 / max_steps as f64)
}

/// Full environment state, including the mission and its progress.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridState {
    grid: Grid,
    agent: Pos,
    heading: Heading,
    carrying: Option<(ObjKind, Color)>,
    step_count: usize,
    max_steps: usize,
    mission: Mission,
    progress: usize,
    done: bool,
}

/// What a single [`GridState::step`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub subtask_completed: Option<Subtask>,
}

impl GridState {
    pub fn new(grid: Grid, agent: Pos, heading: Heading, mission: Mission, max_steps: usize) -> Result<Self> {
        if !grid.get(agent).walkable() {
            return Err(Error::Invalid(format!("agent placed on non-walkable cell {agent:?}")));
        }
        if max_steps == 0 {
            return Err(Error::Invalid("max_steps must be positive".into()));
        }
        Ok(Self { grid, agent, heading, carrying: None, step_count: 0, max_steps, mission, progress: 0, done: false })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn agent_pos(&self) -> Pos {
        self.agent
    }

    pub fn heading(&self) -> Heading {
        self.heading
    }

    pub fn carrying(&self) -> Option<(ObjKind, Color)> {
        self.carrying
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn mission(&self) -> &Mission {
        &self.mission
    }

    /// Number of instructions already completed.
    pub fn progress(&self) -> usize {
        self.progress
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn current_instruction(&self) -> Option<&SubtaskInstruction> {
        self.mission.instructions.get(self.progress)
    }

    pub fn front_pos(&self) -> Option<Pos> {
        self.grid.offset(self.agent, self.heading)
    }

    pub fn front_cell(&self) -> Cell {
        self.front_pos().map_or(Cell::Wall, |p| self.grid.get(p))
    }

    pub fn observe(&self) -> Observation {
        observe(self)
    }

    pub fn instruction_satisfied(&self, instr: &SubtaskInstruction) -> bool {
        instr.satisfied(&self.grid, self.front_pos(), self.carrying)
    }

    /// Advances the world by one action.
    ///
    /// At most one instruction completes per step. The episode ends when the
    /// last instruction completes (reward `1 − 0.9·steps/max_steps`) or when
    /// the step budget runs out (reward 0).
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        match action {
            Action::TurnLeft => self.heading = self.heading.left(),
            Action::TurnRight => self.heading = self.heading.right(),
            Action::Forward => {
                if let Some(p) = self.front_pos() {
                    if self.grid.get(p).walkable() {
                        self.agent = p;
                    }
                }
            }
            Action::Pickup => {
                if let (None, Some(p)) = (self.carrying, self.front_pos()) {
                    if let Cell::Object { kind, color } = self.grid.get(p) {
                        self.carrying = Some((kind, color));
                        self.grid.set(p, Cell::Empty);
                    }
                }
            }
            Action::Drop => {
                if let (Some((kind, color)), Some(p)) = (self.carrying, self.front_pos()) {
                    if self.grid.get(p) == Cell::Empty {
                        self.grid.set(p, Cell::Object { kind, color });
                        self.carrying = None;
                    }
                }
            }
            Action::Toggle => {
                if let Some(p) = self.front_pos() {
                    if let Cell::Door { color, state } = self.grid.get(p) {
                        let next = match state {
                            DoorState::Open => DoorState::Closed,
                            DoorState::Closed => DoorState::Open,
                            DoorState::Locked if self.carrying == Some((ObjKind::Key, color)) => DoorState::Open,
                            DoorState::Locked => DoorState::Locked,
                        };
                        self.grid.set(p, Cell::Door { color, state: next });
                    }
                }
            }
            Action::Done => {}
        }
        self.step_count += 1;

        let mut reward = 0.0;
        let mut subtask_completed = None;
        if let Some(instr) = self.current_instruction().copied() {
            if self.instruction_satisfied(&instr) {
                subtask_completed = Some(instr.subtask);
                self.progress += 1;
                if self.progress == self.mission.len() {
                    reward = completion_reward(self.step_count, self.max_steps);
                    self.done = true;
                }
            }
        }
        if self.step_count >= self.max_steps {
            self.done = true;
        }
        Ok(StepOutcome { observation: self.observe(), reward, done: self.done, subtask_completed })
    }

    /// ASCII rendering for debugging.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for y in 0..self.grid.height() {
            for x in 0..self.grid.width() {
                if (x, y) == self.agent {
                    out.push_str(&agent_glyph(self.heading));
                } else {
                    out.push_str(&cell_glyph(self.grid.get((x, y))));
                }
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "mission: {} [{}/{}] step {}/{}\n",
            self.mission,
            self.progress,
            self.mission.len(),
            self.step_count,
            self.max_steps
        ));
        out
    }
}

impl fmt::Display for GridState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Functional form of [`GridState::step`].
pub fn step(state: &GridState, action: Action) -> Result<(GridState, StepOutcome)> {
    let mut next = state.clone();
    let out = next.step(action)?;
    Ok((next, out))
}
