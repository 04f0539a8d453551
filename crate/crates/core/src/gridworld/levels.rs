use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::env::GridState;
use super::expert::expert_action;
use super::mission::{Mission, Subtask, SubtaskInstruction, Target};
use super::world::{Cell, Color, DoorState, Grid, Heading, ObjKind, Pos};
use crate::rng::{seeded, Rng};
use crate::{Error, Result};

pub const MAX_GENERATION_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    OpenLite,
    GotoLite,
    PutNextLite,
    PickupLite,
    GoToSeqLite,
    SynthSeqLite,
    BossLite,
}

impl Level {
    pub const ALL: [Level; 7] = [
        Level::OpenLite,
        Level::GotoLite,
        Level::PutNextLite,
        Level::PickupLite,
        Level::GoToSeqLite,
        Level::SynthSeqLite,
        Level::BossLite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Level::OpenLite => "OpenLite",
            Level::GotoLite => "GotoLite",
            Level::PutNextLite => "PutNextLite",
            Level::PickupLite => "PickupLite",
            Level::GoToSeqLite => "GoToSeqLite",
            Level::SynthSeqLite => "SynthSeqLite",
            Level::BossLite => "BossLite",
        }
    }

    /// The single-instruction level used to collect data for `subtask`.
    pub fn for_subtask(subtask: Subtask) -> Level {
        match subtask {
            Subtask::Open => Level::OpenLite,
            Subtask::Goto => Level::GotoLite,
            Subtask::PutNext => Level::PutNextLite,
            Subtask::PickupLoc => Level::PickupLite,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Level::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown level `{s}`")))
    }
}

/// Level id plus the mission-grammar sampling weights over
/// `[Open, Goto, PutNext, PickupLoc]` used by the mixed levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub level: Level,
    pub subtask_weights: [f64; 4],
}

impl LevelConfig {
    pub fn new(level: Level) -> Self {
        Self { level, subtask_weights: [1.0; 4] }
    }
}

struct Layout {
    grid: Grid,
    /// Free interior cells per room.
    rooms: Vec<Vec<Pos>>,
    door: Option<(Pos, Color)>,
}

fn single_room(size: usize) -> Layout {
    let grid = Grid::walled(size, size);
    let cells = (1..size - 1).flat_map(|y| (1..size - 1).map(move |x| (x, y))).collect();
    Layout { grid, rooms: vec![cells], door: None }
}

/// Two 5×5 rooms sharing a wall with one door in it.
fn two_rooms(rng: &mut Rng, door_state: DoorState) -> Layout {
    let (w, h) = (9, 5);
    let mut grid = Grid::walled(w, h);
    for y in 0..h {
        grid.set((4, y), Cell::Wall);
    }
    let door_y = rng.gen_range(1..h - 1);
    let color = *Color::ALL.choose(rng).expect("non-empty");
    grid.set((4, door_y), Cell::Door { color, state: door_state });
    let room = |x0: usize| -> Vec<Pos> { (1..h - 1).flat_map(|y| (x0..x0 + 3).map(move |x| (x, y))).collect() };
    Layout { grid, rooms: vec![room(1), room(5)], door: Some(((4, door_y), color)) }
}

fn distinct_objects(rng: &mut Rng, n: usize, exclude: &[(ObjKind, Color)], kinds: &[ObjKind]) -> Vec<(ObjKind, Color)> {
    let mut all: Vec<(ObjKind, Color)> =
        kinds.iter().flat_map(|&k| Color::ALL.into_iter().map(move |c| (k, c))).filter(|o| !exclude.contains(o)).collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

/// Places objects on free cells that do not touch a door.
fn place_objects(rng: &mut Rng, layout: &mut Layout, room: usize, objs: &[(ObjKind, Color)]) -> Result<Vec<Pos>> {
    let mut free: Vec<Pos> = layout.rooms[room]
        .iter()
        .copied()
        .filter(|&p| layout.grid.get(p) == Cell::Empty)
        .filter(|&p| !layout.grid.neighbors4(p).any(|n| matches!(layout.grid.get(n), Cell::Door { .. })))
        .collect();
    if free.len() < objs.len() {
        return Err(Error::Invalid("room too small for objects".into()));
    }
    free.shuffle(rng);
    let mut out = Vec::with_capacity(objs.len());
    for (&(kind, color), &p) in objs.iter().zip(&free) {
        layout.grid.set(p, Cell::Object { kind, color });
        out.push(p);
    }
    Ok(out)
}

fn place_agent(rng: &mut Rng, layout: &Layout, room: usize) -> Result<(Pos, Heading)> {
    let free: Vec<Pos> = layout.rooms[room].iter().copied().filter(|&p| layout.grid.get(p) == Cell::Empty).collect();
    let pos = *free.choose(rng).ok_or_else(|| Error::Invalid("no free cell for the agent".into()))?;
    Ok((pos, Heading::ALL[rng.gen_range(0..4)]))
}

fn pick_subtask(rng: &mut Rng, weights: &[f64; 4], allowed: &[Subtask]) -> Result<Subtask> {
    let w: Vec<f64> = allowed.iter().map(|s| weights[s.id()].max(0.0)).collect();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::Invalid("subtask weights sum to zero".into()));
    }
    let mut u = rng.gen::<f64>() * total;
    for (s, wi) in allowed.iter().zip(&w) {
        if u < *wi {
            return Ok(*s);
        }
        u -= wi;
    }
    Ok(*allowed.last().expect("non-empty"))
}

fn obj_target((kind, color): (ObjKind, Color)) -> Target {
    Target::Object { kind, color }
}

/// Sequences of 2–3 instructions over the given objects (and door, if any).
fn sample_sequence(
    rng: &mut Rng,
    cfg: &LevelConfig,
    objects: &[(ObjKind, Color)],
    door: Option<Color>,
) -> Result<Vec<SubtaskInstruction>> {
    let len = rng.gen_range(2..=3);
    let mut allowed = vec![Subtask::Goto, Subtask::PutNext, Subtask::PickupLoc];
    if door.is_some() {
        allowed.insert(0, Subtask::Open);
    }
    let mut out = Vec::with_capacity(len);
    let mut door_opened = false;
    while out.len() < len {
        let s = pick_subtask(rng, &cfg.subtask_weights, &allowed)?;
        let instr = match s {
            Subtask::Open => {
                if door_opened {
                    continue;
                }
                door_opened = true;
                SubtaskInstruction::open(door.expect("Open only allowed with a door"))
            }
            Subtask::Goto => SubtaskInstruction::goto(obj_target(*objects.choose(rng).expect("objects"))),
            Subtask::PickupLoc => {
                let (k, c) = *objects.choose(rng).expect("objects");
                SubtaskInstruction::pickup(k, c)
            }
            Subtask::PutNext => {
                let pair: Vec<_> = objects.choose_multiple(rng, 2).copied().collect();
                SubtaskInstruction::put_next(pair[0], pair[1])
            }
        };
        if out.last() == Some(&instr) {
            continue;
        }
        out.push(instr);
    }
    Ok(out)
}

/// Objects in the GoToSeqLite room: the target plus distractors.
pub const GOTO_SEQ_OBJECTS: usize = 8;

/// Episode step budget: `8·W·H`, except GoToSeqLite, which gets `W·H` per
/// instruction so that undirected wandering rarely completes a mission.
pub fn step_budget(level: Level, grid: &Grid, mission_len: usize) -> usize {
    let area = grid.width() * grid.height();
    match level {
        Level::GoToSeqLite => area * mission_len,
        _ => 8 * area,
    }
}

fn generate(cfg: &LevelConfig, rng: &mut Rng) -> Result<GridState> {
    let all_kinds = [ObjKind::Key, ObjKind::Ball, ObjKind::Box];
    let (layout, agent, mission) = match cfg.level {
        Level::GotoLite | Level::PickupLite | Level::PutNextLite => {
            let mut layout = single_room(8);
            let objs = distinct_objects(rng, 3, &[], &all_kinds);
            place_objects(rng, &mut layout, 0, &objs)?;
            let agent = place_agent(rng, &layout, 0)?;
            let instr = match cfg.level {
                Level::GotoLite => SubtaskInstruction::goto(obj_target(objs[0])),
                Level::PickupLite => SubtaskInstruction::pickup(objs[0].0, objs[0].1),
                _ => SubtaskInstruction::put_next(objs[0], objs[1]),
            };
            (layout, agent, vec![instr])
        }
        Level::OpenLite => {
            let mut layout = single_room(8);
            let colors: Vec<Color> = Color::ALL.choose_multiple(rng, 2).copied().collect();
            let mut walls: Vec<Pos> = (2..6).flat_map(|i| [(i, 0), (i, 7), (0, i), (7, i)]).collect();
            walls.shuffle(rng);
            for (&p, &color) in walls.iter().zip(&colors) {
                layout.grid.set(p, Cell::Door { color, state: DoorState::Closed });
            }
            let objs = distinct_objects(rng, 2, &[], &all_kinds);
            place_objects(rng, &mut layout, 0, &objs)?;
            let agent = place_agent(rng, &layout, 0)?;
            (layout, agent, vec![SubtaskInstruction::open(colors[0])])
        }
        Level::GoToSeqLite => {
            let mut layout = single_room(8);
            let objs = distinct_objects(rng, GOTO_SEQ_OBJECTS, &[], &all_kinds);
            place_objects(rng, &mut layout, 0, &objs)?;
            let agent = place_agent(rng, &layout, 0)?;
            let len = rng.gen_range(2..=3);
            let mut instrs: Vec<SubtaskInstruction> = Vec::with_capacity(len);
            while instrs.len() < len {
                let instr = SubtaskInstruction::goto(obj_target(*objs.choose(rng).expect("objects")));
                if instrs.last() != Some(&instr) {
                    instrs.push(instr);
                }
            }
            (layout, agent, instrs)
        }
        Level::SynthSeqLite => {
            let mut layout = two_rooms(rng, DoorState::Closed);
            let objs = distinct_objects(rng, 3, &[], &all_kinds);
            place_objects(rng, &mut layout, 0, &objs[..1])?;
            place_objects(rng, &mut layout, 1, &objs[1..])?;
            let agent = place_agent(rng, &layout, 0)?;
            let door = layout.door.map(|d| d.1);
            let instrs = sample_sequence(rng, cfg, &objs, door)?;
            (layout, agent, instrs)
        }
        Level::BossLite => {
            let mut layout = two_rooms(rng, DoorState::Locked);
            let door_color = layout.door.expect("two rooms have a door").1;
            let key = (ObjKind::Key, door_color);
            place_objects(rng, &mut layout, 0, &[key])?;
            let objs = distinct_objects(rng, 2, &[key], &[ObjKind::Ball, ObjKind::Box]);
            place_objects(rng, &mut layout, 1, &objs)?;
            let agent = place_agent(rng, &layout, 0)?;
            let instrs = sample_sequence(rng, cfg, &objs, Some(door_color))?;
            (layout, agent, instrs)
        }
    };
    let max_steps = step_budget(cfg.level, &layout.grid, mission.len());
    let mission = Mission::new(mission)?;
    GridState::new(layout.grid, agent.0, agent.1, mission, max_steps)
}

/// Runs the noise-free expert on a copy; returns its episode length on success.
pub fn certify(state: &GridState) -> Option<usize> {
    let mut s = state.clone();
    while !s.is_done() {
        let instr = *s.current_instruction()?;
        let a = expert_action(&s, &instr).ok()?;
        let out = s.step(a).ok()?;
        if out.done {
            return (out.reward > 0.0).then_some(s.step_count());
        }
    }
    None
}

/// Samples a level instance. Deterministic in `seed`; layouts the scripted
/// expert cannot solve, or whose first instruction already holds, are redrawn.
pub fn reset(cfg: &LevelConfig, seed: u64) -> Result<(GridState, Mission)> {
    let mut rng = seeded(seed);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let state = generate(cfg, &mut rng)?;
        let first = state.current_instruction().copied().expect("missions are non-empty");
        if state.instruction_satisfied(&first) || !state.mission().resolvable(state.grid(), None) {
            continue;
        }
        if certify(&state).is_some() {
            let mission = state.mission().clone();
            return Ok((state, mission));
        }
    }
    Err(Error::Unsolvable { level: cfg.level.name().into(), attempts: MAX_GENERATION_ATTEMPTS })
}
