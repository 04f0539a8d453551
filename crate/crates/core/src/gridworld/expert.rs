//! Scripted shortest-path expert used for data collection and as the
//! solvability certificate of generated levels.

use std::collections::VecDeque;

use rand::Rng as _;

use super::env::GridState;
use super::mission::{Subtask, SubtaskInstruction, Target};
use super::world::{Action, Cell, DoorState, Heading, ObjKind, Pos};
use crate::rng::Rng;
use crate::{Error, Result};

enum Route {
    AtGoal,
    First(Action),
}

fn heading_index(h: Heading) -> usize {
    h as usize
}

fn plannable(state: &GridState, cell: Cell) -> bool {
    match cell {
        Cell::Empty => true,
        Cell::Door { state: DoorState::Open | DoorState::Closed, .. } => true,
        Cell::Door { state: DoorState::Locked, color } => state.carrying() == Some((ObjKind::Key, color)),
        _ => false,
    }
}

/// Breadth-first search over (position, heading) for a pose whose front cell
/// satisfies `goal`. Closed doors count as passable; the caller turns a
/// planned `Forward` into a door into `Toggle`.
fn route(state: &GridState, goal: impl Fn(Pos, Cell) -> bool) -> Option<Route> {
    let grid = state.grid();
    let is_goal = |p: Pos, h: Heading| grid.offset(p, h).is_some_and(|f| goal(f, grid.get(f)));
    let start = (state.agent_pos(), state.heading());
    if is_goal(start.0, start.1) {
        return Some(Route::AtGoal);
    }
    let (w, hgt) = (grid.width(), grid.height());
    let index = |(x, y): Pos, h: Heading| (y * w + x) * 4 + heading_index(h);
    let mut first: Vec<Option<Action>> = vec![None; w * hgt * 4];
    let mut seen = vec![false; w * hgt * 4];
    let mut queue = VecDeque::new();
    seen[index(start.0, start.1)] = true;
    queue.push_back(start);
    while let Some((p, h)) = queue.pop_front() {
        let origin = first[index(p, h)];
        let mut moves: Vec<(Action, Pos, Heading)> = Vec::with_capacity(3);
        if let Some(f) = grid.offset(p, h) {
            if plannable(state, grid.get(f)) {
                moves.push((Action::Forward, f, h));
            }
        }
        moves.push((Action::TurnLeft, p, h.left()));
        moves.push((Action::TurnRight, p, h.right()));
        for (a, np, nh) in moves {
            let i = index(np, nh);
            if seen[i] {
                continue;
            }
            seen[i] = true;
            let fa = origin.unwrap_or(a);
            first[i] = Some(fa);
            if is_goal(np, nh) {
                return Some(Route::First(fa));
            }
            queue.push_back((np, nh));
        }
    }
    None
}

fn realize(state: &GridState, a: Action) -> Action {
    if a == Action::Forward {
        if let Cell::Door { state: DoorState::Closed | DoorState::Locked, .. } = state.front_cell() {
            return Action::Toggle;
        }
    }
    a
}

fn near_door(state: &GridState, p: Pos) -> bool {
    state.grid().neighbors4(p).any(|n| matches!(state.grid().get(n), Cell::Door { .. }))
}

/// Puts the carried object down somewhere harmless.
fn drop_anywhere(state: &GridState) -> Result<Action> {
    let spot = route(state, |p, c| c == Cell::Empty && !near_door(state, p)).or_else(|| route(state, |_, c| c == Cell::Empty));
    match spot {
        Some(Route::AtGoal) => Ok(Action::Drop),
        Some(Route::First(a)) => Ok(realize(state, a)),
        None => Err(Error::Unreachable("no free cell to drop the carried object".into())),
    }
}

fn pick_up(state: &GridState, target: Target) -> Result<Option<Action>> {
    if state.carrying().is_some() {
        return drop_anywhere(state).map(Some);
    }
    Ok(match route(state, |_, c| target.matches(c)) {
        Some(Route::AtGoal) => Some(Action::Pickup),
        Some(Route::First(a)) => Some(realize(state, a)),
        None => None,
    })
}

/// Fetches the key for a locked door when the goal is otherwise unreachable.
fn fetch_key(state: &GridState, what: &str) -> Result<Action> {
    let grid = state.grid();
    let locked = grid.positions().find_map(|p| match grid.get(p) {
        Cell::Door { color, state: DoorState::Locked } => Some(color),
        _ => None,
    });
    if let Some(color) = locked {
        if state.carrying() != Some((ObjKind::Key, color)) {
            if let Some(a) = pick_up(state, Target::Object { kind: ObjKind::Key, color })? {
                return Ok(a);
            }
        }
    }
    Err(Error::Unreachable(what.to_string()))
}

fn navigate(state: &GridState, goal: impl Fn(Pos, Cell) -> bool, at_goal: Action, what: &str) -> Result<Action> {
    match route(state, goal) {
        Some(Route::AtGoal) => Ok(at_goal),
        Some(Route::First(a)) => Ok(realize(state, a)),
        None => fetch_key(state, what),
    }
}

/// Noise-free expert action for `instr`.
pub fn expert_action(state: &GridState, instr: &SubtaskInstruction) -> Result<Action> {
    if state.instruction_satisfied(instr) {
        return Ok(Action::Done);
    }
    let target = instr.target;
    match instr.subtask {
        Subtask::Goto => navigate(state, |_, c| target.matches(c), Action::Done, &format!("{instr}")),
        Subtask::Open => {
            let needs_key = matches!(target.locate(state.grid()).map(|p| state.grid().get(p)),
                Some(Cell::Door { state: DoorState::Locked, color }) if state.carrying() != Some((ObjKind::Key, color)));
            if needs_key {
                return fetch_key(state, &format!("{instr}"));
            }
            navigate(state, |_, c| target.matches(c), Action::Toggle, &format!("{instr}"))
        }
        Subtask::PickupLoc => match pick_up(state, target)? {
            Some(a) => Ok(a),
            None => fetch_key(state, &format!("{instr}")),
        },
        Subtask::PutNext => {
            let Target::Object { kind, color } = target else {
                return Err(Error::Invalid("PutNext target must be an object".into()));
            };
            if state.carrying() == Some((kind, color)) {
                let reference = instr
                    .reference
                    .and_then(|r| r.locate(state.grid()))
                    .ok_or_else(|| Error::Unreachable(format!("reference of `{instr}` not in grid")))?;
                let grid = state.grid();
                navigate(
                    state,
                    |p, c| c == Cell::Empty && grid.neighbors4(p).any(|n| n == reference),
                    Action::Drop,
                    &format!("{instr}"),
                )
            } else {
                match pick_up(state, target)? {
                    Some(a) => Ok(a),
                    None => fetch_key(state, &format!("{instr}")),
                }
            }
        }
    }
}

/// With probability `noise` a uniformly random action, otherwise the expert's.
pub fn scripted_expert(state: &GridState, instr: &SubtaskInstruction, noise: f64, rng: &mut Rng) -> Result<Action> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Invalid(format!("noise {noise} outside [0, 1]")));
    }
    let u: f64 = rng.gen();
    if u < noise {
        return Action::from_id(rng.gen_range(0..Action::COUNT));
    }
    expert_action(state, instr)
}
