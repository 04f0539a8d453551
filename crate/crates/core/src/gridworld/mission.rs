use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::world::{code, kind_code, Cell, Color, DoorState, Grid, ObjKind, Pos};
use crate::{Error, Result};

/// The four basic subtasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtask {
    Open,
    Goto,
    PutNext,
    PickupLoc,
}

impl Subtask {
    pub const COUNT: usize = 4;
    pub const ALL: [Subtask; 4] = [Subtask::Open, Subtask::Goto, Subtask::PutNext, Subtask::PickupLoc];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Subtask> {
        Self::ALL.get(id).copied().ok_or_else(|| Error::Invalid(format!("subtask id {id} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Subtask::Open => "Open",
            Subtask::Goto => "Goto",
            Subtask::PutNext => "PutNext",
            Subtask::PickupLoc => "PickupLoc",
        }
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subtask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s) || t.id().to_string() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown subtask `{s}` (expected Open, Goto, PutNext or PickupLoc)")))
    }
}

/// Something an instruction can refer to. Descriptors are unique within a
/// generated grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Object { kind: ObjKind, color: Color },
    Door { color: Color },
}

impl Target {
    pub fn matches(self, cell: Cell) -> bool {
        match (self, cell) {
            (Target::Object { kind, color }, Cell::Object { kind: k, color: c }) => kind == k && color == c,
            (Target::Door { color }, Cell::Door { color: c, .. }) => color == c,
            _ => false,
        }
    }

    pub fn locate(self, grid: &Grid) -> Option<Pos> {
        grid.find(|c| self.matches(c))
    }

    /// `(kind code, color code)` for the mission channel.
    pub fn code(self) -> [u8; 2] {
        match self {
            Target::Object { kind, color } => [kind_code(kind), color.code()],
            Target::Door { color } => [code::DOOR, color.code()],
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Object { kind, color } => write!(f, "the {} {}", color.name(), kind.name()),
            Target::Door { color } => write!(f, "the {} door", color.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubtaskInstruction {
    pub subtask: Subtask,
    pub target: Target,
    /// Reference object for `PutNext`.
    pub reference: Option<Target>,
}

impl SubtaskInstruction {
    pub fn open(color: Color) -> Self {
        Self { subtask: Subtask::Open, target: Target::Door { color }, reference: None }
    }

    pub fn goto(target: Target) -> Self {
        Self { subtask: Subtask::Goto, target, reference: None }
    }

    pub fn pickup(kind: ObjKind, color: Color) -> Self {
        Self { subtask: Subtask::PickupLoc, target: Target::Object { kind, color }, reference: None }
    }

    pub fn put_next(obj: (ObjKind, Color), reference: (ObjKind, Color)) -> Self {
        Self {
            subtask: Subtask::PutNext,
            target: Target::Object { kind: obj.0, color: obj.1 },
            reference: Some(Target::Object { kind: reference.0, color: reference.1 }),
        }
    }

    /// Success predicate evaluated against the world.
    pub fn satisfied(&self, grid: &Grid, front: Option<Pos>, carrying: Option<(ObjKind, Color)>) -> bool {
        match self.subtask {
            Subtask::Open => match self.target {
                Target::Door { color } => grid
                    .positions()
                    .any(|p| matches!(grid.get(p), Cell::Door { color: c, state: DoorState::Open } if c == color)),
                Target::Object { .. } => false,
            },
            Subtask::Goto => front.is_some_and(|p| self.target.matches(grid.get(p))),
            Subtask::PickupLoc => match self.target {
                Target::Object { kind, color } => carrying == Some((kind, color)),
                Target::Door { .. } => false,
            },
            Subtask::PutNext => {
                let (Some(obj), Some(reference)) = (self.target.locate(grid), self.reference.and_then(|r| r.locate(grid)))
                else {
                    return false;
                };
                grid.neighbors4(obj).any(|n| n == reference)
            }
        }
    }

    /// Five mission-channel codes: subtask, target kind, target color,
    /// reference kind, reference color (0 = none).
    pub fn code(&self) -> [u8; 5] {
        let t = self.target.code();
        let r = self.reference.map(|r| r.code()).unwrap_or([0, 0]);
        [self.subtask.id() as u8 + 1, t[0], t[1], r[0], r[1]]
    }
}

impl fmt::Display for SubtaskInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.subtask {
            Subtask::Open => write!(f, "open {}", self.target),
            Subtask::Goto => write!(f, "go to {}", self.target),
            Subtask::PickupLoc => write!(f, "pick up {}", self.target),
            Subtask::PutNext => match self.reference {
                Some(r) => write!(f, "put {} next to {r}", self.target),
                None => write!(f, "put {} next to ?", self.target),
            },
        }
    }
}

/// An ordered list of instructions to complete in sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mission {
    pub instructions: Vec<SubtaskInstruction>,
}

impl Mission {
    pub fn new(instructions: Vec<SubtaskInstruction>) -> Result<Self> {
        if instructions.is_empty() {
            return Err(Error::Invalid("a mission needs at least one instruction".into()));
        }
        Ok(Self { instructions })
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Every descriptor refers to something present in the grid (or carried).
    pub fn resolvable(&self, grid: &Grid, carrying: Option<(ObjKind, Color)>) -> bool {
        let present = |t: Target| {
            t.locate(grid).is_some() || matches!(t, Target::Object { kind, color } if carrying == Some((kind, color)))
        };
        self.instructions.iter().all(|i| present(i.target) && i.reference.is_none_or(present))
    }
}

impl fmt::Display for Mission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, instr) in self.instructions.iter().enumerate() {
            if i > 0 {
                f.write_str(", then ")?;
            }
            write!(f, "{instr}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subtask_parsing() {
        assert_eq!("goto".parse::<Subtask>().unwrap(), Subtask::Goto);
        assert_eq!("PickupLoc".parse::<Subtask>().unwrap(), Subtask::PickupLoc);
        assert_eq!("2".parse::<Subtask>().unwrap(), Subtask::PutNext);
        assert!("Jump".parse::<Subtask>().is_err());
    }

    #[test]
    fn put_next_predicate_uses_four_adjacency() {
        let mut g = Grid::walled(6, 6);
        let ball = (ObjKind::Ball, Color::Red);
        let key = (ObjKind::Key, Color::Blue);
        g.set((2, 2), Cell::Object { kind: ball.0, color: ball.1 });
        g.set((3, 3), Cell::Object { kind: key.0, color: key.1 });
        let instr = SubtaskInstruction::put_next(ball, key);
        assert!(!instr.satisfied(&g, None, None), "diagonal does not count");
        g.set((2, 2), Cell::Empty);
        g.set((3, 2), Cell::Object { kind: ball.0, color: ball.1 });
        assert!(instr.satisfied(&g, None, None));
    }

    #[test]
    fn empty_mission_rejected() {
        assert!(Mission::new(vec![]).is_err());
    }
}
