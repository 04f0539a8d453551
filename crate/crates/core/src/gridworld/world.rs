use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Purple,
    Yellow,
    Grey,
}

impl Color {
    pub const ALL: [Color; 6] = [Color::Red, Color::Green, Color::Blue, Color::Purple, Color::Yellow, Color::Grey];

    /// Observation code; 0 is reserved for "no color".
    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<Color> {
        Self::ALL.get((code as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Purple => "purple",
            Color::Yellow => "yellow",
            Color::Grey => "grey",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjKind {
    Key,
    Ball,
    Box,
}

impl ObjKind {
    pub const ALL: [ObjKind; 3] = [ObjKind::Key, ObjKind::Ball, ObjKind::Box];

    pub fn name(self) -> &'static str {
        match self {
            ObjKind::Key => "key",
            ObjKind::Ball => "ball",
            ObjKind::Box => "box",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoorState {
    Open,
    Closed,
    Locked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty,
    Wall,
    Door { color: Color, state: DoorState },
    Object { kind: ObjKind, color: Color },
}

/// Observation channel codes.
pub mod code {
    pub const UNSEEN: u8 = 0;
    pub const EMPTY: u8 = 1;
    pub const WALL: u8 = 2;
    pub const DOOR: u8 = 3;
    pub const KEY: u8 = 4;
    pub const BALL: u8 = 5;
    pub const BOX: u8 = 6;
    pub const NUM_KINDS: usize = 7;
    pub const NUM_COLORS: usize = 7;
    pub const STATE_NONE: u8 = 0;
    pub const STATE_OPEN: u8 = 1;
    pub const STATE_CLOSED: u8 = 2;
    pub const STATE_LOCKED: u8 = 3;
    pub const NUM_STATES: usize = 4;
}

pub(crate) fn kind_code(kind: ObjKind) -> u8 {
    match kind {
        ObjKind::Key => code::KEY,
        ObjKind::Ball => code::BALL,
        ObjKind::Box => code::BOX,
    }
}

impl Cell {
    /// `(kind, color, door-state)` observation triple.
    pub fn encode(self) -> [u8; 3] {
        match self {
            Cell::Empty => [code::EMPTY, 0, code::STATE_NONE],
            Cell::Wall => [code::WALL, 0, code::STATE_NONE],
            Cell::Door { color, state } => {
                let s = match state {
                    DoorState::Open => code::STATE_OPEN,
                    DoorState::Closed => code::STATE_CLOSED,
                    DoorState::Locked => code::STATE_LOCKED,
                };
                [code::DOOR, color.code(), s]
            }
            Cell::Object { kind, color } => [kind_code(kind), color.code(), code::STATE_NONE],
        }
    }

    /// Whether the agent can occupy the cell.
    pub fn walkable(self) -> bool {
        matches!(self, Cell::Empty | Cell::Door { state: DoorState::Open, .. })
    }

    /// Whether the view extends past the cell.
    pub fn see_behind(self) -> bool {
        match self {
            Cell::Wall => false,
            Cell::Door { state, .. } => state == DoorState::Open,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn delta(self) -> (i64, i64) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    pub fn right(self) -> Heading {
        Heading::ALL[(self as usize + 1) % 4]
    }

    pub fn left(self) -> Heading {
        Heading::ALL[(self as usize + 3) % 4]
    }

    fn glyph(self) -> char {
        match self {
            Heading::North => '^',
            Heading::East => '>',
            Heading::South => 'v',
            Heading::West => '<',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    TurnLeft,
    TurnRight,
    Forward,
    Pickup,
    Drop,
    Toggle,
    Done,
}

impl Action {
    pub const COUNT: usize = 7;
    pub const ALL: [Action; 7] =
        [Action::TurnLeft, Action::TurnRight, Action::Forward, Action::Pickup, Action::Drop, Action::Toggle, Action::Done];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Action> {
        Self::ALL.get(id).copied().ok_or_else(|| Error::Invalid(format!("action id {id} out of range")))
    }

    pub fn one_hot(self) -> [f64; Action::COUNT] {
        let mut v = [0.0; Action::COUNT];
        v[self.id()] = 1.0;
        v
    }
}

pub type Pos = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl Grid {
    /// An empty room enclosed by walls.
    pub fn walled(width: usize, height: usize) -> Self {
        let mut g = Self { width, height, cells: vec![Cell::Empty; width * height] };
        for x in 0..width {
            g.set((x, 0), Cell::Wall);
            g.set((x, height - 1), Cell::Wall);
        }
        for y in 0..height {
            g.set((0, y), Cell::Wall);
            g.set((width - 1, y), Cell::Wall);
        }
        g
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, (x, y): Pos) -> Cell {
        self.cells[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as wall.
    pub fn get_signed(&self, x: i64, y: i64) -> Cell {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            Cell::Wall
        } else {
            self.get((x as usize, y as usize))
        }
    }

    pub fn set(&mut self, (x, y): Pos, cell: Cell) {
        self.cells[y * self.width + x] = cell;
    }

    pub fn offset(&self, (x, y): Pos, h: Heading) -> Option<Pos> {
        let (dx, dy) = h.delta();
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        (nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height).then_some((nx as usize, ny as usize))
    }

    pub fn positions(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| (x, y)))
    }

    pub fn find(&self, pred: impl Fn(Cell) -> bool) -> Option<Pos> {
        self.positions().find(|&p| pred(self.get(p)))
    }

    pub fn neighbors4(&self, (x, y): Pos) -> impl Iterator<Item = Pos> + '_ {
        Heading::ALL.into_iter().filter_map(move |h| self.offset((x, y), h))
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.height {
            for x in 0..self.width {
                write!(f, "{}", cell_glyph(self.get((x, y))))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub(crate) fn cell_glyph(c: Cell) -> String {
    let color_char = |c: Color| c.name().chars().next().unwrap_or('?');
    match c {
        Cell::Empty => "  ".into(),
        Cell::Wall => "##".into(),
        Cell::Door { color, state } => {
            let s = match state {
                DoorState::Open => '_',
                DoorState::Closed => 'D',
                DoorState::Locked => 'L',
            };
            format!("{s}{}", color_char(color))
        }
        Cell::Object { kind, color } => {
            let k = match kind {
                ObjKind::Key => 'K',
                ObjKind::Ball => 'A',
                ObjKind::Box => 'B',
            };
            format!("{k}{}", color_char(color))
        }
    }
}

pub(crate) fn agent_glyph(h: Heading) -> String {
    format!("{}{}", h.glyph(), h.glyph())
}
