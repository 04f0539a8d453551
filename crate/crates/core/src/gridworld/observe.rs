use serde::{Deserialize, Serialize};

use super::env::GridState;
use super::world::{code, Cell};
use crate::{Error, Result};

pub const VIEW: usize = 7;
pub const VIEW_CELLS: usize = VIEW * VIEW;
pub const VIEW_CODES: usize = VIEW_CELLS * 3;
pub const MISSION_CODES: usize = 5;
/// Length of the compact integer code: the 7×7×3 view followed by the mission channel.
pub const OBS_CODES: usize = VIEW_CODES + MISSION_CODES;

const CELL_ONE_HOT: usize = code::NUM_KINDS + code::NUM_COLORS + code::NUM_STATES;
const MISSION_ONE_HOT: [usize; MISSION_CODES] = [
    1 + crate::gridworld::Subtask::COUNT,
    code::NUM_KINDS,
    code::NUM_COLORS,
    code::NUM_KINDS,
    code::NUM_COLORS,
];
/// Length of the flattened one-hot observation fed to every network.
pub const OBS_DIM: usize = VIEW_CELLS * CELL_ONE_HOT + 5 + 2 * code::NUM_KINDS + 2 * code::NUM_COLORS;

/// Egocentric 7×7×3 view plus the current instruction's codes.
///
/// `view[(row * 7 + col) * 3 + channel]`; the agent sits at row 6, column 3,
/// facing row 0. Channels are object kind, color and door state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    codes: Vec<u8>,
}

impl Observation {
    pub fn from_codes(codes: Vec<u8>) -> Result<Self> {
        if codes.len() != OBS_CODES {
            return Err(Error::Shape(format!("observation needs {OBS_CODES} codes, got {}", codes.len())));
        }
        let limits = [code::NUM_KINDS, code::NUM_COLORS, code::NUM_STATES];
        for (i, &c) in codes[..VIEW_CODES].iter().enumerate() {
            if c as usize >= limits[i % 3] {
                return Err(Error::Format(format!("view code {c} out of range at {i}")));
            }
        }
        for (i, &c) in codes[VIEW_CODES..].iter().enumerate() {
            if c as usize >= MISSION_ONE_HOT[i] {
                return Err(Error::Format(format!("mission code {c} out of range at {i}")));
            }
        }
        Ok(Self { codes })
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn view(&self) -> &[u8] {
        &self.codes[..VIEW_CODES]
    }

    pub fn mission_code(&self) -> &[u8] {
        &self.codes[VIEW_CODES..]
    }

    /// `[kind, color, state]` at view row / column.
    pub fn cell(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * VIEW + col) * 3;
        [self.codes[i], self.codes[i + 1], self.codes[i + 2]]
    }

    /// Digit string used by the dataset format (every code is below 10).
    pub fn to_digits(&self) -> String {
        self.codes.iter().map(|&c| char::from(b'0' + c)).collect()
    }

    pub fn from_digits(s: &str) -> Result<Self> {
        let codes = s
            .bytes()
            .map(|b| if b.is_ascii_digit() { Ok(b - b'0') } else { Err(Error::Format(format!("bad observation digit {:?}", b as char))) })
            .collect::<Result<Vec<u8>>>()?;
        Self::from_codes(codes)
    }

    /// Flattened one-hot encoding of length [`OBS_DIM`].
    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; OBS_DIM];
        self.write_one_hot(&mut v);
        v
    }

    pub fn write_one_hot(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), OBS_DIM);
        out.iter_mut().for_each(|x| *x = 0.0);
        for cell in 0..VIEW_CELLS {
            let base = cell * CELL_ONE_HOT;
            let c = &self.codes[cell * 3..cell * 3 + 3];
            out[base + c[0] as usize] = 1.0;
            out[base + code::NUM_KINDS + c[1] as usize] = 1.0;
            out[base + code::NUM_KINDS + code::NUM_COLORS + c[2] as usize] = 1.0;
        }
        let mut base = VIEW_CELLS * CELL_ONE_HOT;
        for (i, &width) in MISSION_ONE_HOT.iter().enumerate() {
            out[base + self.codes[VIEW_CODES + i] as usize] = 1.0;
            base += width;
        }
    }

    /// Decodes an arbitrary vector in one-hot space to the nearest valid
    /// observation by taking the argmax of every one-hot group.
    pub fn nearest(vector: &[f64]) -> Result<Self> {
        if vector.len() != OBS_DIM {
            return Err(Error::Shape(format!("observation vector needs {OBS_DIM} values, got {}", vector.len())));
        }
        let argmax = |s: &[f64]| {
            let mut best = 0;
            for (i, &x) in s.iter().enumerate() {
                if x > s[best] {
                    best = i;
                }
            }
            best as u8
        };
        let mut codes = Vec::with_capacity(OBS_CODES);
        for cell in 0..VIEW_CELLS {
            let base = cell * CELL_ONE_HOT;
            codes.push(argmax(&vector[base..base + code::NUM_KINDS]));
            codes.push(argmax(&vector[base + code::NUM_KINDS..base + code::NUM_KINDS + code::NUM_COLORS]));
            codes.push(argmax(&vector[base + code::NUM_KINDS + code::NUM_COLORS..base + CELL_ONE_HOT]));
        }
        let mut base = VIEW_CELLS * CELL_ONE_HOT;
        for width in MISSION_ONE_HOT {
            codes.push(argmax(&vector[base..base + width]));
            base += width;
        }
        Ok(Self { codes })
    }
}

/// Renders the agent's egocentric partial view.
///
/// Visibility spreads outward from the agent and stops at cells that block
/// sight (walls, closed doors); everything not reached is coded "unseen".
pub fn observe(state: &GridState) -> Observation {
    let grid = state.grid();
    let (ax, ay) = state.agent_pos();
    let fwd = state.heading().delta();
    let right = state.heading().right().delta();

    let mut cells = [[Cell::Wall; VIEW]; VIEW];
    for (row, line) in cells.iter_mut().enumerate() {
        for (col, cell) in line.iter_mut().enumerate() {
            let ahead = (VIEW - 1 - row) as i64;
            let side = col as i64 - (VIEW / 2) as i64;
            let x = ax as i64 + ahead * fwd.0 + side * right.0;
            let y = ay as i64 + ahead * fwd.1 + side * right.1;
            *cell = grid.get_signed(x, y);
        }
    }

    let mut visible = [[false; VIEW]; VIEW];
    visible[VIEW - 1][VIEW / 2] = true;
    for row in (0..VIEW).rev() {
        for col in 0..VIEW - 1 {
            if !visible[row][col] || !cells[row][col].see_behind() {
                continue;
            }
            visible[row][col + 1] = true;
            if row > 0 {
                visible[row - 1][col + 1] = true;
                visible[row - 1][col] = true;
            }
        }
        for col in (1..VIEW).rev() {
            if !visible[row][col] || !cells[row][col].see_behind() {
                continue;
            }
            visible[row][col - 1] = true;
            if row > 0 {
                visible[row - 1][col - 1] = true;
                visible[row - 1][col] = true;
            }
        }
    }

    let mut codes = Vec::with_capacity(OBS_CODES);
    for row in 0..VIEW {
        for col in 0..VIEW {
            let triple = if row == VIEW - 1 && col == VIEW / 2 {
                match state.carrying() {
                    Some((kind, color)) => Cell::Object { kind, color }.encode(),
                    None => Cell::Empty.encode(),
                }
            } else if visible[row][col] {
                cells[row][col].encode()
            } else {
                [code::UNSEEN, 0, 0]
            };
            codes.extend_from_slice(&triple);
        }
    }
    codes.extend_from_slice(&state.current_instruction().map(|i| i.code()).unwrap_or([0; MISSION_CODES]));
    Observation { codes }
}
