use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Cell, Direction, DoorState, GridEnvState};

/// Fixed-length symbolic state tuple; component meanings and vocabulary
/// sizes come from the [`EncodingSchema`] it was produced with.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateEncoding(pub Vec<u16>);

impl StateEncoding {
    pub fn components(&self) -> &[u16] {
        &self.0
    }
}

/// Shape of the state tuple shared by every task of a suite:
///
/// | component        | vocabulary                                   |
/// |------------------|----------------------------------------------|
/// | agent x          | `max_width`                                  |
/// | agent y          | `max_height`                                 |
/// | heading          | 4                                            |
/// | carried key      | `1 + key_colors` (0 = nothing)               |
/// | door `i` state   | 4 (absent, locked, closed, open)             |
/// | key `c` location | `2 + max_width * max_height` (absent, carried, cell) |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodingSchema {
    pub max_width: u8,
    pub max_height: u8,
    pub max_doors: u8,
    pub key_colors: u8,
}

const DOOR_ABSENT: u16 = 0;
const KEY_ABSENT: u16 = 0;
const KEY_CARRIED: u16 = 1;

impl EncodingSchema {
    /// Smallest schema covering all given initial states.
    pub fn covering<'a>(states: impl IntoIterator<Item = &'a GridEnvState>) -> Self {
        let mut schema = EncodingSchema { max_width: 0, max_height: 0, max_doors: 0, key_colors: 0 };
        for s in states {
            schema.max_width = schema.max_width.max(s.width);
            schema.max_height = schema.max_height.max(s.height);
            schema.max_doors = schema.max_doors.max(s.doors().count() as u8);
            for c in &s.cells {
                let color = match c {
                    Cell::Key(color) => Some(*color),
                    Cell::Door { color, state: DoorState::Locked } => Some(*color),
                    _ => None,
                };
                if let Some(color) = color {
                    schema.key_colors = schema.key_colors.max(color + 1);
                }
            }
        }
        schema
    }

    pub fn n_components(&self) -> usize {
        4 + self.max_doors as usize + self.key_colors as usize
    }

    pub fn vocab(&self) -> Vec<usize> {
        let cells = self.max_width as usize * self.max_height as usize;
        let mut v = vec![self.max_width as usize, self.max_height as usize, 4, 1 + self.key_colors as usize];
        v.extend(std::iter::repeat(4).take(self.max_doors as usize));
        v.extend(std::iter::repeat(2 + cells).take(self.key_colors as usize));
        v
    }

    pub fn encode(&self, s: &GridEnvState) -> StateEncoding {
        let mut out = Vec::with_capacity(self.n_components());
        out.push(s.agent_pos.0 as u16);
        out.push(s.agent_pos.1 as u16);
        out.push(s.agent_dir.index() as u16);
        out.push(s.carrying.map_or(0, |c| c as u16 + 1));
        let mut doors: Vec<u16> = s
            .doors()
            .map(|(_, st)| match st {
                DoorState::Locked => 1,
                DoorState::Closed => 2,
                DoorState::Open => 3,
            })
            .collect();
        doors.resize(self.max_doors as usize, DOOR_ABSENT);
        out.extend(doors);
        for color in 0..self.key_colors {
            let code = if s.carrying == Some(color) {
                KEY_CARRIED
            } else if let Some(idx) = s.key_cell(color) {
                let (x, y) = (idx % s.width as usize, idx / s.width as usize);
                2 + (y * self.max_width as usize + x) as u16
            } else {
                KEY_ABSENT
            };
            out.push(code);
        }
        StateEncoding(out)
    }

    /// True when every component lies inside its vocabulary.
    pub fn is_valid(&self, enc: &StateEncoding) -> bool {
        let vocab = self.vocab();
        enc.0.len() == vocab.len() && enc.0.iter().zip(&vocab).all(|(&c, &v)| (c as usize) < v)
    }

    /// Rebuilds the simulator state from an encoding, using `layout` (the
    /// task's initial state) for walls, goal and door positions. The step
    /// counter and done flag are not part of the encoding and come back as
    /// `0` / `false`.
    pub fn decode(&self, layout: &GridEnvState, enc: &StateEncoding) -> Result<GridEnvState> {
        if !self.is_valid(enc) {
            return Err(Error::Vocabulary(format!("encoding {:?} outside schema", enc.0)));
        }
        let c = &enc.0;
        let mut s = layout.clone();
        s.step_count = 0;
        s.done = false;
        let (x, y) = (c[0] as u8, c[1] as u8);
        if x >= s.width || y >= s.height {
            return Err(Error::Vocabulary(format!("agent position ({x}, {y}) outside the grid")));
        }
        s.agent_pos = (x, y);
        s.agent_dir = Direction::from_index(c[2] as usize);
        s.carrying = (c[3] > 0).then(|| (c[3] - 1) as u8);
        let door_cells: Vec<usize> = layout.doors().map(|(i, _)| i).collect();
        for (k, &cell) in door_cells.iter().enumerate() {
            if let Cell::Door { color, .. } = s.cells[cell] {
                let state = match c[4 + k] {
                    1 => DoorState::Locked,
                    2 => DoorState::Closed,
                    3 => DoorState::Open,
                    _ => return Err(Error::Vocabulary(format!("door {k} marked absent"))),
                };
                s.cells[cell] = Cell::Door { color, state };
            }
        }
        for cell in s.cells.iter_mut() {
            if matches!(cell, Cell::Key(_)) {
                *cell = Cell::Floor;
            }
        }
        let key_base = 4 + self.max_doors as usize;
        for color in 0..self.key_colors {
            let code = c[key_base + color as usize];
            if code >= 2 {
                let idx = (code - 2) as usize;
                let (kx, ky) = (idx % self.max_width as usize, idx / self.max_width as usize);
                if kx >= s.width as usize || ky >= s.height as usize {
                    return Err(Error::Vocabulary(format!("key {color} outside the grid")));
                }
                s.set_cell(kx as u8, ky as u8, Cell::Key(color));
            }
        }
        Ok(s)
    }
}
