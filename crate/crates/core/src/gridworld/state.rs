use std::fmt;

use serde::{Deserialize, Serialize};

/// The fixed 7-action vocabulary shared by datasets, models and planner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum ActionId {
    Left = 0,
    Right = 1,
    Forward = 2,
    Pickup = 3,
    Drop = 4,
    Toggle = 5,
    Done = 6,
}

impl ActionId {
    pub const COUNT: usize = 7;
    pub const ALL: [ActionId; 7] = [
        ActionId::Left,
        ActionId::Right,
        ActionId::Forward,
        ActionId::Pickup,
        ActionId::Drop,
        ActionId::Toggle,
        ActionId::Done,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionId> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ActionId::Left => "left",
            ActionId::Right => "right",
            ActionId::Forward => "forward",
            ActionId::Pickup => "pickup",
            ActionId::Drop => "drop",
            ActionId::Toggle => "toggle",
            ActionId::Done => "done",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Right = 0,
    Down = 1,
    Left = 2,
    Up = 3,
}

impl Direction {
    pub fn from_index(i: usize) -> Direction {
        match i % 4 {
            0 => Direction::Right,
            1 => Direction::Down,
            2 => Direction::Left,
            _ => Direction::Up,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Right => (1, 0),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
            Direction::Up => (0, -1),
        }
    }

    pub fn turn_left(self) -> Direction {
        Direction::from_index(self.index() + 3)
    }

    pub fn turn_right(self) -> Direction {
        Direction::from_index(self.index() + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DoorState {
    Open,
    Closed,
    Locked,
}

/// Contents of one grid cell. Keys and doors carry a color; a locked door
/// opens only for the key of its color.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Floor,
    Wall,
    Door { color: u8, state: DoorState },
    Key(u8),
    Goal,
}

/// Full simulator state of one task instance.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GridEnvState {
    pub width: u8,
    pub height: u8,
    /// Row-major, `width * height` cells.
    pub cells: Vec<Cell>,
    pub agent_pos: (u8, u8),
    pub agent_dir: Direction,
    /// Color of the carried key, if any.
    pub carrying: Option<u8>,
    pub step_count: u32,
    pub done: bool,
}

impl GridEnvState {
    pub fn walled(width: u8, height: u8) -> Self {
        let mut cells = vec![Cell::Floor; width as usize * height as usize];
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x == width - 1 || y == height - 1 {
                    cells[y as usize * width as usize + x as usize] = Cell::Wall;
                }
            }
        }
        GridEnvState {
            width,
            height,
            cells,
            agent_pos: (1, 1),
            agent_dir: Direction::Right,
            carrying: None,
            step_count: 0,
            done: false,
        }
    }

    pub fn cell(&self, x: u8, y: u8) -> Cell {
        self.cells[y as usize * self.width as usize + x as usize]
    }

    pub fn set_cell(&mut self, x: u8, y: u8, cell: Cell) {
        self.cells[y as usize * self.width as usize + x as usize] = cell;
    }

    /// First cell (row-major) satisfying `pred`.
    pub fn find(&self, pred: impl Fn(Cell) -> bool) -> Option<(u8, u8)> {
        self.cells.iter().position(|&c| pred(c)).map(|i| {
            ((i % self.width as usize) as u8, (i / self.width as usize) as u8)
        })
    }

    pub fn front(&self) -> Option<(u8, u8)> {
        let (dx, dy) = self.agent_dir.delta();
        let x = self.agent_pos.0 as i32 + dx;
        let y = self.agent_pos.1 as i32 + dy;
        (x >= 0 && y >= 0 && x < self.width as i32 && y < self.height as i32).then_some((x as u8, y as u8))
    }

    /// Applies the action's effect on the world (no step accounting).
    /// Returns true when the agent moved onto the goal.
    pub(crate) fn apply(&mut self, action: ActionId) -> bool {
        match action {
            ActionId::Left => self.agent_dir = self.agent_dir.turn_left(),
            ActionId::Right => self.agent_dir = self.agent_dir.turn_right(),
            ActionId::Forward => {
                if let Some((x, y)) = self.front() {
                    match self.cell(x, y) {
                        Cell::Floor | Cell::Door { state: DoorState::Open, .. } => self.agent_pos = (x, y),
                        Cell::Goal => {
                            self.agent_pos = (x, y);
                            return true;
                        }
                        _ => {}
                    }
                }
            }
            ActionId::Pickup => {
                if let (None, Some((x, y))) = (self.carrying, self.front()) {
                    if let Cell::Key(color) = self.cell(x, y) {
                        self.carrying = Some(color);
                        self.set_cell(x, y, Cell::Floor);
                    }
                }
            }
            ActionId::Drop => {
                if let (Some(color), Some((x, y))) = (self.carrying, self.front()) {
                    if self.cell(x, y) == Cell::Floor {
                        self.set_cell(x, y, Cell::Key(color));
                        self.carrying = None;
                    }
                }
            }
            ActionId::Toggle => {
                if let Some((x, y)) = self.front() {
                    if let Cell::Door { color, state } = self.cell(x, y) {
                        let next = match state {
                            DoorState::Open => DoorState::Closed,
                            DoorState::Closed => DoorState::Open,
                            DoorState::Locked if self.carrying == Some(color) => DoorState::Open,
                            DoorState::Locked => DoorState::Locked,
                        };
                        self.set_cell(x, y, Cell::Door { color, state: next });
                    }
                }
            }
            ActionId::Done => {}
        }
        false
    }

    /// Doors in row-major order; door positions never change within a task.
    pub fn doors(&self) -> impl Iterator<Item = (usize, DoorState)> + '_ {
        self.cells.iter().enumerate().filter_map(|(i, c)| match c {
            Cell::Door { state, .. } => Some((i, *state)),
            _ => None,
        })
    }

    /// Cell index of the key with `color`, if it lies on the grid.
    pub fn key_cell(&self, color: u8) -> Option<usize> {
        self.cells.iter().position(|&c| c == Cell::Key(color))
    }

    /// The state minus its step counter; two states with equal keys behave
    /// identically under every action sequence (ignoring the step budget).
    pub fn dynamic_key(&self) -> (u8, u8, Direction, Option<u8>, Vec<Cell>) {
        (self.agent_pos.0, self.agent_pos.1, self.agent_dir, self.carrying, self.cells.clone())
    }
}

impl fmt::Display for GridEnvState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.height {
            for x in 0..self.width {
                let ch = if (x, y) == self.agent_pos {
                    match self.agent_dir {
                        Direction::Right => '>',
                        Direction::Down => 'v',
                        Direction::Left => '<',
                        Direction::Up => '^',
                    }
                } else {
                    match self.cell(x, y) {
                        Cell::Floor => '.',
                        Cell::Wall => '#',
                        Cell::Door { state: DoorState::Open, .. } => '/',
                        Cell::Door { state: DoorState::Closed, .. } => 'D',
                        Cell::Door { state: DoorState::Locked, .. } => 'L',
                        Cell::Key(_) => 'k',
                        Cell::Goal => 'G',
                    }
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
