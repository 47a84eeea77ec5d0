use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{LayoutFamily, TaskSpec};
use super::state::{Cell, Direction, DoorState, GridEnvState};

/// Color of the single key and of the locked door it opens.
pub(crate) const KEY_COLOR: u8 = 0;
/// Color used for plain (unlocked) doors.
pub(crate) const PLAIN_DOOR_COLOR: u8 = 1;

pub(crate) struct Generated {
    pub initial: GridEnvState,
    pub start_cells: Vec<(u8, u8)>,
    pub random_dir: bool,
}

pub(crate) fn generate(spec: &TaskSpec, seed: u64) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let mut s = GridEnvState::walled(w, h);
    let mut start_cells;
    let mut random_dir = true;

    match spec.family {
        LayoutFamily::Empty => {
            s.set_cell(w - 2, h - 2, Cell::Goal);
            start_cells = vec![(1, 1)];
            random_dir = false;
        }
        LayoutFamily::FourRooms => {
            let (mx, my) = (w / 2, h / 2);
            for y in 1..h - 1 {
                s.set_cell(mx, y, Cell::Wall);
            }
            for x in 1..w - 1 {
                s.set_cell(x, my, Cell::Wall);
            }
            s.set_cell(mx, rng.gen_range(1..my), Cell::Floor);
            s.set_cell(mx, rng.gen_range(my + 1..h - 1), Cell::Floor);
            s.set_cell(rng.gen_range(1..mx), my, Cell::Floor);
            s.set_cell(rng.gen_range(mx + 1..w - 1), my, Cell::Floor);
            let floor = floor_cells(&s, |_, _| true);
            let goal = *floor.choose(&mut rng).expect("fourrooms has floor");
            s.set_cell(goal.0, goal.1, Cell::Goal);
            start_cells = floor_cells(&s, |_, _| true);
        }
        LayoutFamily::DoorKey => {
            let split = rng.gen_range(2..w - 2);
            for y in 1..h - 1 {
                s.set_cell(split, y, Cell::Wall);
            }
            let door_y = rng.gen_range(1..h - 1);
            s.set_cell(split, door_y, Cell::Door { color: KEY_COLOR, state: DoorState::Locked });
            s.set_cell(w - 2, h - 2, Cell::Goal);
            let left = floor_cells(&s, |x, _| x < split);
            let key = *left.choose(&mut rng).expect("left room has floor");
            s.set_cell(key.0, key.1, Cell::Key(KEY_COLOR));
            start_cells = floor_cells(&s, |x, _| x < split);
        }
        LayoutFamily::KeyCorridor => {
            let my = h / 2;
            for x in 1..w - 1 {
                s.set_cell(x, my - 1, Cell::Wall);
                s.set_cell(x, my + 1, Cell::Wall);
            }
            let top_door = rng.gen_range(1..w - 1);
            s.set_cell(top_door, my - 1, Cell::Door { color: PLAIN_DOOR_COLOR, state: DoorState::Closed });
            let bottom_door = rng.gen_range(1..w - 1);
            s.set_cell(bottom_door, my + 1, Cell::Door { color: KEY_COLOR, state: DoorState::Locked });
            let top = floor_cells(&s, |_, y| y < my - 1);
            let key = *top.choose(&mut rng).expect("top room has floor");
            s.set_cell(key.0, key.1, Cell::Key(KEY_COLOR));
            let bottom = floor_cells(&s, |_, y| y > my + 1);
            let goal = *bottom.choose(&mut rng).expect("bottom room has floor");
            s.set_cell(goal.0, goal.1, Cell::Goal);
            start_cells = floor_cells(&s, |_, y| y == my);
        }
        LayoutFamily::MultiRoom => {
            let rooms = ((w as usize - 1) / 4).clamp(2, 3);
            let walls: Vec<u8> = (1..rooms).map(|k| ((k * (w as usize - 1)) as f64 / rooms as f64).round() as u8).collect();
            for &wx in &walls {
                for y in 1..h - 1 {
                    s.set_cell(wx, y, Cell::Wall);
                }
                let door_y = rng.gen_range(1..h - 1);
                s.set_cell(wx, door_y, Cell::Door { color: PLAIN_DOOR_COLOR, state: DoorState::Closed });
            }
            let first_wall = walls[0];
            let last_wall = *walls.last().unwrap();
            let last_room = floor_cells(&s, |x, _| x > last_wall);
            let goal = *last_room.choose(&mut rng).expect("last room has floor");
            s.set_cell(goal.0, goal.1, Cell::Goal);
            start_cells = floor_cells(&s, |x, _| x < first_wall);
        }
    }

    if start_cells.len() > 1 || random_dir {
        start_cells.sort_unstable();
        s.agent_pos = *start_cells.choose(&mut rng).expect("start region non-empty");
        if random_dir {
            s.agent_dir = Direction::from_index(rng.gen_range(0..4));
        }
    } else {
        s.agent_pos = start_cells[0];
    }
    Generated { initial: s, start_cells, random_dir }
}

fn floor_cells(s: &GridEnvState, keep: impl Fn(u8, u8) -> bool) -> Vec<(u8, u8)> {
    let mut out = Vec::new();
    for y in 0..s.height {
        for x in 0..s.width {
            if s.cell(x, y) == Cell::Floor && keep(x, y) {
                out.push((x, y));
            }
        }
    }
    out
}
