use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayoutFamily {
    Empty,
    FourRooms,
    DoorKey,
    KeyCorridor,
    MultiRoom,
}

impl LayoutFamily {
    pub const ALL: [LayoutFamily; 5] = [
        LayoutFamily::Empty,
        LayoutFamily::FourRooms,
        LayoutFamily::DoorKey,
        LayoutFamily::KeyCorridor,
        LayoutFamily::MultiRoom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayoutFamily::Empty => "empty",
            LayoutFamily::FourRooms => "fourrooms",
            LayoutFamily::DoorKey => "doorkey",
            LayoutFamily::KeyCorridor => "keycorridor",
            LayoutFamily::MultiRoom => "multiroom",
        }
    }

    fn min_size(self) -> (u8, u8) {
        match self {
            LayoutFamily::Empty => (5, 5),
            LayoutFamily::FourRooms => (7, 7),
            LayoutFamily::DoorKey => (5, 5),
            LayoutFamily::KeyCorridor => (5, 7),
            LayoutFamily::MultiRoom => (7, 5),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum RewardMode {
    /// `1 - 0.9 * steps / max_steps` on the goal step, zero elsewhere.
    #[default]
    Sparse,
    /// Sparse reward plus a potential-based bonus on shortest-plan progress.
    Shaped,
    /// Exactly 1 on the goal step.
    Binary,
}

impl RewardMode {
    pub fn value_max(self) -> f64 {
        match self {
            RewardMode::Shaped => super::SHAPED_TARGET_RETURN,
            _ => 1.0,
        }
    }
}

/// One task of a suite. The compact text form used in config files is
/// `family-WxH[@seed][:max=N][:shaped|:binary]`, e.g. `doorkey-8x8@7:max=200`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    pub task_id: u16,
    pub family: LayoutFamily,
    pub width: u8,
    pub height: u8,
    pub max_steps: u32,
    pub reward_mode: RewardMode,
    pub seed: u64,
}

impl TaskSpec {
    /// A sparse-reward task with the conventional `4 * W * H` step budget.
    pub fn new(task_id: u16, family: LayoutFamily, width: u8, height: u8) -> Self {
        TaskSpec {
            task_id,
            family,
            width,
            height,
            max_steps: 4 * width as u32 * height as u32,
            reward_mode: RewardMode::Sparse,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_steps(mut self, max_steps: u32) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn with_reward(mut self, mode: RewardMode) -> Self {
        self.reward_mode = mode;
        self
    }

    pub fn with_task_id(mut self, task_id: u16) -> Self {
        self.task_id = task_id;
        self
    }

    pub fn area(&self) -> u32 {
        self.width as u32 * self.height as u32
    }

    pub fn validate(&self) -> Result<()> {
        let (min_w, min_h) = self.family.min_size();
        if self.width < min_w.max(5) || self.height < min_h.max(5) {
            return Err(Error::InvalidTask(format!(
                "{self}: {} needs at least {min_w}x{min_h}",
                self.family.name()
            )));
        }
        if self.max_steps < self.area() {
            return Err(Error::InvalidTask(format!(
                "{self}: max_steps {} is below the grid area {}",
                self.max_steps,
                self.area()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}x{}@{}", self.family.name(), self.width, self.height, self.seed)?;
        if self.max_steps != 4 * self.area() {
            write!(f, ":max={}", self.max_steps)?;
        }
        match self.reward_mode {
            RewardMode::Sparse => Ok(()),
            RewardMode::Shaped => f.write_str(":shaped"),
            RewardMode::Binary => f.write_str(":binary"),
        }
    }
}

impl FromStr for TaskSpec {
    type Err = Error;

    /// Parses the compact form; the task id defaults to 0 and is assigned by
    /// position when a suite is loaded.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidTask(format!("{s:?}: {why}"));
        let mut parts = s.trim().split(':');
        let head = parts.next().unwrap_or_default();
        let (head, seed) = match head.split_once('@') {
            Some((h, seed)) => (h, seed.parse::<u64>().map_err(|_| bad("bad seed"))?),
            None => (head, 0),
        };
        let (family, size) = head.rsplit_once('-').ok_or_else(|| bad("expected family-WxH"))?;
        let family = LayoutFamily::ALL
            .into_iter()
            .find(|f| f.name() == family.to_ascii_lowercase())
            .ok_or_else(|| bad("unknown layout family"))?;
        let (w, h) = size.split_once('x').ok_or_else(|| bad("expected WxH"))?;
        let width = w.parse::<u8>().map_err(|_| bad("bad width"))?;
        let height = h.parse::<u8>().map_err(|_| bad("bad height"))?;
        let mut spec = TaskSpec::new(0, family, width, height).with_seed(seed);
        for opt in parts {
            match opt {
                "shaped" => spec.reward_mode = RewardMode::Shaped,
                "binary" => spec.reward_mode = RewardMode::Binary,
                "sparse" => spec.reward_mode = RewardMode::Sparse,
                _ => match opt.strip_prefix("max=") {
                    Some(n) => spec.max_steps = n.parse().map_err(|_| bad("bad max"))?,
                    None => return Err(bad(&format!("unknown option {opt:?}"))),
                },
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for TaskSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The ten-task suite: two instances of each layout family at varied sizes
/// and seeds. Task ids follow list order.
pub fn default_suite() -> Vec<TaskSpec> {
    use LayoutFamily::*;
    [
        (Empty, 6, 6, 0),
        (Empty, 8, 8, 0),
        (FourRooms, 9, 9, 1),
        (FourRooms, 11, 11, 2),
        (DoorKey, 6, 6, 3),
        (DoorKey, 8, 8, 4),
        (KeyCorridor, 7, 7, 5),
        (KeyCorridor, 9, 7, 6),
        (MultiRoom, 9, 6, 7),
        (MultiRoom, 13, 7, 8),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (family, w, h, seed))| TaskSpec::new(i as u16, family, w, h).with_seed(seed))
    .collect()
}
