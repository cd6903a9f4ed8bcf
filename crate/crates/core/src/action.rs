use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of intrinsic actions: no-op, stop and four moves.
pub const K_INTR: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    /// Tie-break order used by the scripted policies.
    pub const ALL: [Direction; 4] = [Direction::North, Direction::East, Direction::South, Direction::West];

    /// Grid delta; north is towards `y = 0`.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::North => (0, -1),
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
        }
    }
}

/// Flat action index: `< K_INTR` is intrinsic, `K_INTR + j` targets unit `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionKind {
    NoOp,
    Stop,
    Move(Direction),
    /// Attack (enemy receiver) or heal (ally receiver) unit `j`.
    Target(usize),
}

impl ActionId {
    pub const NOOP: ActionId = ActionId(0);
    pub const STOP: ActionId = ActionId(1);

    pub fn move_to(d: Direction) -> Self {
        ActionId(2 + d as usize)
    }

    pub fn target(j: usize) -> Self {
        ActionId(K_INTR + j)
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn is_interactive(self) -> bool {
        self.0 >= K_INTR
    }

    pub fn kind(self) -> ActionKind {
        match self.0 {
            0 => ActionKind::NoOp,
            1 => ActionKind::Stop,
            2..=5 => ActionKind::Move(Direction::ALL[self.0 - 2]),
            j => ActionKind::Target(j - K_INTR),
        }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            ActionKind::NoOp => write!(f, "no-op"),
            ActionKind::Stop => write!(f, "stop"),
            ActionKind::Move(d) => write!(f, "move {:?}", d),
            ActionKind::Target(j) => write!(f, "target {}", j),
        }
    }
}
