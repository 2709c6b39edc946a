//! Simulated campus delivery world.
//!
//! A robot carries packages between rooms on a grid. Doors and crosswalks
//! are obstacles: the robot may only pass them under some level of human
//! involvement, and whether the human approves depends on features of the
//! obstacle, only some of which the robot observes at first.

mod domain;
mod map;
mod oracle;
mod task;

pub use self::domain::{build_domain, kind_of, CampusDomain, DomainError, DomainState, TRAFFIC_CHAIN};
pub use self::map::{load_map, parse_map, CampusMap, Cell, Crosswalk, Door, MapError, MapWarning, Pos};
pub use self::oracle::{Condition, OracleAuthority, OracleError, RuleTable};
pub use self::task::{sample_task, Task, TaskError, TaskMode};

use crate::feedback::{Feature, FeatureCatalog};

/// Text of the campus map shipped with the crate.
pub const BUNDLED_MAP: &str = include_str!("../../assets/campus.map");

pub fn bundled_map() -> CampusMap {
    parse_map(BUNDLED_MAP).expect("bundled map parses")
}

pub const TRAFFIC: usize = 0;
pub const VISIBILITY: usize = 1;
pub const STREET: usize = 2;
pub const OPEN: usize = 3;
pub const SIZE: usize = 4;
pub const COLOR: usize = 5;
pub const MECHANISM: usize = 6;

/// Features that describe a crosswalk, in catalog order.
pub const CROSSWALK_FEATURES: [usize; 3] = [TRAFFIC, VISIBILITY, STREET];
/// Features that describe a door, in catalog order.
pub const DOOR_FEATURES: [usize; 4] = [OPEN, SIZE, COLOR, MECHANISM];

/// Every campus feature; traffic and the door's open flag start active.
pub fn campus_catalog() -> FeatureCatalog {
    FeatureCatalog::new(
        vec![
            Feature::new("traffic", &["none", "light", "heavy"]),
            Feature::new("visibility", &["clear", "obstructed"]),
            Feature::new("street", &["one-way", "two-way"]),
            Feature::new("open", &["open", "closed"]),
            Feature::new("size", &["light", "medium", "heavy"]),
            Feature::new("color", &["red", "blue", "brown", "gray"]),
            Feature::new("mechanism", &["push", "pull"]),
        ],
        [TRAFFIC, OPEN],
    )
    .expect("campus catalog is well formed")
}

/// Compass direction; north is towards row 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dir {
    N,
    S,
    E,
    W,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::N, Dir::S, Dir::E, Dir::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Dir {
        match self {
            Dir::N => Dir::S,
            Dir::S => Dir::N,
            Dir::E => Dir::W,
            Dir::W => Dir::E,
        }
    }

    pub fn letter(self) -> char {
        ['n', 's', 'e', 'w'][self.index()]
    }

    /// Neighbouring position, if it stays on a `width` x `height` grid.
    pub fn step(self, (x, y): (usize, usize), width: usize, height: usize) -> Option<(usize, usize)> {
        let (nx, ny) = match self {
            Dir::N => (Some(x), y.checked_sub(1)),
            Dir::S => (Some(x), Some(y + 1)),
            Dir::E => (Some(x + 1), Some(y)),
            Dir::W => (x.checked_sub(1), Some(y)),
        };
        match (nx, ny) {
            (Some(nx), Some(ny)) if nx < width && ny < height => Some((nx, ny)),
            _ => None,
        }
    }
}

/// What a domain action does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionKind {
    Move,
    OpenDoor,
    Cross,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Move => "move",
            ActionKind::OpenDoor => "open-door",
            ActionKind::Cross => "cross",
        }
    }
}

/// Domain actions are `kind * 4 + direction`.
pub const NUM_ACTIONS: usize = 12;

pub fn action_id(kind: ActionKind, dir: Dir) -> usize {
    kind as usize * 4 + dir.index()
}

pub fn split_action(a: usize) -> (ActionKind, Dir) {
    let kind = [ActionKind::Move, ActionKind::OpenDoor, ActionKind::Cross][a / 4];
    (kind, Dir::ALL[a % 4])
}

pub fn action_name(a: usize) -> String {
    let (kind, dir) = split_action(a);
    format!("{}-{}", kind.name(), dir.letter())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_map_has_the_intended_structure() {
        let m = bundled_map();
        assert!(m.crosswalks.len() >= 2);
        assert!(m.doors.len() >= 6);
        assert_eq!(m.warnings(), vec![]);
        assert_eq!(parse_map(BUNDLED_MAP).unwrap(), m);
    }

    #[test]
    fn every_room_pair_is_connected() {
        let m = bundled_map();
        let names = m.room_names();
        for goal in &names[1..] {
            let task = Task { start: names[0].to_string(), goal: goal.to_string() };
            build_domain(&m, &campus_catalog(), &task).unwrap();
        }
    }

    #[test]
    fn action_ids_round_trip() {
        for a in 0..NUM_ACTIONS {
            let (kind, dir) = split_action(a);
            assert_eq!(action_id(kind, dir), a);
        }
        assert_eq!(action_name(action_id(ActionKind::OpenDoor, Dir::S)), "open-door-s");
    }
}
