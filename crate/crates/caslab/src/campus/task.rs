use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CampusMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    /// The same start and goal room in every episode.
    Fixed { start: String, goal: String },
    /// A fresh pair of distinct rooms every episode.
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub start: String,
    pub goal: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("the map has {0} rooms; a task needs two")]
    TooFewRooms(usize),
    #[error("no room named {0:?}")]
    UnknownRoom(String),
    #[error("start and goal are both {0:?}")]
    SameRoom(String),
}

pub fn sample_task<R: Rng>(map: &CampusMap, mode: &TaskMode, rng: &mut R) -> Result<Task, TaskError> {
    if map.rooms.len() < 2 {
        return Err(TaskError::TooFewRooms(map.rooms.len()));
    }
    match mode {
        TaskMode::Fixed { start, goal } => {
            for name in [start, goal] {
                if map.room(name).is_none() {
                    return Err(TaskError::UnknownRoom(name.clone()));
                }
            }
            if start == goal {
                return Err(TaskError::SameRoom(start.clone()));
            }
            Ok(Task { start: start.clone(), goal: goal.clone() })
        }
        TaskMode::Random => {
            let pick = index::sample(rng, map.rooms.len(), 2);
            Ok(Task { start: map.rooms[pick.index(0)].0.clone(), goal: map.rooms[pick.index(1)].0.clone() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campus::parse_map;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ten_rooms() -> CampusMap {
        let mut text = String::from("RRRRRRRRRR\n");
        for i in 0..10 {
            text.push_str(&format!("room {i} 0 r{i}\n"));
        }
        parse_map(&text).unwrap()
    }

    #[test]
    fn fixed_mode_repeats() {
        let m = ten_rooms();
        let mode = TaskMode::Fixed { start: "r1".into(), goal: "r7".into() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = sample_task(&m, &mode, &mut rng).unwrap();
        for _ in 0..100 {
            assert_eq!(sample_task(&m, &mode, &mut rng).unwrap(), first);
        }
    }

    #[test]
    fn random_starts_are_uniform() {
        let m = ten_rooms();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 10];
        for _ in 0..1000 {
            let t = sample_task(&m, &TaskMode::Random, &mut rng).unwrap();
            assert_ne!(t.start, t.goal);
            counts[t.start[1..].parse::<usize>().unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1000.0 - 0.1).abs() <= 0.03, "{counts:?}");
        }
    }

    #[test]
    fn one_room_is_an_error() {
        let m = parse_map("R.\nroom 0 0 only\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_task(&m, &TaskMode::Random, &mut rng), Err(TaskError::TooFewRooms(1)));
    }
}
