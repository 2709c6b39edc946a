use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use super::map::Pos;
use super::{
    action_id, action_name, split_action, ActionKind, CampusMap, Cell, Dir, OracleAuthority, Task, NUM_ACTIONS, OPEN,
    TRAFFIC,
};
use crate::feedback::{Assignment, FeatureCatalog, ValueId};
use crate::ssp::{ActionId, Choice, Ssp, StateId, Successors};

/// Traffic moves one step up or down with probability 0.2 each, clamped at the ends.
pub const TRAFFIC_CHAIN: [[f64; 3]; 3] = [[0.8, 0.2, 0.0], [0.2, 0.6, 0.2], [0.0, 0.2, 0.8]];

/// Long-run traffic distribution; the chain is doubly stochastic, so it is uniform.
const TRAFFIC_STATIONARY: [f64; 3] = [1.0 / 3.0; 3];

/// Location plus the obstacle's features, restricted to the active ones.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainState {
    pub cell: Pos,
    /// Indexed by the complete catalog; `None` for inactive or inapplicable features.
    pub features: Assignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("no room named {0:?}")]
    UnknownRoom(String),
    #[error("goal room {0:?} cannot be reached from the start")]
    GoalUnreachable(String),
}

/// Domain model of the campus under one active feature space and task.
#[derive(Debug, Clone)]
pub struct CampusDomain {
    pub ssp: Ssp,
    pub states: Vec<DomainState>,
    pub active: Vec<usize>,
    kinds: Vec<Option<ActionKind>>,
    index: HashMap<DomainState, StateId>,
}

impl CampusDomain {
    /// Projection of a complete assignment onto the active features.
    pub fn project(&self, features: &Assignment) -> Assignment {
        features.iter().enumerate().map(|(i, v)| if self.active.contains(&i) { *v } else { None }).collect()
    }

    /// Model state for a location and its complete features.
    pub fn state_of(&self, cell: Pos, features: &Assignment) -> Option<StateId> {
        self.index.get(&DomainState { cell, features: self.project(features) }).copied()
    }

    /// Obstacle kind of the cell behind `s`, if any.
    pub fn obstacle(&self, s: StateId) -> Option<ActionKind> {
        self.kinds[s]
    }

    /// Where the human takes the robot: through the obstacle, or nowhere for ordinary moves.
    pub fn takeover(&self, s: StateId, a: ActionId) -> Successors {
        match (self.kinds[s], self.ssp.choice(s, a)) {
            (Some(_), Some(c)) => c.successors.clone(),
            _ => vec![(s, 1.0)],
        }
    }

    /// True unsupervised outcome: obstacles the human would not leave alone stop the robot.
    /// Only meaningful when the domain was built over the complete feature space.
    pub fn unsupervised(&self, oracle: &OracleAuthority, s: StateId, a: ActionId) -> Successors {
        let Some(c) = self.ssp.choice(s, a) else { return vec![(s, 1.0)] };
        match self.kinds[s] {
            Some(kind) if !oracle.passes_unsupervised(kind, &self.states[s].features) => vec![(s, 1.0)],
            _ => c.successors.clone(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }
}

fn name(state: &DomainState, catalog: &FeatureCatalog) -> String {
    let mut s = format!("{},{}", state.cell.0, state.cell.1);
    for (i, v) in state.features.iter().enumerate() {
        if let Some(v) = v {
            let f = catalog.feature(i);
            let _ = write!(s, " {}={}", f.name, f.values[*v as usize]);
        }
    }
    s
}

/// Model states on entering `cell`, with their probabilities.
fn entry(map: &CampusMap, active: &[usize], cell: Pos, width: usize) -> Vec<(DomainState, f64)> {
    let mut base = map.static_features(cell);
    for (i, v) in base.iter_mut().enumerate() {
        if !active.contains(&i) {
            *v = None;
        }
    }
    base.resize(width, None);
    let mut out = vec![(DomainState { cell, features: base }, 1.0)];
    let dynamic: Option<(usize, Vec<f64>)> = match map.cell(cell) {
        Cell::Crosswalk if active.contains(&TRAFFIC) => Some((TRAFFIC, TRAFFIC_STATIONARY.to_vec())),
        Cell::Door if active.contains(&OPEN) => Some((OPEN, vec![0.5, 0.5])),
        _ => None,
    };
    if let Some((f, probs)) = dynamic {
        out = probs
            .iter()
            .enumerate()
            .map(|(v, &p)| {
                let mut st = out[0].0.clone();
                st.features[f] = Some(v as ValueId);
                (st, p)
            })
            .collect();
    }
    out
}

/// Reachable (cell, active features) states for a task, with moves on free
/// cells and obstacle actions on doors and crosswalks. The goal absorbs.
pub fn build_domain(map: &CampusMap, catalog: &FeatureCatalog, task: &Task) -> Result<CampusDomain, DomainError> {
    let room = |n: &str| map.room(n).ok_or_else(|| DomainError::UnknownRoom(n.to_string()));
    let (start, goal) = (room(&task.start)?, room(&task.goal)?);
    let active = catalog.active();
    let width = catalog.len();

    let mut states: Vec<DomainState> = Vec::new();
    let mut index: HashMap<DomainState, StateId> = HashMap::new();
    let mut queue = VecDeque::new();
    let mut intern = |st: DomainState, states: &mut Vec<DomainState>, queue: &mut VecDeque<StateId>| -> StateId {
        *index.entry(st.clone()).or_insert_with(|| {
            states.push(st);
            queue.push_back(states.len() - 1);
            states.len() - 1
        })
    };
    let start_state = entry(map, &active, start, width).remove(0).0;
    intern(start_state, &mut states, &mut queue);

    let mut choices: Vec<Vec<Choice>> = Vec::new();
    while let Some(s) = queue.pop_front() {
        let cell = states[s].cell;
        let mut row = Vec::new();
        if cell == goal {
            row.push(Choice { action: 0, cost: 0.0, successors: vec![(s, 1.0)] });
        } else {
            let kind = match map.cell(cell) {
                Cell::Door => ActionKind::OpenDoor,
                Cell::Crosswalk => ActionKind::Cross,
                _ => ActionKind::Move,
            };
            for dir in Dir::ALL {
                let Some(next) = map.neighbour(cell, dir).filter(|&n| map.cell(n).traversable()) else { continue };
                let successors = entry(map, &active, next, width)
                    .into_iter()
                    .map(|(st, p)| (intern(st, &mut states, &mut queue), p))
                    .collect();
                row.push(Choice { action: action_id(kind, dir), cost: 1.0, successors });
            }
        }
        row.sort_by_key(|c| c.action);
        if choices.len() <= s {
            choices.resize(s + 1, Vec::new());
        }
        choices[s] = row;
    }

    let goal_state =
        states.iter().position(|st| st.cell == goal).ok_or_else(|| DomainError::GoalUnreachable(task.goal.clone()))?;
    let kinds = states
        .iter()
        .map(|st| match map.cell(st.cell) {
            Cell::Door => Some(ActionKind::OpenDoor),
            Cell::Crosswalk => Some(ActionKind::Cross),
            _ => None,
        })
        .collect();
    let ssp = Ssp {
        state_names: states.iter().map(|st| name(st, catalog)).collect(),
        action_names: (0..NUM_ACTIONS).map(action_name).collect(),
        choices,
        start: 0,
        goal: goal_state,
    };
    Ok(CampusDomain { ssp, states, active, kinds, index })
}

/// Kind of a domain action id.
pub fn kind_of(a: ActionId) -> ActionKind {
    split_action(a).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campus::{campus_catalog, parse_map, VISIBILITY};
    use crate::ssp::{solve, SolveOptions};

    const LINE: &str = "\
R.C.D.R
crosswalk 2 0 clear one-way none
door 4 0 light red push closed
room 0 0 a
room 6 0 b
";

    fn task() -> Task {
        Task { start: "a".into(), goal: "b".into() }
    }

    #[test]
    fn traffic_chain_is_stochastic_with_uniform_stationary() {
        for row in TRAFFIC_CHAIN {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for j in 0..3 {
            let mass: f64 = (0..3).map(|i| TRAFFIC_STATIONARY[i] * TRAFFIC_CHAIN[i][j]).sum();
            assert!((mass - TRAFFIC_STATIONARY[j]).abs() < 1e-12);
        }
        // Irreducible: every value reaches every other within two steps.
        for from in &TRAFFIC_CHAIN {
            let two: Vec<f64> = (0..3).map(|k| (0..3).map(|j| from[j] * TRAFFIC_CHAIN[j][k]).sum()).collect();
            assert!(two.iter().all(|&p| p > 0.0));
        }
    }

    fn crosswalk_states(d: &CampusDomain) -> usize {
        d.states.iter().filter(|s| s.cell == (2, 0)).count()
    }

    #[test]
    fn initial_space_splits_crosswalk_by_traffic() {
        let m = parse_map(LINE).unwrap();
        let d = build_domain(&m, &campus_catalog(), &task()).unwrap();
        assert_eq!(crosswalk_states(&d), 3);
        assert!(d.ssp.validate().is_empty());
        // 5 plain cells, 3 crosswalk variants, 2 door variants.
        assert_eq!(d.num_states(), 10);
        let sol = solve(&d.ssp, SolveOptions::default()).unwrap();
        assert!((sol.values[d.ssp.start] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn adding_visibility_gives_six_crosswalk_classes() {
        let m = parse_map(LINE).unwrap();
        let one = build_domain(&m, &campus_catalog().augmented(&[VISIBILITY]), &task()).unwrap();
        assert_eq!(crosswalk_states(&one), 3);
        let mut with_obstructed =
            LINE.replace("R.C.D.R", "R.C.C.D.R").replace("door 4", "door 6").replace("room 6", "room 8");
        with_obstructed.push_str("crosswalk 4 0 obstructed one-way none\n");
        let m = parse_map(&with_obstructed).unwrap();
        let d = build_domain(&m, &campus_catalog().augmented(&[VISIBILITY]), &task()).unwrap();
        let classes: std::collections::BTreeSet<_> =
            d.states.iter().filter(|s| m.cell(s.cell) == Cell::Crosswalk).map(|s| s.features.clone()).collect();
        assert_eq!(classes.len(), 6);
    }

    #[test]
    fn empty_active_space_has_one_state_per_cell() {
        let m = parse_map(LINE).unwrap();
        let cat = FeatureCatalog::new(campus_catalog().complete().to_vec(), []).unwrap();
        let d = build_domain(&m, &cat, &task()).unwrap();
        assert_eq!(d.num_states(), 7);
    }

    #[test]
    fn obstacle_cells_offer_only_obstacle_actions() {
        let m = parse_map(LINE).unwrap();
        let d = build_domain(&m, &campus_catalog(), &task()).unwrap();
        for (s, st) in d.states.iter().enumerate() {
            let kinds: Vec<_> = d.ssp.choices[s].iter().map(|c| kind_of(c.action)).collect();
            match m.cell(st.cell) {
                Cell::Door => assert!(kinds.iter().all(|&k| k == ActionKind::OpenDoor)),
                Cell::Crosswalk => assert!(kinds.iter().all(|&k| k == ActionKind::Cross)),
                _ if s != d.ssp.goal => assert!(kinds.iter().all(|&k| k == ActionKind::Move)),
                _ => {}
            }
        }
    }

    #[test]
    fn takeover_passes_obstacles_and_leaves_free_cells() {
        let m = parse_map(LINE).unwrap();
        let d = build_domain(&m, &campus_catalog(), &task()).unwrap();
        let cw = d.states.iter().position(|s| s.cell == (2, 0)).unwrap();
        let east = action_id(ActionKind::Cross, Dir::E);
        let after = d.takeover(cw, east);
        assert_eq!(d.states[after[0].0].cell, (3, 0));
        assert_eq!(d.takeover(0, action_id(ActionKind::Move, Dir::E)), vec![(0, 1.0)]);
    }

    #[test]
    fn unreachable_goal_is_an_error() {
        let m = parse_map("R#R\nroom 0 0 a\nroom 2 0 b\n").unwrap();
        assert_eq!(build_domain(&m, &campus_catalog(), &task()).unwrap_err(), DomainError::GoalUnreachable("b".into()));
    }
}
