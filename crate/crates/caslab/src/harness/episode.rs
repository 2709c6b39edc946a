use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::HarnessError;
use crate::campus::{
    split_action, ActionKind, CampusDomain, CampusMap, Cell, OracleAuthority, Pos, Task, OPEN, TRAFFIC, TRAFFIC_CHAIN,
};
use crate::cas::{Cas, CostWeights, HumanCost, Level, SwitchCost};
use crate::feedback::{Assignment, FeatureCatalog, FeedbackDataset, FeedbackRecord, ValueId};
use crate::ssp::ActionId;

/// Dynamic state of the campus: traffic at crosswalks and which doors stand open.
#[derive(Debug, Clone)]
pub struct World<'m> {
    map: &'m CampusMap,
    obstacles: Vec<Pos>,
    dynamic: Vec<ValueId>,
}

impl<'m> World<'m> {
    pub fn new(map: &'m CampusMap) -> Self {
        Self { map, obstacles: map.obstacles(), dynamic: map.initial_dynamics() }
    }

    /// Complete feature assignment at a cell; empty away from obstacles.
    pub fn features(&self, cell: Pos) -> Assignment {
        let mut a = self.map.static_features(cell);
        if let Some(i) = self.obstacles.iter().position(|&p| p == cell) {
            let f = if self.map.cell(cell) == Cell::Door { OPEN } else { TRAFFIC };
            a[f] = Some(self.dynamic[i]);
        }
        a
    }

    /// One step of the traffic chain at every crosswalk.
    pub fn step_traffic<R: Rng>(&mut self, rng: &mut R) {
        for (i, &p) in self.obstacles.iter().enumerate() {
            if self.map.cell(p) == Cell::Crosswalk {
                let row = TRAFFIC_CHAIN[self.dynamic[i] as usize];
                let next = WeightedIndex::new(row).expect("traffic rows are distributions");
                self.dynamic[i] = next.sample(rng) as ValueId;
            }
        }
    }

    /// Each door is independently open or closed with equal probability.
    pub fn resample_doors<R: Rng>(&mut self, rng: &mut R) {
        for (i, &p) in self.obstacles.iter().enumerate() {
            if self.map.cell(p) == Cell::Door {
                self.dynamic[i] = ValueId::from(rng.gen_bool(0.5));
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CostModel {
    pub weights: CostWeights,
    pub mu: SwitchCost,
    pub rho: HumanCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub incurred: f64,
    pub signals: usize,
    pub steps: usize,
    pub truncated: bool,
    /// Obstacle situations the robot decided in: cell, complete features, prior level.
    pub visited: Vec<(Pos, Assignment, Level)>,
}

/// Everything that stays fixed during one episode.
pub struct EpisodeSetup<'a> {
    pub map: &'a CampusMap,
    pub task: &'a Task,
    pub domain: &'a CampusDomain,
    /// Greedy product-model policy.
    pub policy: &'a [ActionId],
    pub oracle: &'a OracleAuthority,
    pub costs: CostModel,
    pub catalog: &'a FeatureCatalog,
    pub episode: usize,
    pub horizon: usize,
}

/// Follows the policy from the start room until the goal room or the horizon.
///
/// At l1 the human approves or refuses; at l2 the action completes either
/// way, by the robot or by the human's override; at l0 the human does it.
/// Acting alone at an obstacle only works where the human would not intervene.
pub fn run_episode<R: Rng>(
    setup: &EpisodeSetup<'_>,
    world: &mut World<'_>,
    dataset: &mut FeedbackDataset,
    rng: &mut R,
) -> Result<EpisodeResult, HarnessError> {
    let map = setup.map;
    let room = |name: &str| map.room(name).ok_or_else(|| HarnessError::Io(format!("no room {name:?}")));
    let (mut cell, goal) = (room(&setup.task.start)?, room(&setup.task.goal)?);
    let mut prior = Level::L3;
    let mut out = EpisodeResult { incurred: 0.0, signals: 0, steps: 0, truncated: false, visited: Vec::new() };

    while cell != goal {
        if out.steps == setup.horizon {
            out.truncated = true;
            break;
        }
        let features = world.features(cell);
        let s = setup
            .domain
            .state_of(cell, &features)
            .ok_or_else(|| HarnessError::Io(format!("cell {cell:?} is missing from the domain model")))?;
        let (a, level) = Cas::split_action(setup.policy[Cas::state_id(s, prior)]);
        let choice = setup
            .domain
            .ssp
            .choice(s, a)
            .ok_or_else(|| HarnessError::Io(format!("policy picked unavailable action {a} at {cell:?}")))?;
        let (kind, dir) = split_action(a);
        let next = map.neighbour(cell, dir).expect("available actions stay on the grid");
        if map.cell(cell).is_obstacle() {
            out.visited.push((cell, features.clone(), prior));
        }

        let mut signal = None;
        if level.has_feedback() {
            let sig = setup.oracle.feedback(kind, &features, level, rng)?;
            dataset.record(
                setup.catalog,
                FeedbackRecord {
                    episode: setup.episode,
                    location: format!("{}:{}", cell.0, cell.1),
                    features: features.clone(),
                    action: kind.name().to_string(),
                    prior_level: prior,
                    level,
                    signal: sig,
                },
            )?;
            out.signals += 1;
            signal = Some(sig);
        }
        let moves = match level {
            Level::L0 | Level::L2 => true,
            Level::L1 => signal == Some(crate::cas::Signal::Approval),
            Level::L3 => kind == ActionKind::Move || setup.oracle.passes_unsupervised(kind, &features),
        };
        let c = setup.costs;
        out.incurred += c.weights.combine(choice.cost, c.mu.mu(prior, level), c.rho.realized(level, signal));
        if moves {
            cell = next;
        }
        prior = level;
        out.steps += 1;
        world.step_traffic(rng);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campus::{build_domain, campus_catalog, parse_map};
    use crate::cas::{AutonomyModel, CasBuilder, HumanFeedbackModel, LevelSet, Signal, SignalDist};
    use crate::ssp::SolveOptions;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const PLAIN: &str = "R...R\nroom 0 0 a\nroom 4 0 b\n";
    const CROSSING: &str = "R.C.R\ncrosswalk 2 0 clear one-way heavy\nroom 0 0 a\nroom 4 0 b\n";
    const DOOR: &str = "R.D.R\ndoor 2 0 heavy red pull closed\nroom 0 0 a\nroom 4 0 b\n";

    fn costs() -> CostModel {
        CostModel { weights: CostWeights::default(), mu: SwitchCost::default(), rho: HumanCost::default() }
    }

    /// Solves the product model with the given levels at obstacles and a fixed feedback guess.
    fn plan(map: &CampusMap, levels: LevelSet, guess: SignalDist) -> (CampusDomain, Vec<ActionId>) {
        let task = Task { start: "a".into(), goal: "b".into() };
        let domain = build_domain(map, &campus_catalog(), &task).unwrap();
        let autonomy = AutonomyModel::new(&domain.ssp, SwitchCost::default(), |s, _| {
            if domain.obstacle(s).is_some() {
                levels
            } else {
                LevelSet::single(Level::L3)
            }
        });
        let profile = move |_s, _p, _a, level: Level| match level {
            l if guess.respects(l) => guess,
            l if l.has_feedback() => SignalDist::uniform_at(l),
            _ => SignalDist::certain(Signal::NoSignal),
        };
        let tau = |s, a| domain.takeover(s, a);
        let human = HumanFeedbackModel { profile: &profile, rho: HumanCost::default(), tau: &tau };
        let cas = CasBuilder::new(&domain.ssp, &autonomy, human).build().unwrap();
        let sol = crate::cas::solve_cas(&cas, SolveOptions::default()).unwrap();
        (domain, sol.policy)
    }

    fn run(map: &CampusMap, domain: &CampusDomain, policy: &[ActionId], seed: u64) -> (EpisodeResult, FeedbackDataset) {
        let task = Task { start: "a".into(), goal: "b".into() };
        let oracle = OracleAuthority::new(Default::default(), 0.0).unwrap();
        let catalog = campus_catalog();
        let setup = EpisodeSetup {
            map,
            task: &task,
            domain,
            policy,
            oracle: &oracle,
            costs: costs(),
            catalog: &catalog,
            episode: 0,
            horizon: 500,
        };
        let mut world = World::new(map);
        let mut data = FeedbackDataset::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = run_episode(&setup, &mut world, &mut data, &mut rng).unwrap();
        (r, data)
    }

    #[test]
    fn obstacle_free_path_costs_its_length() {
        let map = parse_map(PLAIN).unwrap();
        let (domain, policy) = plan(&map, LevelSet::single(Level::L3), SignalDist::uniform_at(Level::L1));
        let (r, data) = run(&map, &domain, &policy, 0);
        assert_eq!(r.signals, 0);
        assert!(data.is_empty());
        assert_eq!(r.incurred, 4.0);
        assert!(!r.truncated);
    }

    #[test]
    fn refusal_then_approval_at_a_crosswalk() {
        // Heavy traffic is refused; the chain eventually lightens it and the human approves.
        let map = parse_map(CROSSING).unwrap();
        let (domain, policy) = plan(&map, LevelSet::single(Level::L1), SignalDist([0.5, 0.5, 0.0, 0.0]));
        for seed in 0..50 {
            let (r, data) = run(&map, &domain, &policy, seed);
            let refusals = data.records().iter().filter(|x| x.signal == Signal::Disapproval).count();
            let approvals = data.records().iter().filter(|x| x.signal == Signal::Approval).count();
            assert_eq!(approvals, 1);
            assert_eq!(r.signals, refusals + 1);
            // Each refusal is one extra step spent waiting at the crosswalk.
            assert_eq!(r.steps, 4 + refusals);
            if refusals == 1 {
                assert_eq!(data.records()[1].prior_level, Level::L1);
                return;
            }
        }
        panic!("no seed produced exactly one refusal");
    }

    #[test]
    fn override_at_a_door_still_passes() {
        let map = parse_map(DOOR).unwrap();
        let (domain, policy) = plan(&map, LevelSet::single(Level::L2), SignalDist([0.0, 0.0, 0.5, 0.5]));
        let (r, data) = run(&map, &domain, &policy, 1);
        assert_eq!(r.signals, 1);
        assert_eq!(data.records()[0].signal, Signal::Override);
        assert_eq!(r.steps, 4);
        // Three moves, then the door: domain 1, switch 0.5, supervision 1, override 7.
        assert!((r.incurred - (3.0 + 1.0 + 0.5 + 1.0 + 7.0 + 0.5)).abs() < 1e-12, "{}", r.incurred);
    }

    #[test]
    fn failing_alone_runs_into_the_horizon() {
        let map = parse_map(DOOR).unwrap();
        let (domain, policy) = plan(&map, LevelSet::single(Level::L3), SignalDist::uniform_at(Level::L1));
        let (r, _) = run(&map, &domain, &policy, 2);
        assert!(r.truncated);
        assert_eq!(r.steps, 500);
    }
}
