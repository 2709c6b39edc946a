use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::episode::{run_episode, CostModel, EpisodeSetup, World};
use super::{ExperimentConfig, HarnessError, MetricsRow};
use crate::campus::{
    build_domain, bundled_map, campus_catalog, kind_of, load_map, sample_task, CampusDomain, CampusMap, DomainState,
    OracleAuthority, Pos, Task,
};
use crate::cas::{
    competence_from, level_optimality, solve_cas, AutonomyModel, Cas, CasBuilder, CompetenceMap, HumanFeedbackModel,
    KappaRule, Level, LevelSet, SignalDist,
};
use crate::feedback::{
    train_profile, Assignment, Context, FeatureCatalog, FeedbackDataset, TrainOptions, TrainedProfile,
};
use crate::refinement::{refine_step, visit_counts, IndiscriminateQuery, RefineOutcome, RefineParams, RefinementEvent};
use crate::ssp::{ActionId, SolveOptions, StateId};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricsRow>,
    /// Refinement attempts, tagged with their trial.
    pub events: Vec<(usize, RefinementEvent)>,
}

/// Competence under the true human, over the full feature space.
pub struct Truth {
    pub domain: CampusDomain,
    pub chi: CompetenceMap,
    /// Product states at obstacles that some policy can reach from the start.
    pub obstacle_states: Vec<StateId>,
}

/// Ground truth per (start, goal), shared between trials.
#[derive(Default)]
pub struct TruthCache(Mutex<HashMap<(String, String), Arc<Truth>>>);

impl TruthCache {
    pub fn get(
        &self,
        map: &CampusMap,
        oracle: &OracleAuthority,
        task: &Task,
        costs: &CostModel,
    ) -> Result<Arc<Truth>, HarnessError> {
        let key = (task.start.clone(), task.goal.clone());
        if let Some(t) = self.0.lock().expect("truth cache").get(&key) {
            return Ok(t.clone());
        }
        let truth = Arc::new(truth(map, oracle, task, costs)?);
        Ok(self.0.lock().expect("truth cache").entry(key).or_insert(truth).clone())
    }
}

fn full_catalog() -> FeatureCatalog {
    let c = campus_catalog();
    let all: Vec<usize> = (0..c.len()).collect();
    c.augmented(&all)
}

fn truth(map: &CampusMap, oracle: &OracleAuthority, task: &Task, costs: &CostModel) -> Result<Truth, HarnessError> {
    let domain = build_domain(map, &full_catalog(), task)?;
    let autonomy = AutonomyModel::new(&domain.ssp, costs.mu, |s, _| {
        if domain.obstacle(s).is_some() {
            LevelSet::ALL
        } else {
            LevelSet::single(Level::L3)
        }
    });
    let profile = |s: StateId, _prior, a, level: Level| {
        oracle
            .distribution(kind_of(a), &domain.states[s].features, level)
            .unwrap_or_else(|_| SignalDist::uniform_at(level))
    };
    let tau = |s, a| domain.takeover(s, a);
    let alone = |s, a| domain.unsupervised(oracle, s, a);
    let human = HumanFeedbackModel { profile: &profile, rho: costs.rho, tau: &tau };
    let builder = CasBuilder::new(&domain.ssp, &autonomy, human).weights(costs.weights).unsupervised(&alone);
    let cas = builder.build()?;
    let chi = competence_from(&cas, &solve_cas(&cas, SolveOptions::default())?.values);
    let mut seen = vec![false; cas.base.num_states()];
    let mut stack = vec![cas.base.start];
    seen[cas.base.start] = true;
    while let Some(id) = stack.pop() {
        for c in &cas.base.choices[id] {
            for &(t, p) in &c.successors {
                if p > 0.0 && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
    }
    let obstacle_states = (0..seen.len())
        .filter(|&id| seen[id] && !cas.is_goal(id) && domain.obstacle(Cas::split_state(id).0).is_some())
        .collect();
    Ok(Truth { domain, chi, obstacle_states })
}

/// Levels a pair starts with: obstacles need the human, ordinary moves do not.
fn initial_levels(domain: &CampusDomain, s: StateId) -> LevelSet {
    if domain.obstacle(s).is_some() && s != domain.ssp.goal {
        LevelSet::of(&[Level::L0, Level::L1])
    } else {
        LevelSet::single(Level::L3)
    }
}

/// Allowed and demoted levels per situation, kept across episodes whose
/// domain models number their states differently.
#[derive(Default)]
struct KappaStore(HashMap<(DomainState, ActionId), (LevelSet, LevelSet)>);

impl KappaStore {
    fn model(&self, domain: &CampusDomain, costs: &CostModel) -> AutonomyModel {
        let lookup = |s: StateId, a| self.0.get(&(domain.states[s].clone(), a));
        let mut m = AutonomyModel::new(&domain.ssp, costs.mu, |s, a| {
            lookup(s, a).map_or_else(|| initial_levels(domain, s), |e| e.0)
        });
        let pairs: Vec<_> = m.pairs().map(|(k, _)| k).collect();
        for (s, a) in pairs {
            if let Some(e) = lookup(s, a) {
                m.set_demoted(s, a, e.1);
            }
        }
        m
    }

    fn save(&mut self, domain: &CampusDomain, m: &AutonomyModel) {
        for ((s, a), levels) in m.pairs() {
            self.0.insert((domain.states[s].clone(), a), (levels, m.demoted(s, a)));
        }
    }
}

/// Profile context of a first attempt: the robot arrives at an obstacle from an unsupervised move.
fn first_attempt(domain: &CampusDomain, profile: &TrainedProfile, s: StateId, a: ActionId, level: Level) -> Context {
    Context {
        features: profile.features.iter().map(|&f| domain.states[s].features[f]).collect(),
        action: kind_of(a).name().to_string(),
        prior: Level::L3,
        level,
    }
}

/// Applies the level update until nothing changes.
fn settle(
    m: &mut AutonomyModel,
    domain: &CampusDomain,
    profile: &TrainedProfile,
    visits: &BTreeMap<Context, usize>,
    rule: &KappaRule,
) {
    let count = |s, a, level| visits.get(&first_attempt(domain, profile, s, a, level)).copied().unwrap_or(0);
    for _ in 0..16 {
        let changed =
            m.update(rule, |s, a, level| profile.predict_context(&first_attempt(domain, profile, s, a, level)), count);
        if changed == 0 {
            break;
        }
    }
}

/// Pairs whose highest allowed level is l1 or l2, with fewer than `m` first
/// attempts there and no decisive feedback yet.
///
/// Without a trial the planner abandons a level as soon as it looks worse
/// than the alternatives, which can be before the evidence is enough to
/// change kappa or to show that the context mixes different situations.
fn on_trial(
    m: &AutonomyModel,
    domain: &CampusDomain,
    profile: &TrainedProfile,
    visits: &BTreeMap<Context, usize>,
    rule: &KappaRule,
) -> BTreeMap<(StateId, ActionId), Level> {
    let decisive = rule.escalate.min(rule.demote);
    m.pairs()
        .filter_map(|((s, a), levels)| {
            let top = levels.max().filter(|l| matches!(l, Level::L1 | Level::L2))?;
            let ctx = first_attempt(domain, profile, s, a, top);
            let n = visits.get(&ctx).copied().unwrap_or(0);
            (n < rule.min_visits && profile.predict_context(&ctx).max_probability() < decisive).then_some(((s, a), top))
        })
        .collect()
}

/// First attempts at pairs on trial must use the level being tried; later
/// attempts, after a refusal or an override, keep every allowed level.
fn restrict_first_attempts(cas: &mut Cas, trial: &BTreeMap<(StateId, ActionId), Level>) {
    for (&(s, a), &top) in trial {
        cas.base.choices[Cas::state_id(s, Level::L3)].retain(|c| {
            let (ca, level) = Cas::split_action(c.action);
            ca != a || level == top
        });
    }
}

type Visit = (Pos, Assignment, Level);

/// Share of obstacle situations where the agent picks the competent level, over
/// every situation on the route and over the ones visited so far.
fn optimality(
    truth: &Truth,
    agent: &CampusDomain,
    policy: &[ActionId],
    visited: &BTreeSet<Visit>,
) -> (Option<f64>, Option<f64>) {
    let full = &truth.domain;
    let choose = |id: StateId| {
        let (fs, prior) = Cas::split_state(id);
        let st = &full.states[fs];
        match agent.state_of(st.cell, &st.features) {
            Some(s) => Cas::split_action(policy[Cas::state_id(s, prior)]),
            None => (usize::MAX, Level::L0),
        }
    };
    let all = truth.obstacle_states.iter().copied();
    let seen = visited
        .iter()
        .filter_map(|(cell, features, prior)| full.state_of(*cell, features).map(|s| Cas::state_id(s, *prior)));
    (level_optimality(choose, &truth.chi, all), level_optimality(choose, &truth.chi, seen))
}

fn trailing_mean(values: &[f64], window: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

const WINDOW: usize = 10;

pub fn load_world(config: &ExperimentConfig) -> Result<(CampusMap, OracleAuthority), HarnessError> {
    let map = match &config.map {
        Some(path) => load_map(path)?,
        None => bundled_map(),
    };
    Ok((map, OracleAuthority::new(config.rules.clone(), config.epsilon)?))
}

/// One trial: a fresh robot learning over `config.episodes` episodes.
pub fn run_trial(
    config: &ExperimentConfig,
    map: &CampusMap,
    oracle: &OracleAuthority,
    trial: usize,
    cache: &TruthCache,
) -> Result<ExperimentOutput, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trial as u64);
    let costs = CostModel { weights: config.weights, mu: config.mu, rho: config.rho };
    let rule = config.kappa_rule();
    let train_opts =
        TrainOptions { estimator: config.estimator, seed: config.seed ^ trial as u64, ..Default::default() };
    let params = RefineParams {
        query: IndiscriminateQuery::new(config.theta, config.m, config.epsilon)?,
        k: config.k,
        alpha: config.alpha,
        split_ratio: config.split_ratio,
        max_cardinality: config.max_cardinality,
        train: train_opts.clone(),
    };
    let mode = config.task_mode();

    let mut catalog = campus_catalog();
    let mut profile = TrainedProfile::uninformed(catalog.active());
    let mut data = FeedbackDataset::new();
    let mut store = KappaStore::default();
    let mut world = World::new(map);
    let mut visited = BTreeSet::new();
    let (mut incurred, mut expected) = (Vec::new(), Vec::new());
    let mut out = ExperimentOutput::default();

    for episode in 0..config.episodes {
        let at = |e: HarnessError| HarnessError::At { trial, episode, source: Box::new(e) };
        let task = sample_task(map, &mode, &mut rng).map_err(|e| at(e.into()))?;
        if episode > 0 {
            world.resample_doors(&mut rng);
        }
        let domain = build_domain(map, &catalog, &task).map_err(|e| at(e.into()))?;
        let mut autonomy = store.model(&domain, &costs);
        let visits = visit_counts(data.records(), &profile.features);
        settle(&mut autonomy, &domain, &profile, &visits, &rule);
        store.save(&domain, &autonomy);
        let trial_levels = on_trial(&autonomy, &domain, &profile, &visits, &rule);

        let policy = {
            let predict = |s: StateId, prior, a, level| {
                profile.predict(&domain.states[s].features, kind_of(a).name(), prior, level)
            };
            let tau = |s, a| domain.takeover(s, a);
            let human = HumanFeedbackModel { profile: &predict, rho: costs.rho, tau: &tau };
            let mut cas = CasBuilder::new(&domain.ssp, &autonomy, human)
                .weights(costs.weights)
                .build()
                .map_err(|e| at(e.into()))?;
            restrict_first_attempts(&mut cas, &trial_levels);
            let sol = solve_cas(&cas, SolveOptions::default()).map_err(|e| at(e.into()))?;
            expected.push(sol.values[cas.base.start]);
            sol.policy
        };

        let truth = cache.get(map, oracle, &task, &costs).map_err(at)?;
        let (lo_all, _) = optimality(&truth, &domain, &policy, &visited);
        let setup = EpisodeSetup {
            map,
            task: &task,
            domain: &domain,
            policy: &policy,
            oracle,
            costs,
            catalog: &catalog,
            episode,
            horizon: config.horizon,
        };
        let result = run_episode(&setup, &mut world, &mut data, &mut rng).map_err(at)?;
        incurred.push(result.incurred);
        visited.extend(result.visited.iter().cloned());
        let (_, lo_visited) = optimality(&truth, &domain, &policy, &visited);

        let mut refined = false;
        if !data.is_empty() {
            profile = train_profile(data.records(), &catalog, None, &train_opts).map_err(|e| at(e.into()))?;
            if config.refinement {
                let (outcome, event) = refine_step(data.records(), &catalog, &profile, &params, episode, &mut rng)
                    .map_err(|e| at(e.into()))?;
                out.events.push((trial, event));
                if let RefineOutcome::Accepted { catalog: c, profile: p, .. } = outcome {
                    catalog = c;
                    profile = *p;
                    store = KappaStore::default();
                    refined = true;
                }
            }
        }

        let inc10 = trailing_mean(&incurred, WINDOW);
        let exp10 = trailing_mean(&expected, WINDOW);
        out.rows.push(MetricsRow {
            trial,
            episode,
            level_optimality_all: lo_all,
            level_optimality_visited: lo_visited,
            cumulative_signals: data.len(),
            expected_cost: expected[episode],
            incurred_cost_avg10: inc10,
            cost_pct_diff: if exp10 > 0.0 { 100.0 * (inc10 - exp10) / exp10 } else { 0.0 },
            active_feature_count: catalog.active().len(),
            refinement_event: refined,
            incurred_cost: result.incurred,
            expected_cost_avg10: exp10,
            episode_signals: result.signals,
            truncated: result.truncated,
        });
    }
    Ok(out)
}

/// Runs every trial, in parallel, and concatenates their output in trial order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    config.validate()?;
    let (map, oracle) = load_world(config)?;
    let cache = TruthCache::default();
    let trials: Vec<_> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, &map, &oracle, t, &cache))
        .collect::<Result<_, _>>()?;
    let mut out = ExperimentOutput::default();
    for t in trials {
        out.rows.extend(t.rows);
        out.events.extend(t.events);
    }
    Ok(out)
}
