//! Competence-aware systems: a domain SSP lifted over levels of autonomy.
//!
//! Product state `(s, l)` means "in domain state `s`, having just operated
//! at level `l`". Product action `(a, l')` means "perform `a` at level `l'`".
//! Both are packed into dense indices with [`Cas::state_id`] and
//! [`Cas::action_id`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ssp::{self, ActionId, Choice, Solution, SolveError, SolveOptions, Ssp, StateId, Successors};

/// Levels of autonomy, lowest to highest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    /// No autonomy: the human performs the action.
    L0,
    /// Verified: the agent asks for approval first.
    L1,
    /// Supervised: the human may override.
    L2,
    /// Unsupervised.
    L3,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::L0, Level::L1, Level::L2, Level::L3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Level> {
        Level::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        ["l0", "l1", "l2", "l3"][self.index()]
    }

    /// Signals the human can send at this level.
    pub fn legal_signals(self) -> &'static [Signal] {
        match self {
            Level::L1 => &[Signal::Approval, Signal::Disapproval],
            Level::L2 => &[Signal::Override, Signal::NoSignal],
            Level::L0 | Level::L3 => &[],
        }
    }

    /// Whether feedback is queried or monitored at this level.
    pub fn has_feedback(self) -> bool {
        matches!(self, Level::L1 | Level::L2)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown level {0:?}")]
pub struct ParseLevelError(pub String);

impl FromStr for Level {
    type Err = ParseLevelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l0" => Ok(Level::L0),
            "l1" => Ok(Level::L1),
            "l2" => Ok(Level::L2),
            "l3" => Ok(Level::L3),
            _ => Err(ParseLevelError(s.to_string())),
        }
    }
}

/// Small set of levels.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LevelSet(u8);

impl LevelSet {
    pub const EMPTY: LevelSet = LevelSet(0);
    pub const ALL: LevelSet = LevelSet(0b1111);

    pub fn of(levels: &[Level]) -> Self {
        levels.iter().fold(Self::EMPTY, |s, &l| s.with(l))
    }

    pub fn single(level: Level) -> Self {
        Self::of(&[level])
    }

    pub fn contains(self, level: Level) -> bool {
        self.0 & (1 << level.index()) != 0
    }

    pub fn with(self, level: Level) -> Self {
        LevelSet(self.0 | (1 << level.index()))
    }

    pub fn without(self, level: Level) -> Self {
        LevelSet(self.0 & !(1 << level.index()))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn max(self) -> Option<Level> {
        self.iter().last()
    }

    pub fn iter(self) -> impl DoubleEndedIterator<Item = Level> {
        Level::ALL.into_iter().filter(move |&l| self.contains(l))
    }
}

impl fmt::Debug for LevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Human feedback signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Signal {
    Approval,
    Disapproval,
    Override,
    NoSignal,
}

impl Signal {
    pub const ALL: [Signal; 4] = [Signal::Approval, Signal::Disapproval, Signal::Override, Signal::NoSignal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["approval", "disapproval", "override", "none"][self.index()]
    }

    pub fn allowed_at(self, level: Level) -> bool {
        level.legal_signals().contains(&self)
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown signal {0:?}")]
pub struct ParseSignalError(pub String);

impl FromStr for Signal {
    type Err = ParseSignalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Signal::ALL.into_iter().find(|sig| sig.name() == s).ok_or_else(|| ParseSignalError(s.to_string()))
    }
}

/// Probability of each signal, indexed by [`Signal::index`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SignalDist(pub [f64; 4]);

impl SignalDist {
    /// Uniform over the signals legal at `level`; all mass on "none" where no feedback exists.
    pub fn uniform_at(level: Level) -> Self {
        let legal = level.legal_signals();
        if legal.is_empty() {
            return Self::certain(Signal::NoSignal);
        }
        let mut p = [0.0; 4];
        for s in legal {
            p[s.index()] = 1.0 / legal.len() as f64;
        }
        SignalDist(p)
    }

    pub fn certain(signal: Signal) -> Self {
        let mut p = [0.0; 4];
        p[signal.index()] = 1.0;
        SignalDist(p)
    }

    pub fn get(&self, signal: Signal) -> f64 {
        self.0[signal.index()]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Most probable signal, or `None` when the maximum is shared.
    pub fn argmax(&self) -> Option<Signal> {
        let max = self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut winners = Signal::ALL.into_iter().filter(|s| self.get(*s) == max);
        let first = winners.next()?;
        winners.next().is_none().then_some(first)
    }

    pub fn max_probability(&self) -> f64 {
        self.0.iter().cloned().fold(0.0, f64::max)
    }

    /// Whether all mass sits on signals legal at `level` and sums to one.
    pub fn respects(&self, level: Level) -> bool {
        if !level.has_feedback() {
            return true;
        }
        (self.sum() - 1.0).abs() <= ssp::ROW_SUM_TOLERANCE
            && Signal::ALL.iter().all(|s| s.allowed_at(level) || self.get(*s) == 0.0)
    }
}

/// Predicts the human's feedback for a domain state, prior level, domain action and level.
pub trait FeedbackProfile: Sync {
    fn predict(&self, state: StateId, prior: Level, action: ActionId, level: Level) -> SignalDist;
}

impl<F> FeedbackProfile for F
where
    F: Fn(StateId, Level, ActionId, Level) -> SignalDist + Sync,
{
    fn predict(&self, state: StateId, prior: Level, action: ActionId, level: Level) -> SignalDist {
        self(state, prior, action, level)
    }
}

/// Cost of switching between levels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchCost {
    pub same: f64,
    pub switch: f64,
}

impl Default for SwitchCost {
    fn default() -> Self {
        Self { same: 0.0, switch: 0.5 }
    }
}

impl SwitchCost {
    pub fn mu(&self, prior: Level, level: Level) -> f64 {
        if prior == level {
            self.same
        } else {
            self.switch
        }
    }
}

/// Human effort per action at each level, plus the expected extra effort of
/// an override while supervising.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct HumanCost {
    pub per_level: [f64; 4],
    pub override_cost: f64,
}

impl Default for HumanCost {
    fn default() -> Self {
        Self { per_level: [7.0, 2.0, 1.0, 0.0], override_cost: 7.0 }
    }
}

impl HumanCost {
    pub fn rho(&self, level: Level, feedback: &SignalDist) -> f64 {
        let base = self.per_level[level.index()];
        if level == Level::L2 {
            base + feedback.get(Signal::Override) * self.override_cost
        } else {
            base
        }
    }

    /// Human cost once the signal is known.
    pub fn realized(&self, level: Level, signal: Option<Signal>) -> f64 {
        let base = self.per_level[level.index()];
        if signal == Some(Signal::Override) {
            base + self.override_cost
        } else {
            base
        }
    }
}

/// Weights of the linear cost aggregation over domain cost, autonomy cost and human cost.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub domain: f64,
    pub autonomy: f64,
    pub human: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { domain: 1.0, autonomy: 1.0, human: 1.0 }
    }
}

impl CostWeights {
    pub fn combine(&self, domain: f64, autonomy: f64, human: f64) -> f64 {
        self.domain * domain + self.autonomy * autonomy + self.human * human
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { domain: self.domain * factor, autonomy: self.autonomy * factor, human: self.human * factor }
    }
}

/// Thresholds for [`AutonomyModel::update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaRule {
    /// Visits at the current maximum level before any change.
    pub min_visits: usize,
    pub escalate: f64,
    pub demote: f64,
}

impl Default for KappaRule {
    fn default() -> Self {
        Self { min_visits: 30, escalate: 0.9, demote: 0.9 }
    }
}

/// Permitted levels per domain state-action (`kappa`) and switching costs (`mu`).
#[derive(Debug, Clone, PartialEq)]
pub struct AutonomyModel {
    kappa: BTreeMap<(StateId, ActionId), LevelSet>,
    /// Levels removed by demotion; escalation never re-adds them.
    demoted: BTreeMap<(StateId, ActionId), LevelSet>,
    pub mu: SwitchCost,
}

impl AutonomyModel {
    /// Assigns `kappa(s, a)` for every available domain pair.
    pub fn new(domain: &Ssp, mu: SwitchCost, mut init: impl FnMut(StateId, ActionId) -> LevelSet) -> Self {
        let kappa = domain
            .choices
            .iter()
            .enumerate()
            .flat_map(|(s, cs)| cs.iter().map(move |c| (s, c.action)))
            .map(|(s, a)| ((s, a), init(s, a)))
            .collect();
        Self { kappa, demoted: BTreeMap::new(), mu }
    }

    pub fn kappa(&self, state: StateId, action: ActionId) -> LevelSet {
        self.kappa.get(&(state, action)).copied().unwrap_or(LevelSet::EMPTY)
    }

    pub fn set_kappa(&mut self, state: StateId, action: ActionId, levels: LevelSet) {
        self.kappa.insert((state, action), levels);
    }

    pub fn pairs(&self) -> impl Iterator<Item = ((StateId, ActionId), LevelSet)> + '_ {
        self.kappa.iter().map(|(k, v)| (*k, *v))
    }

    pub fn demoted(&self, state: StateId, action: ActionId) -> LevelSet {
        self.demoted.get(&(state, action)).copied().unwrap_or(LevelSet::EMPTY)
    }

    /// Restores demotion marks, e.g. when carrying kappa over to a rebuilt domain.
    pub fn set_demoted(&mut self, state: StateId, action: ActionId, levels: LevelSet) {
        if levels.is_empty() {
            self.demoted.remove(&(state, action));
        } else {
            self.demoted.insert((state, action), levels);
        }
    }

    /// One round of autonomy-profile updates from learned feedback.
    ///
    /// Only pairs whose current maximum level has at least `min_visits`
    /// visits change. At the maximum, confident disapproval (l1) or override
    /// (l2) removes that level and marks it demoted; confident approval (l1)
    /// or absence of override (l2) adds the next level unless it was demoted.
    /// l0 gains l1 unconditionally. l0 is never removed. Returns the number of
    /// pairs changed.
    pub fn update(
        &mut self,
        rule: &KappaRule,
        feedback: impl Fn(StateId, ActionId, Level) -> SignalDist,
        visits: impl Fn(StateId, ActionId, Level) -> usize,
    ) -> usize {
        let mut changed = 0;
        let keys: Vec<_> = self.kappa.keys().copied().collect();
        for (s, a) in keys {
            let current = self.kappa[&(s, a)];
            let Some(top) = current.max() else { continue };
            if top == Level::L3 || visits(s, a, top) < rule.min_visits {
                continue;
            }
            let banned = self.demoted(s, a);
            let dist = feedback(s, a, top);
            let (negative, positive, up) = match top {
                Level::L1 => (Signal::Disapproval, Signal::Approval, Level::L2),
                Level::L2 => (Signal::Override, Signal::NoSignal, Level::L3),
                _ => (Signal::NoSignal, Signal::NoSignal, Level::L1),
            };
            let next = if top == Level::L0 {
                (!banned.contains(Level::L1)).then(|| current.with(Level::L1))
            } else if dist.get(negative) >= rule.demote {
                self.demoted.insert((s, a), banned.with(top));
                let rest = current.without(top);
                Some(if rest.is_empty() { LevelSet::single(Level::L0) } else { rest })
            } else if dist.get(positive) >= rule.escalate && !banned.contains(up) {
                Some(current.with(up))
            } else {
                None
            };
            if let Some(next) = next.filter(|n| *n != current) {
                self.kappa.insert((s, a), next);
                changed += 1;
            }
        }
        changed
    }
}

/// Takeover dynamics: where the human moves the agent when taking control.
pub type Takeover<'a> = &'a (dyn Fn(StateId, ActionId) -> Successors + Sync);

/// The agent's model of the human.
#[derive(Clone, Copy)]
pub struct HumanFeedbackModel<'a> {
    pub profile: &'a dyn FeedbackProfile,
    pub rho: HumanCost,
    pub tau: Takeover<'a>,
}

#[derive(Debug, Error, PartialEq)]
pub enum CasError {
    #[error("domain model is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidDomain(Vec<ssp::Violation>),
    #[error("feedback at state {state}, action {action}, level {level} violates signal support: {dist:?}")]
    SignalSupport { state: StateId, action: ActionId, level: Level, dist: SignalDist },
    #[error("negative aggregated cost {cost} at state {state}, action {action}, level {level}")]
    NegativeCost { state: StateId, action: ActionId, level: Level, cost: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// A CAS as an SSP over `(domain state, level)`.
#[derive(Debug, Clone)]
pub struct Cas {
    pub base: Ssp,
    pub kappa_ref: AutonomyModel,
    pub weights: CostWeights,
    pub domain_states: usize,
    pub domain_actions: usize,
    pub domain_goal: StateId,
}

impl Cas {
    pub fn state_id(s: StateId, level: Level) -> StateId {
        s * 4 + level.index()
    }

    pub fn action_id(a: ActionId, level: Level) -> ActionId {
        a * 4 + level.index()
    }

    pub fn split_state(id: StateId) -> (StateId, Level) {
        (id / 4, Level::ALL[id % 4])
    }

    pub fn split_action(id: ActionId) -> (ActionId, Level) {
        (id / 4, Level::ALL[id % 4])
    }

    pub fn is_goal(&self, id: StateId) -> bool {
        id / 4 == self.domain_goal
    }

    /// Non-goal product states.
    pub fn non_goal_states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.base.num_states()).filter(|&id| !self.is_goal(id))
    }
}

/// Assembles a [`Cas`] from a domain model, autonomy model and human model.
#[derive(Clone, Copy)]
pub struct CasBuilder<'a> {
    pub domain: &'a Ssp,
    pub autonomy: &'a AutonomyModel,
    pub human: HumanFeedbackModel<'a>,
    pub weights: CostWeights,
    /// Actual dynamics of unsupervised execution where they differ from the domain model.
    pub unsupervised: Option<Takeover<'a>>,
}

impl<'a> CasBuilder<'a> {
    pub fn new(domain: &'a Ssp, autonomy: &'a AutonomyModel, human: HumanFeedbackModel<'a>) -> Self {
        Self { domain, autonomy, human, weights: CostWeights::default(), unsupervised: None }
    }

    pub fn weights(mut self, weights: CostWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn unsupervised(mut self, dynamics: Takeover<'a>) -> Self {
        self.unsupervised = Some(dynamics);
        self
    }

    /// Product transition row for `(s, prior) --(a, level)-->`.
    pub fn row(&self, s: StateId, prior: Level, choice: &Choice, level: Level) -> Result<(f64, Successors), CasError> {
        let a = choice.action;
        let dist = if level.has_feedback() {
            let d = self.human.profile.predict(s, prior, a, level);
            if !d.respects(level) {
                return Err(CasError::SignalSupport { state: s, action: a, level, dist: d });
            }
            d
        } else {
            SignalDist::certain(Signal::NoSignal)
        };
        let mut out: Successors = Vec::new();
        let mut add = |succ: &Successors, w: f64| {
            if w == 0.0 {
                return;
            }
            for &(t, p) in succ {
                let id = Cas::state_id(t, level);
                match out.iter_mut().find(|(x, _)| *x == id) {
                    Some(e) => e.1 += w * p,
                    None => out.push((id, w * p)),
                }
            }
        };
        match level {
            Level::L0 => add(&(self.human.tau)(s, a), 1.0),
            Level::L1 => {
                add(&choice.successors, dist.get(Signal::Approval));
                add(&vec![(s, 1.0)], dist.get(Signal::Disapproval));
            }
            Level::L2 => {
                add(&choice.successors, dist.get(Signal::NoSignal));
                add(&(self.human.tau)(s, a), dist.get(Signal::Override));
            }
            Level::L3 => match self.unsupervised {
                Some(u) => add(&u(s, a), 1.0),
                None => add(&choice.successors, 1.0),
            },
        }
        out.sort_by_key(|e| e.0);
        let cost =
            self.weights.combine(choice.cost, self.autonomy.mu.mu(prior, level), self.human.rho.rho(level, &dist));
        if cost < 0.0 {
            return Err(CasError::NegativeCost { state: s, action: a, level, cost });
        }
        Ok((cost, out))
    }

    /// Builds the product model; goal states absorb at every level.
    pub fn build(&self) -> Result<Cas, CasError> {
        let violations = self.domain.validate();
        if !violations.is_empty() {
            return Err(CasError::InvalidDomain(violations));
        }
        let d = self.domain;
        let n = d.num_states();
        let mut choices = Vec::with_capacity(n * 4);
        let mut state_names = Vec::with_capacity(n * 4);
        for s in 0..n {
            for prior in Level::ALL {
                state_names.push(format!("{}@{}", d.state_names[s], prior));
                let id = Cas::state_id(s, prior);
                let mut row = Vec::new();
                if s == d.goal {
                    row.push(Choice { action: 0, cost: 0.0, successors: vec![(id, 1.0)] });
                    choices.push(row);
                    continue;
                }
                for c in &d.choices[s] {
                    for level in self.autonomy.kappa(s, c.action).iter() {
                        let (cost, successors) = self.row(s, prior, c, level)?;
                        row.push(Choice { action: Cas::action_id(c.action, level), cost, successors });
                    }
                }
                choices.push(row);
            }
        }
        let action_names =
            d.action_names.iter().flat_map(|a| Level::ALL.iter().map(move |l| format!("{a}@{l}"))).collect();
        Ok(Cas {
            base: Ssp {
                state_names,
                action_names,
                choices,
                start: Cas::state_id(d.start, Level::L3),
                goal: Cas::state_id(d.goal, Level::L3),
            },
            kappa_ref: self.autonomy.clone(),
            weights: self.weights,
            domain_states: n,
            domain_actions: d.action_names.len(),
            domain_goal: d.goal,
        })
    }
}

/// Optimal policy over the product model; every chosen level lies in kappa by construction.
pub fn solve_cas(cas: &Cas, options: SolveOptions) -> Result<Solution, CasError> {
    Ok(ssp::solve(&cas.base, options)?)
}

/// Least-cost level per (product state, domain action).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompetenceMap {
    pub chi: BTreeMap<(StateId, ActionId), Level>,
}

impl CompetenceMap {
    pub fn get(&self, state: StateId, action: ActionId) -> Option<Level> {
        self.chi.get(&(state, action)).copied()
    }
}

/// Competence under the builder's human model, which should carry the true
/// feedback profile and the levels the human would allow.
///
/// For each non-goal product state and domain action, picks the level with
/// the smallest Q value; ties go to the more autonomous level.
pub fn compute_competence(template: &CasBuilder<'_>, options: SolveOptions) -> Result<CompetenceMap, CasError> {
    let cas = template.build()?;
    let sol = solve_cas(&cas, options)?;
    Ok(competence_from(&cas, &sol.values))
}

/// Competence from already-solved values of `cas`.
pub fn competence_from(cas: &Cas, values: &[f64]) -> CompetenceMap {
    let mut chi = BTreeMap::new();
    for id in cas.non_goal_states() {
        let mut best: BTreeMap<ActionId, (f64, Level)> = BTreeMap::new();
        for c in &cas.base.choices[id] {
            let (a, level) = Cas::split_action(c.action);
            let q = c.cost + c.successors.iter().map(|&(t, p)| p * values[t]).sum::<f64>();
            let e = best.entry(a).or_insert((q, level));
            // Choices arrive in ascending level order, so `<=` favours higher levels on ties.
            if q <= e.0 + COMPETENCE_TIE {
                *e = (q.min(e.0), level);
            }
        }
        for (a, (_, level)) in best {
            chi.insert((id, a), level);
        }
    }
    CompetenceMap { chi }
}

/// Q values closer than this are treated as tied.
const COMPETENCE_TIE: f64 = 1e-9;

/// Fraction of `subset` where the policy's level equals the competence for the
/// policy's domain action. `None` for an empty subset.
pub fn level_optimality(
    policy: impl Fn(StateId) -> (ActionId, Level),
    chi: &CompetenceMap,
    subset: impl IntoIterator<Item = StateId>,
) -> Option<f64> {
    let mut total = 0usize;
    let mut hits = 0usize;
    for s in subset {
        let (a, level) = policy(s);
        total += 1;
        if chi.get(s, a) == Some(level) {
            hits += 1;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}
