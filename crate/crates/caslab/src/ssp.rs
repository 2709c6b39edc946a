//! Finite stochastic shortest path models and their solvers.
//!
//! States and actions are dense indices. Each state lists the actions
//! available in it together with their cost and sparse successor
//! distribution, so a product model with many unreachable combinations
//! stays cheap to store and sweep.

use std::fmt;

use thiserror::Error;

/// Row-sum tolerance used by [`Ssp::validate`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Default stopping tolerance for [`solve`].
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Default sweep cap before a model is declared improper.
pub const DEFAULT_ITERATION_CAP: usize = 100_000;

pub type StateId = usize;
pub type ActionId = usize;

/// Sparse probability distribution over states, `(successor, probability)`.
pub type Successors = Vec<(StateId, f64)>;

/// One available action in a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub action: ActionId,
    pub cost: f64,
    pub successors: Successors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ssp {
    pub state_names: Vec<String>,
    pub action_names: Vec<String>,
    /// `choices[s]` holds the available actions of state `s`, ordered by action index.
    pub choices: Vec<Vec<Choice>>,
    pub start: StateId,
    pub goal: StateId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: Vec<f64>,
    /// Greedy action per state.
    pub policy: Vec<ActionId>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    StartOutOfRange(StateId),
    GoalOutOfRange(StateId),
    NoActions { state: StateId },
    UnsortedActions { state: StateId },
    RowSum { state: StateId, action: ActionId, sum: f64 },
    NegativeProbability { state: StateId, action: ActionId },
    SuccessorOutOfRange { state: StateId, action: ActionId, successor: StateId },
    NegativeCost { state: StateId, action: ActionId, cost: f64 },
    GoalCost { action: ActionId, cost: f64 },
    GoalNotAbsorbing { action: ActionId },
}

impl Violation {
    /// Short machine-friendly tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::StartOutOfRange(_) => "start-range",
            Violation::GoalOutOfRange(_) => "goal-range",
            Violation::NoActions { .. } => "no-actions",
            Violation::UnsortedActions { .. } => "unsorted-actions",
            Violation::RowSum { .. } => "row-sum",
            Violation::NegativeProbability { .. } => "negative-probability",
            Violation::SuccessorOutOfRange { .. } => "successor-range",
            Violation::NegativeCost { .. } => "negative-cost",
            Violation::GoalCost { .. } => "goal-cost",
            Violation::GoalNotAbsorbing { .. } => "goal-absorbing",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StartOutOfRange(s) => write!(f, "start state {s} is not a state"),
            Violation::GoalOutOfRange(s) => write!(f, "goal state {s} is not a state"),
            Violation::NoActions { state } => write!(f, "state {state} has no available action"),
            Violation::UnsortedActions { state } => {
                write!(f, "state {state} lists actions out of order or twice")
            }
            Violation::RowSum { state, action, sum } => {
                write!(f, "row-sum: transition ({state}, {action}) sums to {sum}")
            }
            Violation::NegativeProbability { state, action } => {
                write!(f, "transition ({state}, {action}) has a negative probability")
            }
            Violation::SuccessorOutOfRange { state, action, successor } => {
                write!(f, "transition ({state}, {action}) reaches unknown state {successor}")
            }
            Violation::NegativeCost { state, action, cost } => {
                write!(f, "cost ({state}, {action}) = {cost} is negative")
            }
            Violation::GoalCost { action, cost } => {
                write!(f, "goal-cost: cost(goal, {action}) = {cost}")
            }
            Violation::GoalNotAbsorbing { action } => {
                write!(f, "goal-absorbing: action {action} leaves the goal")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("invalid model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(
        "no convergence after {iterations} sweeps (residual {residual:.3e}, worst state {state}); goal unreachable?"
    )]
    NotConverged { iterations: usize, residual: f64, state: StateId },
    #[error("action {action} is not available in state {state}")]
    Unavailable { state: StateId, action: ActionId },
    #[error("policy is improper: state {state} does not reach the goal")]
    ImproperPolicy { state: StateId },
}

/// Stopping parameters for the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub iteration_cap: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tolerance: DEFAULT_TOLERANCE, iteration_cap: DEFAULT_ITERATION_CAP }
    }
}

impl SolveOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self { tolerance, ..Self::default() }
    }
}

impl Ssp {
    pub fn num_states(&self) -> usize {
        self.choices.len()
    }

    pub fn choice(&self, state: StateId, action: ActionId) -> Option<&Choice> {
        self.choices.get(state)?.binary_search_by_key(&action, |c| c.action).ok().map(|i| &self.choices[state][i])
    }

    pub fn is_available(&self, state: StateId, action: ActionId) -> bool {
        self.choice(state, action).is_some()
    }

    /// Lists every broken model invariant. An empty list means the model is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let n = self.num_states();
        let mut out = Vec::new();
        if self.start >= n {
            out.push(Violation::StartOutOfRange(self.start));
        }
        if self.goal >= n {
            out.push(Violation::GoalOutOfRange(self.goal));
        }
        for (state, choices) in self.choices.iter().enumerate() {
            if choices.is_empty() {
                out.push(Violation::NoActions { state });
            }
            if choices.windows(2).any(|w| w[0].action >= w[1].action) {
                out.push(Violation::UnsortedActions { state });
            }
            for c in choices {
                let action = c.action;
                let mut sum = 0.0;
                for &(succ, p) in &c.successors {
                    if succ >= n {
                        out.push(Violation::SuccessorOutOfRange { state, action, successor: succ });
                    }
                    if p < 0.0 {
                        out.push(Violation::NegativeProbability { state, action });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    out.push(Violation::RowSum { state, action, sum });
                }
                if c.cost < 0.0 || !c.cost.is_finite() {
                    out.push(Violation::NegativeCost { state, action, cost: c.cost });
                }
                if state == self.goal {
                    if c.cost != 0.0 {
                        out.push(Violation::GoalCost { action, cost: c.cost });
                    }
                    let stays: f64 = c.successors.iter().filter(|(s, _)| *s == self.goal).map(|(_, p)| p).sum();
                    if (stays - 1.0).abs() > ROW_SUM_TOLERANCE {
                        out.push(Violation::GoalNotAbsorbing { action });
                    }
                }
            }
        }
        out
    }
}

fn backup(choice: &Choice, values: &[f64]) -> f64 {
    choice.cost + choice.successors.iter().map(|&(s, p)| p * values[s]).sum::<f64>()
}

/// One-step Bellman backup `cost(s,a) + Σ T(s,a,s')·V(s')`.
pub fn q_value(model: &Ssp, values: &[f64], state: StateId, action: ActionId) -> Result<f64, SolveError> {
    model.choice(state, action).map(|c| backup(c, values)).ok_or(SolveError::Unavailable { state, action })
}

/// Lowest-cost choice in `state`; ties go to the lowest action index.
fn greedy(choices: &[Choice], values: &[f64]) -> (ActionId, f64) {
    let mut best = (choices[0].action, backup(&choices[0], values));
    for c in &choices[1..] {
        let q = backup(c, values);
        if q < best.1 {
            best = (c.action, q);
        }
    }
    best
}

/// Optimal values and greedy policy by in-place value iteration.
pub fn solve(model: &Ssp, options: SolveOptions) -> Result<Solution, SolveError> {
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(SolveError::Invalid(violations));
    }
    let n = model.num_states();
    let mut values = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let mut delta = 0.0_f64;
        let mut worst = 0;
        for s in 0..n {
            if s == model.goal {
                continue;
            }
            let (_, q) = greedy(&model.choices[s], &values);
            let change = (q - values[s]).abs();
            if change > delta {
                delta = change;
                worst = s;
            }
            values[s] = q;
        }
        iterations += 1;
        if delta <= options.tolerance {
            let residual = bellman_residual(model, &values);
            if residual <= options.tolerance {
                let policy = (0..n).map(|s| greedy(&model.choices[s], &values).0).collect();
                return Ok(Solution { values, policy, residual, iterations });
            }
        }
        if iterations >= options.iteration_cap || !delta.is_finite() {
            return Err(SolveError::NotConverged { iterations, residual: delta, state: worst });
        }
    }
}

fn bellman_residual(model: &Ssp, values: &[f64]) -> f64 {
    (0..model.num_states())
        .filter(|&s| s != model.goal)
        .map(|s| (greedy(&model.choices[s], values).1 - values[s]).abs())
        .fold(0.0, f64::max)
}

/// Expected cost-to-goal of a fixed policy.
///
/// Policy entries for states where the action is unavailable are rejected.
/// A policy that never reaches the goal from some state exceeds the sweep
/// cap and is reported as improper, naming the state whose value moved most
/// in the last sweep.
pub fn evaluate_policy(model: &Ssp, policy: &[ActionId], options: SolveOptions) -> Result<Vec<f64>, SolveError> {
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(SolveError::Invalid(violations));
    }
    let n = model.num_states();
    let rows: Vec<&Choice> = (0..n)
        .map(|s| model.choice(s, policy[s]).ok_or(SolveError::Unavailable { state: s, action: policy[s] }))
        .collect::<Result<_, _>>()?;
    let mut values = vec![0.0; n];
    for _ in 0..options.iteration_cap {
        let mut delta = 0.0_f64;
        for s in 0..n {
            if s == model.goal {
                continue;
            }
            let v = backup(rows[s], &values);
            delta = delta.max((v - values[s]).abs());
            values[s] = v;
        }
        if delta <= options.tolerance {
            return Ok(values);
        }
    }
    let worst = improper_state(model, &rows);
    Err(SolveError::ImproperPolicy { state: worst })
}

/// First state from which the goal is unreachable under the fixed rows.
fn improper_state(model: &Ssp, rows: &[&Choice]) -> StateId {
    let n = model.num_states();
    let mut reaches = vec![false; n];
    reaches[model.goal] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for s in 0..n {
            if !reaches[s] && rows[s].successors.iter().any(|&(t, p)| p > 0.0 && reaches[t]) {
                reaches[s] = true;
                changed = true;
            }
        }
    }
    reaches.iter().position(|r| !r).unwrap_or(model.start)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choice(action: ActionId, cost: f64, successors: Successors) -> Choice {
        Choice { action, cost, successors }
    }

    fn named(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    /// s0 -> s1 -> goal, unit costs.
    fn chain() -> Ssp {
        Ssp {
            state_names: named(3),
            action_names: vec!["go".into()],
            choices: vec![
                vec![choice(0, 1.0, vec![(1, 1.0)])],
                vec![choice(0, 1.0, vec![(2, 1.0)])],
                vec![choice(0, 0.0, vec![(2, 1.0)])],
            ],
            start: 0,
            goal: 2,
        }
    }

    #[test]
    fn well_formed_model_has_no_violations() {
        let m = Ssp {
            state_names: named(2),
            action_names: vec!["a".into()],
            choices: vec![vec![choice(0, 1.0, vec![(1, 1.0)])], vec![choice(0, 0.0, vec![(1, 1.0)])]],
            start: 0,
            goal: 1,
        };
        assert!(m.validate().is_empty());
    }

    #[test]
    fn row_sum_violation_is_reported() {
        let mut m = chain();
        m.choices[0][0].successors = vec![(1, 0.9)];
        let v = m.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind(), "row-sum");
        assert!(v[0].to_string().contains("(0, 0)"));
    }

    #[test]
    fn goal_cost_violation_is_reported() {
        let mut m = chain();
        m.choices[2][0].cost = 1.0;
        let v = m.validate();
        assert_eq!(v.iter().map(Violation::kind).collect::<Vec<_>>(), vec!["goal-cost"]);
    }

    #[test]
    fn goal_value_is_zero() {
        let sol = solve(&chain(), SolveOptions::default()).unwrap();
        assert_eq!(sol.values[2], 0.0);
    }

    #[test]
    fn chain_costs_two() {
        let sol = solve(&chain(), SolveOptions::default()).unwrap();
        assert!((sol.values[0] - 2.0).abs() < 1e-9);
        assert!(sol.residual <= DEFAULT_TOLERANCE);
    }

    #[test]
    fn geometric_self_loop_costs_two() {
        let m = Ssp {
            state_names: named(2),
            action_names: vec!["try".into()],
            choices: vec![vec![choice(0, 1.0, vec![(0, 0.5), (1, 0.5)])], vec![choice(0, 0.0, vec![(1, 1.0)])]],
            start: 0,
            goal: 1,
        };
        let sol = solve(&m, SolveOptions::with_tolerance(1e-10)).unwrap();
        assert!((sol.values[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn q_value_examples() {
        let m = Ssp {
            state_names: named(4),
            action_names: vec!["a".into(), "b".into()],
            choices: vec![
                vec![choice(0, 1.0, vec![(1, 1.0)]), choice(1, 1.0, vec![(1, 0.5), (2, 0.5)])],
                vec![choice(0, 1.0, vec![(3, 1.0)])],
                vec![choice(0, 1.0, vec![(3, 1.0)])],
                vec![choice(0, 0.0, vec![(3, 1.0)])],
            ],
            start: 0,
            goal: 3,
        };
        let values = [0.0, 3.0, 0.0, 0.0];
        assert_eq!(q_value(&m, &values, 3, 0).unwrap(), 0.0);
        assert_eq!(q_value(&m, &values, 0, 0).unwrap(), 4.0);
        let values = [0.0, 2.0, 4.0, 0.0];
        assert_eq!(q_value(&m, &values, 0, 1).unwrap(), 4.0);
        assert_eq!(q_value(&m, &values, 1, 1), Err(SolveError::Unavailable { state: 1, action: 1 }));
    }

    /// s0 may go straight (cost 1 to s1) or detour via s2 (cost 1 + 1).
    fn detour() -> Ssp {
        Ssp {
            state_names: named(4),
            action_names: vec!["straight".into(), "detour".into()],
            choices: vec![
                vec![choice(0, 1.0, vec![(1, 1.0)]), choice(1, 1.0, vec![(2, 1.0)])],
                vec![choice(0, 1.0, vec![(3, 1.0)])],
                vec![choice(0, 1.0, vec![(1, 1.0)])],
                vec![choice(0, 0.0, vec![(3, 1.0)])],
            ],
            start: 0,
            goal: 3,
        }
    }

    #[test]
    fn optimal_policy_evaluates_to_solved_values() {
        let m = detour();
        let sol = solve(&m, SolveOptions::default()).unwrap();
        let v = evaluate_policy(&m, &sol.policy, SolveOptions::default()).unwrap();
        for (a, b) in v.iter().zip(&sol.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn detour_policy_costs_detour_length() {
        let v = evaluate_policy(&detour(), &[1, 0, 0, 0], SolveOptions::default()).unwrap();
        assert!((v[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn looping_policy_is_improper() {
        let m = Ssp {
            state_names: named(3),
            action_names: vec!["stay".into(), "go".into()],
            choices: vec![
                vec![choice(0, 1.0, vec![(0, 1.0)]), choice(1, 1.0, vec![(2, 1.0)])],
                vec![choice(1, 1.0, vec![(2, 1.0)])],
                vec![choice(0, 0.0, vec![(2, 1.0)])],
            ],
            start: 0,
            goal: 2,
        };
        let opts = SolveOptions { tolerance: 1e-6, iteration_cap: 1_000 };
        assert_eq!(evaluate_policy(&m, &[0, 1, 0], opts), Err(SolveError::ImproperPolicy { state: 0 }));
    }

    #[test]
    fn unreachable_goal_fails_to_converge() {
        let m = Ssp {
            state_names: named(2),
            action_names: vec!["stay".into()],
            choices: vec![vec![choice(0, 1.0, vec![(0, 1.0)])], vec![choice(0, 0.0, vec![(1, 1.0)])]],
            start: 0,
            goal: 1,
        };
        let err = solve(&m, SolveOptions { tolerance: 1e-6, iteration_cap: 500 }).unwrap_err();
        assert!(matches!(err, SolveError::NotConverged { state: 0, .. }));
    }

    #[test]
    fn ties_pick_lowest_action() {
        let m = Ssp {
            state_names: named(2),
            action_names: vec!["a".into(), "b".into()],
            choices: vec![
                vec![choice(0, 1.0, vec![(1, 1.0)]), choice(1, 1.0, vec![(1, 1.0)])],
                vec![choice(0, 0.0, vec![(1, 1.0)])],
            ],
            start: 0,
            goal: 1,
        };
        assert_eq!(solve(&m, SolveOptions::default()).unwrap().policy[0], 0);
    }
}
