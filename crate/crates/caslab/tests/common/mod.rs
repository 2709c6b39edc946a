#![allow(dead_code)]

use std::collections::HashMap;

use caslab::cas::{
    AutonomyModel, Cas, CasBuilder, HumanCost, HumanFeedbackModel, Level, LevelSet, SignalDist, SwitchCost,
};
use caslab::ssp::{ActionId, Choice, Ssp, StateId, Successors};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random SSP with `2..=max_states` states (the last is the goal) and
/// `1..=max_actions` actions per state. Action 0 always reaches the goal
/// with probability at least 0.2, so a proper policy exists; the others
/// may loop.
pub fn random_ssp<R: Rng>(rng: &mut R, max_states: usize, max_actions: usize) -> Ssp {
    let n = rng.gen_range(2..=max_states);
    let goal = n - 1;
    let mut choices = Vec::with_capacity(n);
    for s in 0..n {
        if s == goal {
            choices.push(vec![Choice { action: 0, cost: 0.0, successors: vec![(goal, 1.0)] }]);
            continue;
        }
        let k = rng.gen_range(1..=max_actions);
        let mut row = Vec::with_capacity(k);
        for a in 0..k {
            let mut w: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.6) { rng.gen::<f64>() } else { 0.0 }).collect();
            if a == 0 {
                let rest: f64 = w.iter().sum::<f64>() - w[goal];
                w[goal] = w[goal].max(0.25 * rest).max(0.01);
            }
            if w.iter().sum::<f64>() == 0.0 {
                w[s] = 1.0;
            }
            let total: f64 = w.iter().sum();
            let successors = w.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(t, p)| (t, p / total)).collect();
            row.push(Choice { action: a, cost: rng.gen_range(0.1..5.0), successors });
        }
        choices.push(row);
    }
    Ssp {
        state_names: (0..n).map(|i| format!("s{i}")).collect(),
        action_names: (0..max_actions).map(|a| format!("a{a}")).collect(),
        choices,
        start: 0,
        goal,
    }
}

/// Optimal values by brute force: the pointwise minimum of the exact values
/// of every proper deterministic policy.
pub fn enumerate_optimum(m: &Ssp) -> Vec<f64> {
    let n = m.choices.len();
    let mut best = vec![f64::INFINITY; n];
    let mut pick = vec![0usize; n];
    loop {
        let rows: Vec<&Choice> = (0..n).map(|s| &m.choices[s][pick[s]]).collect();
        if proper(m, &rows) {
            let v = exact_values(m, &rows);
            for s in 0..n {
                best[s] = best[s].min(v[s]);
            }
        }
        let mut s = 0;
        loop {
            if s == n {
                return best;
            }
            pick[s] += 1;
            if pick[s] < m.choices[s].len() {
                break;
            }
            pick[s] = 0;
            s += 1;
        }
    }
}

fn proper(m: &Ssp, rows: &[&Choice]) -> bool {
    let n = rows.len();
    let mut reaches = vec![false; n];
    reaches[m.goal] = true;
    let mut grew = true;
    while grew {
        grew = false;
        for s in 0..n {
            if !reaches[s] && rows[s].successors.iter().any(|&(t, p)| p > 0.0 && reaches[t]) {
                reaches[s] = true;
                grew = true;
            }
        }
    }
    reaches.into_iter().all(|r| r)
}

/// Solves `(I - P) v = c` with `v(goal) = 0` by Gaussian elimination.
fn exact_values(m: &Ssp, rows: &[&Choice]) -> Vec<f64> {
    let n = rows.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for s in 0..n {
        a[s][s] = 1.0;
        if s == m.goal {
            continue;
        }
        for &(t, p) in &rows[s].successors {
            a[s][t] -= p;
        }
        a[s][n] = rows[s].cost;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        let pivot = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col {
                let f = row[col] / pivot[col];
                for (x, p) in row.iter_mut().zip(&pivot).skip(col) {
                    *x -= f * p;
                }
            }
        }
    }
    (0..n).map(|s| a[s][n] / a[s][s]).collect()
}

/// Random distribution over the signals legal at `level`.
pub fn random_dist<R: Rng>(rng: &mut R, level: Level) -> SignalDist {
    let legal = level.legal_signals();
    if legal.is_empty() {
        return SignalDist::uniform_at(level);
    }
    let mut p = [0.0; 4];
    for s in legal {
        p[s.index()] = rng.gen::<f64>() + 1e-3;
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    SignalDist(p)
}

/// A random domain with random kappa, feedback and takeover dynamics.
pub struct Fixture {
    pub domain: Ssp,
    pub autonomy: AutonomyModel,
    dists: HashMap<(StateId, Level, ActionId, Level), SignalDist>,
    tau: HashMap<(StateId, ActionId), Successors>,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let domain = random_ssp(&mut rng, 6, 3);
        let autonomy = AutonomyModel::new(&domain, SwitchCost::default(), |_, _| loop {
            let set = LevelSet::of(&Level::ALL.iter().copied().filter(|_| rng.gen_bool(0.5)).collect::<Vec<_>>());
            if !set.is_empty() {
                break set;
            }
        });
        let mut dists = HashMap::new();
        let mut tau = HashMap::new();
        for (s, row) in domain.choices.iter().enumerate() {
            for c in row {
                tau.insert((s, c.action), vec![(domain.goal, 1.0)]);
                for prior in Level::ALL {
                    for level in Level::ALL {
                        dists.insert((s, prior, c.action, level), random_dist(&mut rng, level));
                    }
                }
            }
        }
        Self { domain, autonomy, dists, tau }
    }

    pub fn build(&self, rho: HumanCost) -> Cas {
        let profile = |s: StateId, prior: Level, a: ActionId, level: Level| self.dists[&(s, prior, a, level)];
        let tau = |s: StateId, a: ActionId| self.tau[&(s, a)].clone();
        let human = HumanFeedbackModel { profile: &profile, rho, tau: &tau };
        CasBuilder::new(&self.domain, &self.autonomy, human).build().unwrap()
    }
}
