//! Additive log-odds model with pairwise interactions, fit by cyclic boosting.
//!
//! Every input (each conditioning feature, the action, the prior level and
//! the level) is categorical. The model keeps one lookup table per input and
//! one per pair of inputs; each table cell holds a logit contribution for
//! every signal. A boosting round visits the terms in a fixed order and
//! applies one damped Newton step per cell of the softmax cross-entropy,
//! restricted to the signals legal at each record's level.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cas::{Level, Signal, SignalDist};

use super::Context;

/// Hyperparameter grid searched on an internal holdout.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostingGrid {
    pub learning_rates: Vec<f64>,
    pub rounds: Vec<usize>,
    pub holdout: f64,
    pub l2: f64,
}

impl Default for BoostingGrid {
    fn default() -> Self {
        Self { learning_rates: vec![0.1, 0.3], rounds: vec![25, 75], holdout: 0.2, l2: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Term {
    inputs: Vec<usize>,
    table: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveModel {
    /// Number of categories per input; the last category of a feature input means "absent".
    arity: Vec<usize>,
    actions: BTreeMap<String, usize>,
    terms: Vec<Term>,
    pub learning_rate: f64,
    pub rounds: usize,
}

impl AdditiveModel {
    fn encode(&self, ctx: &Context) -> Vec<usize> {
        let nf = ctx.features.len();
        let mut x = Vec::with_capacity(nf + 3);
        for (i, v) in ctx.features.iter().enumerate() {
            x.push(v.map_or(self.arity[i] - 1, |v| (v as usize).min(self.arity[i] - 2)));
        }
        x.push(self.actions.get(&ctx.action).copied().unwrap_or(self.arity[nf] - 1));
        x.push(ctx.prior.index());
        x.push(ctx.level.index());
        x
    }

    fn cell(&self, term: &Term, x: &[usize]) -> usize {
        term.inputs.iter().fold(0, |acc, &i| acc * self.arity[i] + x[i])
    }

    fn scores(&self, x: &[usize]) -> [f64; 4] {
        let mut f = [0.0; 4];
        for t in &self.terms {
            let c = t.table[self.cell(t, x)];
            for k in 0..4 {
                f[k] += c[k];
            }
        }
        f
    }

    pub fn predict(&self, ctx: &Context) -> SignalDist {
        softmax(&self.scores(&self.encode(ctx)), ctx.level)
    }

    fn empty(contexts: &[Context], feature_arity: &[usize]) -> Self {
        let mut actions = BTreeMap::new();
        for c in contexts {
            let next = actions.len();
            actions.entry(c.action.clone()).or_insert(next);
        }
        let mut arity: Vec<usize> = feature_arity.iter().map(|a| a + 1).collect();
        arity.push(actions.len() + 1);
        arity.push(4);
        arity.push(4);
        let n = arity.len();
        let mut terms = Vec::new();
        for i in 0..n {
            terms.push(vec![i]);
        }
        for i in 0..n {
            for j in i + 1..n {
                terms.push(vec![i, j]);
            }
        }
        let terms = terms
            .into_iter()
            .map(|inputs| {
                let cells = inputs.iter().map(|&i| arity[i]).product();
                Term { inputs, table: vec![[0.0; 4]; cells] }
            })
            .collect();
        Self { arity, actions, terms, learning_rate: 0.0, rounds: 0 }
    }

    pub fn fit(
        contexts: &[Context],
        labels: &[Signal],
        feature_arity: &[usize],
        lr: f64,
        rounds: usize,
        l2: f64,
    ) -> Self {
        let mut model = Self::empty(contexts, feature_arity);
        model.learning_rate = lr;
        model.rounds = rounds;
        let xs: Vec<Vec<usize>> = contexts.iter().map(|c| model.encode(c)).collect();
        let levels: Vec<Level> = contexts.iter().map(|c| c.level).collect();
        let cells: Vec<Vec<usize>> =
            model.terms.iter().map(|t| xs.iter().map(|x| model.cell(t, x)).collect()).collect();
        let mut f = vec![[0.0; 4]; xs.len()];
        for _ in 0..rounds {
            for (ti, term) in model.terms.iter_mut().enumerate() {
                let mut g = vec![[0.0; 4]; term.table.len()];
                let mut h = vec![[0.0; 4]; term.table.len()];
                for (i, &c) in cells[ti].iter().enumerate() {
                    let p = softmax(&f[i], levels[i]);
                    for s in levels[i].legal_signals() {
                        let k = s.index();
                        let y = if labels[i] == *s { 1.0 } else { 0.0 };
                        g[c][k] += p.0[k] - y;
                        h[c][k] += p.0[k] * (1.0 - p.0[k]);
                    }
                }
                for c in 0..term.table.len() {
                    for k in 0..4 {
                        if h[c][k] > 0.0 {
                            term.table[c][k] -= lr * g[c][k] / (h[c][k] + l2);
                        }
                    }
                }
                for (i, &c) in cells[ti].iter().enumerate() {
                    for k in 0..4 {
                        if h[c][k] > 0.0 {
                            f[i][k] -= lr * g[c][k] / (h[c][k] + l2);
                        }
                    }
                }
            }
        }
        model
    }

    /// Picks learning rate and round count by holdout log-loss, then refits on everything.
    pub fn fit_with_grid(
        contexts: &[Context],
        labels: &[Signal],
        feature_arity: &[usize],
        grid: &BoostingGrid,
        seed: u64,
    ) -> Self {
        let lr0 = grid.learning_rates.first().copied().unwrap_or(0.1);
        let r0 = grid.rounds.first().copied().unwrap_or(25);
        let n = contexts.len();
        let n_hold = (grid.holdout * n as f64).round() as usize;
        let candidates = grid.learning_rates.len() * grid.rounds.len();
        if n_hold == 0 || n_hold == n || candidates <= 1 {
            return Self::fit(contexts, labels, feature_arity, lr0, r0, grid.l2);
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (hold, fit_idx) = idx.split_at(n_hold);
        let pick = |ids: &[usize]| -> (Vec<Context>, Vec<Signal>) {
            (ids.iter().map(|&i| contexts[i].clone()).collect(), ids.iter().map(|&i| labels[i]).collect())
        };
        let (fc, fl) = pick(fit_idx);
        let (hc, hl) = pick(hold);
        let mut best = (f64::INFINITY, lr0, r0);
        for &lr in &grid.learning_rates {
            for &rounds in &grid.rounds {
                let m = Self::fit(&fc, &fl, feature_arity, lr, rounds, grid.l2);
                let loss: f64 = hc.iter().zip(&hl).map(|(c, y)| -m.predict(c).get(*y).max(1e-12).ln()).sum::<f64>()
                    / hc.len() as f64;
                if loss < best.0 {
                    best = (loss, lr, rounds);
                }
            }
        }
        Self::fit(contexts, labels, feature_arity, best.1, best.2, grid.l2)
    }
}

fn softmax(f: &[f64; 4], level: Level) -> SignalDist {
    let legal = level.legal_signals();
    if legal.is_empty() {
        return SignalDist::certain(Signal::NoSignal);
    }
    let max = legal.iter().map(|s| f[s.index()]).fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; 4];
    let mut z = 0.0;
    for s in legal {
        let e = (f[s.index()] - max).exp();
        p[s.index()] = e;
        z += e;
    }
    for s in legal {
        p[s.index()] /= z;
    }
    SignalDist(p)
}
