use std::collections::{BTreeSet, HashMap};

use crate::cas::{Level, Signal, SignalDist};

use super::ga2m::{AdditiveModel, BoostingGrid};
use super::{Context, FeatureCatalog, FeedbackError, FeedbackRecord, ValueId};

/// Which model family backs a trained profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Add-one smoothed conditional frequencies per context.
    #[default]
    FrequencyTable,
    /// Boosted additive model with all pairwise interaction terms.
    Additive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub estimator: Estimator,
    pub seed: u64,
    pub grid: BoostingGrid,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { estimator: Estimator::FrequencyTable, seed: 0, grid: BoostingGrid::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Table(HashMap<Context, [u32; 4]>),
    Additive(AdditiveModel),
}

/// A feedback profile trained over a fixed set of conditioning features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProfile {
    /// Feature indices the profile conditions on, ascending.
    pub features: Vec<usize>,
    pub training_size: usize,
    /// Held-out accuracy, when it has been measured.
    pub accuracy: Option<f64>,
    seen: BTreeSet<Context>,
    /// Seen contexts with the prior level erased.
    seen_any_prior: BTreeSet<Context>,
    pooled: HashMap<Context, [u32; 4]>,
    model: Model,
}

/// The context with its prior level replaced by a fixed placeholder.
fn any_prior(ctx: &Context) -> Context {
    Context { prior: Level::L3, ..ctx.clone() }
}

impl TrainedProfile {
    /// Profile that has seen nothing: uniform over the legal signals everywhere.
    pub fn uninformed(features: Vec<usize>) -> Self {
        Self {
            features,
            training_size: 0,
            accuracy: None,
            seen: BTreeSet::new(),
            seen_any_prior: BTreeSet::new(),
            pooled: HashMap::new(),
            model: Model::Table(HashMap::new()),
        }
    }

    /// Uniform over the legal signals for a context never seen at any prior
    /// level. The table backs off to counts pooled over prior levels when
    /// only the prior is new.
    pub fn predict_context(&self, ctx: &Context) -> SignalDist {
        if !ctx.level.has_feedback() {
            return SignalDist::uniform_at(ctx.level);
        }
        let exact = self.seen.contains(ctx);
        if !exact && !self.seen_any_prior.contains(&any_prior(ctx)) {
            return SignalDist::uniform_at(ctx.level);
        }
        match &self.model {
            Model::Table(table) if exact => smoothed(table[ctx], ctx.level),
            Model::Table(_) => smoothed(self.pooled[&any_prior(ctx)], ctx.level),
            Model::Additive(m) => m.predict(ctx),
        }
    }

    /// Prediction from a complete feature assignment.
    pub fn predict(&self, features: &[Option<ValueId>], action: &str, prior: Level, level: Level) -> SignalDist {
        let ctx = Context {
            features: self.features.iter().map(|&i| features[i]).collect(),
            action: action.to_string(),
            prior,
            level,
        };
        self.predict_context(&ctx)
    }

    pub fn predict_record(&self, rec: &FeedbackRecord) -> SignalDist {
        self.predict_context(&rec.context(&self.features))
    }

    pub fn has_seen(&self, ctx: &Context) -> bool {
        self.seen.contains(ctx)
    }
}

fn smoothed(counts: [u32; 4], level: Level) -> SignalDist {
    let legal = level.legal_signals();
    let total: f64 = legal.iter().map(|s| counts[s.index()] as f64 + 1.0).sum();
    let mut p = [0.0; 4];
    for s in legal {
        p[s.index()] = (counts[s.index()] as f64 + 1.0) / total;
    }
    SignalDist(p)
}

/// Trains a profile on the active features, plus a candidate discriminator when given.
pub fn train_profile(
    train: &[FeedbackRecord],
    catalog: &FeatureCatalog,
    candidate: Option<&[usize]>,
    options: &TrainOptions,
) -> Result<TrainedProfile, FeedbackError> {
    if train.is_empty() {
        return Err(FeedbackError::EmptyTraining);
    }
    let mut features = catalog.active();
    features.extend(candidate.unwrap_or_default());
    features.sort_unstable();
    features.dedup();

    let contexts: Vec<Context> = train.iter().map(|r| r.context(&features)).collect();
    let seen: BTreeSet<Context> = contexts.iter().cloned().collect();
    let mut pooled: HashMap<Context, [u32; 4]> = HashMap::new();
    for (ctx, r) in contexts.iter().zip(train) {
        pooled.entry(any_prior(ctx)).or_default()[r.signal.index()] += 1;
    }
    let seen_any_prior = pooled.keys().cloned().collect();
    let model = match options.estimator {
        Estimator::FrequencyTable => {
            let mut table: HashMap<Context, [u32; 4]> = HashMap::new();
            for (ctx, r) in contexts.into_iter().zip(train) {
                table.entry(ctx).or_default()[r.signal.index()] += 1;
            }
            Model::Table(table)
        }
        Estimator::Additive => {
            let arities: Vec<usize> = features.iter().map(|&i| catalog.feature(i).values.len()).collect();
            let labels: Vec<Signal> = train.iter().map(|r| r.signal).collect();
            Model::Additive(AdditiveModel::fit_with_grid(&contexts, &labels, &arities, &options.grid, options.seed))
        }
    };
    Ok(TrainedProfile { features, training_size: train.len(), accuracy: None, seen, seen_any_prior, pooled, model })
}

/// Top-1 accuracy; a tied argmax counts as wrong.
pub fn evaluate(profile: &TrainedProfile, validation: &[FeedbackRecord]) -> Result<f64, FeedbackError> {
    if validation.is_empty() {
        return Err(FeedbackError::EmptyValidation);
    }
    let hits = validation.iter().filter(|r| profile.predict_record(r).argmax() == Some(r.signal)).count();
    Ok(hits as f64 / validation.len() as f64)
}
