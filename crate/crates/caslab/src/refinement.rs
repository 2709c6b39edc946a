//! Growing the active feature space from inconsistent feedback.
//!
//! A context whose feedback the profile cannot predict confidently, despite
//! enough visits, is *indiscriminate*. Its records are isolated and every
//! inactive feature value is correlated against the received signals. The
//! best-scoring feature sets are tried as *discriminators*: a profile trained
//! with them must beat the current one on held-out data by at least `alpha`
//! and must not make any previously confident context indiscriminate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::cas::{Signal, SignalDist};
use crate::feedback::{
    self, evaluate, train_profile, Context, FeatureCatalog, FeedbackError, FeedbackRecord, TrainOptions,
    TrainedProfile, ValueId,
};

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("confidence threshold {theta} must lie in (1/{signals}, 1 - epsilon = {upper}]")]
    Threshold { theta: f64, signals: usize, upper: f64 },
    #[error("minimum visit count must be at least 1")]
    MinVisits,
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
}

/// When a context counts as indiscriminate.
#[derive(Debug, Clone, PartialEq)]
pub struct IndiscriminateQuery {
    /// A context is confident when some signal has at least this probability.
    pub theta: f64,
    /// Minimum number of logged visits.
    pub min_visits: usize,
    /// Restrict the search to one context.
    pub target: Option<Context>,
}

impl IndiscriminateQuery {
    pub fn new(theta: f64, min_visits: usize, epsilon: f64) -> Result<Self, RefineError> {
        let lower = 1.0 / Signal::ALL.len() as f64;
        let upper = 1.0 - epsilon;
        if !(theta > lower && theta <= upper) {
            return Err(RefineError::Threshold { theta, signals: Signal::ALL.len(), upper });
        }
        if min_visits == 0 {
            return Err(RefineError::MinVisits);
        }
        Ok(Self { theta, min_visits, target: None })
    }
}

/// Visit counts per context under a projection.
pub fn visit_counts(records: &[FeedbackRecord], features: &[usize]) -> BTreeMap<Context, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.context(features)).or_insert(0) += 1;
    }
    counts
}

/// Contexts with enough visits where no signal reaches `theta`, in context order.
pub fn indiscriminate_contexts(
    visits: &BTreeMap<Context, usize>,
    predict: impl Fn(&Context) -> SignalDist,
    query: &IndiscriminateQuery,
) -> Vec<Context> {
    visits
        .iter()
        .filter(|(ctx, &n)| n >= query.min_visits && query.target.as_ref().is_none_or(|t| t == *ctx))
        .filter(|(ctx, _)| predict(ctx).max_probability() < query.theta)
        .map(|(ctx, _)| ctx.clone())
        .collect()
}

pub fn find_indiscriminate(
    profile: &TrainedProfile,
    records: &[FeedbackRecord],
    query: &IndiscriminateQuery,
) -> Vec<Context> {
    let visits = visit_counts(records, &profile.features);
    indiscriminate_contexts(&visits, |c| profile.predict_context(c), query)
}

/// Seeded uniform choice over the indiscriminate contexts.
pub fn sample_indiscriminate<R: Rng>(found: &[Context], rng: &mut R) -> Option<Context> {
    found.choose(rng).cloned()
}

/// Pearson correlation of each candidate feature-value indicator with each signal indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub rows: Vec<(usize, ValueId)>,
    pub entries: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EmptyMatrix {
    #[error("fewer than two records for the target")]
    TooFewRecords,
    #[error("the target received a single signal")]
    SingleSignal,
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Correlations over the records of `target`, with the target identified by
/// projecting records onto `target_features`.
pub fn correlation_matrix(
    train: &[FeedbackRecord],
    target: &Context,
    target_features: &[usize],
    candidates: &[usize],
    catalog: &FeatureCatalog,
) -> Result<CorrelationMatrix, EmptyMatrix> {
    let isolated: Vec<&FeedbackRecord> = train.iter().filter(|r| r.context(target_features) == *target).collect();
    if isolated.len() < 2 {
        return Err(EmptyMatrix::TooFewRecords);
    }
    let signals: BTreeSet<Signal> = isolated.iter().map(|r| r.signal).collect();
    if signals.len() < 2 {
        return Err(EmptyMatrix::SingleSignal);
    }
    let ys: Vec<Vec<f64>> =
        Signal::ALL.iter().map(|s| isolated.iter().map(|r| f64::from(u8::from(r.signal == *s))).collect()).collect();
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for &f in candidates {
        for v in 0..catalog.feature(f).values.len() as ValueId {
            let x: Vec<f64> = isolated.iter().map(|r| f64::from(u8::from(r.features[f] == Some(v)))).collect();
            let mut e = [0.0; 4];
            for (k, y) in ys.iter().enumerate() {
                e[k] = pearson(&x, y);
            }
            rows.push((f, v));
            entries.push(e);
        }
    }
    Ok(CorrelationMatrix { rows, entries })
}

/// Mean over the set's rows of the largest absolute correlation in each row.
pub fn discrimination_score(corr: &CorrelationMatrix, set: &[usize]) -> f64 {
    let maxima: Vec<f64> = corr
        .rows
        .iter()
        .zip(&corr.entries)
        .filter(|((f, _), _)| set.contains(f))
        .map(|(_, e)| e.iter().map(|c| c.abs()).fold(0.0, f64::max))
        .collect();
    if maxima.is_empty() {
        0.0
    } else {
        maxima.iter().sum::<f64>() / maxima.len() as f64
    }
}

pub fn discrimination_scores(corr: &CorrelationMatrix, sets: &[Vec<usize>]) -> Vec<(Vec<usize>, f64)> {
    sets.iter().map(|s| (s.clone(), discrimination_score(corr, s))).collect()
}

/// All nonempty subsets of `features` with at most `max_cardinality` members, lexicographic.
pub fn candidate_sets(features: &[usize], max_cardinality: usize) -> Vec<Vec<usize>> {
    fn extend(features: &[usize], from: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for i in from..features.len() {
            cur.push(features[i]);
            out.push(cur.clone());
            if left > 1 {
                extend(features, i + 1, left - 1, cur, out);
            }
            cur.pop();
        }
    }
    let mut out = Vec::new();
    extend(features, 0, max_cardinality, &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub features: Vec<usize>,
    pub score: f64,
}

/// The `k` best candidate sets; ties prefer fewer features, then lexicographic order.
pub fn get_discriminators(
    train: &[FeedbackRecord],
    k: usize,
    target: &Context,
    target_features: &[usize],
    catalog: &FeatureCatalog,
    max_cardinality: usize,
) -> Result<Vec<Discriminator>, EmptyMatrix> {
    let inactive: Vec<usize> = catalog.inactive().into_iter().filter(|f| !target_features.contains(f)).collect();
    let corr = correlation_matrix(train, target, target_features, &inactive, catalog)?;
    let sets = candidate_sets(&inactive, max_cardinality);
    let mut scored: Vec<Discriminator> = discrimination_scores(&corr, &sets)
        .into_iter()
        .map(|(features, score)| Discriminator { features, score })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.features.len().cmp(&b.features.len()))
            .then(a.features.cmp(&b.features))
    });
    scored.truncate(k);
    Ok(scored)
}

/// Result of checking a discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub accepted: bool,
    pub old_accuracy: f64,
    pub new_accuracy: f64,
    /// New indiscriminate contexts whose coarser counterpart was confident.
    pub regressions: Vec<Context>,
}

impl Verdict {
    pub fn reason(&self) -> &'static str {
        if self.accepted {
            "accepted"
        } else if !self.regressions.is_empty() {
            "regression"
        } else {
            "insufficient-gain"
        }
    }
}

fn project(ctx: &Context, from: &[usize], onto: &[usize]) -> Context {
    Context {
        features: onto.iter().map(|f| from.iter().position(|g| g == f).and_then(|i| ctx.features[i])).collect(),
        ..ctx.clone()
    }
}

/// Accepts when accuracy improves by at least `alpha` and the indiscriminate set does not grow.
pub fn validate_discriminator(
    old_profile: &TrainedProfile,
    new_profile: &TrainedProfile,
    validation: &[FeedbackRecord],
    records: &[FeedbackRecord],
    alpha: f64,
    query: &IndiscriminateQuery,
) -> Result<Verdict, FeedbackError> {
    let old_accuracy = evaluate(old_profile, validation)?;
    let new_accuracy = evaluate(new_profile, validation)?;
    let unrestricted = IndiscriminateQuery { target: None, ..query.clone() };
    let before: BTreeSet<Context> = find_indiscriminate(old_profile, records, &unrestricted).into_iter().collect();
    let regressions: Vec<Context> = find_indiscriminate(new_profile, records, &unrestricted)
        .into_iter()
        .filter(|c| !before.contains(&project(c, &new_profile.features, &old_profile.features)))
        .collect();
    let accepted = new_accuracy - old_accuracy >= alpha - 1e-12 && regressions.is_empty();
    Ok(Verdict { accepted, old_accuracy, new_accuracy, regressions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineParams {
    pub query: IndiscriminateQuery,
    pub k: usize,
    pub alpha: f64,
    pub split_ratio: f64,
    pub max_cardinality: usize,
    pub train: TrainOptions,
}

/// Why a refinement step left the model unchanged.
#[derive(Debug, Clone, PartialEq)]
pub enum NoChange {
    NoIndiscriminate,
    EmptyMatrix(EmptyMatrix),
    NoCandidates,
    DegenerateSplit,
    /// The validation split holds no records of the target context.
    NoValidation,
    Rejected(Verdict),
}

/// One attempt, for the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementEvent {
    pub episode: usize,
    pub target: Option<String>,
    pub candidates: Vec<(String, f64)>,
    pub decision: String,
    pub old_accuracy: Option<f64>,
    pub new_accuracy: Option<f64>,
}

impl RefinementEvent {
    pub const HEADER: &'static str = "episode\ttarget\tcandidates\tdecision\told_accuracy\tnew_accuracy";

    pub fn line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let cands = self.candidates.iter().map(|(n, s)| format!("{n}={s:.6}")).collect::<Vec<_>>().join(";");
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.episode,
            self.target.as_deref().unwrap_or(""),
            cands,
            self.decision,
            opt(self.old_accuracy),
            opt(self.new_accuracy)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefineOutcome {
    /// The active space grew; the profile was retrained on the whole dataset.
    Accepted {
        catalog: FeatureCatalog,
        profile: Box<TrainedProfile>,
        discriminator: Discriminator,
    },
    Unchanged(NoChange),
}

/// Human-readable context description.
pub fn describe(ctx: &Context, features: &[usize], catalog: &FeatureCatalog) -> String {
    let mut s = format!("{}@{} prior={}", ctx.action, ctx.level, ctx.prior);
    for (&f, v) in features.iter().zip(&ctx.features) {
        let feat = catalog.feature(f);
        let value = v.map_or("-", |v| feat.values[v as usize].as_str());
        let _ = write!(s, " {}={}", feat.name, value);
    }
    s
}

fn set_name(set: &[usize], catalog: &FeatureCatalog) -> String {
    set.iter().map(|&f| catalog.feature(f).name.as_str()).collect::<Vec<_>>().join("+")
}

/// One pass of the refinement loop: sample an indiscriminate context, split,
/// score discriminators, train one profile per candidate, keep the best on
/// validation, and validate it against the current features.
pub fn refine_step<R: Rng>(
    records: &[FeedbackRecord],
    catalog: &FeatureCatalog,
    current: &TrainedProfile,
    params: &RefineParams,
    episode: usize,
    rng: &mut R,
) -> Result<(RefineOutcome, RefinementEvent), RefineError> {
    let mut event = RefinementEvent {
        episode,
        target: None,
        candidates: Vec::new(),
        decision: String::new(),
        old_accuracy: None,
        new_accuracy: None,
    };
    let unchanged = |mut event: RefinementEvent, why: NoChange| {
        event.decision = match &why {
            NoChange::NoIndiscriminate => "no-indiscriminate".into(),
            NoChange::EmptyMatrix(_) => "empty-matrix".into(),
            NoChange::NoCandidates => "no-candidates".into(),
            NoChange::DegenerateSplit => "degenerate-split".into(),
            NoChange::NoValidation => "no-validation-records".into(),
            NoChange::Rejected(v) => v.reason().into(),
        };
        Ok((RefineOutcome::Unchanged(why), event))
    };

    let found = find_indiscriminate(current, records, &params.query);
    let Some(target) = sample_indiscriminate(&found, rng) else {
        return unchanged(event, NoChange::NoIndiscriminate);
    };
    event.target = Some(describe(&target, &current.features, catalog));

    let parts = feedback::split(records, params.split_ratio, rng.gen());
    if parts.degenerate {
        return unchanged(event, NoChange::DegenerateSplit);
    }
    let discriminators =
        match get_discriminators(&parts.train, params.k, &target, &current.features, catalog, params.max_cardinality) {
            Ok(d) if d.is_empty() => return unchanged(event, NoChange::NoCandidates),
            Ok(d) => d,
            Err(e) => return unchanged(event, NoChange::EmptyMatrix(e)),
        };
    event.candidates = discriminators.iter().map(|d| (set_name(&d.features, catalog), d.score)).collect();

    // Gains are judged where the profile was unsure; elsewhere the regression check applies.
    let focus: Vec<FeedbackRecord> =
        parts.validation.iter().filter(|r| r.context(&current.features) == target).cloned().collect();
    if focus.is_empty() {
        return unchanged(event, NoChange::NoValidation);
    }
    let mut best: Option<(f64, Discriminator, TrainedProfile)> = None;
    for d in &discriminators {
        let p = train_profile(&parts.train, catalog, Some(&d.features), &params.train)?;
        let acc = evaluate(&p, &focus)?;
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, d.clone(), p));
        }
    }
    let (_, chosen, candidate_profile) = best.expect("at least one discriminator");
    let baseline = train_profile(&parts.train, catalog, None, &params.train)?;
    let verdict = validate_discriminator(&baseline, &candidate_profile, &focus, records, params.alpha, &params.query)?;
    event.old_accuracy = Some(verdict.old_accuracy);
    event.new_accuracy = Some(verdict.new_accuracy);
    if !verdict.accepted {
        return unchanged(event, NoChange::Rejected(verdict));
    }
    let next = catalog.augmented(&chosen.features);
    let mut profile = train_profile(records, &next, None, &params.train)?;
    profile.accuracy = Some(verdict.new_accuracy);
    event.decision = format!("accepted:{}", set_name(&chosen.features, catalog));
    Ok((RefineOutcome::Accepted { catalog: next, profile: Box::new(profile), discriminator: chosen }, event))
}
