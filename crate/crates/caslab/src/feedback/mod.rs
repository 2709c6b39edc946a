//! Human feedback records and the learned feedback profile.
//!
//! Records always carry the complete feature assignment, whatever the
//! active feature space was when they were logged, so a profile can be
//! retrained on a wider feature space after refinement.

mod ga2m;
mod log;
mod profile;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cas::{Level, Signal};

pub use self::ga2m::{AdditiveModel, BoostingGrid};
pub use self::log::{read_log, write_log};
pub use self::profile::{evaluate, train_profile, Estimator, TrainOptions, TrainedProfile};

/// Index of a value within its feature's value list.
pub type ValueId = u16;

/// Full assignment over the complete feature space. `None` marks a feature
/// that does not apply (e.g. door size at a crosswalk).
pub type Assignment = Vec<Option<ValueId>>;

#[derive(Debug, Error, PartialEq)]
pub enum FeedbackError {
    #[error("signal {signal} cannot be received at level {level}")]
    LevelSupport { signal: Signal, level: Level },
    #[error("record has {got} feature values, catalog has {expected}")]
    Arity { got: usize, expected: usize },
    #[error("feature {feature} has no value with index {value}")]
    UnknownValue { feature: String, value: ValueId },
    #[error("feature {0:?} needs at least two values")]
    TooFewValues(String),
    #[error("duplicate feature name {0:?}")]
    DuplicateFeature(String),
    #[error("active feature index {0} out of range")]
    ActiveOutOfRange(usize),
    #[error("training set is empty")]
    EmptyTraining,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("feedback log line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("feedback log: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feature {
    pub name: String,
    pub values: Vec<String>,
}

impl Feature {
    pub fn new(name: &str, values: &[&str]) -> Self {
        Self { name: name.to_string(), values: values.iter().map(|v| v.to_string()).collect() }
    }

    pub fn value_id(&self, value: &str) -> Option<ValueId> {
        self.values.iter().position(|v| v == value).map(|i| i as ValueId)
    }
}

/// The complete feature space split into active and inactive features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureCatalog {
    complete: Vec<Feature>,
    active: BTreeSet<usize>,
}

impl FeatureCatalog {
    pub fn new(complete: Vec<Feature>, active: impl IntoIterator<Item = usize>) -> Result<Self, FeedbackError> {
        let mut seen = BTreeSet::new();
        for f in &complete {
            if f.values.len() < 2 {
                return Err(FeedbackError::TooFewValues(f.name.clone()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(FeedbackError::DuplicateFeature(f.name.clone()));
            }
        }
        let active: BTreeSet<usize> = active.into_iter().collect();
        if let Some(&bad) = active.iter().find(|&&i| i >= complete.len()) {
            return Err(FeedbackError::ActiveOutOfRange(bad));
        }
        Ok(Self { complete, active })
    }

    pub fn complete(&self) -> &[Feature] {
        &self.complete
    }

    pub fn feature(&self, index: usize) -> &Feature {
        &self.complete[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.complete.iter().position(|f| f.name == name)
    }

    pub fn len(&self) -> usize {
        self.complete.len()
    }

    pub fn is_empty(&self) -> bool {
        self.complete.is_empty()
    }

    /// Active feature indices, ascending.
    pub fn active(&self) -> Vec<usize> {
        self.active.iter().copied().collect()
    }

    pub fn inactive(&self) -> Vec<usize> {
        (0..self.complete.len()).filter(|i| !self.active.contains(i)).collect()
    }

    pub fn is_active(&self, index: usize) -> bool {
        self.active.contains(&index)
    }

    /// Activates the given features (the active space grows by their cross product).
    pub fn augmented(&self, features: &[usize]) -> Self {
        let mut next = self.clone();
        next.active.extend(features.iter().copied().filter(|&i| i < self.complete.len()));
        next
    }

    pub fn active_names(&self) -> Vec<&str> {
        self.active.iter().map(|&i| self.complete[i].name.as_str()).collect()
    }
}

/// One logged interaction with the human.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeedbackRecord {
    pub episode: usize,
    pub location: String,
    pub features: Assignment,
    pub action: String,
    pub prior_level: Level,
    pub level: Level,
    pub signal: Signal,
}

impl FeedbackRecord {
    pub fn validate(&self, catalog: &FeatureCatalog) -> Result<(), FeedbackError> {
        if !self.signal.allowed_at(self.level) {
            return Err(FeedbackError::LevelSupport { signal: self.signal, level: self.level });
        }
        if self.features.len() != catalog.len() {
            return Err(FeedbackError::Arity { got: self.features.len(), expected: catalog.len() });
        }
        for (f, v) in catalog.complete().iter().zip(&self.features) {
            if let Some(v) = *v {
                if v as usize >= f.values.len() {
                    return Err(FeedbackError::UnknownValue { feature: f.name.clone(), value: v });
                }
            }
        }
        Ok(())
    }

    /// Context seen by a profile conditioning on `features`.
    pub fn context(&self, features: &[usize]) -> Context {
        Context {
            features: features.iter().map(|&i| self.features[i]).collect(),
            action: self.action.clone(),
            prior: self.prior_level,
            level: self.level,
        }
    }
}

/// What a feedback profile conditions on: a projection of the feature
/// assignment, the action and both levels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Context {
    pub features: Vec<Option<ValueId>>,
    pub action: String,
    pub prior: Level,
    pub level: Level,
}

/// Append-only multiset of feedback records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackDataset {
    records: Vec<FeedbackRecord>,
}

impl FeedbackDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, catalog: &FeatureCatalog, rec: FeedbackRecord) -> Result<(), FeedbackError> {
        rec.validate(catalog)?;
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[FeedbackRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A seeded train/validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<FeedbackRecord>,
    pub validation: Vec<FeedbackRecord>,
    /// Set when the validation side came out empty.
    pub degenerate: bool,
}

/// Minimum records per signal class before the split is stratified.
const STRATIFY_MIN: usize = 4;

/// Splits records into train and validation with `ratio` going to train.
///
/// When every signal present has at least four records, each class is split
/// separately so both sides keep the label mix; the per-class quotas are
/// rounded with largest remainders so the total train size is still
/// `round(ratio · n)`. Records keep their original relative order.
pub fn split(records: &[FeedbackRecord], ratio: f64, seed: u64) -> Split {
    let n = records.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = ((ratio * n as f64).round() as usize).clamp(n.min(1), n);

    let mut classes: Vec<Vec<usize>> = vec![Vec::new(); Signal::ALL.len()];
    for (i, r) in records.iter().enumerate() {
        classes[r.signal.index()].push(i);
    }
    let present: Vec<&Vec<usize>> = classes.iter().filter(|c| !c.is_empty()).collect();
    let stratify = !present.is_empty() && present.iter().all(|c| c.len() >= STRATIFY_MIN);

    let mut train_idx = Vec::with_capacity(target);
    if stratify {
        let exact: Vec<f64> = classes.iter().map(|c| ratio * c.len() as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..classes.len()).filter(|&k| !classes[k].is_empty()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let mut missing = target.saturating_sub(quota.iter().sum());
        for &k in order.iter().cycle().take(order.len() * 2) {
            if missing == 0 {
                break;
            }
            if quota[k] < classes[k].len() {
                quota[k] += 1;
                missing -= 1;
            }
        }
        for (k, class) in classes.iter_mut().enumerate() {
            class.shuffle(&mut rng);
            train_idx.extend_from_slice(&class[..quota[k]]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        train_idx.extend_from_slice(&all[..target]);
    }
    let mut in_train = vec![false; n];
    for &i in &train_idx {
        in_train[i] = true;
    }
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (r, t) in records.iter().zip(in_train) {
        if t {
            train.push(r.clone());
        } else {
            validation.push(r.clone());
        }
    }
    let degenerate = validation.is_empty();
    Split { train, validation, degenerate }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn door_catalog() -> FeatureCatalog {
        FeatureCatalog::new(
            vec![
                Feature::new("size", &["light", "medium", "heavy"]),
                Feature::new("color", &["red", "blue", "brown", "gray"]),
            ],
            [],
        )
        .unwrap()
    }

    pub fn rec(size: u16, color: u16, level: Level, signal: Signal) -> FeedbackRecord {
        FeedbackRecord {
            episode: 0,
            location: "3:4".into(),
            features: vec![Some(size), Some(color)],
            action: "open-door".into(),
            prior_level: Level::L3,
            level,
            signal,
        }
    }

    #[test]
    fn catalog_partitions_features() {
        let c = door_catalog().augmented(&[1]);
        assert_eq!(c.active(), vec![1]);
        assert_eq!(c.inactive(), vec![0]);
        assert!(FeatureCatalog::new(vec![Feature::new("x", &["only"])], []).is_err());
        assert!(FeatureCatalog::new(vec![Feature::new("x", &["a", "b"])], [3]).is_err());
    }

    #[test]
    fn record_appends() {
        let cat = door_catalog();
        let mut d = FeedbackDataset::new();
        d.record(&cat, rec(0, 0, Level::L1, Signal::Approval)).unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn override_at_l1_is_rejected() {
        let cat = door_catalog();
        let mut d = FeedbackDataset::new();
        let err = d.record(&cat, rec(0, 0, Level::L1, Signal::Override)).unwrap_err();
        assert_eq!(err, FeedbackError::LevelSupport { signal: Signal::Override, level: Level::L1 });
        assert!(d.is_empty());
    }

    #[test]
    fn duplicates_are_kept() {
        let cat = door_catalog();
        let mut d = FeedbackDataset::new();
        let r = rec(1, 1, Level::L2, Signal::NoSignal);
        d.record(&cat, r.clone()).unwrap();
        d.record(&cat, r).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.records()[0], d.records()[1]);
    }

    #[test]
    fn split_sizes_follow_ratio() {
        let records: Vec<_> = (0..100)
            .map(|i| rec(i % 3, 0, Level::L1, if i % 4 == 0 { Signal::Disapproval } else { Signal::Approval }))
            .collect();
        let s = split(&records, 0.75, 7);
        assert_eq!((s.train.len(), s.validation.len()), (75, 25));
        assert!(!s.degenerate);
    }

    #[test]
    fn single_record_goes_to_train() {
        let s = split(&[rec(0, 0, Level::L1, Signal::Approval)], 0.75, 1);
        assert_eq!(s.train.len(), 1);
        assert!(s.validation.is_empty());
        assert!(s.degenerate);
    }

    #[test]
    fn split_is_seeded() {
        let records: Vec<_> = (0..40)
            .map(|i| {
                let mut r = rec(i % 3, i % 4, Level::L1, Signal::Approval);
                r.episode = i as usize;
                r
            })
            .collect();
        assert_eq!(split(&records, 0.75, 3), split(&records, 0.75, 3));
        assert_ne!(split(&records, 0.75, 3).train, split(&records, 0.75, 4).train);
    }

    #[test]
    fn stratified_split_keeps_label_mix() {
        let records: Vec<_> = (0..40)
            .map(|i| {
                let mut r = rec(0, 0, Level::L1, if i < 8 { Signal::Disapproval } else { Signal::Approval });
                r.episode = i;
                r
            })
            .collect();
        let s = split(&records, 0.75, 11);
        let dis = s.train.iter().filter(|r| r.signal == Signal::Disapproval).count();
        assert_eq!(dis, 6);
        assert_eq!(s.train.len(), 30);
    }
}
