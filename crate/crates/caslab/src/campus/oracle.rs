//! The simulated human: a rule table over complete obstacle features plus noise.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{campus_catalog, ActionKind};
use crate::cas::{Level, Signal, SignalDist};
use crate::feedback::{Assignment, ValueId};

/// Conjunction of "feature takes one of these values".
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Condition(pub BTreeMap<String, Vec<String>>);

impl Condition {
    fn of(pairs: &[(&str, &[&str])]) -> Self {
        Condition(pairs.iter().map(|(f, vs)| (f.to_string(), vs.iter().map(|v| v.to_string()).collect())).collect())
    }
}

/// When the human is content. At l1 a met condition means approval, at l2 it means no override.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleTable {
    pub crosswalk_l1: Condition,
    pub crosswalk_l2: Condition,
    pub door_l1: Condition,
    pub door_l2: Condition,
}

impl Default for RuleTable {
    fn default() -> Self {
        Self {
            crosswalk_l1: Condition::of(&[("visibility", &["clear"]), ("traffic", &["none", "light"])]),
            crosswalk_l2: Condition::of(&[("visibility", &["clear"]), ("traffic", &["none"])]),
            door_l1: Condition::of(&[("size", &["light", "medium"]), ("mechanism", &["push"])]),
            door_l2: Condition::of(&[("size", &["light"]), ("mechanism", &["push"])]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("the human only gives feedback at l1 and l2, not {0}")]
    Level(Level),
    #[error("rule mentions unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("rule mentions unknown value {value:?} of {feature}")]
    UnknownValue { feature: String, value: String },
    #[error("noise probability {0} outside [0, 1]")]
    Epsilon(f64),
    #[error("{0:?} is not an obstacle action")]
    NotObstacle(ActionKind),
}

type Compiled = Vec<(usize, BTreeSet<ValueId>)>;

fn compile(c: &Condition) -> Result<Compiled, OracleError> {
    let catalog = campus_catalog();
    c.0.iter()
        .map(|(name, values)| {
            let f = catalog.index_of(name).ok_or_else(|| OracleError::UnknownFeature(name.clone()))?;
            let ids = values
                .iter()
                .map(|v| {
                    catalog
                        .feature(f)
                        .value_id(v)
                        .ok_or_else(|| OracleError::UnknownValue { feature: name.clone(), value: v.clone() })
                })
                .collect::<Result<_, _>>()?;
            Ok((f, ids))
        })
        .collect()
}

fn holds(c: &Compiled, features: &Assignment) -> bool {
    c.iter().all(|(f, ok)| features[*f].is_some_and(|v| ok.contains(&v)))
}

/// An epsilon-consistent human whose intended signal depends only on the rule table.
#[derive(Debug, Clone)]
pub struct OracleAuthority {
    pub rules: RuleTable,
    pub epsilon: f64,
    compiled: [Compiled; 4],
}

impl OracleAuthority {
    pub fn new(rules: RuleTable, epsilon: f64) -> Result<Self, OracleError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(OracleError::Epsilon(epsilon));
        }
        let compiled = [
            compile(&rules.crosswalk_l1)?,
            compile(&rules.crosswalk_l2)?,
            compile(&rules.door_l1)?,
            compile(&rules.door_l2)?,
        ];
        Ok(Self { rules, epsilon, compiled })
    }

    /// Signal the human means to give, before noise.
    pub fn intended(&self, kind: ActionKind, features: &Assignment, level: Level) -> Result<Signal, OracleError> {
        let base = match kind {
            ActionKind::Cross => 0,
            ActionKind::OpenDoor => 2,
            ActionKind::Move => return Err(OracleError::NotObstacle(kind)),
        };
        let (rule, yes, no) = match level {
            Level::L1 => (&self.compiled[base], Signal::Approval, Signal::Disapproval),
            Level::L2 => (&self.compiled[base + 1], Signal::NoSignal, Signal::Override),
            other => return Err(OracleError::Level(other)),
        };
        Ok(if holds(rule, features) { yes } else { no })
    }

    /// Exact signal distribution: the intended signal, mixed with a uniform legal draw at rate epsilon.
    pub fn distribution(
        &self,
        kind: ActionKind,
        features: &Assignment,
        level: Level,
    ) -> Result<SignalDist, OracleError> {
        if !level.has_feedback() {
            return Ok(SignalDist::certain(Signal::NoSignal));
        }
        let intended = self.intended(kind, features, level)?;
        let noise = SignalDist::uniform_at(level);
        let mut p = [0.0; 4];
        for s in Signal::ALL {
            p[s.index()] = self.epsilon * noise.get(s);
        }
        p[intended.index()] += 1.0 - self.epsilon;
        Ok(SignalDist(p))
    }

    /// One noisy feedback draw.
    pub fn feedback<R: Rng>(
        &self,
        kind: ActionKind,
        features: &Assignment,
        level: Level,
        rng: &mut R,
    ) -> Result<Signal, OracleError> {
        let intended = self.intended(kind, features, level)?;
        if rng.gen_bool(self.epsilon) {
            Ok(*level.legal_signals().choose(rng).expect("feedback levels have signals"))
        } else {
            Ok(intended)
        }
    }

    /// Whether acting without supervision actually gets through the obstacle.
    pub fn passes_unsupervised(&self, kind: ActionKind, features: &Assignment) -> bool {
        matches!(self.intended(kind, features, Level::L2), Ok(Signal::NoSignal))
    }
}

impl Default for OracleAuthority {
    fn default() -> Self {
        Self::new(RuleTable::default(), 0.05).expect("default rules compile")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campus::{COLOR, MECHANISM, OPEN, SIZE, STREET, TRAFFIC, VISIBILITY};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn crosswalk(visibility: u16, traffic: u16) -> Assignment {
        let mut a = vec![None; 7];
        a[VISIBILITY] = Some(visibility);
        a[TRAFFIC] = Some(traffic);
        a[STREET] = Some(0);
        a
    }

    fn door(size: u16, mechanism: u16) -> Assignment {
        let mut a = vec![None; 7];
        a[SIZE] = Some(size);
        a[MECHANISM] = Some(mechanism);
        a[COLOR] = Some(0);
        a[OPEN] = Some(0);
        a
    }

    #[test]
    fn rule_table_lookups() {
        let o = OracleAuthority::default();
        assert_eq!(o.intended(ActionKind::Cross, &crosswalk(0, 1), Level::L1), Ok(Signal::Approval));
        assert_eq!(o.intended(ActionKind::Cross, &crosswalk(0, 1), Level::L2), Ok(Signal::Override));
        assert_eq!(o.intended(ActionKind::Cross, &crosswalk(1, 0), Level::L1), Ok(Signal::Disapproval));
        assert_eq!(o.intended(ActionKind::OpenDoor, &door(2, 0), Level::L1), Ok(Signal::Disapproval));
        assert_eq!(o.intended(ActionKind::OpenDoor, &door(1, 0), Level::L1), Ok(Signal::Approval));
        assert_eq!(o.intended(ActionKind::OpenDoor, &door(0, 0), Level::L2), Ok(Signal::NoSignal));
        assert_eq!(o.intended(ActionKind::OpenDoor, &door(0, 1), Level::L2), Ok(Signal::Override));
        assert_eq!(o.intended(ActionKind::OpenDoor, &door(0, 0), Level::L3), Err(OracleError::Level(Level::L3)));
    }

    #[test]
    fn noisy_draws_concentrate_on_the_intended_signal() {
        let o = OracleAuthority::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| {
                o.feedback(ActionKind::Cross, &crosswalk(0, 0), Level::L1, &mut rng).unwrap() == Signal::Approval
            })
            .count();
        let freq = hits as f64 / n as f64;
        // 0.95 intended plus half of the 5% uniform draws.
        assert!((freq - 0.975).abs() <= 0.01, "{freq}");
        assert!(freq >= 0.95 * 0.95);
    }

    #[test]
    fn distribution_matches_mixture() {
        let o = OracleAuthority::default();
        let d = o.distribution(ActionKind::OpenDoor, &door(2, 0), Level::L2).unwrap();
        assert!((d.get(Signal::Override) - 0.975).abs() < 1e-12);
        assert!((d.get(Signal::NoSignal) - 0.025).abs() < 1e-12);
        assert!(d.respects(Level::L2));
        assert_eq!(
            o.distribution(ActionKind::Cross, &crosswalk(0, 0), Level::L0).unwrap(),
            SignalDist::certain(Signal::NoSignal)
        );
    }

    #[test]
    fn rules_ignore_color_and_street() {
        let o = OracleAuthority::default();
        for level in [Level::L1, Level::L2] {
            for size in 0..3 {
                for mech in 0..2 {
                    for open in 0..2 {
                        let base = o.intended(ActionKind::OpenDoor, &door(size, mech), level).unwrap();
                        for color in 0..4 {
                            let mut a = door(size, mech);
                            a[COLOR] = Some(color);
                            a[OPEN] = Some(open);
                            assert_eq!(o.intended(ActionKind::OpenDoor, &a, level).unwrap(), base);
                        }
                    }
                }
            }
            for vis in 0..2 {
                for traffic in 0..3 {
                    let base = o.intended(ActionKind::Cross, &crosswalk(vis, traffic), level).unwrap();
                    let mut a = crosswalk(vis, traffic);
                    a[STREET] = Some(1);
                    assert_eq!(o.intended(ActionKind::Cross, &a, level).unwrap(), base);
                }
            }
        }
    }

    #[test]
    fn unknown_rule_names_are_rejected() {
        let mut rules = RuleTable::default();
        rules.door_l1.0.insert("weight".into(), vec!["x".into()]);
        assert_eq!(OracleAuthority::new(rules, 0.05).unwrap_err(), OracleError::UnknownFeature("weight".into()));
        let mut rules = RuleTable::default();
        rules.door_l1.0.insert("size".into(), vec!["huge".into()]);
        assert!(matches!(OracleAuthority::new(rules, 0.05), Err(OracleError::UnknownValue { .. })));
    }
}
