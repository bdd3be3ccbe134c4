//! Incumbent tracking and the fold-level early-stopping rules.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::searchspace::ConfigId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoppingError {
    #[error("expected {expected} fold scores, got {found}")]
    WrongScoreCount { expected: usize, found: usize },
    #[error("fold scores must be finite")]
    NonFinite,
    #[error("unknown stopping policy `{0}`")]
    UnknownPolicy(String),
}

fn mean(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Fold scores observed so far for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialEvaluation {
    pub config_id: ConfigId,
    pub scores: Vec<f64>,
    pub k: usize,
}

impl PartialEvaluation {
    pub fn new(config_id: ConfigId, scores: Vec<f64>, k: usize) -> Self {
        assert!(!scores.is_empty() && scores.len() <= k, "need 1..=k fold scores");
        PartialEvaluation { config_id, scores, k }
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.scores)
    }
}

/// The best fully evaluated configuration at some instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncumbentSnapshot {
    pub config_id: Option<ConfigId>,
    pub mean: f64,
    pub worst: f64,
    pub k: usize,
    pub seq: u64,
}

impl IncumbentSnapshot {
    pub fn empty(k: usize) -> Self {
        IncumbentSnapshot { config_id: None, mean: f64::NEG_INFINITY, worst: f64::NEG_INFINITY, k, seq: 0 }
    }
}

/// Shared incumbent register. Submissions are serialized; readers get copies.
#[derive(Debug)]
pub struct IncumbentStore {
    inner: Mutex<IncumbentSnapshot>,
}

impl IncumbentStore {
    pub fn new(k: usize) -> Self {
        IncumbentStore { inner: Mutex::new(IncumbentSnapshot::empty(k)) }
    }

    pub fn snapshot(&self) -> IncumbentSnapshot {
        self.inner.lock().expect("incumbent lock").clone()
    }

    /// Replaces the incumbent iff the k-fold mean strictly beats it.
    pub fn submit(&self, config_id: ConfigId, scores: &[f64]) -> Result<IncumbentSnapshot, StoppingError> {
        let mut cur = self.inner.lock().expect("incumbent lock");
        if scores.len() != cur.k {
            return Err(StoppingError::WrongScoreCount { expected: cur.k, found: scores.len() });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(StoppingError::NonFinite);
        }
        let m = mean(scores);
        if cur.config_id.is_none() || m > cur.mean {
            cur.config_id = Some(config_id);
            cur.mean = m;
            cur.worst = scores.iter().copied().fold(f64::INFINITY, f64::min);
            cur.seq += 1;
        }
        Ok(cur.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingDecision {
    pub verdict: Verdict,
    /// The value the partial mean was compared against, if any.
    pub threshold: Option<f64>,
    pub policy: StoppingPolicy,
}

impl StoppingDecision {
    pub fn stops(&self) -> bool {
        self.verdict == Verdict::Stop
    }
}

fn threshold_rule(policy: StoppingPolicy, threshold: Option<f64>, partial: &PartialEvaluation) -> StoppingDecision {
    let stop = partial.n() < partial.k && threshold.is_some_and(|t| partial.mean() <= t);
    StoppingDecision { verdict: if stop { Verdict::Stop } else { Verdict::Continue }, threshold, policy }
}

/// Stop when the partial mean is at or below the incumbent's mean.
pub fn decide_aggressive(snapshot: &IncumbentSnapshot, partial: &PartialEvaluation) -> StoppingDecision {
    let t = snapshot.config_id.map(|_| snapshot.mean);
    threshold_rule(StoppingPolicy::Aggressive, t, partial)
}

/// Stop when the partial mean is at or below the incumbent's worst fold.
pub fn decide_forgiving(snapshot: &IncumbentSnapshot, partial: &PartialEvaluation) -> StoppingDecision {
    let t = snapshot.config_id.map(|_| snapshot.worst);
    threshold_rule(StoppingPolicy::Forgiving, t, partial)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustMember {
    pub config_id: ConfigId,
    pub scores: Vec<f64>,
    pub mean: f64,
}

/// Top-M population scored by mean minus population standard deviation of
/// the members' cross-validation means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustPopulation {
    pub m: usize,
    pub members: Vec<RobustMember>,
}

fn mu_minus_sigma(means: &[f64]) -> f64 {
    let mu = mean(means);
    let var = means.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / means.len() as f64;
    mu - var.sqrt()
}

impl RobustPopulation {
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "population size must be positive");
        RobustPopulation { m, members: Vec::with_capacity(m) }
    }

    pub fn is_full(&self) -> bool {
        self.members.len() >= self.m
    }

    fn means(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.mean).collect()
    }

    /// `None` while empty.
    pub fn statistic(&self) -> Option<f64> {
        (!self.members.is_empty()).then(|| mu_minus_sigma(&self.means()))
    }

    /// Index of the lowest-mean member; the earliest one on ties.
    fn worst_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, m) in self.members.iter().enumerate() {
            if best.is_none_or(|b| m.mean < self.members[b].mean) {
                best = Some(i);
            }
        }
        best
    }

    fn statistic_with_replacement(&self, value: f64) -> Option<f64> {
        let worst = self.worst_index()?;
        let mut means = self.means();
        means[worst] = value;
        Some(mu_minus_sigma(&means))
    }
}

/// Continue while the population is filling up; afterwards continue only if
/// swapping the worst member for the partial mean raises mean minus std.
pub fn decide_robust(population: &RobustPopulation, partial: &PartialEvaluation) -> StoppingDecision {
    let policy = StoppingPolicy::Robust(population.m);
    if !population.is_full() || partial.n() >= partial.k {
        return StoppingDecision { verdict: Verdict::Continue, threshold: population.statistic(), policy };
    }
    let current = population.statistic().expect("full population");
    let candidate = population.statistic_with_replacement(partial.mean()).expect("full population");
    let verdict = if candidate > current { Verdict::Continue } else { Verdict::Stop };
    StoppingDecision { verdict, threshold: Some(current), policy }
}

/// Adds a fully evaluated configuration, evicting the worst member when full.
pub fn robust_commit(population: &mut RobustPopulation, config_id: ConfigId, scores: &[f64]) {
    let member = RobustMember { config_id, scores: scores.to_vec(), mean: mean(scores) };
    if population.is_full() {
        let worst = population.worst_index().expect("full population");
        population.members[worst] = member;
    } else {
        population.members.push(member);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StoppingPolicy {
    None,
    Aggressive,
    Forgiving,
    Robust(usize),
}

impl StoppingPolicy {
    /// Decision for a partial evaluation. `population` is consulted only by
    /// the robust rule.
    pub fn decide(
        self,
        snapshot: &IncumbentSnapshot,
        population: Option<&RobustPopulation>,
        partial: &PartialEvaluation,
    ) -> StoppingDecision {
        match self {
            StoppingPolicy::None => StoppingDecision { verdict: Verdict::Continue, threshold: None, policy: self },
            StoppingPolicy::Aggressive => decide_aggressive(snapshot, partial),
            StoppingPolicy::Forgiving => decide_forgiving(snapshot, partial),
            StoppingPolicy::Robust(m) => match population {
                Some(p) => decide_robust(p, partial),
                None => decide_robust(&RobustPopulation::new(m), partial),
            },
        }
    }
}

impl fmt::Display for StoppingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingPolicy::None => f.write_str("none"),
            StoppingPolicy::Aggressive => f.write_str("aggressive"),
            StoppingPolicy::Forgiving => f.write_str("forgiving"),
            StoppingPolicy::Robust(m) => write!(f, "robust-{m}"),
        }
    }
}

impl FromStr for StoppingPolicy {
    type Err = StoppingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(StoppingPolicy::None),
            "aggressive" => Ok(StoppingPolicy::Aggressive),
            "forgiving" => Ok(StoppingPolicy::Forgiving),
            "robust-3" => Ok(StoppingPolicy::Robust(3)),
            "robust-5" => Ok(StoppingPolicy::Robust(5)),
            other => Err(StoppingError::UnknownPolicy(other.to_string())),
        }
    }
}

impl Serialize for StoppingPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StoppingPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store_with(scores: &[f64]) -> IncumbentStore {
        let store = IncumbentStore::new(scores.len());
        store.submit(1, scores).unwrap();
        store
    }

    fn partial(scores: &[f64], k: usize) -> PartialEvaluation {
        PartialEvaluation::new(99, scores.to_vec(), k)
    }

    fn population(means: &[f64]) -> RobustPopulation {
        let mut p = RobustPopulation::new(means.len());
        for (i, &m) in means.iter().enumerate() {
            robust_commit(&mut p, i as u64, &[m, m]);
        }
        p
    }

    #[test]
    fn submit_examples() {
        let store = IncumbentStore::new(3);
        let s = store.submit(1, &[0.7, 0.8, 0.9]).unwrap();
        assert!((s.mean - 0.8).abs() < 1e-12);
        assert_eq!(s.worst, 0.7);
        assert_eq!(s.seq, 1);

        let store = store_with(&[0.85, 0.85, 0.85]);
        let s = store.submit(2, &[0.8, 0.8, 0.8]).unwrap();
        assert_eq!(s.config_id, Some(1));

        let s = store.submit(3, &[0.85, 0.85, 0.85]).unwrap();
        assert_eq!(s.config_id, Some(1));
        assert_eq!(s.seq, 1);

        assert_eq!(store.submit(4, &[0.9]), Err(StoppingError::WrongScoreCount { expected: 3, found: 1 }));
        assert_eq!(store.submit(4, &[0.9, f64::NAN, 0.9]), Err(StoppingError::NonFinite));
    }

    #[test]
    fn single_bad_fold_stops_both_rules() {
        let snap = store_with(&[0.7, 0.8, 0.9]).snapshot();
        let p = partial(&[0.1], 3);
        assert!(decide_aggressive(&snap, &p).stops());
        assert!(decide_forgiving(&snap, &p).stops());
    }

    #[test]
    fn aggressive_boundary_is_inclusive() {
        let snap = store_with(&[0.8, 0.8, 0.8]).snapshot();
        assert!(decide_aggressive(&snap, &partial(&[0.8], 3)).stops());
    }

    #[test]
    fn forgiving_examples() {
        let snap = store_with(&[0.7, 0.8, 0.9]).snapshot();
        assert!(decide_forgiving(&snap, &partial(&[0.69], 3)).stops());
        let mid = partial(&[0.75], 3);
        assert!(!decide_forgiving(&snap, &mid).stops());
        assert!(decide_aggressive(&snap, &mid).stops());
        let d = decide_forgiving(&snap, &partial(&[0.7], 3));
        assert!(d.stops());
        assert_eq!(d.threshold, Some(0.7));
    }

    #[test]
    fn no_incumbent_never_stops() {
        let snap = IncumbentStore::new(3).snapshot();
        for policy in ["none", "aggressive", "forgiving", "robust-3", "robust-5"] {
            let policy: StoppingPolicy = policy.parse().unwrap();
            assert!(!policy.decide(&snap, Some(&RobustPopulation::new(3)), &partial(&[0.0], 3)).stops());
        }
    }

    #[test]
    fn robust_examples() {
        let pop = population(&[0.8, 0.8, 0.8]);
        let d = decide_robust(&pop, &partial(&[0.9], 3));
        assert!(d.stops());
        assert!((d.threshold.unwrap() - 0.8).abs() < 1e-12);

        let pop = population(&[0.7, 0.8, 0.9]);
        assert!(!decide_robust(&pop, &partial(&[0.95], 3)).stops());
        let cand = mu_minus_sigma(&[0.8, 0.9, 0.95]);
        assert!((cand - 0.8209).abs() < 1e-4);
        assert!((pop.statistic().unwrap() - 0.7184).abs() < 1e-4);

        let warm = population(&[0.9, 0.9]);
        let warm = RobustPopulation { m: 3, ..warm };
        assert!(!decide_robust(&warm, &partial(&[0.0], 3)).stops());
    }

    #[test]
    fn robust_commit_examples() {
        let mut p = RobustPopulation::new(3);
        robust_commit(&mut p, 1, &[0.5, 0.7]);
        assert_eq!(p.members.len(), 1);
        robust_commit(&mut p, 2, &[0.8, 0.8]);
        robust_commit(&mut p, 3, &[0.9, 0.9]);
        robust_commit(&mut p, 4, &[0.85, 0.85]);
        let ids: Vec<u64> = p.members.iter().map(|m| m.config_id).collect();
        assert_eq!(ids, vec![4, 2, 3]);
        let direct = {
            let ms = [0.85, 0.8, 0.9];
            let mu = ms.iter().sum::<f64>() / 3.0;
            mu - (ms.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 3.0).sqrt()
        };
        assert!((p.statistic().unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn policy_names_round_trip() {
        for name in ["none", "aggressive", "forgiving", "robust-3", "robust-5"] {
            let p: StoppingPolicy = name.parse().unwrap();
            assert_eq!(p.to_string(), name);
            assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{name}\""));
        }
        assert!("robust-4".parse::<StoppingPolicy>().is_err());
    }

    proptest! {
        #[test]
        fn aggressive_dominates_forgiving(
            inc in proptest::collection::vec(0.0f64..1.0, 5),
            part in proptest::collection::vec(0.0f64..1.0, 1..5),
        ) {
            let snap = store_with(&inc).snapshot();
            let p = partial(&part, 5);
            if decide_forgiving(&snap, &p).stops() {
                prop_assert!(decide_aggressive(&snap, &p).stops());
            }
        }

        #[test]
        fn incumbent_mean_is_monotone(runs in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 1..30)) {
            let store = IncumbentStore::new(3);
            let mut last = store.snapshot();
            for (i, scores) in runs.iter().enumerate() {
                let s = store.submit(i as u64, scores).unwrap();
                prop_assert!(s.seq >= last.seq);
                prop_assert!(s.mean >= last.mean);
                prop_assert!(s.worst <= s.mean + 1e-12);
                if s.seq > last.seq {
                    prop_assert_eq!(s.seq, last.seq + 1);
                }
                last = s;
            }
        }

        #[test]
        fn robust_statistic_matches_recompute(
            means in proptest::collection::vec(0.0f64..1.0, 1..20),
            m in 1usize..6,
        ) {
            let mut p = RobustPopulation::new(m);
            for (i, &v) in means.iter().enumerate() {
                robust_commit(&mut p, i as u64, &[v]);
                prop_assert!(p.members.len() <= m);
                let ms: Vec<f64> = p.members.iter().map(|x| x.mean).collect();
                prop_assert!((p.statistic().unwrap() - mu_minus_sigma(&ms)).abs() < 1e-15);
            }
        }
    }
}
