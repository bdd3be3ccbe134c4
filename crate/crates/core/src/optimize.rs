//! Configuration proposers: random search and a forest-surrogate Bayesian
//! optimizer using expected improvement.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::learners::tree::{RegressionForest, RegressionForestParams};
use crate::searchspace::{ConfigId, Configuration, Domain, ParamSpec, ParamValue, Scale, SearchSpace};

/// Encoded value of an inactive conditional parameter.
pub const INACTIVE: f64 = -1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("configuration {0:016x} was already observed")]
    DuplicateObservation(ConfigId),
    #[error("unknown optimizer `{0}`")]
    UnknownOptimizer(String),
    #[error("unknown feedback mode `{0}`")]
    UnknownFeedback(String),
}

/// How early-stopped trials are reported to the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackPolicy {
    #[serde(rename = "failed")]
    ReportFailed,
    #[serde(rename = "mean")]
    ReportMean,
}

impl FromStr for FeedbackPolicy {
    type Err = OptimizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "failed" => Ok(FeedbackPolicy::ReportFailed),
            "mean" => Ok(FeedbackPolicy::ReportMean),
            other => Err(OptimizeError::UnknownFeedback(other.to_string())),
        }
    }
}

impl fmt::Display for FeedbackPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackPolicy::ReportFailed => "failed",
            FeedbackPolicy::ReportMean => "mean",
        })
    }
}

/// What happened to a trial, as far as the optimizer is concerned.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Completed { scores: Vec<f64> },
    EarlyStopped { scores: Vec<f64> },
    Failed,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// The value reported for a trial under the given feedback policy.
pub fn reported_value(outcome: &TrialOutcome, feedback: FeedbackPolicy, worst_score: f64) -> f64 {
    match (outcome, feedback) {
        (TrialOutcome::Completed { scores }, _) => mean(scores),
        (TrialOutcome::EarlyStopped { scores }, FeedbackPolicy::ReportMean) => mean(scores),
        (TrialOutcome::EarlyStopped { .. }, FeedbackPolicy::ReportFailed) => worst_score,
        (TrialOutcome::Failed, _) => worst_score,
    }
}

pub trait Proposer: Send {
    fn propose(&mut self) -> Configuration;

    /// Records a finished trial and returns the value reported to the model.
    fn observe(&mut self, config: &Configuration, outcome: &TrialOutcome) -> Result<f64, OptimizeError>;
}

pub struct RandomProposer {
    space: SearchSpace,
    rng: ChaCha8Rng,
    feedback: FeedbackPolicy,
    worst_score: f64,
}

impl RandomProposer {
    pub fn new(space: SearchSpace, seed: u64) -> Self {
        RandomProposer {
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
            feedback: FeedbackPolicy::ReportFailed,
            worst_score: 0.0,
        }
    }

    pub fn with_feedback(mut self, feedback: FeedbackPolicy, worst_score: f64) -> Self {
        self.feedback = feedback;
        self.worst_score = worst_score;
        self
    }
}

impl Proposer for RandomProposer {
    fn propose(&mut self) -> Configuration {
        self.space.sample(&mut self.rng)
    }

    fn observe(&mut self, _config: &Configuration, outcome: &TrialOutcome) -> Result<f64, OptimizeError> {
        Ok(reported_value(outcome, self.feedback, self.worst_score))
    }
}

/// Transform applied to numeric domains before scaling into [0, 1].
fn numeric_bounds(domain: &Domain) -> Option<(f64, f64, Scale)> {
    match *domain {
        Domain::Float { low, high, scale } => Some((low, high, scale)),
        // Integers are widened by half a step so every value owns an equal cell.
        Domain::Integer { low, high, scale } => {
            let lo = low as f64 - 0.5;
            let lo = if scale == Scale::Log { lo.max(0.5) } else { lo };
            Some((lo, high as f64 + 0.5, scale))
        }
        _ => None,
    }
}

fn warp(v: f64, scale: Scale) -> f64 {
    match scale {
        Scale::Linear => v,
        Scale::Log => v.ln(),
    }
}

fn unwarp(v: f64, scale: Scale) -> f64 {
    match scale {
        Scale::Linear => v,
        Scale::Log => v.exp(),
    }
}

fn level_count(domain: &Domain) -> Option<&[ParamValue]> {
    match domain {
        Domain::Ordinal { values } => Some(values),
        Domain::Categorical { choices } => Some(choices),
        _ => None,
    }
}

/// Maps configurations to fixed-length vectors over the non-constant
/// parameters, and back.
#[derive(Debug, Clone)]
pub struct Encoder {
    space: SearchSpace,
    dims: Vec<usize>,
}

impl Encoder {
    pub fn new(space: SearchSpace) -> Self {
        let dims = space.params().iter().enumerate().filter(|(_, p)| !p.is_constant()).map(|(i, _)| i).collect();
        Encoder { space, dims }
    }

    pub fn width(&self) -> usize {
        self.dims.len()
    }

    fn encode_value(p: &ParamSpec, v: &ParamValue) -> f64 {
        if let Some((lo, hi, scale)) = numeric_bounds(&p.domain) {
            let x = v.as_f64().unwrap_or(lo);
            let (a, b) = (warp(lo, scale), warp(hi, scale));
            return ((warp(x, scale) - a) / (b - a)).clamp(0.0, 1.0);
        }
        let levels = level_count(&p.domain).expect("non-constant domain");
        let idx = levels.iter().position(|l| l == v).unwrap_or(0);
        if levels.len() > 1 {
            idx as f64 / (levels.len() - 1) as f64
        } else {
            0.0
        }
    }

    pub fn encode(&self, config: &Configuration) -> Vec<f64> {
        self.dims
            .iter()
            .map(|&i| {
                let p = &self.space.params()[i];
                config.get(&p.name).map_or(INACTIVE, |v| Self::encode_value(p, v))
            })
            .collect()
    }

    fn decode_value(p: &ParamSpec, x: f64) -> ParamValue {
        let x = x.clamp(0.0, 1.0);
        match &p.domain {
            Domain::Float { low, high, scale } => {
                let (a, b) = (warp(*low, *scale), warp(*high, *scale));
                ParamValue::Float(unwarp(a + x * (b - a), *scale).clamp(*low, *high))
            }
            Domain::Integer { low, high, .. } => {
                let (lo, hi, scale) = numeric_bounds(&p.domain).expect("integer");
                let (a, b) = (warp(lo, scale), warp(hi, scale));
                ParamValue::Int((unwarp(a + x * (b - a), scale).round() as i64).clamp(*low, *high))
            }
            domain => {
                let levels = level_count(domain).expect("non-constant domain");
                let idx = (x * (levels.len() - 1) as f64).round() as usize;
                levels[idx.min(levels.len() - 1)].clone()
            }
        }
    }

    /// Nearest legal configuration: activity is re-derived from the decoded
    /// parents and out-of-range coordinates are clamped.
    pub fn decode(&self, x: &[f64]) -> Configuration {
        let mut assignments = std::collections::BTreeMap::new();
        let mut dim = 0;
        for p in self.space.params() {
            let coord = if p.is_constant() {
                None
            } else {
                dim += 1;
                Some(x[dim - 1])
            };
            if !self.space.is_active(p, &assignments) {
                continue;
            }
            let value = match (&p.domain, coord) {
                (Domain::Constant { value }, _) => value.clone(),
                (_, Some(c)) => Self::decode_value(p, c),
                (_, None) => unreachable!("non-constant parameters carry a coordinate"),
            };
            assignments.insert(p.name.clone(), value);
        }
        Configuration::new(self.space.name(), assignments)
    }
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mu: f64, var: f64, best: f64) -> f64 {
    let sigma = var.max(0.0).sqrt();
    let gain = mu - best;
    if sigma < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    let n = Normal::standard();
    (gain * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoSettings {
    #[serde(default = "default_initial_design")]
    pub initial_design: usize,
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    pub feedback: FeedbackPolicy,
    #[serde(default)]
    pub worst_score: f64,
}

fn default_initial_design() -> usize {
    10
}

fn default_candidates() -> usize {
    500
}

impl BoSettings {
    pub fn new(feedback: FeedbackPolicy) -> Self {
        BoSettings { initial_design: 10, candidates: 500, feedback, worst_score: 0.0 }
    }
}

pub struct BayesianProposer {
    space: SearchSpace,
    encoder: Encoder,
    rng: ChaCha8Rng,
    settings: BoSettings,
    observations: Vec<(Vec<f64>, f64)>,
    observed: HashSet<ConfigId>,
    proposed: HashSet<ConfigId>,
    n_proposed: usize,
    refits: usize,
}

impl BayesianProposer {
    pub fn new(space: SearchSpace, seed: u64, settings: BoSettings) -> Self {
        BayesianProposer {
            encoder: Encoder::new(space.clone()),
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
            settings,
            observations: Vec::new(),
            observed: HashSet::new(),
            proposed: HashSet::new(),
            n_proposed: 0,
            refits: 0,
        }
    }

    pub fn observations(&self) -> &[(Vec<f64>, f64)] {
        &self.observations
    }

    pub fn refit_count(&self) -> usize {
        self.refits
    }

    /// A random draw, redrawn a bounded number of times to avoid repeats.
    fn fresh_sample(&mut self) -> Configuration {
        let mut config = self.space.sample(&mut self.rng);
        for _ in 0..64 {
            if !self.proposed.contains(&config.id) {
                break;
            }
            config = self.space.sample(&mut self.rng);
        }
        config
    }

    fn guided(&mut self) -> Option<Configuration> {
        if self.observations.len() < 2 {
            return None;
        }
        let width = self.encoder.width();
        let x = Array2::from_shape_fn((self.observations.len(), width), |(r, c)| self.observations[r].0[c]);
        let y: Vec<f64> = self.observations.iter().map(|o| o.1).collect();
        let best = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let forest = RegressionForest::fit(&x, &y, &RegressionForestParams::default(), self.rng.random());
        self.refits += 1;
        let mut choice: Option<(f64, Configuration)> = None;
        for _ in 0..self.settings.candidates {
            let cand = self.space.sample(&mut self.rng);
            if self.proposed.contains(&cand.id) {
                continue;
            }
            let row = Array1::from(self.encoder.encode(&cand));
            let (mu, var) = forest.predict_mean_var(row.view());
            let ei = expected_improvement(mu, var, best);
            if choice.as_ref().is_none_or(|(b, _)| ei > *b) {
                choice = Some((ei, cand));
            }
        }
        choice.map(|(_, c)| c)
    }
}

impl Proposer for BayesianProposer {
    fn propose(&mut self) -> Configuration {
        let guided = if self.n_proposed >= self.settings.initial_design { self.guided() } else { None };
        let config = guided.unwrap_or_else(|| self.fresh_sample());
        self.n_proposed += 1;
        self.proposed.insert(config.id);
        config
    }

    fn observe(&mut self, config: &Configuration, outcome: &TrialOutcome) -> Result<f64, OptimizeError> {
        if !self.observed.insert(config.id) {
            return Err(OptimizeError::DuplicateObservation(config.id));
        }
        let value = reported_value(outcome, self.settings.feedback, self.settings.worst_score);
        self.observations.push((self.encoder.encode(config), value));
        Ok(value)
    }
}

/// Optimizer selection as written in a run manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Random,
    Bo,
}

impl FromStr for OptimizerKind {
    type Err = OptimizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(OptimizerKind::Random),
            "bo" => Ok(OptimizerKind::Bo),
            other => Err(OptimizeError::UnknownOptimizer(other.to_string())),
        }
    }
}
