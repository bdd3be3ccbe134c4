//! Budgeted model selection: the fold-sequential scheduler, its live and
//! simulated executors, seeding, run manifests and run-directory output.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DataError, Dataset, FoldPlan};
use crate::learners::{self, FittedModel};
use crate::metrics::{self, MetricError, Score};
use crate::optimize::{
    reported_value, BayesianProposer, BoSettings, FeedbackPolicy, OptimizerKind, Proposer, RandomProposer, TrialOutcome,
};
use crate::searchspace::{builtin_space, Configuration, ParamValue};
use crate::stopping::{robust_commit, IncumbentStore, PartialEvaluation, RobustPopulation, StoppingPolicy};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid replay matrix: {0}")]
    Matrix(String),
    #[error("run directory {path} is missing {what}")]
    MissingArtifact { path: PathBuf, what: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Learner(#[from] learners::LearnerError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EngineError + '_ {
    move |source| EngineError::Io { path: path.to_path_buf(), source }
}

// ---------------------------------------------------------------- seeding

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub fold_root: u64,
    pub cv_seed: u64,
    pub optimizer_seed: u64,
}

/// Per-outer-fold seeds: the fold root is `root_seed + outer_fold`, and both
/// the inner CV and the optimizer are seeded with it.
pub fn derive_seeds(root_seed: u64, outer_fold: usize) -> RunSeeds {
    let fold_root = root_seed.wrapping_add(outer_fold as u64);
    RunSeeds { fold_root, cv_seed: fold_root, optimizer_seed: fold_root }
}

/// The fixed seed of the `trial_index`-th configuration of a run.
pub fn trial_seed(optimizer_seed: u64, trial_index: usize) -> u64 {
    splitmix64(splitmix64(optimizer_seed) ^ trial_index as u64)
}

/// Expands a trial seed into one model seed per inner fold.
pub fn fold_seeds(trial_seed: u64, n_folds: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    (0..n_folds).map(|_| rng.random()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub fold_root: u64,
    pub trial_seed: u64,
    pub fold_seeds: Vec<u64>,
}

// ---------------------------------------------------------------- records

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    EarlyStopped,
    Failed,
    BudgetCut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldEntry {
    pub fold: usize,
    pub score: f64,
    pub t_start: f64,
    pub t_end: f64,
}

/// One line of `trials.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub config_id: String,
    pub assignments: BTreeMap<String, ParamValue>,
    pub folds: Vec<FoldEntry>,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_fold: Option<usize>,
    pub reported_score: Option<f64>,
    pub seed_info: SeedInfo,
    /// Incumbent sequence number seen at each stop check. Kept in memory only.
    #[serde(skip)]
    pub decision_seqs: Vec<u64>,
    #[serde(skip)]
    pub failure: Option<String>,
}

impl TrialRecord {
    pub fn scores(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.score).collect()
    }

    pub fn mean_score(&self) -> Option<f64> {
        (!self.folds.is_empty()).then(|| self.folds.iter().map(|f| f.score).sum::<f64>() / self.folds.len() as f64)
    }
}

/// One line of `incumbents.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncumbentEvent {
    pub seq: u64,
    pub trial_index: usize,
    pub config_id: String,
    pub time: f64,
    pub mean: f64,
    pub worst: f64,
    #[serde(default)]
    pub test_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub started: usize,
    pub completed: usize,
    pub early_stopped: usize,
    pub failed: usize,
    pub budget_cut: usize,
}

impl StatusCounts {
    /// A trial counts as started once a fold finished or failed.
    pub fn tally<'a>(records: impl IntoIterator<Item = &'a TrialRecord>) -> Self {
        let mut c = StatusCounts::default();
        for r in records {
            match r.status {
                TrialStatus::Completed => c.completed += 1,
                TrialStatus::EarlyStopped => c.early_stopped += 1,
                TrialStatus::Failed => c.failed += 1,
                TrialStatus::BudgetCut => c.budget_cut += 1,
            }
            if !r.folds.is_empty() || r.status == TrialStatus::Failed {
                c.started += 1;
            }
        }
        c
    }
}

// ---------------------------------------------------------------- executors

#[derive(Debug, Clone)]
pub struct FoldJob {
    pub trial: usize,
    pub fold: usize,
    pub config: Arc<Configuration>,
    pub seed: u64,
    pub t_submit: f64,
}

/// Optional by-products of a live fold evaluation.
#[derive(Debug, Clone)]
pub struct FoldArtifact {
    pub model: FittedModel,
    pub test_proba: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct FoldOutput {
    pub score: Result<f64, String>,
    pub artifact: Option<FoldArtifact>,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub trial: usize,
    pub fold: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub output: FoldOutput,
}

/// Runs fold jobs on a fixed pool of workers against some clock.
pub trait Executor {
    fn now(&self) -> f64;
    fn capacity(&self) -> usize;
    /// Starts `job` immediately on an idle worker.
    fn submit(&mut self, job: FoldJob);
    /// The next result finishing no later than `deadline`, or `None` once the
    /// deadline passes with nothing finished.
    fn wait(&mut self, deadline: f64) -> Option<FoldResult>;
    /// Abandons in-flight work.
    fn shutdown(&mut self);
}

type SimFn = dyn FnMut(&FoldJob) -> (f64, FoldOutput);

/// Virtual-clock executor: each job's cost and output come from `eval`.
pub struct SimulatedExecutor {
    now: f64,
    workers: usize,
    running: Vec<(f64, u64, FoldResult)>,
    seq: u64,
    eval: Box<SimFn>,
}

impl SimulatedExecutor {
    pub fn new(workers: usize, eval: Box<SimFn>) -> Self {
        SimulatedExecutor { now: 0.0, workers, running: Vec::new(), seq: 0, eval }
    }
}

impl Executor for SimulatedExecutor {
    fn now(&self) -> f64 {
        self.now
    }

    fn capacity(&self) -> usize {
        self.workers
    }

    fn submit(&mut self, job: FoldJob) {
        assert!(self.running.len() < self.workers, "no idle worker");
        let (cost, output) = (self.eval)(&job);
        let end = self.now + cost;
        let result = FoldResult { trial: job.trial, fold: job.fold, t_start: self.now, t_end: end, output };
        self.running.push((end, self.seq, result));
        self.seq += 1;
    }

    fn wait(&mut self, deadline: f64) -> Option<FoldResult> {
        let next = (0..self.running.len()).min_by(|&a, &b| {
            let (ea, sa, _) = &self.running[a];
            let (eb, sb, _) = &self.running[b];
            ea.total_cmp(eb).then(sa.cmp(sb))
        });
        match next {
            Some(i) if self.running[i].0 <= deadline => {
                let (end, _, result) = self.running.swap_remove(i);
                self.now = end;
                Some(result)
            }
            _ => {
                self.now = self.now.max(deadline);
                None
            }
        }
    }

    fn shutdown(&mut self) {
        self.running.clear();
    }
}

pub type LiveFn = dyn Fn(&FoldJob, &AtomicBool) -> FoldOutput + Send + Sync;

/// Thread-pool executor measured against a monotonic wall clock.
pub struct LiveExecutor {
    start: Instant,
    workers: usize,
    job_tx: Option<Sender<FoldJob>>,
    result_rx: Receiver<FoldResult>,
    cancel: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
}

impl LiveExecutor {
    pub fn new(workers: usize, eval: Arc<LiveFn>) -> Self {
        let start = Instant::now();
        let (job_tx, job_rx) = mpsc::channel::<FoldJob>();
        let (result_tx, result_rx) = mpsc::channel();
        let job_rx = Arc::new(Mutex::new(job_rx));
        let cancel = Arc::new(AtomicBool::new(false));
        let handles = (0..workers)
            .map(|_| {
                let job_rx = Arc::clone(&job_rx);
                let result_tx = result_tx.clone();
                let cancel = Arc::clone(&cancel);
                let eval = Arc::clone(&eval);
                std::thread::spawn(move || loop {
                    let job = match job_rx.lock().expect("job queue").recv() {
                        Ok(job) => job,
                        Err(_) => break,
                    };
                    let output = eval(&job, &cancel);
                    let result = FoldResult {
                        trial: job.trial,
                        fold: job.fold,
                        t_start: job.t_submit,
                        t_end: start.elapsed().as_secs_f64(),
                        output,
                    };
                    if result_tx.send(result).is_err() {
                        break;
                    }
                })
            })
            .collect();
        LiveExecutor { start, workers, job_tx: Some(job_tx), result_rx, cancel, handles }
    }
}

impl Executor for LiveExecutor {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn capacity(&self) -> usize {
        self.workers
    }

    fn submit(&mut self, job: FoldJob) {
        self.job_tx.as_ref().expect("executor running").send(job).expect("workers alive");
    }

    fn wait(&mut self, deadline: f64) -> Option<FoldResult> {
        let remaining = deadline - self.now();
        if remaining <= 0.0 {
            return None;
        }
        match self.result_rx.recv_timeout(std::time::Duration::from_secs_f64(remaining)) {
            Ok(r) if r.t_end <= deadline => Some(r),
            Ok(_) | Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => None,
        }
    }

    fn shutdown(&mut self) {
        self.cancel.store(true, Ordering::SeqCst);
        self.job_tx = None;
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for LiveExecutor {
    fn drop(&mut self) {
        self.shutdown();
    }
}

// ---------------------------------------------------------------- scheduler

/// Where configurations come from and where outcomes are reported.
pub trait ConfigSource {
    fn next_config(&mut self) -> Option<Configuration>;
    /// Reports a terminated trial; returns the value fed back.
    fn observe(&mut self, config: &Configuration, outcome: &TrialOutcome) -> f64;
}

/// Adapter for an optimizer; proposals never run out.
pub struct ProposerSource {
    proposer: Box<dyn Proposer>,
    feedback: FeedbackPolicy,
    worst_score: f64,
}

impl ProposerSource {
    pub fn new(proposer: Box<dyn Proposer>, feedback: FeedbackPolicy, worst_score: f64) -> Self {
        ProposerSource { proposer, feedback, worst_score }
    }
}

impl ConfigSource for ProposerSource {
    fn next_config(&mut self) -> Option<Configuration> {
        Some(self.proposer.propose())
    }

    fn observe(&mut self, config: &Configuration, outcome: &TrialOutcome) -> f64 {
        self.proposer
            .observe(config, outcome)
            .unwrap_or_else(|_| reported_value(outcome, self.feedback, self.worst_score))
    }
}

#[derive(Debug, Clone)]
pub struct SchedulerSettings {
    pub policy: StoppingPolicy,
    pub budget: f64,
    /// Total fold count per trial (k times repeats).
    pub n_folds: usize,
    pub max_trials: Option<usize>,
    pub seeds: RunSeeds,
    /// Outer test labels for scoring incumbents, when fold artifacts carry test probabilities.
    pub test_labels: Option<Vec<usize>>,
}

pub struct ScheduleOutcome {
    /// Trials in termination order.
    pub trials: Vec<TrialRecord>,
    pub incumbents: Vec<IncumbentEvent>,
    pub incumbent_artifacts: Vec<FoldArtifact>,
    pub population: Option<RobustPopulation>,
    pub elapsed: f64,
}

fn finish(record: TrialRecord, log: &mut dyn Write, finished: &mut Vec<TrialRecord>) -> io::Result<()> {
    serde_json::to_writer(&mut *log, &record)?;
    log.write_all(b"\n")?;
    log.flush()?;
    finished.push(record);
    Ok(())
}

struct ActiveTrial {
    config: Arc<Configuration>,
    record: TrialRecord,
    artifacts: Vec<FoldArtifact>,
}

fn ensemble_score(artifacts: &[FoldArtifact], labels: &[usize]) -> Option<f64> {
    let probs: Option<Vec<Array2<f64>>> = artifacts.iter().map(|a| a.test_proba.clone()).collect();
    let voted = metrics::soft_vote(&probs?).ok()?;
    metrics::roc_auc(labels, &voted).ok()?.value()
}

/// Runs model selection until the budget elapses or the source is exhausted.
/// Each terminated trial is appended to `log` as one JSON line.
pub fn schedule(
    settings: &SchedulerSettings,
    source: &mut dyn ConfigSource,
    executor: &mut dyn Executor,
    log: &mut dyn Write,
) -> io::Result<ScheduleOutcome> {
    let k = settings.n_folds;
    let store = IncumbentStore::new(k);
    let mut population = match settings.policy {
        StoppingPolicy::Robust(m) => Some(RobustPopulation::new(m)),
        _ => None,
    };
    let mut active: BTreeMap<usize, ActiveTrial> = BTreeMap::new();
    let mut finished: Vec<TrialRecord> = Vec::new();
    let mut incumbents = Vec::new();
    let mut incumbent_artifacts = Vec::new();
    let mut in_flight = 0usize;
    let mut n_trials = 0usize;
    let mut exhausted = false;

    loop {
        while in_flight < executor.capacity()
            && !exhausted
            && executor.now() < settings.budget
            && settings.max_trials.is_none_or(|m| n_trials < m)
        {
            let Some(config) = source.next_config() else {
                exhausted = true;
                break;
            };
            let tseed = trial_seed(settings.seeds.optimizer_seed, n_trials);
            let seeds = fold_seeds(tseed, k);
            let config = Arc::new(config);
            let record = TrialRecord {
                trial_index: n_trials,
                config_id: config.id_hex(),
                assignments: config.assignments.clone(),
                folds: Vec::new(),
                status: TrialStatus::BudgetCut,
                after_fold: None,
                reported_score: None,
                seed_info: SeedInfo { fold_root: settings.seeds.fold_root, trial_seed: tseed, fold_seeds: seeds },
                decision_seqs: Vec::new(),
                failure: None,
            };
            let job = FoldJob {
                trial: n_trials,
                fold: 0,
                config: Arc::clone(&config),
                seed: record.seed_info.fold_seeds[0],
                t_submit: executor.now(),
            };
            active.insert(n_trials, ActiveTrial { config, record, artifacts: Vec::new() });
            executor.submit(job);
            in_flight += 1;
            n_trials += 1;
        }
        if in_flight == 0 {
            break;
        }
        let Some(result) = executor.wait(settings.budget) else {
            break;
        };
        in_flight -= 1;
        let mut trial = active.remove(&result.trial).expect("result for an active trial");
        let score = match result.output.score {
            Ok(s) if s.is_finite() => s,
            Ok(s) => {
                trial.record.failure = Some(format!("fold {} produced non-finite score {s}", result.fold));
                f64::NAN
            }
            Err(e) => {
                trial.record.failure = Some(format!("fold {}: {e}", result.fold));
                f64::NAN
            }
        };
        if trial.record.failure.is_some() {
            trial.record.status = TrialStatus::Failed;
            trial.record.reported_score = Some(source.observe(&trial.config, &TrialOutcome::Failed));
            finish(trial.record, log, &mut finished)?;
            continue;
        }
        trial.record.folds.push(FoldEntry { fold: result.fold, score, t_start: result.t_start, t_end: result.t_end });
        if let Some(a) = result.output.artifact {
            trial.artifacts.push(a);
        }
        let scores = trial.record.scores();
        let n = scores.len();
        if n == k {
            trial.record.status = TrialStatus::Completed;
            let before = store.snapshot().seq;
            let snap = store.submit(trial.config.id, &scores).expect("k finite scores");
            if snap.seq != before {
                let test_score =
                    settings.test_labels.as_deref().and_then(|labels| ensemble_score(&trial.artifacts, labels));
                incumbents.push(IncumbentEvent {
                    seq: snap.seq,
                    trial_index: trial.record.trial_index,
                    config_id: trial.record.config_id.clone(),
                    time: result.t_end,
                    mean: snap.mean,
                    worst: snap.worst,
                    test_score,
                });
                incumbent_artifacts = std::mem::take(&mut trial.artifacts);
            }
            if let Some(pop) = population.as_mut() {
                robust_commit(pop, trial.config.id, &scores);
            }
            trial.record.reported_score = Some(source.observe(&trial.config, &TrialOutcome::Completed { scores }));
            finish(trial.record, log, &mut finished)?;
            continue;
        }
        let snapshot = store.snapshot();
        trial.record.decision_seqs.push(snapshot.seq);
        let partial = PartialEvaluation::new(trial.config.id, scores.clone(), k);
        let decision = settings.policy.decide(&snapshot, population.as_ref(), &partial);
        if decision.stops() {
            trial.record.status = TrialStatus::EarlyStopped;
            trial.record.after_fold = Some(n);
            trial.record.reported_score = Some(source.observe(&trial.config, &TrialOutcome::EarlyStopped { scores }));
            finish(trial.record, log, &mut finished)?;
            continue;
        }
        if executor.now() >= settings.budget {
            active.insert(result.trial, trial);
            continue;
        }
        let job = FoldJob {
            trial: result.trial,
            fold: n,
            config: Arc::clone(&trial.config),
            seed: trial.record.seed_info.fold_seeds[n],
            t_submit: executor.now(),
        };
        active.insert(result.trial, trial);
        executor.submit(job);
        in_flight += 1;
    }
    executor.shutdown();
    for (_, trial) in active {
        finish(trial.record, log, &mut finished)?;
    }
    Ok(ScheduleOutcome {
        trials: finished,
        incumbents,
        incumbent_artifacts,
        population,
        elapsed: executor.now().min(settings.budget),
    })
}

// ---------------------------------------------------------------- replay

/// Precomputed fold scores with per-entry simulated costs (seconds).
#[derive(Debug, Clone, PartialEq)]
pub struct FoldScoreMatrix {
    pub scores: Vec<Vec<f64>>,
    pub costs: Vec<Vec<f64>>,
}

impl FoldScoreMatrix {
    pub fn new(scores: Vec<Vec<f64>>, costs: Vec<Vec<f64>>) -> Result<Self, EngineError> {
        let bad = |m: &str| Err(EngineError::Matrix(m.to_string()));
        let Some(first) = scores.first() else { return bad("no rows") };
        let k = first.len();
        if k == 0 {
            return bad("no fold columns");
        }
        if scores.iter().any(|r| r.len() != k) {
            return bad("score rows differ in length");
        }
        if costs.len() != scores.len() || costs.iter().any(|r| r.len() != k) {
            return bad("cost matrix shape differs from score matrix");
        }
        if scores.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite score");
        }
        if costs.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("costs must be finite and non-negative");
        }
        Ok(FoldScoreMatrix { scores, costs })
    }

    pub fn with_uniform_cost(scores: Vec<Vec<f64>>, cost: f64) -> Result<Self, EngineError> {
        let costs = scores.iter().map(|r| vec![cost; r.len()]).collect();
        Self::new(scores, costs)
    }

    pub fn n_rows(&self) -> usize {
        self.scores.len()
    }

    pub fn n_folds(&self) -> usize {
        self.scores[0].len()
    }

    /// Reads a headerless (or single-header) numeric CSV.
    pub fn read_csv(path: &Path) -> Result<Vec<Vec<f64>>, EngineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| EngineError::Matrix(e.to_string()))?;
            let parsed: Result<Vec<f64>, _> = rec.iter().map(|c| c.trim().parse::<f64>()).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if i == 0 => continue,
                Err(e) => return Err(EngineError::Matrix(format!("row {}: {e}", i + 1))),
            }
        }
        Ok(rows)
    }

    pub fn load(scores: &Path, costs: Option<&Path>, default_cost: f64) -> Result<Self, EngineError> {
        let s = Self::read_csv(scores)?;
        match costs {
            Some(c) => Self::new(s, Self::read_csv(c)?),
            None => Self::with_uniform_cost(s, default_cost),
        }
    }
}

pub const REPLAY_SPACE: &str = "replay";
const ROW_PARAM: &str = "row";

fn row_of(config: &Configuration) -> usize {
    config.get(ROW_PARAM).and_then(ParamValue::as_i64).expect("replay configuration carries a row") as usize
}

/// Yields matrix rows in order as configurations `{"row": i}`.
pub struct MatrixSource {
    next: usize,
    rows: usize,
    feedback: FeedbackPolicy,
    worst_score: f64,
}

impl MatrixSource {
    pub fn new(rows: usize, feedback: FeedbackPolicy, worst_score: f64) -> Self {
        MatrixSource { next: 0, rows, feedback, worst_score }
    }
}

impl ConfigSource for MatrixSource {
    fn next_config(&mut self) -> Option<Configuration> {
        if self.next >= self.rows {
            return None;
        }
        let mut a = BTreeMap::new();
        a.insert(ROW_PARAM.to_string(), ParamValue::Int(self.next as i64));
        self.next += 1;
        Some(Configuration::new(REPLAY_SPACE, a))
    }

    fn observe(&mut self, _config: &Configuration, outcome: &TrialOutcome) -> f64 {
        reported_value(outcome, self.feedback, self.worst_score)
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub policy: StoppingPolicy,
    pub budget: f64,
    pub workers: usize,
    pub root_seed: u64,
    pub outer_fold: usize,
    pub feedback: FeedbackPolicy,
    pub max_trials: Option<usize>,
}

impl ReplayOptions {
    pub fn new(policy: StoppingPolicy, budget: f64, workers: usize) -> Self {
        ReplayOptions {
            policy,
            budget,
            workers,
            root_seed: 42,
            outer_fold: 0,
            feedback: FeedbackPolicy::ReportFailed,
            max_trials: None,
        }
    }
}

/// Simulated run over a fold-score matrix; `log` receives the trial lines.
pub fn replay(matrix: &FoldScoreMatrix, opts: &ReplayOptions, log: &mut dyn Write) -> io::Result<ScheduleOutcome> {
    let settings = SchedulerSettings {
        policy: opts.policy,
        budget: opts.budget,
        n_folds: matrix.n_folds(),
        max_trials: opts.max_trials,
        seeds: derive_seeds(opts.root_seed, opts.outer_fold),
        test_labels: None,
    };
    let m = matrix.clone();
    let eval = move |job: &FoldJob| {
        let row = row_of(&job.config);
        (m.costs[row][job.fold], FoldOutput { score: Ok(m.scores[row][job.fold]), artifact: None })
    };
    let mut exec = SimulatedExecutor::new(opts.workers, Box::new(eval));
    let mut source = MatrixSource::new(matrix.n_rows(), opts.feedback, 0.0);
    schedule(&settings, &mut source, &mut exec, log)
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub target: String,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySpec {
    pub scores: PathBuf,
    #[serde(default)]
    pub costs: Option<PathBuf>,
    #[serde(default = "one")]
    pub cost: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum OuterSplitSource {
    /// JSON file: `[{"train": [...], "test": [...]}, ...]`.
    File(PathBuf),
    /// Stratified k-fold generated from the root seed.
    Generate { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerCv {
    pub k: usize,
    #[serde(default = "one_usize")]
    pub repeats: usize,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerOverrides {
    #[serde(default)]
    pub rf_n_estimators: Option<i64>,
}

fn default_root_seed() -> u64 {
    42
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Random
}

/// Full description of one model-selection run on one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub replay: Option<ReplaySpec>,
    #[serde(default)]
    pub outer_splits: Option<OuterSplitSource>,
    #[serde(default)]
    pub outer_fold: usize,
    #[serde(default)]
    pub inner_cv: Option<InnerCv>,
    #[serde(default)]
    pub space: Option<String>,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub bo: Option<BoSettings>,
    pub policy: StoppingPolicy,
    pub budget_seconds: f64,
    pub workers: usize,
    #[serde(default = "default_root_seed")]
    pub root_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub learner: LearnerOverrides,
    #[serde(default)]
    pub max_trials: Option<usize>,
}

impl RunManifest {
    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let m: RunManifest = serde_json::from_str(text).map_err(|e| EngineError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Manifest(m.to_string()));
        if !(self.budget_seconds > 0.0 && self.budget_seconds.is_finite()) {
            return bad("budget_seconds must be positive");
        }
        if self.workers < 1 {
            return bad("workers must be at least 1");
        }
        if let Some(cv) = self.inner_cv {
            if cv.k < 2 {
                return bad("inner_cv.k must be at least 2");
            }
            if cv.repeats < 1 {
                return bad("inner_cv.repeats must be at least 1");
            }
        }
        match (&self.dataset, &self.replay) {
            (Some(_), Some(_)) => bad("give either dataset or replay, not both"),
            (None, None) => bad("one of dataset or replay is required"),
            (Some(_), None) => {
                if self.inner_cv.is_none() {
                    return bad("inner_cv is required for dataset runs");
                }
                if self.space.is_none() {
                    return bad("space is required for dataset runs");
                }
                if self.optimizer == OptimizerKind::Bo && self.bo.is_none() {
                    return bad("optimizer bo requires a bo section");
                }
                Ok(())
            }
            (None, Some(_)) => Ok(()),
        }
    }

    pub fn feedback(&self) -> FeedbackPolicy {
        self.bo.as_ref().map_or(FeedbackPolicy::ReportFailed, |b| b.feedback)
    }

    pub fn worst_score(&self) -> f64 {
        self.bo.as_ref().map_or(0.0, |b| b.worst_score)
    }

    pub fn method_label(&self) -> String {
        self.method.clone().unwrap_or_else(|| self.policy.to_string())
    }
}

// ---------------------------------------------------------------- output

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncumbentSummary {
    pub trial_index: usize,
    pub config_id: String,
    pub assignments: BTreeMap<String, ParamValue>,
    pub mean: f64,
    pub worst: f64,
    pub time: f64,
    pub test_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub dataset: String,
    pub outer_fold: usize,
    pub policy: StoppingPolicy,
    pub budget_seconds: f64,
    pub workers: usize,
    pub n_folds: usize,
    pub counts: StatusCounts,
    pub failed_reasons: BTreeMap<usize, String>,
    pub incumbent: Option<IncumbentSummary>,
    /// No trial completed within the budget.
    pub degenerate: bool,
    pub elapsed_seconds: f64,
    pub metadata: BTreeMap<String, String>,
}

pub const TRIALS_FILE: &str = "trials.jsonl";
pub const INCUMBENTS_FILE: &str = "incumbents.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODELS_DIR: &str = "models";

fn base_metadata() -> BTreeMap<String, String> {
    [
        ("auc_averaging", "macro one-vs-rest over classes present"),
        ("robust_sigma", "population (divide by M)"),
        ("robust_replacement", "lowest-mean member"),
        ("incumbent_ties", "earlier configuration kept"),
        ("repeated_cv", "repeat-major flattened fold sequence"),
        ("categorical_encoding", "ordinal with min-frequency collapse, then one-hot when chosen"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EngineError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<(), EngineError> {
    let mut out = String::new();
    for v in values {
        out.push_str(&serde_json::to_string(v).expect("serializable"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

#[allow(clippy::too_many_arguments)]
fn finish_run(
    dir: &Path,
    manifest: &RunManifest,
    dataset: &str,
    n_folds: usize,
    outcome: &ScheduleOutcome,
    mut metadata: BTreeMap<String, String>,
) -> Result<RunSummary, EngineError> {
    write_jsonl(&dir.join(INCUMBENTS_FILE), &outcome.incumbents)?;
    let incumbent = outcome.incumbents.last().map(|ev| {
        let record = outcome.trials.iter().find(|t| t.trial_index == ev.trial_index).expect("incumbent trial logged");
        IncumbentSummary {
            trial_index: ev.trial_index,
            config_id: ev.config_id.clone(),
            assignments: record.assignments.clone(),
            mean: ev.mean,
            worst: ev.worst,
            time: ev.time,
            test_score: ev.test_score,
        }
    });
    if !outcome.incumbent_artifacts.is_empty() {
        let models = dir.join(MODELS_DIR);
        fs::create_dir_all(&models).map_err(io_err(&models))?;
        for (i, a) in outcome.incumbent_artifacts.iter().enumerate() {
            write_json(&models.join(format!("fold_{i:02}.json")), &a.model)?;
        }
    }
    metadata.append(&mut base_metadata());
    let summary = RunSummary {
        method: manifest.method_label(),
        dataset: dataset.to_string(),
        outer_fold: manifest.outer_fold,
        policy: manifest.policy,
        budget_seconds: manifest.budget_seconds,
        workers: manifest.workers,
        n_folds,
        counts: StatusCounts::tally(&outcome.trials),
        failed_reasons: outcome.trials.iter().filter_map(|t| t.failure.clone().map(|f| (t.trial_index, f))).collect(),
        degenerate: incumbent.is_none(),
        incumbent,
        elapsed_seconds: outcome.elapsed,
        metadata,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn open_log(dir: &Path) -> Result<BufWriter<File>, EngineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(TRIALS_FILE);
    Ok(BufWriter::new(File::create(&path).map_err(io_err(&path))?))
}

struct LiveContext {
    space_name: String,
    train: Dataset,
    plan: FoldPlan,
    test: Dataset,
}

fn evaluate_fold(ctx: &LiveContext, job: &FoldJob, cancel: &AtomicBool) -> FoldOutput {
    let failed = |e: String| FoldOutput { score: Err(e), artifact: None };
    let fold = &ctx.plan.folds[job.fold];
    let pipeline = match learners::instantiate(&ctx.space_name, &job.config, job.seed) {
        Ok(p) => p,
        Err(e) => return failed(e.to_string()),
    };
    let model = match learners::fit(&pipeline, &ctx.train.subset(&fold.train), Some(cancel)) {
        Ok(m) => m,
        Err(e) => return failed(e.to_string()),
    };
    let val = ctx.train.subset(&fold.validation);
    let score = match learners::predict_proba(&model, &val)
        .map_err(EngineError::from)
        .and_then(|p| Ok(metrics::roc_auc(&val.labels, &p)?))
    {
        Ok(Score::Value(v)) => Ok(v),
        Ok(Score::Failed) => Err("validation fold holds a single class".to_string()),
        Err(e) => Err(e.to_string()),
    };
    let test_proba = learners::predict_proba(&model, &ctx.test).ok();
    FoldOutput { score, artifact: Some(FoldArtifact { model, test_proba }) }
}

/// Executes a manifest and writes its run directory.
pub fn run(manifest: &RunManifest) -> Result<RunSummary, EngineError> {
    manifest.validate()?;
    let dir = &manifest.output_dir;
    let mut log = open_log(dir)?;
    write_json(&dir.join(MANIFEST_FILE), manifest)?;
    let seeds = derive_seeds(manifest.root_seed, manifest.outer_fold);

    if let Some(spec) = &manifest.replay {
        let matrix = FoldScoreMatrix::load(&spec.scores, spec.costs.as_deref(), spec.cost)?;
        if let Some(cv) = manifest.inner_cv {
            if cv.k * cv.repeats != matrix.n_folds() {
                return Err(EngineError::Manifest("inner_cv does not match the matrix width".into()));
            }
        }
        let opts = ReplayOptions {
            policy: manifest.policy,
            budget: manifest.budget_seconds,
            workers: manifest.workers,
            root_seed: manifest.root_seed,
            outer_fold: manifest.outer_fold,
            feedback: manifest.feedback(),
            max_trials: manifest.max_trials,
        };
        let outcome = replay(&matrix, &opts, &mut log).map_err(io_err(&dir.join(TRIALS_FILE)))?;
        let name = spec.scores.file_stem().map_or("replay".into(), |s| s.to_string_lossy().into_owned());
        return finish_run(dir, manifest, &name, matrix.n_folds(), &outcome, BTreeMap::new());
    }

    let spec = manifest.dataset.as_ref().expect("validated");
    let cv = manifest.inner_cv.expect("validated");
    let space_name = manifest.space.clone().expect("validated");
    let full = data::load_csv(&spec.path, &spec.target, &spec.categorical)?;
    let dataset_name = spec.name.clone().unwrap_or_else(|| full.name.clone());
    let splits = match &manifest.outer_splits {
        Some(OuterSplitSource::File(p)) => data::load_outer_splits(p, full.n_rows())?,
        Some(OuterSplitSource::Generate { k }) => data::generate_outer_splits(&full, *k, manifest.root_seed)?,
        None => data::generate_outer_splits(&full, 10, manifest.root_seed)?,
    };
    let split = splits
        .get(manifest.outer_fold)
        .ok_or_else(|| EngineError::Manifest(format!("outer fold {} out of range", manifest.outer_fold)))?;
    let (train, plan) = data::plan_inner_cv(&full.subset(&split.train), cv.k, cv.repeats, seeds.cv_seed)?;
    let test = full.subset(&split.test);
    let space = builtin_space(&space_name, manifest.learner.rf_n_estimators)
        .ok_or_else(|| EngineError::Manifest(format!("unknown space `{space_name}`")))?;
    let proposer: Box<dyn Proposer> = match manifest.optimizer {
        OptimizerKind::Random => Box::new(
            RandomProposer::new(space, seeds.optimizer_seed).with_feedback(manifest.feedback(), manifest.worst_score()),
        ),
        OptimizerKind::Bo => {
            Box::new(BayesianProposer::new(space, seeds.optimizer_seed, manifest.bo.clone().expect("validated")))
        }
    };
    let mut source = ProposerSource::new(proposer, manifest.feedback(), manifest.worst_score());
    let n_folds = plan.total_folds();
    let augmented = plan.augmented_rows.len();
    let settings = SchedulerSettings {
        policy: manifest.policy,
        budget: manifest.budget_seconds,
        n_folds,
        max_trials: manifest.max_trials,
        seeds,
        test_labels: Some(test.labels.clone()),
    };
    let ctx = Arc::new(LiveContext { space_name, train, plan, test });
    let eval: Arc<LiveFn> = Arc::new(move |job: &FoldJob, cancel: &AtomicBool| evaluate_fold(&ctx, job, cancel));
    let mut exec = LiveExecutor::new(manifest.workers, eval);
    let outcome = schedule(&settings, &mut source, &mut exec, &mut log).map_err(io_err(&dir.join(TRIALS_FILE)))?;
    let mut metadata = BTreeMap::new();
    metadata.insert("augmented_rows".to_string(), augmented.to_string());
    metadata.insert(
        "augmented_duplicates".to_string(),
        "dealt like any row; may share a fold's train and validation sides".to_string(),
    );
    metadata.insert("optimizer".to_string(), format!("{:?}", manifest.optimizer).to_lowercase());
    finish_run(dir, manifest, &dataset_name, n_folds, &outcome, metadata)
}

/// Loads the final incumbent's fold models, soft-votes them on `test` and
/// scores ROC AUC.
pub fn ensemble_test_score(run_dir: &Path, test: &Dataset) -> Result<Score, EngineError> {
    let summary: RunSummary = read_json(&run_dir.join(SUMMARY_FILE))?;
    let models_dir = run_dir.join(MODELS_DIR);
    let missing = |what: &str| EngineError::MissingArtifact { path: run_dir.to_path_buf(), what: what.to_string() };
    if summary.incumbent.is_none() {
        return Err(missing("a final incumbent"));
    }
    let mut probs = Vec::with_capacity(summary.n_folds);
    for i in 0..summary.n_folds {
        let path = models_dir.join(format!("fold_{i:02}.json"));
        if !path.exists() {
            return Err(missing(&format!("model {}", path.display())));
        }
        let model: FittedModel = read_json(&path)?;
        probs.push(learners::predict_proba(&model, test)?);
    }
    Ok(metrics::roc_auc(&test.labels, &metrics::soft_vote(&probs)?)?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, EngineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| EngineError::Manifest(format!("{}: {e}", path.display())))
}
