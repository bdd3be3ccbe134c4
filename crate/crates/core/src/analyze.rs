//! Post-hoc analysis of run directories: incumbent traces, speedups,
//! exploration counts, fold-rank correlation and regret reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::engine::{
    IncumbentEvent, RunSummary, StatusCounts, TrialRecord, TrialStatus, INCUMBENTS_FILE, SUMMARY_FILE, TRIALS_FILE,
};
use crate::metrics::{average_ranks, mean_sem, minmax_normalize_traces};

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("rank correlation needs at least 3 fully evaluated configurations, got {0}")]
    TooFewRows(usize),
    #[error("fold-score table rows differ in length")]
    Ragged,
    #[error("run {0} does not share the budget of the other runs")]
    InconsistentGrid(PathBuf),
    #[error("no runs for baseline method `{0}`")]
    NoBaseline(String),
    #[error("no runs given")]
    NoRuns,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalyzeError + '_ {
    move |source| AnalyzeError::Io { path: path.to_path_buf(), source }
}

/// Step function of the best k-fold mean validation score over time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncumbentTrace {
    pub method: String,
    pub dataset: String,
    pub outer_fold: usize,
    pub points: Vec<(f64, f64)>,
}

impl IncumbentTrace {
    /// No completed trial, so nothing to trace.
    pub fn is_degenerate(&self) -> bool {
        self.points.is_empty()
    }

    pub fn best(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }
}

/// Value of a step function at `t` (last value carried forward).
pub fn value_at(points: &[(f64, f64)], t: f64) -> Option<f64> {
    let idx = points.partition_point(|p| p.0 <= t);
    (idx > 0).then(|| points[idx - 1].1)
}

fn end_time(t: &TrialRecord) -> f64 {
    t.folds.last().map_or(0.0, |f| f.t_end)
}

/// One point per completed trial at its end time, holding the running best
/// k-fold mean. Trials with other statuses never advance the trace.
pub fn incumbent_trace(trials: &[TrialRecord]) -> Vec<(f64, f64)> {
    let mut done: Vec<(f64, usize, f64)> = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .filter_map(|t| t.mean_score().map(|m| (end_time(t), t.trial_index, m)))
        .collect();
    done.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best = f64::NEG_INFINITY;
    done.into_iter()
        .map(|(t, _, m)| {
            best = best.max(m);
            (t, best)
        })
        .collect()
}

pub fn evaluated_counts(trials: &[TrialRecord]) -> StatusCounts {
    StatusCounts::tally(trials)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupResult {
    pub baseline_best: f64,
    pub t_base: f64,
    pub t_match: Option<f64>,
    pub speedup_percent: Option<f64>,
}

impl SpeedupResult {
    pub fn failed(&self) -> bool {
        self.t_match.is_none()
    }
}

/// Earliest time the baseline reaches its own final best, against the
/// earliest time the method reaches at least that score; the speedup is
/// `100 * t_base / t_match`.
pub fn speedup(baseline: &[(f64, f64)], method: &[(f64, f64)]) -> Option<SpeedupResult> {
    let best = baseline.last()?.1;
    let t_base = baseline.iter().find(|p| p.1 >= best)?.0;
    let t_match = method.iter().find(|p| p.1 >= best).map(|p| p.0);
    let speedup_percent = t_match.map(|t| if t > 0.0 { 100.0 * (t_base / t) } else { f64::INFINITY });
    Some(SpeedupResult { baseline_best: best, t_base, t_match, speedup_percent })
}

/// Spearman correlation: Pearson correlation of average ranks. Identical
/// rankings give exactly 1; a constant ranking on one side gives NaN.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    if ra == rb {
        return 1.0;
    }
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

/// For n = 1..k, Spearman correlation between the ranking by mean over the
/// first n folds and the ranking by mean over all k folds.
pub fn rank_correlation_curve(table: &[Vec<f64>]) -> Result<Vec<f64>, AnalyzeError> {
    if table.len() < 3 {
        return Err(AnalyzeError::TooFewRows(table.len()));
    }
    let k = table[0].len();
    if table.iter().any(|r| r.len() != k) || k == 0 {
        return Err(AnalyzeError::Ragged);
    }
    let prefix_mean = |n: usize| -> Vec<f64> { table.iter().map(|r| r[..n].iter().sum::<f64>() / n as f64).collect() };
    let full = prefix_mean(k);
    Ok((1..=k).map(|n| spearman(&prefix_mean(n), &full)).collect())
}

/// Fold scores of every completed trial, one row per trial.
pub fn fold_score_table(trials: &[TrialRecord]) -> Vec<Vec<f64>> {
    trials.iter().filter(|t| t.status == TrialStatus::Completed).map(TrialRecord::scores).collect()
}

/// Pointwise mean of step functions, defined from the latest first point
/// onwards; breakpoints are the union of the inputs' breakpoints.
pub fn mean_trace(traces: &[&[(f64, f64)]]) -> Vec<(f64, f64)> {
    if traces.is_empty() || traces.iter().any(|t| t.is_empty()) {
        return Vec::new();
    }
    let start = traces.iter().map(|t| t[0].0).fold(f64::NEG_INFINITY, f64::max);
    let mut times: Vec<f64> = traces.iter().flat_map(|t| t.iter().map(|p| p.0)).filter(|&t| t >= start).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .into_iter()
        .map(|t| {
            let sum: f64 = traces.iter().map(|tr| value_at(tr, t).expect("defined after start")).sum();
            (t, sum / traces.len() as f64)
        })
        .collect()
}

// ---------------------------------------------------------------- run loading

pub struct RunData {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub trials: Vec<TrialRecord>,
    pub incumbents: Vec<IncumbentEvent>,
}

impl RunData {
    pub fn trace(&self) -> IncumbentTrace {
        IncumbentTrace {
            method: self.summary.method.clone(),
            dataset: self.summary.dataset.clone(),
            outer_fold: self.summary.outer_fold,
            points: incumbent_trace(&self.trials),
        }
    }

    /// Test score of the incumbent over time, where recorded.
    pub fn test_trace(&self) -> Vec<(f64, f64)> {
        self.incumbents.iter().filter_map(|e| e.test_score.map(|s| (e.time, s))).collect()
    }
}

fn read_jsonl<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>, AnalyzeError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| AnalyzeError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_trial_log(path: &Path) -> Result<Vec<TrialRecord>, AnalyzeError> {
    read_jsonl(path)
}

pub fn load_run(dir: &Path) -> Result<RunData, AnalyzeError> {
    let summary_path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&summary_path).map_err(io_err(&summary_path))?;
    let summary = serde_json::from_str(&text).map_err(|e| AnalyzeError::Malformed {
        path: summary_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let incumbents_path = dir.join(INCUMBENTS_FILE);
    let incumbents = if incumbents_path.exists() { read_jsonl(&incumbents_path)? } else { Vec::new() };
    Ok(RunData { dir: dir.to_path_buf(), summary, trials: read_trial_log(&dir.join(TRIALS_FILE))?, incumbents })
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub method: String,
    pub dataset: String,
    /// `None` for the dataset-level value computed on mean traces.
    pub outer_fold: Option<usize>,
    pub result: Option<SpeedupResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupTableRow {
    pub method: String,
    pub datasets: usize,
    pub failed: usize,
    pub mean_speedup_percent: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountsTableRow {
    pub method: String,
    pub dataset: String,
    pub runs: usize,
    pub started: f64,
    pub completed: f64,
    pub early_stopped: f64,
    pub failed: f64,
    pub budget_cut: f64,
    /// Percent more started trials than the baseline on the same dataset.
    pub started_vs_baseline_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretRow {
    pub method: String,
    pub time: f64,
    pub mean: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub speedups: Vec<SpeedupRow>,
    pub speedup_table: Vec<SpeedupTableRow>,
    pub counts: Vec<CountsTableRow>,
    pub regret_val: Vec<RegretRow>,
    pub regret_test: Vec<RegretRow>,
}

type Key = (String, String);

fn group(runs: &[RunData]) -> BTreeMap<Key, Vec<&RunData>> {
    let mut m: BTreeMap<Key, Vec<&RunData>> = BTreeMap::new();
    for r in runs {
        m.entry((r.summary.method.clone(), r.summary.dataset.clone())).or_default().push(r);
    }
    for v in m.values_mut() {
        v.sort_by_key(|r| r.summary.outer_fold);
    }
    m
}

/// Per-fold and per-dataset speedups against `baseline`, plus the summary table.
pub fn speedup_tables(
    runs: &[RunData],
    baseline: &str,
) -> Result<(Vec<SpeedupRow>, Vec<SpeedupTableRow>), AnalyzeError> {
    let groups = group(runs);
    if !groups.keys().any(|(m, _)| m == baseline) {
        return Err(AnalyzeError::NoBaseline(baseline.to_string()));
    }
    let mut rows = Vec::new();
    let mut per_method: BTreeMap<String, (usize, usize, Vec<f64>)> = BTreeMap::new();
    for ((method, dataset), method_runs) in &groups {
        if method == baseline {
            continue;
        }
        let Some(base_runs) = groups.get(&(baseline.to_string(), dataset.clone())) else { continue };
        for r in method_runs {
            if let Some(b) = base_runs.iter().find(|b| b.summary.outer_fold == r.summary.outer_fold) {
                rows.push(SpeedupRow {
                    method: method.clone(),
                    dataset: dataset.clone(),
                    outer_fold: Some(r.summary.outer_fold),
                    result: speedup(&b.trace().points, &r.trace().points),
                });
            }
        }
        let base_traces: Vec<Vec<(f64, f64)>> = base_runs.iter().map(|r| r.trace().points).collect();
        let method_traces: Vec<Vec<(f64, f64)>> = method_runs.iter().map(|r| r.trace().points).collect();
        let base_mean = mean_trace(&base_traces.iter().map(Vec::as_slice).collect::<Vec<_>>());
        let method_mean = mean_trace(&method_traces.iter().map(Vec::as_slice).collect::<Vec<_>>());
        let result = speedup(&base_mean, &method_mean);
        let entry = per_method.entry(method.clone()).or_default();
        if let Some(res) = &result {
            entry.0 += 1;
            match res.speedup_percent {
                Some(s) => entry.2.push(s),
                None => entry.1 += 1,
            }
        }
        rows.push(SpeedupRow { method: method.clone(), dataset: dataset.clone(), outer_fold: None, result });
    }
    let table = per_method
        .into_iter()
        .map(|(method, (datasets, failed, values))| {
            let (mean, sem) = if values.is_empty() { (f64::NAN, f64::NAN) } else { mean_sem(&values) };
            SpeedupTableRow { method, datasets, failed, mean_speedup_percent: mean, sem }
        })
        .collect();
    Ok((rows, table))
}

pub fn counts_table(runs: &[RunData], baseline: &str) -> Vec<CountsTableRow> {
    let groups = group(runs);
    let mean_of = |rs: &[&RunData], f: fn(&StatusCounts) -> usize| -> f64 {
        rs.iter().map(|r| f(&evaluated_counts(&r.trials)) as f64).sum::<f64>() / rs.len() as f64
    };
    groups
        .iter()
        .map(|((method, dataset), rs)| {
            let started = mean_of(rs, |c| c.started);
            let base = groups
                .get(&(baseline.to_string(), dataset.clone()))
                .map(|b| mean_of(b, |c| c.started))
                .filter(|&b| b > 0.0);
            CountsTableRow {
                method: method.clone(),
                dataset: dataset.clone(),
                runs: rs.len(),
                started,
                completed: mean_of(rs, |c| c.completed),
                early_stopped: mean_of(rs, |c| c.early_stopped),
                failed: mean_of(rs, |c| c.failed),
                budget_cut: mean_of(rs, |c| c.budget_cut),
                started_vs_baseline_percent: base.map(|b| 100.0 * (started / b - 1.0)),
            }
        })
        .collect()
}

/// Normalized regret per method: per-dataset min-max normalization of the
/// fold-mean traces, then mean and SEM across datasets on a shared grid.
pub fn regret_traces(
    runs: &[RunData],
    trace_of: impl Fn(&RunData) -> Vec<(f64, f64)>,
    grid_points: usize,
) -> Result<Vec<RegretRow>, AnalyzeError> {
    let first = runs.first().ok_or(AnalyzeError::NoRuns)?;
    let budget = first.summary.budget_seconds;
    if let Some(r) = runs.iter().find(|r| r.summary.budget_seconds != budget) {
        return Err(AnalyzeError::InconsistentGrid(r.dir.clone()));
    }
    let groups = group(runs);
    let methods: BTreeSet<String> = groups.keys().map(|k| k.0.clone()).collect();
    let datasets: BTreeSet<String> = groups.keys().map(|k| k.1.clone()).collect();
    let mut means: BTreeMap<Key, Vec<(f64, f64)>> = BTreeMap::new();
    for (key, rs) in &groups {
        let traces: Vec<Vec<(f64, f64)>> = rs.iter().map(|r| trace_of(r)).collect();
        let m = mean_trace(&traces.iter().map(Vec::as_slice).collect::<Vec<_>>());
        if !m.is_empty() {
            means.insert(key.clone(), m);
        }
    }
    if means.is_empty() {
        return Ok(Vec::new());
    }
    let start = means.values().map(|t| t[0].0).fold(f64::NEG_INFINITY, f64::max);
    let end = budget.max(start);
    let n = grid_points.max(1);
    let grid: Vec<f64> =
        (0..n).map(|i| if n == 1 { start } else { start + (end - start) * i as f64 / (n - 1) as f64 }).collect();
    let mut per_method: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for dataset in &datasets {
        let present: Vec<&String> =
            methods.iter().filter(|m| means.contains_key(&((*m).clone(), dataset.clone()))).collect();
        if present.is_empty() {
            continue;
        }
        let sampled: Vec<Vec<f64>> = present
            .iter()
            .map(|m| {
                let t = &means[&((*m).clone(), dataset.clone())];
                grid.iter().map(|&g| value_at(t, g).expect("grid starts after every trace")).collect()
            })
            .collect();
        let regrets = minmax_normalize_traces(&sampled).expect("non-empty");
        for (m, r) in present.into_iter().zip(regrets) {
            per_method.entry(m.clone()).or_default().push(r);
        }
    }
    let mut rows = Vec::new();
    for (method, per_dataset) in per_method {
        for (i, &t) in grid.iter().enumerate() {
            let vals: Vec<f64> = per_dataset.iter().map(|r| r[i]).collect();
            let (mean, sem) = mean_sem(&vals);
            rows.push(RegretRow { method: method.clone(), time: t, mean, sem });
        }
    }
    Ok(rows)
}

pub const SPEEDUP_FORMULA: &str = "speedup_percent = 100 * t_base / t_match";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

pub fn speedup_csv(rows: &[SpeedupRow]) -> String {
    let mut s =
        format!("# {SPEEDUP_FORMULA}\nmethod,dataset,outer_fold,baseline_best,t_base,t_match,speedup_percent,failed\n");
    for r in rows {
        let fold = r.outer_fold.map_or("mean".to_string(), |f| f.to_string());
        match &r.result {
            Some(res) => writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.method,
                r.dataset,
                fold,
                res.baseline_best,
                res.t_base,
                fmt_opt(res.t_match),
                fmt_opt(res.speedup_percent),
                res.failed()
            ),
            None => writeln!(s, "{},{},{},,,,,", r.method, r.dataset, fold),
        }
        .expect("string write");
    }
    s
}

pub fn speedup_table_csv(rows: &[SpeedupTableRow]) -> String {
    let mut s = format!(
        "# {SPEEDUP_FORMULA}; mean and SEM over non-failed datasets\nmethod,datasets,failed,mean_speedup_percent,sem\n"
    );
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.method, r.datasets, r.failed, r.mean_speedup_percent, r.sem)
            .expect("string write");
    }
    s
}

pub fn counts_csv(rows: &[CountsTableRow]) -> String {
    let mut s = String::from(
        "method,dataset,runs,started,completed,early_stopped,failed,budget_cut,started_vs_baseline_percent\n",
    );
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.dataset,
            r.runs,
            r.started,
            r.completed,
            r.early_stopped,
            r.failed,
            r.budget_cut,
            fmt_opt(r.started_vs_baseline_percent)
        )
        .expect("string write");
    }
    s
}

pub fn regret_csv(rows: &[RegretRow]) -> String {
    let mut s = String::from("method,time,mean_regret,sem\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.method, r.time, r.mean, r.sem).expect("string write");
    }
    s
}

pub fn rankcorr_csv(curves: &[(String, Vec<f64>)]) -> String {
    let mut s = String::from("run,n_folds,spearman\n");
    for (run, curve) in curves {
        for (i, rho) in curve.iter().enumerate() {
            writeln!(s, "{run},{},{rho}", i + 1).expect("string write");
        }
    }
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// A standalone SVG line chart of mean regret per method with SEM bands.
pub fn regret_svg(rows: &[RegretRow], title: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let mut by_method: BTreeMap<&str, Vec<&RegretRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(&r.method).or_default().push(r);
    }
    let t0 = rows.iter().map(|r| r.time).fold(f64::INFINITY, f64::min);
    let t1 = rows.iter().map(|r| r.time).fold(f64::NEG_INFINITY, f64::max);
    let ymax = rows.iter().map(|r| r.mean + r.sem).fold(0.0f64, f64::max).max(1e-9);
    let span = if t1 > t0 { t1 - t0 } else { 1.0 };
    let x = |t: f64| pad + (t - t0) / span * (w - 2.0 * pad);
    let y = |v: f64| h - pad - v / ymax * (h - 2.0 * pad);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>\n\
         <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">time (s)</text>\n\
         <text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">normalized regret</text>\n\
         <text x=\"{pad}\" y=\"{}\" text-anchor=\"middle\">{t0:.0}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{t1:.0}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{ymax:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">0</text>\n",
        w / 2.0,
        h - pad,
        w - pad,
        h - pad,
        h - pad,
        w / 2.0,
        h - 10.0,
        h / 2.0,
        h / 2.0,
        h - pad + 15.0,
        w - pad,
        h - pad + 15.0,
        pad - 4.0,
        pad + 4.0,
        pad - 4.0,
        h - pad + 4.0,
    );
    for (i, (method, pts)) in by_method.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", x(r.time), y(r.mean + r.sem))).collect();
        let lower: Vec<String> =
            pts.iter().rev().map(|r| format!("{:.2},{:.2}", x(r.time), y((r.mean - r.sem).max(0.0)))).collect();
        let line: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", x(r.time), y(r.mean))).collect();
        writeln!(
            s,
            "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n\
             <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{}\" y=\"{}\" fill=\"{color}\">{method}</text>",
            upper.join(" "),
            lower.join(" "),
            line.join(" "),
            w - pad - 100.0,
            pad + 15.0 * (i as f64 + 1.0),
        )
        .expect("string write");
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: &Path, text: &str) -> Result<(), AnalyzeError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes every table and chart for `runs` into `out`.
pub fn aggregate_report(run_dirs: &[PathBuf], out: &Path, baseline: &str) -> Result<Report, AnalyzeError> {
    if run_dirs.is_empty() {
        return Err(AnalyzeError::NoRuns);
    }
    let runs: Vec<RunData> = run_dirs.iter().map(|d| load_run(d)).collect::<Result<_, _>>()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let (speedups, speedup_table) = speedup_tables(&runs, baseline)?;
    let counts = counts_table(&runs, baseline);
    let regret_val = regret_traces(&runs, |r| r.trace().points, 100)?;
    let regret_test = regret_traces(&runs, RunData::test_trace, 100)?;
    write(&out.join("speedup.csv"), &speedup_csv(&speedups))?;
    write(&out.join("speedup_table.csv"), &speedup_table_csv(&speedup_table))?;
    write(&out.join("counts.csv"), &counts_csv(&counts))?;
    write(&out.join("regret_val.csv"), &regret_csv(&regret_val))?;
    write(&out.join("regret_val.svg"), &regret_svg(&regret_val, "Normalized validation regret"))?;
    if !regret_test.is_empty() {
        write(&out.join("regret_test.csv"), &regret_csv(&regret_test))?;
        write(&out.join("regret_test.svg"), &regret_svg(&regret_test, "Normalized test regret"))?;
    }
    Ok(Report { speedups, speedup_table, counts, regret_val, regret_test })
}
