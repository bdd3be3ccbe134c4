use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use foldstop::analyze;
use foldstop::data;
use foldstop::engine::{self, IncumbentEvent, RunSummary};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_foldstop"))
}

fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_matrix(path: &Path, rows: usize, folds: usize) {
    let mut text = String::new();
    for r in 0..rows {
        let q = 0.5 + 0.45 * ((r * 7919) % 1000) as f64 / 1000.0;
        let row: Vec<String> = (0..folds).map(|f| format!("{:.4}", q + 0.01 * ((r + f) % 5) as f64)).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

#[test]
fn replay_command_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    write_matrix(&scores, 300, 5);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(bin()
            .args(["replay", scores.to_str().unwrap(), "--policy", "forgiving", "--budget", "120", "--workers", "2"])
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap());
        fs::read_to_string(out).unwrap()
    };
    let a = run("a.jsonl");
    assert_eq!(a, run("b.jsonl"));
    let records = analyze::read_trial_log(&dir.path().join("a.jsonl")).unwrap();
    assert!(records.iter().any(|t| t.status == engine::TrialStatus::EarlyStopped));
}

#[test]
fn bad_arguments_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    write_matrix(&scores, 10, 3);
    let out =
        bin().args(["replay", scores.to_str().unwrap(), "--policy", "sometimes", "--budget", "10"]).output().unwrap();
    assert!(!out.status.success());

    let out = bin().args(["replay", "/nonexistent.csv", "--policy", "none", "--budget", "10"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let manifest = dir.path().join("m.json");
    fs::write(&manifest, r#"{"policy": "none", "budget_seconds": 5, "workers": 0, "output_dir": "x"}"#).unwrap();
    let out = bin().arg("run").arg(&manifest).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn replay_manifests_feed_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("bench.csv");
    write_matrix(&scores, 2000, 5);
    let mut runs = Vec::new();
    for policy in ["none", "forgiving", "aggressive"] {
        for fold in 0..2 {
            let out = dir.path().join(format!("{policy}_{fold}"));
            let manifest = dir.path().join(format!("{policy}_{fold}.json"));
            let text = serde_json::json!({
                "replay": {"scores": scores, "cost": 1.0},
                "outer_fold": fold,
                "policy": policy,
                "budget_seconds": 300.0,
                "workers": 2,
                "output_dir": out,
            });
            fs::write(&manifest, text.to_string()).unwrap();
            ok(bin().arg("run").arg(&manifest).output().unwrap());
            for f in [engine::TRIALS_FILE, engine::INCUMBENTS_FILE, engine::SUMMARY_FILE, engine::MANIFEST_FILE] {
                assert!(out.join(f).exists(), "{f} missing");
            }
            runs.push(out);
        }
    }
    let report_dir = dir.path().join("report");
    let mut cmd = bin();
    cmd.args(["analyze", "report"]).args(&runs).arg("--out").arg(&report_dir);
    ok(cmd.output().unwrap());
    for f in ["speedup.csv", "speedup_table.csv", "counts.csv", "regret_val.csv", "regret_val.svg"] {
        assert!(report_dir.join(f).exists(), "{f} missing");
    }

    let report = analyze::aggregate_report(&runs, &dir.path().join("again"), "none").unwrap();
    // Every run replays the same row order, so early stopping can only reach
    // the baseline's best sooner.
    for row in report.speedups.iter().filter(|r| r.method != "none") {
        let pct = row.result.as_ref().unwrap().speedup_percent.unwrap();
        assert!(pct >= 100.0, "{}: {pct}", row.method);
    }
    let started = |m: &str| report.counts.iter().find(|c| c.method == m).unwrap().started;
    assert!(started("aggressive") >= started("forgiving"));
    assert!(started("forgiving") >= started("none"));

    let mut cmd = bin();
    cmd.args(["analyze", "rankcorr"]).args(&runs[..2]).arg("--out").arg(&report_dir);
    ok(cmd.output().unwrap());
    let text = fs::read_to_string(report_dir.join("rankcorr.csv")).unwrap();
    assert!(text.lines().count() > 1);
}

#[test]
fn live_run_writes_a_consistent_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let manifest = dir.path().join("live.json");
    let text = serde_json::json!({
        "dataset": {"path": data_file("synth_binary.csv"), "target": "churned", "categorical": ["region", "plan"]},
        "outer_splits": {"generate": {"k": 3}},
        "outer_fold": 2,
        "inner_cv": {"k": 3},
        "space": "rf",
        "learner": {"rf_n_estimators": 4},
        "policy": "aggressive",
        "budget_seconds": 300.0,
        "workers": 1,
        "max_trials": 6,
        "output_dir": out,
    });
    fs::write(&manifest, text.to_string()).unwrap();
    ok(bin().arg("run").arg(&manifest).output().unwrap());

    let run = analyze::load_run(&out).unwrap();
    assert_eq!(run.trials.len(), 6);
    assert_eq!(run.summary.counts.started, 6);
    assert_eq!(run.summary.n_folds, 3);
    assert!(run.trials.iter().all(|t| t.folds.windows(2).all(|w| w[0].t_end <= w[1].t_start)));

    // Re-scoring the saved fold models reproduces the logged test score.
    let last: &IncumbentEvent = run.incumbents.last().unwrap();
    let full = data::load_csv(data_file("synth_binary.csv"), "churned", &["region".into(), "plan".into()]).unwrap();
    let split = &data::generate_outer_splits(&full, 3, 42).unwrap()[2];
    let test = full.subset(&split.test);
    let score = engine::ensemble_test_score(&out, &test).unwrap().value().unwrap();
    assert!((score - last.test_score.unwrap()).abs() < 1e-12);

    let summary: RunSummary = engine::read_json(&out.join(engine::SUMMARY_FILE)).unwrap();
    assert_eq!(summary.incumbent.unwrap().config_id, last.config_id);
}
