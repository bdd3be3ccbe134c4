use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use foldstop::analyze;
use foldstop::engine::{self, FoldScoreMatrix, ReplayOptions, RunManifest};
use foldstop::optimize::FeedbackPolicy;
use foldstop::stopping::StoppingPolicy;

#[derive(Parser)]
#[command(name = "foldstop", version, about = "Hyperparameter search with early-stopped cross-validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run manifest.
    Run { manifest: PathBuf },
    /// Simulate a run over a fold-score matrix.
    Replay {
        scores: PathBuf,
        #[arg(long)]
        policy: StoppingPolicy,
        #[arg(long)]
        budget: f64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// CSV of per-entry costs in seconds, same shape as the scores.
        #[arg(long)]
        costs: Option<PathBuf>,
        /// Uniform per-fold cost when no cost file is given.
        #[arg(long, default_value_t = 1.0)]
        cost: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "failed")]
        feedback: FeedbackPolicy,
        /// Write the trial log here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyze run directories.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Method label of the reference runs.
    #[arg(long, default_value = "none")]
    baseline: String,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    Speedup(AnalyzeArgs),
    Counts(AnalyzeArgs),
    Traces(AnalyzeArgs),
    Rankcorr(AnalyzeArgs),
    Report(AnalyzeArgs),
}

type BoxError = Box<dyn std::error::Error>;

fn write_file(path: &Path, text: &str) -> Result<(), BoxError> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn load_runs(args: &AnalyzeArgs) -> Result<Vec<analyze::RunData>, BoxError> {
    std::fs::create_dir_all(&args.out)?;
    Ok(args.runs.iter().map(|d| analyze::load_run(d)).collect::<Result<_, _>>()?)
}

fn analyze_cmd(what: AnalyzeCommand) -> Result<(), BoxError> {
    match what {
        AnalyzeCommand::Speedup(a) => {
            let runs = load_runs(&a)?;
            let (rows, table) = analyze::speedup_tables(&runs, &a.baseline)?;
            write_file(&a.out.join("speedup.csv"), &analyze::speedup_csv(&rows))?;
            write_file(&a.out.join("speedup_table.csv"), &analyze::speedup_table_csv(&table))?;
        }
        AnalyzeCommand::Counts(a) => {
            let runs = load_runs(&a)?;
            write_file(&a.out.join("counts.csv"), &analyze::counts_csv(&analyze::counts_table(&runs, &a.baseline)))?;
        }
        AnalyzeCommand::Traces(a) => {
            let runs = load_runs(&a)?;
            let val = analyze::regret_traces(&runs, |r| r.trace().points, 100)?;
            write_file(&a.out.join("regret_val.csv"), &analyze::regret_csv(&val))?;
            write_file(&a.out.join("regret_val.svg"), &analyze::regret_svg(&val, "Normalized validation regret"))?;
            let test = analyze::regret_traces(&runs, analyze::RunData::test_trace, 100)?;
            if !test.is_empty() {
                write_file(&a.out.join("regret_test.csv"), &analyze::regret_csv(&test))?;
                write_file(&a.out.join("regret_test.svg"), &analyze::regret_svg(&test, "Normalized test regret"))?;
            }
        }
        AnalyzeCommand::Rankcorr(a) => {
            let runs = load_runs(&a)?;
            let mut curves = Vec::new();
            for r in &runs {
                let curve = analyze::rank_correlation_curve(&analyze::fold_score_table(&r.trials))
                    .map_err(|e| format!("{}: {e}", r.dir.display()))?;
                curves.push((r.dir.display().to_string(), curve));
            }
            write_file(&a.out.join("rankcorr.csv"), &analyze::rankcorr_csv(&curves))?;
        }
        AnalyzeCommand::Report(a) => {
            analyze::aggregate_report(&a.runs, &a.out, &a.baseline)?;
        }
    }
    Ok(())
}

fn real_main(cli: Cli) -> Result<(), BoxError> {
    match cli.command {
        Command::Run { manifest } => {
            let m = RunManifest::load(&manifest)?;
            let summary = engine::run(&m)?;
            let c = summary.counts;
            eprintln!(
                "{}: {} started, {} completed, {} early stopped, {} failed, {} budget cut",
                m.output_dir.display(),
                c.started,
                c.completed,
                c.early_stopped,
                c.failed,
                c.budget_cut
            );
            if summary.degenerate {
                eprintln!("warning: no trial completed within the budget");
            }
        }
        Command::Replay { scores, policy, budget, workers, costs, cost, seed, feedback, out } => {
            if workers == 0 || budget.is_nan() || budget <= 0.0 {
                return Err("workers must be >= 1 and budget > 0".into());
            }
            let matrix = FoldScoreMatrix::load(&scores, costs.as_deref(), cost)?;
            let mut opts = ReplayOptions::new(policy, budget, workers);
            opts.root_seed = seed;
            opts.feedback = feedback;
            match out {
                Some(path) => {
                    let mut f = io::BufWriter::new(std::fs::File::create(&path)?);
                    engine::replay(&matrix, &opts, &mut f)?;
                    f.flush()?;
                }
                None => {
                    let stdout = io::stdout();
                    engine::replay(&matrix, &opts, &mut stdout.lock())?;
                }
            }
        }
        Command::Analyze { what } => analyze_cmd(what)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
