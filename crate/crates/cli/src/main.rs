//! `dualchecker` command-line driver.

mod inspect;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use dualchecker::data::{load_dataset, split_train_eval};
use dualchecker::features::Featurizer;
use dualchecker::metrics::{evaluate_student, Averaging, MetricsReport};
use dualchecker::pipeline::{
    check_invariants, load_run_config, resolve_config, Backends, Distiller, RunConfig, RunInputs, RunOutcome,
    Violation, CHECKPOINT_FILE, CONFIG_FILE,
};
use dualchecker::simulate::{bundled_names, Scenario, SimulationReport, SCENARIO_FILE};
use dualchecker::student::StudentModel;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "dualchecker", version, about = "Teacher-to-student distillation with confidence-gated re-prompting")]
struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Distill a student from teacher labels on unlabeled data.
    Distill(DistillArgs),
    /// Score a saved student on a labeled dataset.
    Eval(EvalArgs),
    /// Run a scripted scenario offline and check the run's invariants.
    Simulate(SimulateArgs),
    /// Summarize a run directory.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct DistillArgs {
    /// Run config (TOML).
    #[arg(long, required_unless_present = "resume")]
    config: Option<PathBuf>,
    /// Labeled JSONL: retrieval pool, seed exemplars and (split off by
    /// `train_ratio`) the eval set.
    #[arg(long, required_unless_present = "resume")]
    train: Option<PathBuf>,
    /// Unlabeled JSONL to distill on.
    #[arg(long, required_unless_present = "resume")]
    unlabeled: Option<PathBuf>,
    /// Labeled JSONL used for evaluation instead of a split of --train.
    #[arg(long, conflicts_with = "resume")]
    eval: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Config override, `key=value` (dotted keys for nested tables). Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", conflicts_with = "resume")]
    overrides: Vec<String>,
    /// Continue the interrupted run in --out.
    #[arg(long)]
    resume: bool,
    /// Stop after this many batches.
    #[arg(long)]
    max_batches: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AverageArg {
    Macro,
    Micro,
}

impl From<AverageArg> for Averaging {
    fn from(a: AverageArg) -> Self {
        match a {
            AverageArg::Macro => Averaging::Macro,
            AverageArg::Micro => Averaging::Micro,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Student checkpoint, or a run directory holding one.
    #[arg(long)]
    model: PathBuf,
    /// Labeled JSONL.
    #[arg(long)]
    data: PathBuf,
    /// Config giving the task and features; defaults to the run directory's.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Averaging for the headline numbers; defaults to the config's.
    #[arg(long, value_enum)]
    average: Option<AverageArg>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Bundled scenario name or path to a scenario JSON file.
    #[arg(long, required_unless_present_any = ["resume", "list"])]
    scenario: Option<String>,
    /// Run directory; without it the run stays in memory.
    #[arg(long, required_if_eq("resume", "true"))]
    out: Option<PathBuf>,
    /// Config override, `key=value`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", conflicts_with = "resume")]
    overrides: Vec<String>,
    /// Continue the interrupted simulation in --out.
    #[arg(long, conflicts_with = "scenario")]
    resume: bool,
    /// Stop after this many batches.
    #[arg(long)]
    max_batches: Option<usize>,
    /// List the bundled scenarios.
    #[arg(long)]
    list: bool,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Run directory.
    run_dir: PathBuf,
}

/// How a successful command ended.
enum Status {
    Ok,
    Violations,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = match cli.command {
        Command::Distill(a) => distill(a),
        Command::Eval(a) => eval(a),
        Command::Simulate(a) => simulate(a),
        Command::Inspect(a) => inspect::run(&a.run_dir).map(|text| {
            print!("{text}");
            Status::Ok
        }),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Violations) => ExitCode::from(EXIT_VIOLATION),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn print_violations(violations: &[Violation]) {
    for v in violations {
        eprintln!("invariant violated: {v}");
    }
}

fn print_outcome(outcome: &RunOutcome, cfg: &RunConfig) {
    let state = if outcome.completed { "completed" } else { "paused" };
    println!("{state} after {} batches", outcome.batches_done);
    if let Some(m) = &outcome.metrics {
        print!("{}", m.to_text(&cfg.task.label_space(), cfg.averaging));
    }
}

fn distill(a: DistillArgs) -> Result<Status> {
    let (cfg, mut distiller) = if a.resume {
        let cfg = load_run_config(&a.out)?;
        let backends = Backends::from_config(&cfg)?;
        let embedder = cfg.embedding.build()?;
        (cfg, Distiller::resume(&a.out, backends, embedder)?)
    } else {
        let cfg = resolve_config(a.config.as_deref(), &a.overrides)?;
        log::info!("resolved config:\n{}", cfg.to_toml());
        let (train, unlabeled) = (a.train.expect("required by clap"), a.unlabeled.expect("required by clap"));
        let labeled = load_dataset(&train, cfg.task).with_context(|| format!("loading {}", train.display()))?;
        let unlabeled =
            load_dataset(&unlabeled, cfg.task).with_context(|| format!("loading {}", unlabeled.display()))?;
        let (train, eval) = match &a.eval {
            Some(p) => (labeled, load_dataset(p, cfg.task).with_context(|| format!("loading {}", p.display()))?),
            None => split_train_eval(&labeled, cfg.train_ratio, cfg.seed)?,
        };
        let inputs = RunInputs {
            train,
            unlabeled,
            eval: Some(eval),
        };
        let backends = Backends::from_config(&cfg)?;
        let embedder = cfg.embedding.build()?;
        let d = Distiller::start(cfg.clone(), inputs, backends, embedder, Some(&a.out))?;
        (cfg, d)
    };
    let outcome = distiller.run(a.max_batches)?;
    print_outcome(&outcome, &cfg);
    println!("run directory: {}", a.out.display());
    let violations = check_invariants(&outcome.events, cfg.n_shot);
    print_violations(&violations);
    Ok(if violations.is_empty() { Status::Ok } else { Status::Violations })
}

fn eval_config(model: &Path, config: Option<&Path>) -> Result<RunConfig> {
    match config {
        Some(p) => Ok(resolve_config(Some(p), &[])?),
        None if model.is_dir() => Ok(load_run_config(model)?),
        None => bail!("--config is required when --model is a checkpoint file"),
    }
}

fn eval(a: EvalArgs) -> Result<Status> {
    let cfg = eval_config(&a.model, a.config.as_deref())?;
    let ckpt = if a.model.is_dir() { a.model.join(CHECKPOINT_FILE) } else { a.model.clone() };
    let model = StudentModel::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let data = load_dataset(&a.data, cfg.task).with_context(|| format!("loading {}", a.data.display()))?;
    let featurizer = Featurizer::new(cfg.embedding.build()?, cfg.token_feature_dim, cfg.seed);
    let report: MetricsReport = evaluate_student(&model, &featurizer, &data, cfg.score_aggregation)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        let avg = a.average.map_or(cfg.averaging, Averaging::from);
        print!("{}", report.to_text(&cfg.task.label_space(), avg));
    }
    Ok(Status::Ok)
}

fn simulate(a: SimulateArgs) -> Result<Status> {
    if a.list {
        for name in bundled_names() {
            println!("{name}");
        }
        return Ok(Status::Ok);
    }
    let report: SimulationReport = if a.resume {
        let dir = a.out.as_deref().expect("required by clap");
        let path = dir.join(SCENARIO_FILE);
        if !dir.join(CONFIG_FILE).exists() || !path.exists() {
            bail!("{} is not a simulation run directory", dir.display());
        }
        let s = Scenario::load(path.to_str().context("run directory path is not UTF-8")?)?;
        s.resume(dir, a.max_batches)?
    } else {
        let s = Scenario::load(a.scenario.as_deref().expect("required by clap"))?;
        s.run(a.out.as_deref(), &a.overrides, a.max_batches)?
    };
    summarize_simulation(&report);
    print_violations(&report.violations);
    for u in &report.unmet {
        eprintln!("expectation not met: {u}");
    }
    Ok(if report.ok() { Status::Ok } else { Status::Violations })
}

fn summarize_simulation(report: &SimulationReport) {
    let s = inspect::summarize(&report.outcome.events);
    let state = if report.outcome.completed { "completed" } else { "paused" };
    println!(
        "{state} after {} batches: {} teacher calls, {} re-prompts, {} parse failures, {} template updates",
        report.outcome.batches_done, s.teacher_calls, s.reprompts, s.parse_failures, s.template_updates
    );
    if let Some(m) = &report.outcome.metrics {
        println!("eval: macro F1 {:.4}, micro F1 {:.4} over {}", m.macro_f1, m.micro_f1, m.n_eval);
    }
}
