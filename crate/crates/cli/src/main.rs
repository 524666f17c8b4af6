use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use trajprog::config::Config;
use trajprog::estimator::remote::RemoteScorer;
use trajprog::estimator::{self, ProgressModel, TrainParams};
use trajprog::evalkit::{self, EvalInputs};
use trajprog::labeling::{self, LabeledTrajectory, Labeler};
use trajprog::model::{self, Trajectory};
use trajprog::recipes::{self, LibraryConfig};
use trajprog::rewards::{self, ProgressProvider, RewardSource};
use trajprog::simenv::{self, AgentParams, DifficultyConfig, GroundTruth, PolicyMix};
use trajprog::synthesis::{self, SynthesisConfig};
use trajprog::{io, Matcher};

#[derive(Parser)]
#[command(
    name = "trajprog",
    version,
    about = "Progress labels, estimators and dense rewards for agent trajectories"
)]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// key = value file overriding pipeline defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic milestone environment.
    Simenv {
        #[command(subcommand)]
        command: SimenvCommand,
    },
    /// Recipe library construction.
    Recipes {
        #[command(subcommand)]
        command: RecipesCommand,
    },
    /// Assign per-step progress labels.
    Label(LabelArgs),
    /// Training-data synthesis.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Fit the progress estimator on labeled steps.
    Train(TrainArgs),
    /// Emit per-step progress rewards.
    Reward(RewardArgs),
    /// Write evaluation tables for a corpus with ground truth.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum SimenvCommand {
    /// Generate tasks and an agent corpus with ground truth.
    Gen(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    tasks: usize,
    #[arg(long)]
    per_task: usize,
    /// e.g. optimal=0.25,noisy=0.35,early=0.2,random=0.2
    #[arg(long)]
    mix: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Subcommand)]
enum RecipesCommand {
    /// Group successful trajectories and fold each group into a recipe.
    Build(BuildArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long, value_parser = parse_labeler)]
    mode: Labeler,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Add synthetic trajectories until success and failure steps balance.
    Balance(BalanceArgs),
}

#[derive(Args)]
struct BalanceArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    /// Mini-batch size; 0 trains on the full batch.
    #[arg(long, default_value_t = 0)]
    batch_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RewardArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_parser = parse_source)]
    source: RewardSource,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// URL of a remote scorer.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Label files; may be repeated.
    #[arg(long)]
    labels: Vec<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    /// Timed estimator calls written to latency.csv; 0 skips the measurement.
    #[arg(long, default_value_t = 0)]
    latency_reps: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_labeler(s: &str) -> Result<Labeler, String> {
    s.parse().map_err(|e: trajprog::Error| e.to_string())
}

fn parse_source(s: &str) -> Result<RewardSource, String> {
    s.parse().map_err(|e: trajprog::Error| e.to_string())
}

/// A problem with the invocation rather than with the data.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

fn category(err: &anyhow::Error) -> (&'static str, u8) {
    if err.downcast_ref::<Usage>().is_some() {
        return ("usage", 2);
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<trajprog::Error>() {
            return match e {
                trajprog::Error::Io { .. } => ("io", 4),
                trajprog::Error::Remote(_) => ("remote", 4),
                _ => ("data", 3),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("io", 4);
        }
    }
    ("data", 3)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or_default();
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (cat, code) = category(&err);
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("error[{cat}]: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let cfg = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("config {}", p.display()))?,
        None => Config::default(),
    };
    cfg.check()?;
    let seed = cli.seed;
    match cli.command {
        Command::Simenv {
            command: SimenvCommand::Gen(a),
        } => simenv_gen(&a, seed),
        Command::Recipes {
            command: RecipesCommand::Build(a),
        } => recipes_build(&a, &cfg),
        Command::Label(a) => label(&a, &cfg),
        Command::Synth {
            command: SynthCommand::Balance(a),
        } => synth_balance(&a, &cfg, seed),
        Command::Train(a) => train(&a, seed),
        Command::Reward(a) => reward(&a, &cfg),
        Command::Eval(a) => eval(&a, &cfg),
    }
}

fn read_corpus(path: &Path) -> anyhow::Result<Vec<Trajectory>> {
    let data = model::read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    model::validate_dataset(&data).with_context(|| format!("validating {}", path.display()))?;
    Ok(data)
}

fn matcher(cfg: &Config) -> Matcher {
    Matcher::with_epsilon(cfg.epsilon)
}

fn simenv_gen(a: &GenArgs, seed: u64) -> anyhow::Result<()> {
    if a.tasks == 0 || a.per_task == 0 {
        return Err(usage("--tasks and --per-task must be >= 1"));
    }
    let mix = match &a.mix {
        Some(s) => PolicyMix::parse(s).map_err(|e| usage(e.to_string()))?,
        None => PolicyMix::default(),
    };
    let tasks = simenv::generate_tasks(a.tasks, seed, &DifficultyConfig::default())?;
    let corpus = simenv::generate_corpus(&tasks, &mix, a.per_task, seed, &AgentParams::default())?;
    model::validate_dataset(&corpus.dataset)?;
    let data = io::to_jsonl(&corpus.dataset)?;
    let truth = corpus.truth().to_csv()?;
    io::write_atomic(&a.out, &data)?;
    io::write_atomic(&a.truth, &truth)?;
    log::info!(
        "{} trajectories over {} tasks written to {}",
        corpus.dataset.len(),
        tasks.len(),
        a.out.display()
    );
    Ok(())
}

fn recipes_build(a: &BuildArgs, cfg: &Config) -> anyhow::Result<()> {
    let theta = a.theta.unwrap_or(cfg.theta);
    if !(0.0..=1.0).contains(&theta) {
        return Err(usage(format!("--theta {theta} outside [0, 1]")));
    }
    let data = read_corpus(&a.input)?;
    let lib = recipes::build_library(&data, theta, &matcher(cfg))?;
    for (goal, groups) in &lib.empty_groups {
        log::warn!(
            "goal {goal}: {} group(s) folded to an empty recipe",
            groups.len()
        );
    }
    recipes::save_library(&a.out, &lib)?;
    log::info!(
        "{} recipes for {} goals",
        lib.recipe_count(),
        lib.goals.len()
    );
    Ok(())
}

fn label(a: &LabelArgs, cfg: &Config) -> anyhow::Result<()> {
    if a.mode == Labeler::Lcs && a.library.is_none() {
        return Err(usage("--mode lcs requires --library"));
    }
    let data = read_corpus(&a.input)?;
    let m = matcher(cfg);
    let lib = match &a.library {
        Some(p) => {
            let current = LibraryConfig::new(cfg.theta, &m);
            Some(recipes::load_library(p, Some(&current))?.0)
        }
        None => None,
    };
    let (labels, summary) =
        labeling::label_dataset(&data, lib.as_ref(), a.mode, &m, &cfg.milestone_totals)?;
    for (goal, n) in &summary.skipped_by_goal {
        log::warn!("goal {goal}: {n} trajectory(ies) skipped");
    }
    for (id, reason) in &summary.skip_reasons {
        log::debug!("skipped {id}: {reason}");
    }
    if !summary.failed_full_match.is_empty() {
        log::warn!(
            "{} failed trajectories fully match a recipe",
            summary.failed_full_match.len()
        );
    }
    labeling::write_labels(&a.out, &labels)?;
    log::info!(
        "labeled {} of {} trajectories",
        summary.labeled,
        summary.input
    );
    Ok(())
}

fn synth_balance(a: &BalanceArgs, cfg: &Config, seed: u64) -> anyhow::Result<()> {
    let ratio = a.ratio.unwrap_or(cfg.synth_ratio);
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(usage("--ratio must be > 0"));
    }
    let data = read_corpus(&a.input)?;
    let sc = SynthesisConfig {
        seed,
        target_ratio: ratio,
        max_insertions: cfg.synth_max_insertions,
        mismatch_fraction: cfg.synth_mismatch_fraction,
        cap_factor: cfg.synth_cap_factor,
        ..Default::default()
    };
    let (out, report) = synthesis::balance_dataset(&data, &sc)?;
    model::validate_dataset(&out)?;
    let body = io::to_jsonl(&out)?;
    let csv = report.to_csv()?;
    io::write_atomic(&a.out, &body)?;
    io::write_atomic(&a.report, &csv)?;
    log::info!(
        "step ratio {:.3} -> {:.3} with {} added trajectories",
        report.ratio_before,
        report.ratio_after,
        out.len() - data.len()
    );
    Ok(())
}

fn train(a: &TrainArgs, seed: u64) -> anyhow::Result<()> {
    if a.epochs == 0 {
        return Err(usage("--epochs must be >= 1"));
    }
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(usage("--lr must be > 0"));
    }
    let data = read_corpus(&a.corpus)?;
    let labels = read_label_file(&a.labels)?;
    check_labels(&labels, &data)?;
    let samples = estimator::training_samples(&data, &labels);
    let params = TrainParams {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed,
        ..Default::default()
    };
    let out = estimator::train(&samples, &params)?;
    out.model.save(&a.out)?;
    log::info!(
        "trained on {} steps, final loss {:.5}",
        samples.len(),
        out.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn read_label_file(path: &Path) -> anyhow::Result<Vec<LabeledTrajectory>> {
    labeling::read_labels(path).with_context(|| format!("reading {}", path.display()))
}

/// Every label set must refer to a known trajectory and satisfy the label
/// invariants.
fn check_labels(labels: &[LabeledTrajectory], data: &[Trajectory]) -> anyhow::Result<()> {
    let index: std::collections::HashMap<&str, &Trajectory> =
        data.iter().map(|t| (t.traj_id.as_str(), t)).collect();
    for l in labels {
        let t = index.get(l.traj_id.as_str()).ok_or_else(|| {
            trajprog::Error::InvalidInput(format!("labels for unknown trajectory {}", l.traj_id))
        })?;
        if let Some(v) = l.violations(t.len()).first() {
            return Err(trajprog::Error::InvalidInput(format!("{}: {v}", l.traj_id)).into());
        }
    }
    Ok(())
}

fn reward(a: &RewardArgs, cfg: &Config) -> anyhow::Result<()> {
    let k = a.k.unwrap_or(cfg.k);
    if k == 0 {
        return Err(usage("--k must be >= 1"));
    }
    let clip = a.clip.or(cfg.reward_clip);
    let data = read_corpus(&a.input)?;
    let series = match a.source {
        RewardSource::Estimator => {
            let path = a
                .model
                .as_ref()
                .ok_or_else(|| usage("--source estimator requires --model"))?;
            let m = ProgressModel::load(path)?;
            data.par_iter()
                .map(|t| rewards::reward_trajectory(t, ProgressProvider::Estimator(&m), k, clip))
                .collect::<trajprog::Result<Vec<_>>>()?
        }
        RewardSource::Labels => {
            let path = a
                .labels
                .as_ref()
                .ok_or_else(|| usage("--source labels requires --labels"))?;
            let labels = read_label_file(path)?;
            check_labels(&labels, &data)?;
            let index: std::collections::HashMap<&str, &LabeledTrajectory> =
                labels.iter().map(|l| (l.traj_id.as_str(), l)).collect();
            let mut out = Vec::new();
            for t in &data {
                match index.get(t.traj_id.as_str()) {
                    Some(l) => out.push(rewards::reward_trajectory(
                        t,
                        ProgressProvider::Labels(l),
                        k,
                        clip,
                    )?),
                    None => log::warn!("{}: no labels, skipped", t.traj_id),
                }
            }
            out
        }
        RewardSource::Remote => {
            let endpoint = a
                .endpoint
                .as_ref()
                .ok_or_else(|| usage("--source remote requires --endpoint"))?;
            let scorer = RemoteScorer::new(endpoint.clone(), Duration::from_millis(a.timeout_ms));
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.remote_max_in_flight.max(1))
                .build()
                .context("configuring remote workers")?;
            pool.install(|| {
                data.par_iter()
                    .map(|t| {
                        rewards::reward_trajectory(t, ProgressProvider::Remote(&scorer), k, clip)
                    })
                    .collect::<trajprog::Result<Vec<_>>>()
            })?
        }
    };
    rewards::write_rewards(&a.out, &series)?;
    log::info!("rewards for {} trajectories", series.len());
    Ok(())
}

fn eval(a: &EvalArgs, cfg: &Config) -> anyhow::Result<()> {
    if a.model.is_none() && a.labels.is_empty() {
        return Err(usage("eval needs --model and/or --labels"));
    }
    let tau_s = a.tau.unwrap_or(cfg.tau_s);
    let data = read_corpus(&a.corpus)?;
    let truth =
        GroundTruth::read(&a.truth).with_context(|| format!("reading {}", a.truth.display()))?;
    let model = a.model.as_deref().map(ProgressModel::load).transpose()?;
    let mut label_sets = Vec::new();
    for p in &a.labels {
        let labels = read_label_file(p)?;
        check_labels(&labels, &data)?;
        let name = labels
            .first()
            .map(|l| format!("{:?}", l.labeler).to_lowercase())
            .unwrap_or_else(|| "empty".into());
        label_sets.push((name, labels));
    }
    let report = evalkit::evaluate(&EvalInputs {
        corpus: &data,
        truth: &truth,
        model: model.as_ref(),
        labels: label_sets
            .iter()
            .map(|(n, l)| (n.clone(), l.as_slice()))
            .collect(),
        tau_s,
        latency_reps: a.latency_reps,
    })?;
    report.write(&a.out_dir)?;
    print!("{}", report.summary());
    Ok(())
}
