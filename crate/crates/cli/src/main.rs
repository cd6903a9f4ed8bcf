//! `maskma`: batch entry points for data generation, training, evaluation,
//! ablations and the downstream tasks.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use maskma::action::K_INTR;
use maskma::arena::{suite, ScenarioConfig};
use maskma::data::{DataError, Dataset};
use maskma::eval::{madt, write_reports, Controller, ExecutionMode};
use maskma::experiments::{
    ablate_map_count, ablate_mask_ratio, ablate_timestep, downstream, evaluate_suite, gen_data, train_or_reuse,
    Downstream, EvalBudget, ExperimentError, SweepPlan, Table, MAP_COUNT_SWEEP, MASK_SWEEP, TIMESTEP_SWEEP,
};
use maskma::model::{read_checkpoint, ModelError, Params};
use maskma::training::{MaskMode, TrainConfig, TrainError};

use manifest::RunManifest;

/// Worker threads for rollouts and batch gradients.
const WORKERS_ENV: &str = "MASKMA_WORKERS";

const EXIT_VALIDATION: u8 = 2;
const EXIT_GATE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "maskma", version, about = "Mask-based multi-agent imitation learning on grid battles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Record scripted-expert episodes; refuses to write if the expert gate fails.
    GenData(GenDataArgs),
    /// Train a model (or the fixed-head baseline with --madt).
    Train(TrainArgs),
    /// Evaluate a checkpoint on a scenario set.
    Eval(EvalArgs),
    /// Run one ablation sweep.
    Ablate(AblateArgs),
    /// Run one downstream task.
    Downstream(DownstreamArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// `training`, `held-out`, `all`, or a comma list of ids or scenario TOML files.
    #[arg(long, default_value = "training")]
    scenarios: String,
    #[arg(long, default_value_t = 2000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; the dataset is written to `<out>/dataset.bin`.
    #[arg(long)]
    out: PathBuf,
}

/// Training settings: a TOML file (desk preset when absent) with flag overrides.
#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// TrainConfig TOML; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// none, fixed:<ratio>, random or local (desk: random).
    #[arg(long)]
    mask_mode: Option<MaskMode>,
    /// Context length L in timesteps (desk: 5).
    #[arg(long)]
    timestep: Option<usize>,
    /// Desk: 2000.
    #[arg(long)]
    steps: Option<u64>,
    /// Desk: 1e-4.
    #[arg(long)]
    lr: Option<f64>,
    /// Desk: 32.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Desk: 0.
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", p.display())))?
            }
            None => TrainConfig::desk(),
        };
        if let Some(m) = self.mask_mode {
            cfg.mask_mode = m;
        }
        if let Some(l) = self.timestep {
            cfg.model = cfg.model.with_context(l);
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn paths(&self) -> Vec<PathBuf> {
        self.config.iter().cloned().collect()
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    /// Train the fixed-action-space per-agent baseline instead.
    #[arg(long)]
    madt: bool,
    /// Checkpoints, metrics and the manifest go here.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Central,
    Strict,
    Fast,
}

impl From<ModeArg> for ExecutionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Central => ExecutionMode::Centralized,
            ModeArg::Strict => ExecutionMode::DecentralizedStrict,
            ModeArg::Fast => ExecutionMode::DecentralizedFast,
        }
    }
}

#[derive(Args, Debug)]
struct BudgetArgs {
    /// Episodes per seed.
    #[arg(long, default_value_t = 32)]
    episodes: usize,
    #[arg(long = "eval-seeds", default_value_t = 4)]
    seeds: usize,
}

impl BudgetArgs {
    fn budget(&self) -> EvalBudget {
        EvalBudget { episodes: self.episodes, seeds: self.seeds }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "training")]
    scenarios: String,
    /// Ignored for baseline checkpoints, which always run decentralized.
    #[arg(long, value_enum, default_value = "strict")]
    mode: ModeArg,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Which {
    MaskRatio,
    Timestep,
    MapCount,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    which: Which,
    #[command(flatten)]
    train: TrainFlags,
    /// Zero-shot scenarios for the map-count sweep.
    #[arg(long, default_value = "held-out")]
    held_out: String,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Collab,
    Malfunction,
    Adhoc,
}

#[derive(Args, Debug)]
struct DownstreamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, value_enum, default_value = "strict")]
    mode: ModeArg,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Validation, gate and I/O failures get their own exit codes.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        let class = if let Some(x) = cause.downcast_ref::<ExperimentError>() {
            experiment_class(x)
        } else if let Some(x) = cause.downcast_ref::<TrainError>() {
            train_class(x)
        } else if let Some(x) = cause.downcast_ref::<DataError>() {
            data_class(x)
        } else if let Some(x) = cause.downcast_ref::<ModelError>() {
            model_class(x)
        } else if cause.is::<Invalid>() {
            Some(EXIT_VALIDATION)
        } else if cause.is::<std::io::Error>() {
            Some(EXIT_IO)
        } else {
            None
        };
        if let Some(c) = class {
            return c;
        }
    }
    1
}

fn experiment_class(e: &ExperimentError) -> Option<u8> {
    match e {
        ExperimentError::Gate(_) => Some(EXIT_GATE),
        ExperimentError::Config(_) => Some(EXIT_VALIDATION),
        ExperimentError::Io(_) => Some(EXIT_IO),
        ExperimentError::Train(t) => train_class(t),
        ExperimentError::Data(d) => data_class(d),
        ExperimentError::Model(m) => model_class(m),
        _ => None,
    }
}

fn train_class(e: &TrainError) -> Option<u8> {
    match e {
        TrainError::Config(_) => Some(EXIT_VALIDATION),
        TrainError::Io(_) => Some(EXIT_IO),
        TrainError::Data(d) => data_class(d),
        TrainError::Model(m) => model_class(m),
        _ => None,
    }
}

/// Unreadable or corrupt input files count as I/O failures.
fn data_class(e: &DataError) -> Option<u8> {
    match e {
        DataError::Empty | DataError::Arena(_) => Some(EXIT_VALIDATION),
        _ => Some(EXIT_IO),
    }
}

fn model_class(e: &ModelError) -> Option<u8> {
    match e {
        ModelError::Config(_) | ModelError::Input(_) => Some(EXIT_VALIDATION),
        ModelError::Io(_)
        | ModelError::BadMagic
        | ModelError::Version { .. }
        | ModelError::Checksum
        | ModelError::Format(_) => Some(EXIT_IO),
        _ => None,
    }
}

/// A bad argument value discovered after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Invalid(String);

fn run(cli: Cli) -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().map_err(|_| Invalid(format!("{WORKERS_ENV}={v} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Downstream(a) => cmd_downstream(a),
    }
}

/// Resolves `training`, `held-out`, `all` or a comma list of ids / TOML paths.
fn scenario_set(spec: &str) -> Result<(Vec<ScenarioConfig>, Vec<PathBuf>)> {
    match spec {
        "training" => return Ok((suite::training_suite(), vec![])),
        "held-out" => return Ok((suite::held_out_suite(), vec![])),
        "all" => return Ok((suite::training_suite().into_iter().chain(suite::held_out_suite()).collect(), vec![])),
        _ => {}
    }
    let mut out = Vec::new();
    let mut paths = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item.ends_with(".toml") {
            out.push(ScenarioConfig::load(Path::new(item)).with_context(|| format!("loading {item}"))?);
            paths.push(PathBuf::from(item));
        } else {
            out.push(suite::by_id(item).ok_or_else(|| Invalid(format!("unknown scenario {item:?}")))?);
        }
    }
    if out.is_empty() {
        bail!(Invalid("empty scenario set".into()));
    }
    Ok((out, paths))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).map_err(|e| match e {
        DataError::Io(io) => anyhow::Error::new(io).context(format!("reading {}", path.display())),
        other => anyhow::Error::new(other).context(format!("loading {}", path.display())),
    })
}

fn load_params(path: &Path) -> Result<Params> {
    let ck = read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    Ok(ck.params()?)
}

/// Baseline checkpoints carry the fixed `K_intr + N_max` head.
fn controller(params: &Params, mode: ExecutionMode) -> Controller<'_> {
    if params.config().k_intr == K_INTR + madt::n_max() {
        Controller::Madt { params }
    } else {
        Controller::Model { params, mode }
    }
}

fn save_table(out: &Path, name: &str, table: &Table) -> Result<()> {
    table.write_tsv(&out.join(format!("{name}.tsv")))?;
    std::fs::write(out.join(format!("{name}.txt")), table.to_string())?;
    print!("{table}");
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let (scenarios, paths) = scenario_set(&a.scenarios)?;
    RunManifest::new("gen-data", paths, a.seed, &a.out)
        .with("scenarios", scenarios.iter().map(|s| s.id.clone()).collect::<Vec<_>>())
        .with("episodes", a.episodes)
        .write()?;
    let path = a.out.join("dataset.bin");
    let gate = match gen_data(&scenarios, a.episodes, a.seed, &path) {
        Ok(g) => g,
        Err(ExperimentError::Gate(rows)) => {
            for r in &rows {
                println!("{:<16} expert {:.3} {}", r.scenario, r.win_rate, if r.passes() { "ok" } else { "FAIL" });
            }
            return Err(ExperimentError::Gate(rows).into());
        }
        Err(e) => return Err(e.into()),
    };
    for r in &gate {
        println!("{:<16} expert {:.3} ok", r.scenario, r.win_rate);
    }
    std::fs::write(a.out.join("gate.json"), serde_json::to_string_pretty(&gate)?)?;
    println!("wrote {} episodes to {}", gate.iter().map(|r| r.episodes).sum::<usize>(), path.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.train.resolve()?;
    let mut paths = a.train.paths();
    paths.push(a.dataset.clone());
    RunManifest::new("train", paths, cfg.seed, &a.out).with("config", &cfg).with("madt", a.madt).write()?;
    let ds = load_dataset(&a.dataset)?;
    train_or_reuse(&ds, &cfg, &a.out.join("run"), a.madt)?;
    println!("checkpoint: {}", a.out.join("run").join(maskma::training::LAST_CHECKPOINT).display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (scenarios, mut paths) = scenario_set(&a.scenarios)?;
    paths.push(a.checkpoint.clone());
    let mode: ExecutionMode = a.mode.into();
    RunManifest::new("eval", paths, 0, &a.out)
        .with("mode", mode)
        .with("budget", a.budget.budget())
        .with("scenarios", scenarios.iter().map(|s| s.id.clone()).collect::<Vec<_>>())
        .write()?;
    let params = load_params(&a.checkpoint)?;
    let reports = evaluate_suite(controller(&params, mode), &scenarios, a.budget.budget())?;
    let summary = write_reports(&a.out.join("eval.jsonl"), &reports)?;
    let cell = maskma::experiments::suite_cell(&reports);
    let summary = format!("{summary}mean {:.2} ± {:.2}\n", 100.0 * cell.mean, 100.0 * cell.std);
    std::fs::write(a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let base = a.train.resolve()?;
    let (held_out, mut paths) = scenario_set(&a.held_out)?;
    paths.extend(a.train.paths());
    paths.push(a.dataset.clone());
    let which = format!("{:?}", a.which);
    RunManifest::new("ablate", paths, base.seed, &a.out)
        .with("which", &which)
        .with("config", &base)
        .with("budget", a.budget.budget())
        .write()?;
    let ds = load_dataset(&a.dataset)?;
    let plan = SweepPlan {
        base,
        budget: a.budget.budget(),
        runs_dir: a.out.join("runs"),
        train_scenarios: ds.scenarios.clone(),
        held_out,
    };
    let (name, table) = match a.which {
        Which::MaskRatio => ("mask_ratio", ablate_mask_ratio(&ds, &plan, &MASK_SWEEP)?),
        Which::Timestep => ("timestep", ablate_timestep(&ds, &plan, &TIMESTEP_SWEEP)?),
        Which::MapCount => {
            let counts: Vec<usize> = MAP_COUNT_SWEEP.iter().copied().filter(|&k| k <= ds.scenarios.len()).collect();
            ("map_count", ablate_map_count(&ds, &plan, &counts)?)
        }
    };
    save_table(&a.out, name, &table)
}

fn cmd_downstream(a: DownstreamArgs) -> Result<()> {
    let task = match a.task {
        TaskArg::Collab => Downstream::Collab,
        TaskArg::Malfunction => Downstream::Malfunction,
        TaskArg::Adhoc => Downstream::Adhoc,
    };
    let mode: ExecutionMode = a.mode.into();
    RunManifest::new("downstream", vec![a.checkpoint.clone()], 0, &a.out)
        .with("task", format!("{:?}", a.task))
        .with("mode", mode)
        .with("budget", a.budget.budget())
        .write()?;
    let params = load_params(&a.checkpoint)?;
    let (table, reports) = downstream(controller(&params, mode), task, a.budget.budget())?;
    write_reports(&a.out.join("eval.jsonl"), &reports)?;
    save_table(&a.out, &format!("{:?}", a.task).to_lowercase(), &table)
}
