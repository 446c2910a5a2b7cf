//! Command-line entry point: dataset generation, planning, training,
//! evaluation, and the invariant self-test suite.
//!
//! Every output embeds the effective configuration (seed, parameters, crate
//! version) so runs are reproducible from their artifacts alone. A `--config`
//! JSON file may supply defaults; explicit flags win.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kinoplan::harness::{
    evaluate_planner, generate_reach_problems, generate_transfer_problems, validate_trajectory,
    Dataset, Planner,
};
use kinoplan::network::{train_epoch, Checkpoint, PlannerNetwork, TrainConfig};
use kinoplan::planner::OptimizerConfig;
use kinoplan::problem::{PlanningProblem, ReachGeometry, TransferGeometry};
use kinoplan::robot::PlanarArm;
use kinoplan::trajectory::SplineShape;
use serde::Deserialize;
use serde_json::json;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "kinoplan",
    version,
    about = "Constrained kinodynamic trajectory planning"
)]
struct Cli {
    /// JSON file with default parameter values; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a problem dataset (JSON lines, one problem per line).
    Gen(GenArgs),
    /// Plan a single problem and write the trajectory with its metrics.
    Plan(PlanArgs),
    /// Train the neural planner on a dataset.
    Train(TrainArgs),
    /// Plan a whole dataset and write per-problem metrics plus aggregates.
    Eval(EvalArgs),
    /// Run the invariant self-tests (boundary, gradient, quadrature).
    Check,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Reach,
    Transfer,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlannerArg {
    Direct,
    Network,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Arm model JSON; defaults to the built-in three-link benchmark arm.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Task geometry JSON overriding the built-in desk-scale defaults.
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    /// Problem JSON file (a single problem object).
    #[arg(long, required_unless_present = "data")]
    problem: Option<PathBuf>,
    /// Dataset to pick a problem from (with --index).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, value_enum)]
    planner: Option<PlannerArg>,
    /// Network checkpoint (required for --planner network).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long = "quad-n")]
    quad_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long = "quad-n")]
    quad_n: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch statistics CSV (defaults to <out>.stats.csv).
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    planner: Option<PlannerArg>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long = "quad-n")]
    quad_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output stem: writes <out>.csv and <out>.json.
    #[arg(long)]
    out: PathBuf,
}

/// Optional defaults loaded from --config; any explicit flag wins.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    task: Option<String>,
    count: Option<usize>,
    seed: Option<u64>,
    planner: Option<String>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    quad_n: Option<usize>,
    hidden: Option<usize>,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = Cli::parse();
    let file_cfg = match cli.config.as_deref().map(load_config).transpose() {
        Ok(cfg) => cfg.unwrap_or_default(),
        Err(err) => {
            eprintln!("error: {err:#}");
            return 2;
        }
    };
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args, &file_cfg),
        Command::Plan(args) => cmd_plan(args, &file_cfg),
        Command::Train(args) => cmd_train(args, &file_cfg),
        Command::Eval(args) => cmd_eval(args, &file_cfg),
        Command::Check => return cmd_check(),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}

fn load_config(path: &Path) -> Result<FileConfig> {
    let file = File::open(path).with_context(|| format!("opening config {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).context("parsing config")
}

fn load_model(path: Option<&Path>) -> Result<PlanarArm> {
    match path {
        None => Ok(PlanarArm::benchmark_3link()),
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening model {}", p.display()))?;
            serde_json::from_reader(BufReader::new(file)).context("parsing model")
        }
    }
}

fn load_problems(path: &Path) -> Result<Dataset> {
    let file = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    Ok(Dataset::read_jsonl(BufReader::new(file), 0)?)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn cmd_gen(args: GenArgs, file_cfg: &FileConfig) -> Result<()> {
    let task = match (args.task, file_cfg.task.as_deref()) {
        (Some(t), _) => t,
        (None, Some("reach")) => TaskArg::Reach,
        (None, Some("transfer")) => TaskArg::Transfer,
        (None, Some(other)) => bail!("unknown task {other:?} in config"),
        (None, None) => TaskArg::Reach,
    };
    let count = args.count.or(file_cfg.count).unwrap_or(100);
    let seed = args.seed.or(file_cfg.seed).unwrap_or(0);
    let model = load_model(args.model.as_deref())?;

    let (dataset, geometry_json) = match task {
        TaskArg::Reach => {
            let geom: ReachGeometry = match &args.geometry {
                Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))?,
                None => ReachGeometry::default(),
            };
            let ds = generate_reach_problems(count, seed, &model, &geom)?;
            (ds, serde_json::to_value(geom)?)
        }
        TaskArg::Transfer => {
            let geom: TransferGeometry = match &args.geometry {
                Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))?,
                None => TransferGeometry::default(),
            };
            let ds = generate_transfer_problems(count, seed, &model, &geom)?;
            (ds, serde_json::to_value(&geom)?)
        }
    };

    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    dataset.write_jsonl(BufWriter::new(file))?;
    // The dataset format is pure JSON lines; the effective configuration goes
    // to a sidecar file next to it.
    let meta = json!({
        "version": VERSION,
        "config": {
            "task": match task { TaskArg::Reach => "reach", TaskArg::Transfer => "transfer" },
            "count": count,
            "seed": seed,
            "geometry": geometry_json,
            "model": serde_json::to_value(&model)?,
        },
    });
    write_json(&sidecar(&args.out), &meta)?;
    println!(
        "wrote {} problems to {}",
        dataset.problems.len(),
        args.out.display()
    );
    Ok(())
}

fn sidecar(out: &Path) -> PathBuf {
    append_suffix(out, ".meta.json")
}

/// Appends to the file name without clobbering existing dots.
fn append_suffix(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    // Checkpoints written by `train` wrap the payload with version/config.
    let file =
        File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))?;
    let payload = value.get("checkpoint").cloned().unwrap_or(value);
    Ok(serde_json::from_value(payload)?)
}

fn build_planner(
    which: PlannerArg,
    checkpoint: Option<&Path>,
    quad_n: Option<usize>,
) -> Result<Planner> {
    match which {
        PlannerArg::Direct => {
            let cfg = OptimizerConfig {
                max_iters: 5000,
                quad_cells: quad_n.unwrap_or(200),
                ..OptimizerConfig::default()
            };
            Ok(Planner::Direct(cfg))
        }
        PlannerArg::Network => {
            let path = checkpoint.context("--planner network requires --checkpoint")?;
            Ok(Planner::Network(Box::new(load_checkpoint(path)?.network)))
        }
    }
}

fn planner_name(which: PlannerArg) -> &'static str {
    match which {
        PlannerArg::Direct => "direct",
        PlannerArg::Network => "network",
    }
}

fn planner_from_cfg(file_cfg: &FileConfig) -> Option<PlannerArg> {
    match file_cfg.planner.as_deref() {
        Some("direct") => Some(PlannerArg::Direct),
        Some("network") => Some(PlannerArg::Network),
        _ => None,
    }
}

fn cmd_plan(args: PlanArgs, file_cfg: &FileConfig) -> Result<()> {
    let model = load_model(args.model.as_deref())?;
    let problem: PlanningProblem = if let Some(p) = &args.problem {
        serde_json::from_reader(BufReader::new(File::open(p)?))?
    } else {
        let data = args.data.as_ref().expect("clap enforces problem|data");
        let ds = load_problems(data)?;
        ds.problems
            .get(args.index)
            .with_context(|| format!("dataset has {} problems", ds.problems.len()))?
            .clone()
    };
    let which = args
        .planner
        .or(planner_from_cfg(file_cfg))
        .unwrap_or(PlannerArg::Direct);
    let planner = build_planner(
        which,
        args.checkpoint.as_deref(),
        args.quad_n.or(file_cfg.quad_n),
    )?;
    let (traj, seconds) = planner.plan(&problem, &model)?;
    let mut metrics = validate_trajectory(&traj, &problem, &model, 1024)?;
    metrics.planning_time = seconds;

    let out = json!({
        "version": VERSION,
        "config": {
            "planner": planner_name(which),
            "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
            "quad_n": args.quad_n.or(file_cfg.quad_n),
            "seed": args.seed.or(file_cfg.seed),
            "index": args.index,
        },
        "problem": serde_json::to_value(&problem)?,
        "trajectory": serde_json::to_value(&traj)?,
        "metrics": serde_json::to_value(&metrics)?,
    });
    write_json(&args.out, &out)?;
    println!(
        "planned in {:.3} ms, motion time {:.3} s, success {}",
        1e3 * metrics.planning_time,
        metrics.motion_time,
        metrics.success
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, file_cfg: &FileConfig) -> Result<()> {
    let model = load_model(args.model.as_deref())?;
    let dataset = load_problems(&args.data)?;
    if dataset.problems.is_empty() {
        bail!("dataset is empty");
    }
    let cfg = TrainConfig {
        learning_rate: args.lr.or(file_cfg.lr).unwrap_or(5e-5),
        batch_size: args.batch.or(file_cfg.batch).unwrap_or(128),
        epochs: args.epochs.or(file_cfg.epochs).unwrap_or(100),
        quad_cells: args.quad_n.or(file_cfg.quad_n).unwrap_or(200),
        hidden: args.hidden.or(file_cfg.hidden).unwrap_or(128),
        seed: args.seed.or(file_cfg.seed).unwrap_or(0),
        ..TrainConfig::default()
    };
    let dof = dataset.problems[0].dof();
    let mut net = PlannerNetwork::new(dof, SplineShape::default(), cfg.hidden, cfg.seed);
    let mut metric = dataset.problems[0].initial_metric();

    let stats_path = args.stats.clone().unwrap_or_else(|| {
        let mut name = args.out.file_name().unwrap_or_default().to_os_string();
        name.push(".stats.csv");
        args.out.with_file_name(name)
    });
    let mut stats_csv = String::from("epoch,mean_total,mean_task,val_total,val_task\n");
    for epoch in 0..cfg.epochs {
        let stats = train_epoch(
            &mut net,
            &dataset.problems,
            &dataset.train_idx,
            &dataset.val_idx,
            &model,
            &mut metric,
            &cfg,
        )?;
        let (vt, vk) = stats
            .validation
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |v| (v.total, v.task));
        stats_csv.push_str(&format!(
            "{epoch},{:.16e},{:.16e},{vt:.16e},{vk:.16e}\n",
            stats.mean_total, stats.mean_task
        ));
        println!(
            "epoch {epoch}: train total {:.4}, task {:.4}",
            stats.mean_total, stats.mean_task
        );
    }
    std::fs::write(&stats_path, stats_csv)?;

    let steps = (cfg.epochs * dataset.train_idx.len().div_ceil(cfg.batch_size)) as u64;
    let checkpoint = Checkpoint {
        network: net,
        metric,
        step: steps,
    };
    let out = json!({
        "version": VERSION,
        "config": serde_json::to_value(&cfg)?,
        "data": args.data.display().to_string(),
        "checkpoint": serde_json::to_value(&checkpoint)?,
    });
    write_json(&args.out, &out)?;
    println!("wrote checkpoint to {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs, file_cfg: &FileConfig) -> Result<()> {
    let model = load_model(args.model.as_deref())?;
    let dataset = load_problems(&args.data)?;
    let which = args
        .planner
        .or(planner_from_cfg(file_cfg))
        .unwrap_or(PlannerArg::Network);
    let planner = build_planner(
        which,
        args.checkpoint.as_deref(),
        args.quad_n.or(file_cfg.quad_n),
    )?;
    let report = evaluate_planner(&planner, &dataset.problems, &model, 1024)?;

    let csv_path = append_suffix(&args.out, ".csv");
    std::fs::write(&csv_path, report.to_csv())?;
    let summary = json!({
        "version": VERSION,
        "config": {
            "data": args.data.display().to_string(),
            "planner": planner_name(which),
            "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
            "seed": args.seed.or(file_cfg.seed),
        },
        "summary": serde_json::to_value(&report.summary)?,
    });
    write_json(&append_suffix(&args.out, ".json"), &summary)?;
    println!(
        "evaluated {} problems: success {:.1}%, median motion time {:.3} s",
        report.summary.problems,
        100.0 * report.summary.success_ratio,
        report.summary.motion_time.median
    );
    Ok(())
}

/// Release-gate self-tests; exit code 3 when any fails.
fn cmd_check() -> i32 {
    let results = kinoplan::selftest::run_all();
    let mut failures = 0;
    for t in &results {
        println!("{}: {}", if t.passed { "PASS" } else { "FAIL" }, t.name);
        if !t.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        3
    } else {
        0
    }
}
