use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dualight::evalkit::{
    dump_embeddings, format_table, run_episode, summarize, DualightPolicy, MetricsReport, Policy,
    DUMP_WINDOW,
};
use dualight::qkernel::Checkpoint;
use dualight::simnet::synth::{grid, GridConfig};
use dualight::simnet::{load_scenario, Network, ScenarioSpec};
use dualight::trainer::{Ablation, SharedCadence, TrainConfig, Trainer};

#[derive(Parser, Debug)]
#[command(name = "dualight", version, about = "Train and evaluate traffic-signal controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on one or more co-trained scenarios.
    Train(TrainArgs),
    /// Evaluate a policy over several seeds.
    Eval(EvalArgs),
    /// Dump pre-output embeddings of a trained model.
    Dump(DumpArgs),
    /// Write a synthetic grid scenario file.
    GenGrid(GridArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Scenario file; repeat to co-train several scenarios.
    #[arg(short = 's', long = "scenario")]
    scenarios: Vec<PathBuf>,
    /// Replay a resolved config written by an earlier run.
    #[arg(long, conflicts_with = "scenarios")]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    target_sync: Option<usize>,
    /// Update the shared network every N decision steps instead of once per episode.
    #[arg(long)]
    shared_every: Option<u32>,
    #[arg(long)]
    no_cotrain: bool,
    #[arg(long)]
    no_experiential: bool,
    #[arg(long)]
    no_intersection_wise: bool,
    #[arg(long)]
    no_feature_wise: bool,
    /// Add cross-scenario neighbors.
    #[arg(long)]
    xscen: bool,
    /// Step scenarios on a thread pool.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PolicyArg {
    Dualight,
    Ftc,
    Maxpressure,
    Random,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(short = 's', long = "scenario", required = true)]
    scenarios: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Dualight)]
    policy: PolicyArg,
    /// Checkpoint for the dualight policy; defaults to `<out>/checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// First evaluation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeds.
    #[arg(long, default_value_t = 5)]
    runs: u64,
    /// Directory for `eval.log`; also the default checkpoint location.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[arg(short = 's', long = "scenario", required = true)]
    scenarios: Vec<PathBuf>,
    /// Defaults to `<out>/checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Inclusive decision-step window, `FROM-TO`.
    #[arg(long, value_parser = parse_window)]
    window: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving `embeddings.tsv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 3)]
    cols: usize,
    #[arg(long, default_value_t = 0)]
    id: usize,
    /// Through demand per direction (veh/h); individual flags override.
    #[arg(long, default_value_t = 600.0)]
    vph: f64,
    #[arg(long)]
    we: Option<f64>,
    #[arg(long)]
    ew: Option<f64>,
    #[arg(long)]
    ns: Option<f64>,
    #[arg(long)]
    sn: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    left: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| format!("expected FROM-TO, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if a > b {
        return Err(format!("window start {a} is after its end {b}"));
    }
    Ok((a, b))
}

/// Everything needed to rerun a training job.
#[derive(Debug, Serialize, Deserialize)]
struct RunConfig {
    scenario_files: Vec<PathBuf>,
    scenarios: Vec<ScenarioSpec>,
    seed: u64,
    train: TrainConfig,
}

fn load_specs(paths: &[PathBuf]) -> Result<Vec<ScenarioSpec>> {
    if paths.is_empty() {
        bail!("at least one --scenario is required");
    }
    paths
        .iter()
        .map(|p| load_scenario(p).with_context(|| format!("loading scenario {}", p.display())))
        .collect()
}

fn networks(specs: &[ScenarioSpec]) -> Result<Vec<Arc<Network>>> {
    specs
        .iter()
        .map(|s| Ok(Arc::new(Network::new(s.clone())?)))
        .collect()
}

fn resolve_train(args: &TrainArgs) -> Result<RunConfig> {
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    let scenarios = load_specs(&args.scenarios)?;
    let d = TrainConfig::default();
    let train = TrainConfig {
        episodes: args.episodes.unwrap_or(d.episodes),
        steps: args.steps.unwrap_or(d.steps),
        batch: args.batch.unwrap_or(d.batch),
        gamma: args.gamma.unwrap_or(d.gamma),
        target_sync: args.target_sync.unwrap_or(d.target_sync),
        shared_cadence: args
            .shared_every
            .map_or(d.shared_cadence, SharedCadence::EveryNSteps),
        ablation: Ablation {
            no_cotrain: args.no_cotrain,
            no_experiential: args.no_experiential,
            no_intersection_wise: args.no_intersection_wise,
            no_feature_wise: args.no_feature_wise,
        },
        xscen: args.xscen,
        parallel: args.parallel,
        ..d
    };
    train.validate()?;
    Ok(RunConfig {
        scenario_files: args.scenarios.clone(),
        scenarios,
        seed: args.seed,
        train,
    })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run = resolve_train(args)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    fs::write(args.out.join("config"), serde_json::to_string_pretty(&run)? + "\n")?;

    let mut metrics = BufWriter::new(File::create(args.out.join("metrics.log"))?);
    let mut timing = BufWriter::new(File::create(args.out.join("timing.log"))?);
    let mut trainer = Trainer::new(&run.scenarios, &run.train, run.seed)?;
    let start = Instant::now();
    for _ in 0..run.train.episodes {
        let t0 = Instant::now();
        let records = trainer.run_episode()?;
        for r in &records {
            writeln!(metrics, "{}", serde_json::to_string(r)?)?;
        }
        metrics.flush()?;
        let last = records.last().map(|r| r.episode).unwrap_or_default();
        writeln!(
            timing,
            "{}",
            serde_json::json!({
                "episode": last,
                "episode_s": t0.elapsed().as_secs_f64(),
                "elapsed_s": start.elapsed().as_secs_f64(),
            })
        )?;
        if let Some(e) = records.iter().find_map(|r| r.eval) {
            eprintln!(
                "episode {:>4}  eps {:.3}  wait {:.2}s  trip {:.2}s",
                last, records[0].epsilon, e.avg_wait, e.avg_trip_time
            );
        }
    }
    timing.flush()?;
    trainer.checkpoint().save(args.out.join("checkpoint"))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn checkpoint_path(explicit: &Option<PathBuf>, out: Option<&Path>) -> Result<PathBuf> {
    match (explicit, out) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(dir)) => Ok(dir.join("checkpoint")),
        (None, None) => bail!("--checkpoint or --out is required for the dualight policy"),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let specs = load_specs(&args.scenarios)?;
    let nets = networks(&specs)?;
    let policy = match args.policy {
        PolicyArg::Dualight => {
            let ckpt = load_checkpoint(&checkpoint_path(&args.checkpoint, args.out.as_deref())?)?;
            Policy::Dualight(Box::new(DualightPolicy::from_checkpoint(&ckpt, &nets)?))
        }
        PolicyArg::Ftc => Policy::Ftc,
        PolicyArg::Maxpressure => Policy::MaxPressure,
        PolicyArg::Random => Policy::Random,
    };
    if args.runs == 0 {
        bail!("--runs must be positive");
    }
    let mut per_scenario: Vec<Vec<MetricsReport>> = vec![Vec::new(); nets.len()];
    let mut log = match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("eval.log"))?))
        }
        None => None,
    };
    for seed in args.seed..args.seed + args.runs {
        let reports = run_episode(&nets, &policy, seed)?;
        for (k, r) in reports.into_iter().enumerate() {
            if let Some(log) = log.as_mut() {
                let rec = serde_json::json!({
                    "policy": policy.name(),
                    "scenario": k,
                    "seed": seed,
                    "report": r,
                });
                writeln!(log, "{rec}")?;
            }
            per_scenario[k].push(r);
        }
    }
    if let Some(mut log) = log {
        log.flush()?;
    }
    let rows: Vec<(String, _)> = per_scenario
        .iter()
        .zip(&args.scenarios)
        .map(|(reports, path)| {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (format!("{} [{name}]", policy.name()), summarize(reports))
        })
        .collect();
    print!("{}", format_table(&rows));
    Ok(())
}

fn cmd_dump(args: &DumpArgs) -> Result<()> {
    let specs = load_specs(&args.scenarios)?;
    let nets = networks(&specs)?;
    let ckpt = load_checkpoint(&checkpoint_path(&args.checkpoint, Some(&args.out))?)?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join("embeddings.tsv");
    let mut w = BufWriter::new(File::create(&path)?);
    let rows = dump_embeddings(&ckpt, &nets, args.window.unwrap_or(DUMP_WINDOW), args.seed, &mut w)?;
    w.flush()?;
    println!("wrote {rows} rows to {}", path.display());
    Ok(())
}

fn cmd_gen_grid(args: &GridArgs) -> Result<()> {
    if args.rows == 0 || args.cols == 0 {
        bail!("grid needs at least one row and one column");
    }
    let cfg = GridConfig {
        rows: args.rows,
        cols: args.cols,
        we_vph: args.we.unwrap_or(args.vph),
        ew_vph: args.ew.unwrap_or(args.vph),
        ns_vph: args.ns.unwrap_or(args.vph),
        sn_vph: args.sn.unwrap_or(args.vph),
        left_vph: args.left,
        ..GridConfig::default()
    };
    let spec = grid(args.id, &cfg);
    Network::new(spec.clone()).context("generated grid failed validation")?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&args.out, serde_json::to_string_pretty(&spec)? + "\n")?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Dump(a) => cmd_dump(a),
        Command::GenGrid(a) => cmd_gen_grid(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
