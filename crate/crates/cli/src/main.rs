use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cornerdet::data::{Dataset, SplitSpec, SynthConfig, HARDHAT_CLASSES};
use cornerdet::workflow::{
    run_bench, run_detect, run_eval, run_synth, run_train, Profile, RunConfig, BENCH_CSV_HEADER,
};
use serde_json::{json, Value};

/// Corner-keypoint hardhat detector: training, evaluation, inference,
/// synthetic data and pooling benchmarks.
#[derive(Parser, Debug)]
#[command(name = "cornerdet", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run config; overrides the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Built-in defaults: paper or toy.
    #[arg(long, global = true, default_value = "toy")]
    profile: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints plus a per-step loss CSV.
    Train {
        /// Dataset root with images/, annotations/ and splits.json.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint with the same model config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Run a checkpoint on image files.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated class names; defaults to the configured dataset's.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
        /// Also write images with the detections drawn on them.
        #[arg(long)]
        overlay: bool,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 600)]
        n: usize,
        /// 160x160 scenes with objects spread over all scale buckets.
        #[arg(long)]
        balanced: bool,
    },
    /// Time the pooling cores.
    Bench {
        /// Comma-separated CxHxW shapes.
        #[arg(long, value_delimiter = ',', default_value = "64x128x128")]
        shapes: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "cp,ccp,vhcp,center")]
        variants: Vec<String>,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Detect { .. } => "detect",
            Command::Synth { .. } => "synth",
            Command::Bench { .. } => "bench",
        }
    }
}

fn resolve(common: &Common, extra: Value) -> Result<RunConfig> {
    let profile: Profile = common.profile.parse()?;
    let mut over = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => json!({}),
    };
    let mut flags = extra;
    if let Some(s) = common.seed {
        flags["seed"] = json!(s);
    }
    if let Some(o) = &common.out {
        flags["out_dir"] = json!(o);
    }
    cornerdet::workflow::merge(&mut over, &flags);
    Ok(RunConfig::from_json(profile, &over)?)
}

fn echo_config(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let path = cfg.out_dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize)> {
    let dims: Vec<usize> = s
        .split('x')
        .map(str::parse)
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad shape {s:?}, expected CxHxW"))?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        _ => bail!("bad shape {s:?}, expected CxHxW"),
    }
}

fn detect_classes(cfg: &RunConfig, given: Option<Vec<String>>) -> Result<Vec<String>> {
    if let Some(c) = given {
        return Ok(c);
    }
    if let Some(root) = &cfg.data.dataset {
        return Ok(Dataset::open(root)?.classes);
    }
    if cfg.model.num_classes == HARDHAT_CLASSES.len() {
        return Ok(HARDHAT_CLASSES.iter().map(|s| s.to_string()).collect());
    }
    Ok((0..cfg.model.num_classes).map(|i| format!("class{i}")).collect())
}

fn run(cli: Cli) -> Result<Value> {
    let common = &cli.common;
    match cli.command {
        Command::Train { dataset, epochs, resume } => {
            let mut flags = json!({});
            if let Some(d) = dataset {
                flags["data"] = json!({ "dataset": d });
            }
            if let Some(e) = epochs {
                flags["schedule"] = json!({ "epochs": e });
            }
            if let Some(r) = resume {
                flags["resume"] = json!(r);
            }
            let cfg = resolve(common, flags)?;
            let report = run_train(&cfg)?;
            println!(
                "trained {} epochs in {:.0}s; final checkpoint {}",
                report.epoch_losses.len(),
                report.seconds,
                report.final_checkpoint.display()
            );
            Ok(serde_json::to_value(report)?)
        }
        Command::Eval { checkpoint, dataset, split } => {
            let mut flags = json!({});
            if let Some(d) = dataset {
                flags["data"]["dataset"] = json!(d);
            }
            if let Some(s) = split {
                flags["data"]["eval_split"] = json!(s);
            }
            let cfg = resolve(common, flags)?;
            echo_config(&cfg)?;
            let (result, table) = run_eval(&cfg, &checkpoint)?;
            println!("{table}");
            Ok(json!({ "map": result.map, "metrics": cfg.out_dir.join("metrics.json") }))
        }
        Command::Detect { checkpoint, classes, overlay, images } => {
            let cfg = resolve(common, json!({}))?;
            echo_config(&cfg)?;
            let classes = detect_classes(&cfg, classes)?;
            let dets = run_detect(&cfg, &checkpoint, &images, &classes, overlay)?;
            let failed = dets.iter().filter(|d| d.error.is_some()).count();
            for d in &dets {
                match &d.error {
                    Some(e) => eprintln!("{}: {e}", d.image),
                    None => println!("{}: {} detections", d.image, d.detections.len()),
                }
            }
            Ok(json!({ "images": dets.len(), "failed": failed, "detections": cfg.out_dir.join("detections.json") }))
        }
        Command::Synth { n, balanced } => {
            let cfg = resolve(common, json!({}))?;
            let mut synth = if balanced { SynthConfig::bucket_balanced() } else { SynthConfig::toy() };
            synth.seed = cfg.seed;
            let split = SplitSpec { seed: cfg.seed, ..SplitSpec::default() };
            let hist = run_synth(&synth, n, &cfg.out_dir, &split)?;
            echo_config(&cfg)?;
            println!("boxes per bucket: small {} medium {} large {}", hist.small, hist.medium, hist.large);
            Ok(serde_json::to_value(hist)?)
        }
        Command::Bench { shapes, variants, reps, warmup } => {
            let cfg = resolve(common, json!({}))?;
            echo_config(&cfg)?;
            if reps < 30 {
                bail!("--reps must be at least 30, got {reps}");
            }
            let shapes = shapes.iter().map(|s| parse_shape(s)).collect::<Result<Vec<_>>>()?;
            let rows = run_bench(&shapes, &variants, reps, warmup, cfg.seed)?;
            let mut csv = format!("{BENCH_CSV_HEADER}\n");
            for r in &rows {
                csv.push_str(&r.csv_row());
                csv.push('\n');
            }
            print!("{csv}");
            let path = cfg.out_dir.join("bench.csv");
            write(&path, &csv)?;
            Ok(json!({ "rows": rows.len(), "csv": path }))
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let command = cli.command.name();
    match run(cli) {
        Ok(summary) => {
            log::debug!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = json!({ "status": "error", "command": command, "error": format!("{e:#}") });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
