use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, load_into, read_manifest, save_checkpoint};
use crate::data::{draw_boxes, generate_synthetic, hat_color, load_image, save_image, split_dataset, Dataset, SplitSpec, SynthConfig};
use crate::decoder::{decode, Detection};
use crate::error::{Error, Result};
use crate::evaluation::{EvalResult, ScaleBucket};
use crate::geometry::BoundingBox;
use crate::losses::LossBreakdown;
use crate::network::Model;
use crate::pooling::{registry, CornerType};
use crate::tensor::{Shape, Tensor};

use super::{evaluate_model, train_model, RunConfig};

const EVAL_BATCH: usize = 16;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::file(path, e))
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let root = cfg
        .data
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("data.dataset is not set".into()))?;
    let ds = Dataset::open(root)?;
    if ds.classes.len() != cfg.model.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes {:?} but the model expects {}",
            ds.classes.len(),
            ds.classes,
            cfg.model.num_classes
        )));
    }
    Ok(ds)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_checkpoint: PathBuf,
    pub deploy_checkpoint: Option<PathBuf>,
    pub loss_log: PathBuf,
    pub param_count: usize,
    pub deploy_param_count: Option<usize>,
    pub epoch_losses: Vec<f64>,
    pub seconds: f64,
}

/// Trains on the configured dataset split, logging every step to
/// `loss.csv` and writing `final.ckpt` (plus `deploy.ckpt` when pruning).
pub fn run_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let ds = open_dataset(cfg)?;
    let samples = ds.load_split(&cfg.data.train_split, cfg.model.input_size)?;
    let out = &cfg.out_dir;
    create_dir(&out.join("checkpoints"))?;
    write_file(&out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;

    let mut model = Model::build(cfg.model.clone(), cfg.seed)?;
    let mut start = 0;
    if let Some(path) = &cfg.resume {
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        let (manifest, data) = read_manifest(&bytes).map_err(|e| Error::file(path, e))?;
        load_into(&mut model, &manifest, data).map_err(|e| Error::file(path, e))?;
        start = manifest.epoch.unwrap_or(0);
        log::info!("resuming from {} at epoch {start}", path.display());
    }

    let log_path = out.join("loss.csv");
    let file = fs::File::create(&log_path).map_err(|e| Error::file(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    writeln!(log, "step,epoch,lr,{}", LossBreakdown::CSV_HEADER)?;
    let t0 = Instant::now();
    let batches = samples.len().div_ceil(cfg.schedule.batch_size);
    let every = cfg.schedule.checkpoint_every;
    let epochs = train_model(&mut model, &samples, &cfg.schedule, cfg.seed, start, |r, m| {
        writeln!(log, "{},{},{},{}", r.step, r.epoch + 1, r.lr, r.loss.csv_row())?;
        let done = r.epoch + 1;
        if every > 0 && r.step % batches == 0 && done % every == 0 {
            save_checkpoint(&out.join("checkpoints").join(format!("epoch_{done:04}.ckpt")), m, Some(done))?;
        }
        Ok(())
    })?;
    log.flush()?;

    let final_ckpt = out.join("final.ckpt");
    save_checkpoint(&final_ckpt, &model, Some(cfg.schedule.epochs))?;
    let param_count = model.param_count();
    let (deploy, deploy_count) = if cfg.schedule.prune_after {
        model.prune_bcca();
        let p = out.join("deploy.ckpt");
        save_checkpoint(&p, &model, None)?;
        (Some(p), Some(model.param_count()))
    } else {
        (None, None)
    };
    let report = TrainReport {
        final_checkpoint: final_ckpt,
        deploy_checkpoint: deploy,
        loss_log: log_path,
        param_count,
        deploy_param_count: deploy_count,
        epoch_losses: epochs.iter().map(|e| e.mean_total).collect(),
        seconds: t0.elapsed().as_secs_f64(),
    };
    write_file(&out.join("train_report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// mAP, bucket APs, then per-class AP as a fixed-width table.
pub fn format_eval_table(classes: &[String], r: &EvalResult) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
    let mut head = format!("{:>8}{:>8}{:>8}{:>8}", "mAP", "small", "medium", "large");
    let mut row = format!(
        "{:>8}{:>8}{:>8}{:>8}",
        fmt(Some(r.map)),
        fmt(r.ap_small),
        fmt(r.ap_medium),
        fmt(r.ap_large)
    );
    for (c, ap) in classes.iter().zip(&r.per_class_ap) {
        let _ = write!(head, "{c:>8}");
        let _ = write!(row, "{:>8}", fmt(*ap));
    }
    format!("{head}\n{row}")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsFile {
    pub classes: Vec<String>,
    pub split: String,
    pub images: usize,
    pub iou_threshold: f64,
    #[serde(flatten)]
    pub result: EvalResult,
}

/// Decodes every image of the eval split, writes `metrics.json` and one
/// `pr_<class>.csv` per class.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<(EvalResult, String)> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let mut cfg = cfg.clone();
    cfg.model = model.config.clone();
    let ds = open_dataset(&cfg)?;
    let samples = ds.load_split(&cfg.data.eval_split, model.config.input_size)?;
    let result = evaluate_model(&model, &samples, &cfg.decode, EVAL_BATCH)?;
    create_dir(&cfg.out_dir)?;
    let metrics = MetricsFile {
        classes: ds.classes.clone(),
        split: cfg.data.eval_split.clone(),
        images: samples.len(),
        iou_threshold: 0.5,
        result: result.clone(),
    };
    write_file(&cfg.out_dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    for (name, curve) in ds.classes.iter().zip(&result.pr_curves) {
        let mut csv = String::from("rank,recall,precision\n");
        for (i, (r, p)) in curve.recall.iter().zip(&curve.precision).enumerate() {
            let _ = writeln!(csv, "{},{r},{p}", i + 1);
        }
        write_file(&cfg.out_dir.join(format!("pr_{name}.csv")), csv)?;
    }
    let table = format_eval_table(&ds.classes, &result);
    Ok((result, table))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionJson {
    pub class: String,
    pub class_id: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image: String,
    /// `(height, width)` the network saw.
    pub input_size: (usize, usize),
    /// `(height, width)` on disk; boxes are in this frame.
    pub original_size: Option<(usize, usize)>,
    pub detections: Vec<DetectionJson>,
    pub error: Option<String>,
}

/// Scales detections from the network frame back to the image on disk.
fn to_original(d: &Detection, input: (usize, usize), original: (usize, usize)) -> BoundingBox {
    let sy = original.0 as f64 / input.0 as f64;
    let sx = original.1 as f64 / input.1 as f64;
    let b = d.bbox;
    BoundingBox::new(b.tl_x * sx, b.tl_y * sy, b.br_x * sx, b.br_y * sy)
}

/// Detects objects in each image. Failures are recorded per file and the run
/// continues. Writes `detections.json` and, with `overlay`, annotated PNGs.
pub fn run_detect(cfg: &RunConfig, checkpoint: &Path, images: &[PathBuf], classes: &[String], overlay: bool) -> Result<Vec<ImageDetections>> {
    let (model, _) = load_checkpoint(checkpoint)?;
    if classes.len() != model.config.num_classes {
        return Err(Error::Config(format!(
            "{} class names given for a {}-class model",
            classes.len(),
            model.config.num_classes
        )));
    }
    create_dir(&cfg.out_dir)?;
    let input = model.config.input_size;
    let mut all = Vec::new();
    for path in images {
        let mut entry = ImageDetections {
            image: path.display().to_string(),
            input_size: input,
            original_size: None,
            detections: Vec::new(),
            error: None,
        };
        let run = || -> Result<(Vec<Detection>, (usize, usize))> {
            let img = load_image(path, Some(input))?;
            let preds = model.predict(&img.tensor)?;
            Ok((decode(&preds, &cfg.decode)?, img.original))
        };
        match run() {
            Ok((dets, original)) => {
                entry.original_size = Some(original);
                entry.detections = dets
                    .iter()
                    .map(|d| DetectionJson {
                        class: classes[d.class_id].clone(),
                        class_id: d.class_id,
                        score: d.score,
                        bbox: to_original(d, input, original).to_array(),
                    })
                    .collect();
                if overlay {
                    if let Err(e) = write_overlay(path, &cfg.out_dir, &entry) {
                        log::warn!("overlay for {}: {e}", path.display());
                    }
                }
            }
            Err(e) => {
                log::warn!("{e}");
                entry.error = Some(e.to_string());
            }
        }
        all.push(entry);
    }
    write_file(&cfg.out_dir.join("detections.json"), serde_json::to_string_pretty(&all)?)?;
    Ok(all)
}

fn write_overlay(path: &Path, out: &Path, d: &ImageDetections) -> Result<()> {
    let mut img = load_image(path, None)?.tensor;
    let boxes: Vec<([f64; 4], [f64; 3])> = d
        .detections
        .iter()
        .map(|x| (x.bbox, hat_color(&x.class).unwrap_or([0.0, 1.0, 0.0])))
        .collect();
    draw_boxes(&mut img, &boxes);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    save_image(&out.join(format!("{stem}_overlay.png")), &img)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketHistogram {
    pub small: usize,
    pub medium: usize,
    pub large: usize,
}

/// Generates `n` scenes into the standard dataset layout, split by `split`.
pub fn run_synth(synth: &SynthConfig, n: usize, out: &Path, split: &SplitSpec) -> Result<BucketHistogram> {
    let samples = generate_synthetic(synth, n)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let splits = split_dataset(&ids, split)?;
    create_dir(out)?;
    Dataset::write(out, &synth.classes, &samples, &splits)?;
    write_file(&out.join("synth_config.json"), serde_json::to_string_pretty(synth)?)?;
    let mut h = BucketHistogram::default();
    for b in samples.iter().flat_map(|s| &s.boxes) {
        match ScaleBucket::of_area(b.area()) {
            ScaleBucket::Small => h.small += 1,
            ScaleBucket::Medium => h.medium += 1,
            ScaleBucket::Large => h.large += 1,
        }
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    pub corner_type: String,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub scans: usize,
    pub mean_ns: f64,
    pub std_ns: f64,
}

pub const BENCH_CSV_HEADER: &str = "variant,corner_type,H,W,C,scans,mean_ns,std_ns";

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.0},{:.0}",
            self.variant, self.corner_type, self.h, self.w, self.c, self.scans, self.mean_ns, self.std_ns
        )
    }
}

/// Times the pooling cores of `variants` on random `[1, C, H, W]` inputs;
/// `warmup` runs are discarded before `repetitions` timed ones.
pub fn run_bench(
    shapes: &[(usize, usize, usize)],
    variants: &[String],
    repetitions: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &(c, h, w) in shapes {
        let x = Tensor::uniform(Shape::new(1, c, h, w), -1.0, 1.0, &mut rng);
        for name in variants {
            let s = registry()
                .get(name)
                .ok_or_else(|| Error::invalid(format!("unknown pooling variant {name:?}; known: {:?}", registry().names())))?;
            let corners: &[CornerType] = if name == "center" {
                &[CornerType::TopLeft]
            } else {
                &[CornerType::TopLeft, CornerType::BottomRight]
            };
            for &corner in corners {
                for _ in 0..warmup {
                    std::hint::black_box(s.core(&x, corner));
                }
                let mut times = Vec::with_capacity(repetitions);
                for _ in 0..repetitions {
                    let t = Instant::now();
                    std::hint::black_box(s.core(std::hint::black_box(&x), corner));
                    times.push(t.elapsed().as_nanos() as f64);
                }
                let n = times.len().max(1) as f64;
                let mean = times.iter().sum::<f64>() / n;
                let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                rows.push(BenchRow {
                    variant: name.clone(),
                    corner_type: if name == "center" { "center".into() } else { corner.short().into() },
                    h,
                    w,
                    c,
                    scans: s.scans(),
                    mean_ns: mean,
                    std_ns: var.sqrt(),
                });
            }
        }
    }
    Ok(rows)
}
