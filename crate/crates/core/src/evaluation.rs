//! Per-class AP at an IoU threshold, mAP, and scale-bucket APs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::decoder::Detection;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::targets::GroundTruthBox;

pub const SMALL_MAX_AREA: f64 = 32.0 * 32.0;
pub const MEDIUM_MAX_AREA: f64 = 96.0 * 96.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleBucket {
    Small,
    Medium,
    Large,
}

impl ScaleBucket {
    pub const ALL: [ScaleBucket; 3] = [ScaleBucket::Small, ScaleBucket::Medium, ScaleBucket::Large];

    pub fn of_area(area: f64) -> Self {
        if area <= SMALL_MAX_AREA {
            ScaleBucket::Small
        } else if area <= MEDIUM_MAX_AREA {
            ScaleBucket::Medium
        } else {
            ScaleBucket::Large
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// `None` for classes without ground truth; those are left out of mAP.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    /// `None` when no class has ground truth in the bucket.
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub pr_curves: Vec<PrCurve>,
}

/// Greedy matching for one class in one image. `dets` must already be in
/// ranking order; each is matched to its highest-IoU unmatched ground truth.
/// Returns, per detection, the matched ground-truth index.
pub fn match_detections(dets: &[BoundingBox], gts: &[BoundingBox], iou_thr: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let o = iou(d, g);
                if o >= iou_thr && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            best.map(|(j, _)| {
                used[j] = true;
                j
            })
        })
        .collect()
}

/// Cumulative precision and recall over ranked TP/FP labels.
pub fn pr_curve(labels: &[bool], num_gt: usize) -> PrCurve {
    let mut tp = 0usize;
    let mut c = PrCurve::default();
    for (i, &l) in labels.iter().enumerate() {
        tp += l as usize;
        c.precision.push(tp as f64 / (i + 1) as f64);
        c.recall.push(if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 });
    }
    c
}

/// All-point interpolated AP: area under the monotone precision envelope.
pub fn average_precision(labels: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let c = pr_curve(labels, num_gt);
    let mut env = c.precision.clone();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in c.recall.iter().zip(&env) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// Score descending, then image id, then box coordinates.
fn rank(a: &(usize, Detection), b: &(usize, Detection)) -> Ordering {
    b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)).then_with(|| {
        a.1.bbox
            .to_array()
            .iter()
            .zip(b.1.bbox.to_array())
            .map(|(x, y)| x.total_cmp(&y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Per-class ranked detections labelled with their matched ground truth.
struct Ranked {
    /// `(image, matched gt index in that image)` per detection.
    matches: Vec<(usize, Option<usize>)>,
}

fn rank_and_match(
    class: usize,
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    iou_thr: f64,
) -> Ranked {
    let mut all: Vec<(usize, Detection)> = dets
        .iter()
        .enumerate()
        .flat_map(|(i, ds)| ds.iter().filter(|d| d.class_id == class).map(move |d| (i, *d)))
        .collect();
    all.sort_by(rank);
    let mut matches = vec![(0, None); all.len()];
    for (img, g) in gts.iter().enumerate() {
        let idx: Vec<usize> = (0..all.len()).filter(|&k| all[k].0 == img).collect();
        let gidx: Vec<usize> = (0..g.len()).filter(|&j| g[j].class_id == class).collect();
        let gboxes: Vec<BoundingBox> = gidx.iter().map(|&j| gt_box(&g[j])).collect();
        let dboxes: Vec<BoundingBox> = idx.iter().map(|&k| all[k].1.bbox).collect();
        for (k, m) in idx.iter().zip(match_detections(&dboxes, &gboxes, iou_thr)) {
            matches[*k] = (img, m.map(|j| gidx[j]));
        }
    }
    Ranked { matches }
}

pub fn gt_box(g: &GroundTruthBox) -> BoundingBox {
    BoundingBox::new(g.tl_x, g.tl_y, g.br_x, g.br_y)
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Evaluates per-image detections against per-image ground truth.
///
/// In a scale bucket, detections matched to ground truth outside the bucket
/// are ignored, unmatched detections stay false positives.
pub fn evaluate(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    num_classes: usize,
    iou_thr: f64,
) -> Result<EvalResult> {
    if dets.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} detection lists for {} images",
            dets.len(),
            gts.len()
        )));
    }
    for c in dets.iter().flatten().map(|d| d.class_id).chain(gts.iter().flatten().map(|g| g.class_id)) {
        if c >= num_classes {
            return Err(Error::invalid(format!(
                "class id {c} outside the {num_classes}-class vocabulary"
            )));
        }
    }
    let mut per_class_ap = Vec::with_capacity(num_classes);
    let mut pr_curves = Vec::with_capacity(num_classes);
    let mut bucket_aps: [Vec<f64>; 3] = Default::default();
    for class in 0..num_classes {
        let ranked = rank_and_match(class, dets, gts, iou_thr);
        let num_gt = gts.iter().flatten().filter(|g| g.class_id == class).count();
        let labels: Vec<bool> = ranked.matches.iter().map(|m| m.1.is_some()).collect();
        pr_curves.push(pr_curve(&labels, num_gt));
        per_class_ap.push((num_gt > 0).then(|| average_precision(&labels, num_gt)));

        for (bi, bucket) in ScaleBucket::ALL.iter().enumerate() {
            let in_bucket = |g: &GroundTruthBox| ScaleBucket::of_area(g.area()) == *bucket;
            let n = gts
                .iter()
                .flatten()
                .filter(|g| g.class_id == class && in_bucket(g))
                .count();
            if n == 0 {
                continue;
            }
            let labels: Vec<bool> = ranked
                .matches
                .iter()
                .filter_map(|&(img, m)| match m {
                    Some(j) if in_bucket(&gts[img][j]) => Some(true),
                    Some(_) => None,
                    None => Some(false),
                })
                .collect();
            bucket_aps[bi].push(average_precision(&labels, n));
        }
    }
    let present: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    Ok(EvalResult {
        map: mean(&present).unwrap_or(0.0),
        per_class_ap,
        ap_small: mean(&bucket_aps[0]),
        ap_medium: mean(&bucket_aps[1]),
        ap_large: mean(&bucket_aps[2]),
        pr_curves,
    })
}
