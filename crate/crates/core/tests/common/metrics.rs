use cornerdet::decoder::Detection;
use cornerdet::evaluation::{EvalResult, ScaleBucket};
use cornerdet::geometry::{iou, BoundingBox};
use cornerdet::targets::GroundTruthBox;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const CLASSES: usize = 3;

pub fn det(class_id: usize, score: f64, b: [f64; 4]) -> Detection {
    Detection {
        class_id,
        score,
        bbox: BoundingBox::from_array(b),
    }
}

pub fn gt_as_box(g: &GroundTruthBox) -> BoundingBox {
    BoundingBox::new(g.tl_x, g.tl_y, g.br_x, g.br_y)
}

pub fn random_instance(r: &mut ChaCha8Rng) -> (Vec<Vec<Detection>>, Vec<Vec<GroundTruthBox>>) {
    let images = r.random_range(1..=5);
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..images {
        let mut g = Vec::new();
        for _ in 0..r.random_range(0..=5) {
            let (w, h) = (r.random_range(8.0..140.0), r.random_range(8.0..140.0));
            let (x, y) = (r.random_range(0.0..60.0), r.random_range(0.0..60.0));
            g.push(GroundTruthBox::new(x, y, x + w, y + h, r.random_range(0..CLASSES)));
        }
        let mut d = Vec::new();
        for b in &g {
            for _ in 0..r.random_range(0..=2) {
                let j = |r: &mut ChaCha8Rng| r.random_range(-0.25..0.25) * (b.br_x - b.tl_x);
                let (a, c) = (j(r), j(r));
                let class = if r.random_bool(0.85) { b.class_id } else { r.random_range(0..CLASSES) };
                d.push(det(class, r.random_range(0.0..1.0), [b.tl_x + a, b.tl_y + c, b.br_x + a, b.br_y + c]));
            }
        }
        for _ in 0..r.random_range(0..=3) {
            let (x, y) = (r.random_range(0.0..150.0), r.random_range(0.0..150.0));
            d.push(det(r.random_range(0..CLASSES), r.random_range(0.0..1.0), [x, y, x + 30.0, y + 20.0]));
        }
        dets.push(d);
        gts.push(g);
    }
    (dets, gts)
}

/// Area under the running-max-from-the-right precision envelope, read off
/// a list of (recall, precision) operating points.
pub fn envelope_area(points: &[(f64, f64)]) -> f64 {
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let p = points.iter().filter(|q| q.0 >= r).map(|q| q.1).fold(0.0, f64::max);
        area += (r - prev) * p;
        prev = r;
    }
    area
}

/// Sweeps every cut-off of the ranked detection list and re-runs greedy
/// matching from scratch at each one.
pub fn sweep_ap(
    class: usize,
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    bucket: Option<ScaleBucket>,
) -> Option<f64> {
    let counts = |g: &GroundTruthBox| g.class_id == class && bucket.is_none_or(|b| ScaleBucket::of_area(g.area()) == b);
    let num_gt = gts.iter().flatten().filter(|g| counts(g)).count();
    if num_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(usize, Detection)> = dets
        .iter()
        .enumerate()
        .flat_map(|(i, d)| d.iter().filter(|d| d.class_id == class).map(move |d| (i, *d)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.score
            .total_cmp(&a.1.score)
            .then(a.0.cmp(&b.0))
            .then(a.1.bbox.to_array().partial_cmp(&b.1.bbox.to_array()).unwrap())
    });
    let mut points = Vec::new();
    for cut in 1..=ranked.len() {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (img, g) in gts.iter().enumerate() {
            let mut used = vec![false; g.len()];
            for (_, d) in ranked[..cut].iter().filter(|(i, _)| *i == img) {
                let mut best: Option<(usize, f64)> = None;
                for (j, gt) in g.iter().enumerate() {
                    let o = iou(&d.bbox, &gt_as_box(gt));
                    if gt.class_id == class && !used[j] && o >= 0.5 && best.is_none_or(|b| o > b.1) {
                        best = Some((j, o));
                    }
                }
                match best {
                    Some((j, _)) => {
                        used[j] = true;
                        if counts(&g[j]) {
                            tp += 1;
                        }
                    }
                    None => fp += 1,
                }
            }
        }
        if tp + fp > 0 {
            points.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    Some(envelope_area(&points))
}

pub fn oracle(dets: &[Vec<Detection>], gts: &[Vec<GroundTruthBox>]) -> (Vec<Option<f64>>, f64, [Option<f64>; 3]) {
    let per: Vec<Option<f64>> = (0..CLASSES).map(|c| sweep_ap(c, dets, gts, None)).collect();
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let map = mean(per.iter().flatten().copied().collect()).unwrap_or(0.0);
    let buckets = ScaleBucket::ALL.map(|b| mean((0..CLASSES).filter_map(|c| sweep_ap(c, dets, gts, Some(b))).collect()));
    (per, map, buckets)
}

pub fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    }
}

/// Per-class AP, mAP and bucket APs all agree with the sweep oracle.
pub fn oracle_agrees(r: &EvalResult, dets: &[Vec<Detection>], gts: &[Vec<GroundTruthBox>]) -> bool {
    let (per, map, buckets) = oracle(dets, gts);
    r.per_class_ap.len() == per.len()
        && r.per_class_ap.iter().zip(&per).all(|(a, b)| close(*a, *b))
        && (r.map - map).abs() <= 1e-9
        && [r.ap_small, r.ap_medium, r.ap_large].iter().zip(buckets).all(|(a, b)| close(*a, b))
}
