//! Turns corner heatmaps, offsets and centripetal shifts into scored boxes.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::network::{CornerMaps, RawPredictions};
use crate::pooling::CornerType;
use crate::tensor::Tensor;

/// Largest `k` the exhaustive oracle accepts.
pub const ORACLE_MAX_K: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Candidates kept per corner type.
    pub k: usize,
    pub score_threshold: f64,
    /// Central-region ratio: both predicted centers must fall within
    /// `mu / 2` of the box extent around the box center.
    pub mu: f64,
    pub nms_iou: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            k: 100,
            score_threshold: 0.05,
            mu: 0.3,
            nms_iou: 0.5,
        }
    }
}

impl DecodeConfig {
    pub fn toy() -> Self {
        DecodeConfig {
            k: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("decode k must be at least 1".into()));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::Config(format!("mu must be in (0, 1], got {}", self.mu)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CornerCandidate {
    pub corner: CornerType,
    pub class_id: usize,
    pub score: f64,
    pub row: usize,
    pub col: usize,
    /// Refined position in input pixels.
    pub x: f64,
    pub y: f64,
    /// Center implied by the centripetal shift.
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Keeps a cell iff no 3x3 neighbour is larger and every equal neighbour
/// comes later in row-major order; all other cells become zero.
pub fn point_nms(heatmap: &Tensor) -> Tensor {
    let s = heatmap.shape();
    let (h, w) = (s.h(), s.w());
    let mut out = Tensor::zeros(s);
    for n in 0..s.n() {
        for c in 0..s.c() {
            let src = heatmap.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                for x in 0..w {
                    let v = src[y * w + x];
                    let mut keep = true;
                    'nb: for ny in y.saturating_sub(1)..(y + 2).min(h) {
                        for nx in x.saturating_sub(1)..(x + 2).min(w) {
                            let u = src[ny * w + nx];
                            if u > v || (u == v && (ny, nx) < (y, x)) {
                                keep = false;
                                break 'nb;
                            }
                        }
                    }
                    if keep {
                        dst[y * w + x] = v;
                    }
                }
            }
        }
    }
    out
}

/// Score descending, then row, column and class ascending.
fn candidate_order(a: &CornerCandidate, b: &CornerCandidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.row.cmp(&b.row))
        .then(a.col.cmp(&b.col))
        .then(a.class_id.cmp(&b.class_id))
}

fn make_candidate(
    maps: &CornerMaps,
    corner: CornerType,
    stride: usize,
    class_id: usize,
    score: f64,
    row: usize,
    col: usize,
) -> CornerCandidate {
    let s = stride as f64;
    let x = s * (col as f64 + maps.offset.at(0, 0, row, col));
    let y = s * (row as f64 + maps.offset.at(0, 1, row, col));
    let sx = s * maps.centripetal.at(0, 0, row, col).exp();
    let sy = s * maps.centripetal.at(0, 1, row, col).exp();
    let (cx, cy) = match corner {
        CornerType::TopLeft => (x + sx, y + sy),
        CornerType::BottomRight => (x - sx, y - sy),
    };
    CornerCandidate {
        corner,
        class_id,
        score,
        row,
        col,
        x,
        y,
        cx,
        cy,
    }
}

/// Top `k` peaks of a point-NMS'd heatmap (batch of one) above the score
/// threshold, sorted by descending score.
pub fn topk_corners(maps: &CornerMaps, nms_heat: &Tensor, corner: CornerType, stride: usize, cfg: &DecodeConfig) -> Vec<CornerCandidate> {
    let s = nms_heat.shape();
    let mut peaks: Vec<(f64, usize, usize, usize)> = Vec::new();
    for c in 0..s.c() {
        for (i, &v) in nms_heat.plane(0, c).iter().enumerate() {
            if v > cfg.score_threshold {
                peaks.push((v, i / s.w(), i % s.w(), c));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
    peaks.truncate(cfg.k);
    peaks
        .into_iter()
        .map(|(v, r, col, c)| make_candidate(maps, corner, stride, c, v, r, col))
        .collect()
}

fn inside_central_region(b: &BoundingBox, cx: f64, cy: f64, mu: f64) -> bool {
    let (mx, my) = b.center();
    let hx = mu / 2.0 * b.width();
    let hy = mu / 2.0 * b.height();
    (cx - mx).abs() <= hx && (cy - my).abs() <= hy
}

/// Pairing predicate shared by [`decode`] and the oracle. Returns the
/// clamped detection when the pair is accepted.
pub fn accept_pair(
    tl: &CornerCandidate,
    br: &CornerCandidate,
    mu: f64,
    image: (usize, usize),
) -> Option<Detection> {
    if tl.class_id != br.class_id || !(tl.x < br.x && tl.y < br.y) {
        return None;
    }
    let raw = BoundingBox::new(tl.x, tl.y, br.x, br.y);
    if !inside_central_region(&raw, tl.cx, tl.cy, mu) || !inside_central_region(&raw, br.cx, br.cy, mu) {
        return None;
    }
    let (h, w) = image;
    let mx = (w as f64 - 1.0).max(0.0);
    let my = (h as f64 - 1.0).max(0.0);
    let bbox = BoundingBox::new(
        raw.tl_x.clamp(0.0, mx),
        raw.tl_y.clamp(0.0, my),
        raw.br_x.clamp(0.0, mx),
        raw.br_y.clamp(0.0, my),
    );
    if !(bbox.tl_x < bbox.br_x && bbox.tl_y < bbox.br_y) {
        return None;
    }
    Some(Detection {
        class_id: tl.class_id,
        score: (tl.score + br.score) / 2.0,
        bbox,
    })
}

/// Score descending, then class, then box coordinates.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then_with(|| {
            a.bbox
                .to_array()
                .iter()
                .zip(b.bbox.to_array())
                .map(|(x, y)| x.total_cmp(&y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Candidate pairs accepted by the central-region test, grouped by class
/// and pruned by x before the full check.
pub fn pair_corners(
    tl: &[CornerCandidate],
    br: &[CornerCandidate],
    cfg: &DecodeConfig,
    image: (usize, usize),
) -> Vec<Detection> {
    let classes = tl.iter().chain(br).map(|c| c.class_id + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<&CornerCandidate>> = vec![Vec::new(); classes];
    for b in br {
        by_class[b.class_id].push(b);
    }
    for v in &mut by_class {
        v.sort_by(|a, b| a.x.total_cmp(&b.x));
    }
    let mut dets = Vec::new();
    for t in tl {
        let pool = &by_class[t.class_id];
        let start = pool.partition_point(|b| b.x <= t.x);
        dets.extend(pool[start..].iter().filter_map(|b| accept_pair(t, b, cfg.mu, image)));
    }
    dets.sort_by(detection_order);
    dets
}

/// Greedy same-class suppression of boxes with IoU strictly above `iou_thr`.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if !kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_thr)
        {
            kept.push(d);
        }
    }
    kept
}

fn image_size(preds: &RawPredictions) -> (usize, usize) {
    let s = preds.tl.heatmap.shape();
    (s.h() * preds.stride, s.w() * preds.stride)
}

fn check_single(preds: &RawPredictions) -> Result<()> {
    if preds.batch_size() != 1 {
        return Err(Error::invalid(format!(
            "decode expects a batch of one, got {}",
            preds.batch_size()
        )));
    }
    Ok(())
}

/// Point NMS, top-k corners, centripetal pairing, box NMS.
pub fn decode(preds: &RawPredictions, cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    check_single(preds)?;
    cfg.validate()?;
    let image = image_size(preds);
    let mut cands = [CornerType::TopLeft, CornerType::BottomRight].map(|ct| {
        let maps = preds.corner(ct);
        let peaks = point_nms(&maps.heatmap);
        topk_corners(maps, &peaks, ct, preds.stride, cfg)
    });
    for c in &mut cands {
        c.sort_by(candidate_order);
    }
    let pairs = pair_corners(&cands[0], &cands[1], cfg, image);
    Ok(nms(&pairs, cfg.nms_iou))
}

/// [`decode`] on every batch item.
pub fn decode_batch(preds: &RawPredictions, cfg: &DecodeConfig) -> Result<Vec<Vec<Detection>>> {
    (0..preds.batch_size()).map(|n| decode(&preds.item(n), cfg)).collect()
}

/// Every `(tl, br)` pair checked exhaustively, then NMS. Input order does
/// not matter.
pub fn brute_force_pairs(
    tl: &[CornerCandidate],
    br: &[CornerCandidate],
    cfg: &DecodeConfig,
    image: (usize, usize),
) -> Vec<Detection> {
    let mut dets = Vec::new();
    for t in tl {
        for b in br {
            if let Some(d) = accept_pair(t, b, cfg.mu, image) {
                dets.push(d);
            }
        }
    }
    nms(&dets, cfg.nms_iou)
}

/// Reference decode: peaks found by scanning every cell against its full
/// neighbourhood, candidates ranked by a full sort, all pairs enumerated.
pub fn brute_force_decode_oracle(preds: &RawPredictions, cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    check_single(preds)?;
    cfg.validate()?;
    if cfg.k > ORACLE_MAX_K {
        return Err(Error::invalid(format!(
            "oracle supports k <= {ORACLE_MAX_K}, got {}",
            cfg.k
        )));
    }
    let image = image_size(preds);
    let mut cands: Vec<Vec<CornerCandidate>> = Vec::new();
    for ct in [CornerType::TopLeft, CornerType::BottomRight] {
        let maps = preds.corner(ct);
        let s = maps.heatmap.shape();
        let mut all = Vec::new();
        for c in 0..s.c() {
            for y in 0..s.h() {
                for x in 0..s.w() {
                    let v = maps.heatmap.at(0, c, y, x);
                    let mut is_peak = true;
                    for ny in 0..s.h() {
                        for nx in 0..s.w() {
                            let near = ny.abs_diff(y) <= 1 && nx.abs_diff(x) <= 1;
                            if !near || (ny, nx) == (y, x) {
                                continue;
                            }
                            let u = maps.heatmap.at(0, c, ny, nx);
                            let earlier = ny < y || (ny == y && nx < x);
                            if u > v || (u == v && earlier) {
                                is_peak = false;
                            }
                        }
                    }
                    if is_peak && v > cfg.score_threshold {
                        all.push(make_candidate(maps, ct, preds.stride, c, v, y, x));
                    }
                }
            }
        }
        all.sort_by(candidate_order);
        all.truncate(cfg.k);
        cands.push(all);
    }
    Ok(brute_force_pairs(&cands[0], &cands[1], cfg, image))
}
