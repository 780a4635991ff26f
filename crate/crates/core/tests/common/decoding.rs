use cornerdet::decoder::{DecodeConfig, Detection};
use cornerdet::network::{CornerMaps, RawPredictions};
use cornerdet::{Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn empty_corner(c: usize, h: usize, w: usize) -> CornerMaps {
    CornerMaps {
        heatmap: Tensor::zeros(Shape::new(1, c, h, w)),
        offset: Tensor::zeros(Shape::new(1, 2, h, w)),
        centripetal: Tensor::zeros(Shape::new(1, 2, h, w)),
        guiding: Tensor::zeros(Shape::new(1, 2, h, w)),
    }
}

pub fn set_corner(m: &mut CornerMaps, class: usize, row: usize, col: usize, score: f64, log_shift: (f64, f64)) {
    m.heatmap.set(0, class, row, col, score);
    m.centripetal.set(0, 0, row, col, log_shift.0);
    m.centripetal.set(0, 1, row, col, log_shift.1);
}

/// tl at (8,12), br at (40,28), both predicting center (24,20).
pub fn hand_trace() -> RawPredictions {
    let (h, w) = (12, 12);
    let mut tl = empty_corner(3, h, w);
    let mut br = empty_corner(3, h, w);
    let shift = (4f64.ln(), 2f64.ln());
    set_corner(&mut tl, 1, 3, 2, 0.9, shift);
    set_corner(&mut br, 1, 7, 10, 0.8, shift);
    RawPredictions {
        tl,
        br,
        center: None,
        stride: 4,
    }
}

pub fn random_corner(r: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> CornerMaps {
    let s = |ch| Shape::new(1, ch, h, w);
    let mut heat = Tensor::uniform(s(c), 0.0, 1.0, r);
    if r.random_bool(0.3) {
        heat = heat.map(|v| (v * 4.0).round() / 4.0);
    }
    CornerMaps {
        heatmap: heat,
        offset: Tensor::uniform(s(2), 0.0, 1.0, r),
        centripetal: Tensor::uniform(s(2), -1.0, 1.5, r),
        guiding: Tensor::zeros(s(2)),
    }
}

pub fn random_case(r: &mut ChaCha8Rng) -> (RawPredictions, DecodeConfig) {
    let c = r.random_range(1..=3);
    let (h, w) = (r.random_range(2..=10), r.random_range(2..=10));
    let preds = RawPredictions {
        tl: random_corner(r, c, h, w),
        br: random_corner(r, c, h, w),
        center: None,
        stride: 4,
    };
    let cfg = DecodeConfig {
        k: r.random_range(1..=20),
        score_threshold: r.random_range(0.0..0.5),
        mu: r.random_range(0.05..=1.0),
        nms_iou: r.random_range(0.2..0.9),
    };
    (preds, cfg)
}

pub fn same_detections(a: &[Detection], b: &[Detection]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.class_id == y.class_id && x.bbox == y.bbox && (x.score - y.score).abs() <= 1e-12
        })
}
