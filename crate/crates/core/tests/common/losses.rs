use cornerdet::losses::ALPHA;
use cornerdet::network::{CenterMaps, CornerMaps, RawPredictions};
use cornerdet::targets::{encode_targets, GroundTruthBox, TrainingTargets};
use cornerdet::{Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_boxes(r: &mut ChaCha8Rng, n: usize) -> Vec<GroundTruthBox> {
    (0..n)
        .map(|_| {
            let (x, y) = (r.random_range(0.0..60.0), r.random_range(0.0..60.0));
            GroundTruthBox::new(x, y, x + r.random_range(6.0..35.0), y + r.random_range(6.0..35.0), r.random_range(0..3))
        })
        .collect()
}

pub fn random_targets(r: &mut ChaCha8Rng, batch: usize) -> TrainingTargets {
    let items: Vec<_> = (0..batch)
        .map(|_| {
            let k = r.random_range(0..4);
            encode_targets(&random_boxes(r, k), 3, 24, 24, 4).unwrap()
        })
        .collect();
    TrainingTargets::stack(&items).unwrap()
}

pub fn random_preds(r: &mut ChaCha8Rng, batch: usize, center: bool) -> RawPredictions {
    let mut t = |c: usize, lo: f64, hi: f64| Tensor::uniform(Shape::new(batch, c, 24, 24), lo, hi, r);
    let mut corner = || CornerMaps {
        heatmap: t(3, 0.001, 0.999),
        offset: t(2, -0.5, 1.5),
        centripetal: t(2, -1.0, 3.0),
        guiding: t(2, -1.0, 3.0),
    };
    let (tl, br) = (corner(), corner());
    let center = center.then(|| CenterMaps {
        heatmap: t(3, 0.001, 0.999),
        offset: t(2, -0.5, 1.5),
        bc: t(2, -1.0, 3.0),
    });
    RawPredictions { tl, br, center, stride: 4 }
}

pub fn focal_oracle(p: &Tensor, t: &Tensor, objects: &[usize]) -> f64 {
    let s = p.shape();
    let mut total = 0.0;
    for n in 0..s.n() {
        let mut item = 0.0;
        for c in 0..s.c() {
            for y in 0..s.h() {
                for x in 0..s.w() {
                    let pv = p.at(n, c, y, x);
                    let tv = t.at(n, c, y, x);
                    item += if tv == 1.0 {
                        (1.0 - pv).powi(2) * pv.ln()
                    } else {
                        (1.0 - tv).powi(4) * pv.powi(2) * (1.0 - pv).ln()
                    };
                }
            }
        }
        total += -item / objects[n].max(1) as f64;
    }
    total / s.n() as f64
}

pub fn smooth_l1_oracle(p: &Tensor, t: &Tensor, mask: &[bool]) -> f64 {
    let s = p.shape();
    let (mut sum, mut count) = (0.0, 0usize);
    for n in 0..s.n() {
        for y in 0..s.h() {
            for x in 0..s.w() {
                if !mask[n * s.plane() + y * s.w() + x] {
                    continue;
                }
                for c in 0..s.c() {
                    let d = (p.at(n, c, y, x) - t.at(n, c, y, x)).abs();
                    sum += if d < 1.0 { 0.5 * d * d } else { d - 0.5 };
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

pub fn breakdown_oracle(p: &RawPredictions, t: &TrainingTargets) -> [f64; 11] {
    let o = &t.objects;
    let c = p.center.as_ref();
    [
        focal_oracle(&p.tl.heatmap, &t.tl.heatmap, o),
        smooth_l1_oracle(&p.tl.offset, &t.tl.offset, &t.tl.mask),
        smooth_l1_oracle(&p.tl.centripetal, &t.tl.centripetal, &t.tl.mask),
        smooth_l1_oracle(&p.tl.guiding, &t.tl.guiding, &t.tl.mask),
        focal_oracle(&p.br.heatmap, &t.br.heatmap, o),
        smooth_l1_oracle(&p.br.offset, &t.br.offset, &t.br.mask),
        smooth_l1_oracle(&p.br.centripetal, &t.br.centripetal, &t.br.mask),
        smooth_l1_oracle(&p.br.guiding, &t.br.guiding, &t.br.mask),
        c.map_or(0.0, |c| focal_oracle(&c.heatmap, &t.center.heatmap, o)),
        c.map_or(0.0, |c| smooth_l1_oracle(&c.offset, &t.center.offset, &t.center.mask)),
        c.map_or(0.0, |c| smooth_l1_oracle(&c.bc, &t.center.bc, &t.center.mask)),
    ]
}

pub fn weighted_sum(parts: &[f64; 11]) -> f64 {
    parts
        .iter()
        .enumerate()
        .map(|(i, v)| if i == 3 || i == 7 { ALPHA * v } else { *v })
        .sum()
}
