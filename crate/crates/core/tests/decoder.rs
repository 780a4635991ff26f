mod common;

use common::decoding::{empty_corner, hand_trace, random_case, same_detections};
use common::rng;
use cornerdet::decoder::{
    accept_pair, brute_force_decode_oracle, brute_force_pairs, decode, decode_batch, nms, pair_corners, point_nms,
    topk_corners, CornerCandidate, DecodeConfig, Detection,
};
use cornerdet::geometry::BoundingBox;
use cornerdet::network::{CornerMaps, RawPredictions};
use cornerdet::pooling::CornerType;
use cornerdet::{Shape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn candidates(preds: &RawPredictions, ct: CornerType, cfg: &DecodeConfig) -> Vec<CornerCandidate> {
    let maps = preds.corner(ct);
    topk_corners(maps, &point_nms(&maps.heatmap), ct, preds.stride, cfg)
}

#[test]
fn point_nms_fixtures() {
    let h = Tensor::from_rows(&[&[0.1, 0.9], &[0.2, 0.3]]);
    assert_eq!(point_nms(&h).rows(), vec![vec![0.0, 0.9], vec![0.0, 0.0]]);

    let mut iso = Tensor::zeros(Shape::new(1, 1, 5, 5));
    iso.set(0, 0, 2, 2, 0.7);
    assert_eq!(point_nms(&iso), iso);

    let flat = Tensor::full(Shape::new(1, 1, 1, 7), 0.4);
    assert_eq!(point_nms(&flat).data(), &[0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let mut two = Tensor::zeros(Shape::new(1, 1, 7, 7));
    for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1), (5, 5), (5, 6), (6, 5), (6, 6)] {
        two.set(0, 0, y, x, 0.6);
    }
    let out = point_nms(&two);
    let kept: Vec<usize> = out.data().iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, _)| i).collect();
    assert_eq!(kept, vec![0, 5 * 7 + 5]);
}

#[test]
fn point_nms_output_is_a_subset_of_local_maxima() {
    let mut r = rng(1);
    for _ in 0..50 {
        let heat = Tensor::uniform(Shape::new(2, 2, 6, 9), 0.0, 1.0, &mut r).map(|v| (v * 3.0).round() / 3.0);
        let out = point_nms(&heat);
        assert_eq!(point_nms(&out).data().iter().filter(|v| **v > 0.0).count(), out.data().iter().filter(|v| **v > 0.0).count());
        for (o, i) in out.data().iter().zip(heat.data()) {
            assert!(*o == 0.0 || o == i);
        }
    }
}

#[test]
fn topk_remaps_and_sorts() {
    let mut m = empty_corner(2, 6, 6);
    m.heatmap.set(0, 0, 3, 2, 0.6);
    m.offset.set(0, 0, 3, 2, 0.5);
    m.offset.set(0, 1, 3, 2, 0.25);
    m.heatmap.set(0, 1, 0, 5, 0.9);
    m.heatmap.set(0, 0, 5, 0, 0.3);
    let cfg = DecodeConfig {
        k: 10,
        ..DecodeConfig::toy()
    };
    let c = topk_corners(&m, &point_nms(&m.heatmap), CornerType::TopLeft, 4, &cfg);
    assert_eq!(c.len(), 3);
    let fixture = c.iter().find(|c| (c.row, c.col) == (3, 2)).unwrap();
    assert_eq!((fixture.x, fixture.y), (10.0, 13.0));
    assert_eq!((fixture.cx, fixture.cy), (14.0, 17.0));
    assert!(c.windows(2).all(|p| p[0].score >= p[1].score));
    assert_eq!(c[0].class_id, 1);

    let one = DecodeConfig { k: 1, ..cfg.clone() };
    assert_eq!(topk_corners(&m, &point_nms(&m.heatmap), CornerType::TopLeft, 4, &one).len(), 1);
    let high = DecodeConfig {
        score_threshold: 0.5,
        ..cfg
    };
    assert_eq!(topk_corners(&m, &point_nms(&m.heatmap), CornerType::TopLeft, 4, &high).len(), 2);
}

#[test]
fn hand_trace_pairs_into_one_box() {
    let preds = hand_trace();
    let cfg = DecodeConfig::toy();
    let want = vec![Detection {
        class_id: 1,
        score: 0.85,
        bbox: BoundingBox::new(8.0, 12.0, 40.0, 28.0),
    }];
    let got = decode(&preds, &cfg).unwrap();
    assert!(same_detections(&got, &want), "{got:?}");
    assert!(same_detections(&brute_force_decode_oracle(&preds, &cfg).unwrap(), &want));
}

#[test]
fn pairing_gates() {
    let preds = hand_trace();
    let cfg = DecodeConfig::toy();
    let tl = candidates(&preds, CornerType::TopLeft, &cfg)[0];
    let br = candidates(&preds, CornerType::BottomRight, &cfg)[0];
    assert!(accept_pair(&tl, &br, cfg.mu, (48, 48)).is_some());
    let other = CornerCandidate { class_id: 2, ..br };
    assert!(accept_pair(&tl, &other, cfg.mu, (48, 48)).is_none());
    assert!(accept_pair(&br, &tl, cfg.mu, (48, 48)).is_none());
    let swapped = CornerCandidate {
        x: tl.x - 1.0,
        y: tl.y - 1.0,
        ..br
    };
    assert!(accept_pair(&tl, &swapped, cfg.mu, (48, 48)).is_none());
    // predicted center 6 px off in x, outside the 4.8 half-extent
    let off = CornerCandidate { cx: tl.cx + 6.0, ..tl };
    assert!(accept_pair(&off, &br, cfg.mu, (48, 48)).is_none());
    assert!(accept_pair(&off, &br, 1.0, (48, 48)).is_some());
    let d = accept_pair(&tl, &br, cfg.mu, (20, 30)).unwrap();
    assert_eq!(d.bbox, BoundingBox::new(8.0, 12.0, 29.0, 19.0));
}

#[test]
fn nms_fixtures() {
    let a = Detection {
        class_id: 0,
        score: 0.9,
        bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0),
    };
    let dup = Detection { score: 0.8, ..a };
    assert_eq!(nms(&[dup, a], 0.5), vec![a]);
    let far = Detection {
        score: 0.8,
        bbox: BoundingBox::new(20.0, 20.0, 30.0, 30.0),
        ..a
    };
    assert_eq!(nms(&[a, far], 0.5).len(), 2);
    let half = Detection {
        score: 0.7,
        bbox: BoundingBox::new(0.0, 0.0, 10.0, 20.0),
        ..a
    };
    assert_eq!(nms(&[a, half], 0.5).len(), 2);
    assert_eq!(nms(&[a, half], 0.49).len(), 1);
    let other_class = Detection { class_id: 1, ..dup };
    assert_eq!(nms(&[a, other_class], 0.5).len(), 2);
}

#[test]
fn zero_heatmaps_give_nothing() {
    let preds = RawPredictions {
        tl: empty_corner(3, 8, 8),
        br: empty_corner(3, 8, 8),
        center: None,
        stride: 4,
    };
    let cfg = DecodeConfig::toy();
    assert!(decode(&preds, &cfg).unwrap().is_empty());
    assert!(brute_force_decode_oracle(&preds, &cfg).unwrap().is_empty());
    assert!(brute_force_pairs(&[], &[], &cfg, (32, 32)).is_empty());
}

#[test]
fn oracle_rejects_large_k_and_batches() {
    let preds = hand_trace();
    let cfg = DecodeConfig {
        k: 21,
        ..DecodeConfig::toy()
    };
    assert!(brute_force_decode_oracle(&preds, &cfg).is_err());
    assert!(decode(&preds, &cfg).is_ok());
    let bad = DecodeConfig { mu: 0.0, ..cfg.clone() };
    assert!(decode(&preds, &bad).is_err());
    let zero_k = DecodeConfig { k: 0, ..cfg };
    assert!(decode(&preds, &zero_k).is_err());
}

#[test]
fn decode_matches_the_oracle_on_random_predictions() {
    let mut r = rng(2024);
    let mut nonempty = 0;
    for i in 0..500 {
        let (preds, cfg) = random_case(&mut r);
        let fast = decode(&preds, &cfg).unwrap();
        let slow = brute_force_decode_oracle(&preds, &cfg).unwrap();
        assert!(same_detections(&fast, &slow), "case {i}: {fast:?} vs {slow:?}");
        nonempty += usize::from(!fast.is_empty());
    }
    assert!(nonempty > 100, "only {nonempty} cases produced detections");
}

#[test]
fn pairing_ignores_candidate_order() {
    let mut r = rng(77);
    for _ in 0..100 {
        let (preds, cfg) = random_case(&mut r);
        let image = (preds.tl.heatmap.shape().h() * 4, preds.tl.heatmap.shape().w() * 4);
        let mut tl = candidates(&preds, CornerType::TopLeft, &cfg);
        let mut br = candidates(&preds, CornerType::BottomRight, &cfg);
        let want = brute_force_pairs(&tl, &br, &cfg, image);
        assert!(same_detections(&nms(&pair_corners(&tl, &br, &cfg, image), cfg.nms_iou), &want));
        tl.shuffle(&mut r);
        br.shuffle(&mut r);
        assert!(same_detections(&brute_force_pairs(&tl, &br, &cfg, image), &want));
        assert!(same_detections(&nms(&pair_corners(&tl, &br, &cfg, image), cfg.nms_iou), &want));
    }
}

#[test]
fn batch_decoding_matches_per_item() {
    let mut r = rng(5);
    let (a, cfg) = random_case(&mut r);
    let mut b = a.clone();
    b.tl.heatmap = b.tl.heatmap.map(|v| v * 0.9);
    let stack = |x: &Tensor, y: &Tensor| Tensor::stack(&[x.clone(), y.clone()]).unwrap();
    let corner = |x: &CornerMaps, y: &CornerMaps| CornerMaps {
        heatmap: stack(&x.heatmap, &y.heatmap),
        offset: stack(&x.offset, &y.offset),
        centripetal: stack(&x.centripetal, &y.centripetal),
        guiding: stack(&x.guiding, &y.guiding),
    };
    let both = RawPredictions {
        tl: corner(&a.tl, &b.tl),
        br: corner(&a.br, &b.br),
        center: None,
        stride: 4,
    };
    let out = decode_batch(&both, &cfg).unwrap();
    assert_eq!(out, vec![decode(&a, &cfg).unwrap(), decode(&b, &cfg).unwrap()]);
    assert!(decode(&both, &cfg).is_err());
}

fn seeded_case() -> impl Strategy<Value = (RawPredictions, DecodeConfig)> {
    any::<u64>().prop_map(|s| random_case(&mut rng(s)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn detections_satisfy_the_output_contract((preds, cfg) in seeded_case()) {
        let (h, w) = (preds.tl.heatmap.shape().h() * 4, preds.tl.heatmap.shape().w() * 4);
        let dets = decode(&preds, &cfg).unwrap();
        for d in &dets {
            let b = d.bbox;
            prop_assert!(b.tl_x < b.br_x && b.tl_y < b.br_y);
            prop_assert!(b.tl_x >= 0.0 && b.tl_y >= 0.0 && b.br_x <= (w - 1) as f64 && b.br_y <= (h - 1) as f64);
            prop_assert!(d.score > cfg.score_threshold && d.score <= 1.0);
        }
        prop_assert!(dets.windows(2).all(|p| p[0].score >= p[1].score));
        prop_assert_eq!(decode(&preds, &cfg).unwrap(), dets);
    }

    #[test]
    fn raising_the_threshold_never_adds_pairs((preds, cfg) in seeded_case(), bump in 0.0f64..0.5) {
        let image = (preds.tl.heatmap.shape().h() * 4, preds.tl.heatmap.shape().w() * 4);
        let pairs = |c: &DecodeConfig| {
            let k = DecodeConfig { k: 10_000, ..c.clone() };
            pair_corners(&candidates(&preds, CornerType::TopLeft, &k), &candidates(&preds, CornerType::BottomRight, &k), &k, image)
        };
        let strict = DecodeConfig { score_threshold: cfg.score_threshold + bump, ..cfg.clone() };
        let loose = pairs(&cfg);
        for d in pairs(&strict) {
            prop_assert!(loose.contains(&d));
        }
    }

    #[test]
    fn widening_mu_never_removes_pairs((preds, cfg) in seeded_case(), extra in 0.0f64..1.0) {
        let image = (preds.tl.heatmap.shape().h() * 4, preds.tl.heatmap.shape().w() * 4);
        let tl = candidates(&preds, CornerType::TopLeft, &cfg);
        let br = candidates(&preds, CornerType::BottomRight, &cfg);
        let wide = DecodeConfig { mu: (cfg.mu + extra).min(1.0), ..cfg.clone() };
        let loose = pair_corners(&tl, &br, &wide, image);
        for d in pair_corners(&tl, &br, &cfg, image) {
            prop_assert!(loose.contains(&d));
        }
    }
}
