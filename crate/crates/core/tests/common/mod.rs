#![allow(dead_code)]

pub mod decoding;
pub mod losses;
pub mod metrics;

use cornerdet::autograd::{Tape, Var};
use cornerdet::gradcheck::{finite_diff_check, FdOptions, FdReport};
use cornerdet::layers::{Ctx, Mode};
use cornerdet::network::CrossStarDeform;
use cornerdet::params::ParamStore;
use cornerdet::pooling::{directional_pool, registry, CornerType, Direction, PoolingModule};
use cornerdet::{Result, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Default, Clone)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub failed: usize,
    pub checked: usize,
    pub worst: f64,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.failed == 0 && self.checked > 0
    }

    fn add(&mut self, r: &FdReport) {
        self.cases += 1;
        self.checked += r.checked;
        self.worst = self.worst.max(r.max_rel_error);
        if !r.pass {
            self.failed += 1;
        }
    }
}

fn opts(seed: u64, max_coords: Option<usize>) -> FdOptions {
    FdOptions {
        seed,
        max_coords,
        ..FdOptions::default()
    }
}

fn shape(r: &mut ChaCha8Rng, max_n: usize, max_c: usize, max_hw: usize) -> Shape {
    Shape::new(
        r.random_range(1..=max_n),
        r.random_range(1..=max_c),
        r.random_range(1..=max_hw),
        r.random_range(1..=max_hw),
    )
}

fn randt(r: &mut ChaCha8Rng, s: Shape) -> Tensor {
    Tensor::uniform(s, -1.0, 1.0, r)
}

type Case = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

/// One randomized case: a closure over the checked input plus that input.
fn op_case(op: &str, r: &mut ChaCha8Rng) -> (Case, Tensor) {
    match op {
        "conv2d" => {
            let cin = r.random_range(1..=3);
            let cout = r.random_range(1..=3);
            let k = [1, 3][r.random_range(0..2)];
            let stride = r.random_range(1..=2);
            let pad = r.random_range(0..=k / 2);
            let hw = r.random_range(k..=6);
            let n = r.random_range(1..=2);
            let x = randt(r, Shape::new(n, cin, hw, hw));
            let w = randt(r, Shape::new(cout, cin, k, k));
            let b = randt(r, Shape::new(1, cout, 1, 1));
            match r.random_range(0..3) {
                0 => (
                    Box::new(move |t, v| {
                        let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
                        t.conv2d(v, w, Some(b), stride, pad)
                    }),
                    x,
                ),
                1 => (
                    Box::new(move |t, v| {
                        let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
                        t.conv2d(x, v, Some(b), stride, pad)
                    }),
                    w,
                ),
                _ => (
                    Box::new(move |t, v| {
                        let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
                        t.conv2d(x, w, Some(v), stride, pad)
                    }),
                    b,
                ),
            }
        }
        "transpose_conv2d" => {
            let cin = r.random_range(1..=3);
            let cout = r.random_range(1..=3);
            let stride = r.random_range(1..=2);
            let k = r.random_range(1..=3);
            let s = shape(r, 2, 1, 4).with_c(cin);
            let x = randt(r, s);
            let w = randt(r, Shape::new(cin, cout, k, k));
            if r.random_bool(0.5) {
                (
                    Box::new(move |t, v| {
                        let w = t.constant(w.clone());
                        t.transpose_conv2d(v, w, stride)
                    }),
                    x,
                )
            } else {
                (
                    Box::new(move |t, v| {
                        let x = t.constant(x.clone());
                        t.transpose_conv2d(x, v, stride)
                    }),
                    w,
                )
            }
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let mut s = shape(r, 3, 3, 4);
            if s.n() * s.plane() < 2 {
                s = Shape::new(2, s.c(), s.h(), s.w());
            }
            let c = s.c();
            let x = randt(r, s);
            let gamma = Tensor::uniform(Shape::new(1, c, 1, 1), 0.5, 1.5, r);
            let beta = randt(r, Shape::new(1, c, 1, 1));
            let mean: Vec<f64> = (0..c).map(|_| r.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
            let train = op == "batch_norm_train";
            let wrt_gamma = r.random_bool(0.3);
            let (other, input) = if wrt_gamma { (x, gamma) } else { (gamma, x) };
            (
                Box::new(move |t, v| {
                    let o = t.constant(other.clone());
                    let (x, g) = if wrt_gamma { (o, v) } else { (v, o) };
                    let b = t.constant(beta.clone());
                    if train {
                        Ok(t.batch_norm_train(x, g, b, 1e-5)?.0)
                    } else {
                        t.batch_norm_eval(x, g, b, &mean, &var, 1e-5)
                    }
                }),
                input,
            )
        }
        "deform_conv2d" => {
            let cin = r.random_range(1..=2);
            let cout = r.random_range(1..=2);
            let k = [1, 3][r.random_range(0..2)];
            let s = Shape::new(r.random_range(1..=2), cin, r.random_range(2..=5), r.random_range(2..=5));
            let x = randt(r, s);
            let off = Tensor::uniform(Shape::new(s.n(), 2 * k * k, s.h(), s.w()), -1.5, 1.5, r);
            let w = randt(r, Shape::new(cout, cin, k, k));
            let b = randt(r, Shape::new(1, cout, 1, 1));
            match r.random_range(0..3) {
                0 => (
                    Box::new(move |t, v| {
                        let (o, w, b) = (t.constant(off.clone()), t.constant(w.clone()), t.constant(b.clone()));
                        t.deform_conv2d(v, o, w, Some(b))
                    }),
                    x,
                ),
                1 => (
                    Box::new(move |t, v| {
                        let (x, w, b) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
                        t.deform_conv2d(x, v, w, Some(b))
                    }),
                    off,
                ),
                _ => (
                    Box::new(move |t, v| {
                        let (x, o, b) = (t.constant(x.clone()), t.constant(off.clone()), t.constant(b.clone()));
                        t.deform_conv2d(x, o, v, Some(b))
                    }),
                    w,
                ),
            }
        }
        "directional_pool" => {
            let dir = Direction::ALL[r.random_range(0..4)];
            let s = shape(r, 2, 2, 6);
            let x = randt(r, s);
            (Box::new(move |t, v| Ok(t.directional_pool(v, dir))), x)
        }
        "gaussian_focal_loss" => {
            let s = shape(r, 2, 2, 5);
            let mut target = Tensor::uniform(s, 0.0, 0.9, r);
            for n in 0..s.n() {
                let (c, y, x) = (r.random_range(0..s.c()), r.random_range(0..s.h()), r.random_range(0..s.w()));
                target.set(n, c, y, x, 1.0);
            }
            let objects: Vec<usize> = (0..s.n()).map(|_| r.random_range(0..3)).collect();
            let p = Tensor::uniform(s, 0.05, 0.95, r);
            (Box::new(move |t, v| t.gaussian_focal_loss(v, &target, &objects)), p)
        }
        "smooth_l1_masked" => {
            let s = shape(r, 2, 2, 4);
            let target = randt(r, s);
            let mut mask: Vec<bool> = (0..s.n() * s.plane()).map(|_| r.random_bool(0.6)).collect();
            mask[0] = true;
            let p = Tensor::uniform(s, -3.0, 3.0, r);
            (Box::new(move |t, v| t.smooth_l1_masked(v, &target, &mask)), p)
        }
        "add" | "concat" => {
            let s = shape(r, 2, 3, 4);
            let oc = if op == "add" { s.c() } else { r.random_range(1..=3) };
            let other = randt(r, s.with_c(oc));
            let first = r.random_bool(0.5);
            let add = op == "add";
            (
                Box::new(move |t, v| {
                    let o = t.constant(other.clone());
                    let (a, b) = if first { (v, o) } else { (o, v) };
                    if add {
                        t.add(a, b)
                    } else {
                        t.concat(a, b)
                    }
                }),
                randt(r, s),
            )
        }
        "scale" => {
            let f = r.random_range(-3.0..3.0);
            let s = shape(r, 2, 3, 4);
            (Box::new(move |t, v| Ok(t.scale(v, f))), randt(r, s))
        }
        "sum" => {
            let s = shape(r, 2, 3, 4);
            (Box::new(|t, v| Ok(t.sum(v))), randt(r, s))
        }
        "weighted_sum" => {
            let s = shape(r, 2, 3, 4);
            let x = randt(r, s);
            let w: Vec<f64> = (0..x.numel()).map(|_| r.random_range(-2.0..2.0)).collect();
            (Box::new(move |t, v| t.weighted_sum(v, w.clone())), x)
        }
        "relu" => {
            let s = shape(r, 2, 3, 4);
            (Box::new(|t, v| Ok(t.relu(v))), randt(r, s))
        }
        "sigmoid" => {
            let s = shape(r, 2, 3, 4);
            let x = Tensor::uniform(s, -4.0, 4.0, r);
            (Box::new(|t, v| Ok(t.sigmoid(v))), x)
        }
        other => panic!("no gradient case for {other}"),
    }
}

pub const OPS: [&str; 15] = [
    "conv2d",
    "transpose_conv2d",
    "batch_norm_train",
    "batch_norm_eval",
    "deform_conv2d",
    "directional_pool",
    "gaussian_focal_loss",
    "smooth_l1_masked",
    "add",
    "concat",
    "scale",
    "sum",
    "weighted_sum",
    "relu",
    "sigmoid",
];

pub fn op_suite(op: &str, cases: usize, seed: u64) -> SuiteResult {
    let mut res = SuiteResult {
        name: op.to_string(),
        ..Default::default()
    };
    let mut r = rng(seed);
    for i in 0..cases {
        let (f, x) = op_case(op, &mut r);
        let rep = finite_diff_check(f, &x, &opts(seed + i as u64, Some(48))).expect("gradient check runs");
        res.add(&rep);
    }
    res
}

/// Runs a store-backed module in train mode on the tape the checker hands us.
fn with_ctx<T>(store: &ParamStore, t: &mut Tape, f: impl FnOnce(&mut Ctx) -> Result<T>) -> Result<T> {
    let mut ctx = Ctx::with_tape(store, Mode::Train, std::mem::take(t));
    let out = f(&mut ctx);
    *t = std::mem::take(&mut ctx.tape);
    out
}

pub fn pooling_suite(variant: &str, cases: usize, seed: u64) -> SuiteResult {
    let mut res = SuiteResult {
        name: format!("pooling:{variant}"),
        ..Default::default()
    };
    let mut r = rng(seed);
    for i in 0..cases {
        let c = r.random_range(1..=3);
        let mut store = ParamStore::new(seed + i as u64);
        let strategy = registry().get(variant).expect("registered");
        let m = PoolingModule::new(&mut store, "p", strategy, c).expect("module");
        let corner = if r.random_bool(0.5) { CornerType::TopLeft } else { CornerType::BottomRight };
        let (h, w) = (r.random_range(2..=5), r.random_range(2..=5));
        let x = randt(&mut r, Shape::new(2, c, h, w));
        let rep = finite_diff_check(
            |t, v| with_ctx(&store, t, |ctx| m.forward(ctx, v, corner)),
            &x,
            &opts(seed + i as u64, Some(24)),
        )
        .expect("gradient check runs");
        res.add(&rep);
    }
    res
}

pub fn deform_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut res = SuiteResult {
        name: "cross_star_deform".into(),
        ..Default::default()
    };
    let mut r = rng(seed);
    for i in 0..cases {
        let c = r.random_range(1..=3);
        let mut store = ParamStore::new(seed + i as u64);
        let m = CrossStarDeform::new(&mut store, "d", c, 3).expect("module");
        let ow = m.offset_conv.weight;
        let w = Tensor::uniform(store.get(ow).value.shape(), -0.3, 0.3, &mut r);
        store.get_mut(ow).value = w;
        let s = Shape::new(r.random_range(1..=2), c, r.random_range(2..=5), r.random_range(2..=5));
        let feats = randt(&mut r, s);
        let guide = randt(&mut r, s.with_c(2));
        let rep = if r.random_bool(0.5) {
            finite_diff_check(
                |t, v| {
                    let g = t.constant(guide.clone());
                    with_ctx(&store, t, |ctx| m.forward(ctx, v, g))
                },
                &feats,
                &opts(seed + i as u64, Some(24)),
            )
        } else {
            finite_diff_check(
                |t, v| {
                    let f = t.constant(feats.clone());
                    with_ctx(&store, t, |ctx| m.forward(ctx, f, v))
                },
                &guide,
                &opts(seed + i as u64, Some(24)),
            )
        }
        .expect("gradient check runs");
        res.add(&rep);
    }
    res
}

/// Reference directional scans, written independently of the library.
pub fn scan_oracle(f: &Tensor, dir: Direction) -> Tensor {
    let s = f.shape();
    let mut out = f.clone();
    for n in 0..s.n() {
        for c in 0..s.c() {
            for y in 0..s.h() {
                for x in 0..s.w() {
                    let mut m = f64::NEG_INFINITY;
                    let (ys, xs): (Vec<usize>, Vec<usize>) = match dir {
                        Direction::Top => ((y..s.h()).collect(), vec![x]),
                        Direction::Bottom => ((0..=y).collect(), vec![x]),
                        Direction::Left => (vec![y], (x..s.w()).collect()),
                        Direction::Right => (vec![y], (0..=x).collect()),
                    };
                    for &yy in &ys {
                        for &xx in &xs {
                            m = m.max(f.at(n, c, yy, xx));
                        }
                    }
                    out.set(n, c, y, x, m);
                }
            }
        }
    }
    out
}

pub fn pool_matches_oracle(f: &Tensor) -> bool {
    Direction::ALL
        .iter()
        .all(|&d| directional_pool(f, d).data() == scan_oracle(f, d).data())
}

/// Output of a pooling module with identity branches on one corner.
pub fn identity_trace(variant: &str, f: &Tensor) -> Tensor {
    let mut store = ParamStore::new(0);
    let m = PoolingModule::new(&mut store, "p", registry().get(variant).unwrap(), f.shape().c()).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(f.clone());
    let y = m.forward_identity(&mut tape, x, CornerType::TopLeft).unwrap();
    tape.value(y).clone()
}
