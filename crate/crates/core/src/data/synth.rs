use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::evaluation::ScaleBucket;
use crate::targets::GroundTruthBox;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SizeDistribution {
    /// Box width uniform in `[min, max]` pixels.
    Uniform { min: usize, max: usize },
    /// Scale bucket drawn uniformly, then a size inside it.
    BucketBalanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Noise,
    Gradient,
    Texture,
    /// One of the other three per image.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// `(height, width)`.
    pub image_size: (usize, usize),
    /// Hardhat colors (`blue`, `red`, `white`, `yellow`) and optionally
    /// `none` for bare heads.
    pub classes: Vec<String>,
    /// Inclusive range of objects per image.
    pub objects: (usize, usize),
    pub sizes: SizeDistribution,
    pub background: Background,
    pub seed: u64,
}

impl SynthConfig {
    pub fn toy() -> Self {
        SynthConfig {
            image_size: (96, 96),
            classes: vec!["red".into(), "yellow".into(), "none".into()],
            objects: (1, 3),
            sizes: SizeDistribution::Uniform { min: 16, max: 48 },
            background: Background::Mixed,
            seed: 0,
        }
    }

    /// Larger canvas with sizes spread over all three scale buckets.
    pub fn bucket_balanced() -> Self {
        SynthConfig {
            image_size: (160, 160),
            sizes: SizeDistribution::BucketBalanced,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 16 || w < 16 {
            return Err(Error::Config(format!("synthetic images must be at least 16x16, got {h}x{w}")));
        }
        if self.classes.is_empty() {
            return Err(Error::Config("synthetic class list is empty".into()));
        }
        for c in &self.classes {
            if c != "none" && hat_color(c).is_none() {
                return Err(Error::UnknownClass(c.clone()));
            }
        }
        if self.objects.0 == 0 || self.objects.0 > self.objects.1 {
            return Err(Error::Config(format!("bad object count range {:?}", self.objects)));
        }
        let fit = h.min(w) - 2;
        match self.sizes {
            SizeDistribution::Uniform { min, max } => {
                if min < 4 || min > max || (max as f64 * MAX_ASPECT).ceil() as usize > fit {
                    return Err(Error::Config(format!(
                        "size range {min}..={max} does not fit a {h}x{w} image"
                    )));
                }
            }
            SizeDistribution::BucketBalanced => {
                if (LARGE_MIN as f64 * MAX_ASPECT).ceil() as usize > fit {
                    return Err(Error::Config(format!(
                        "a {h}x{w} image cannot hold a box above {} px^2",
                        crate::evaluation::MEDIUM_MAX_AREA
                    )));
                }
            }
        }
        Ok(())
    }
}

const MIN_ASPECT: f64 = 0.9;
const MAX_ASPECT: f64 = 1.15;
const LARGE_MIN: usize = 98;

pub fn hat_color(name: &str) -> Option<[f64; 3]> {
    Some(match name {
        "blue" => [0.10, 0.30, 0.90],
        "red" => [0.90, 0.12, 0.10],
        "white" => [0.96, 0.96, 0.96],
        "yellow" => [0.97, 0.85, 0.10],
        _ => return None,
    })
}

const SKIN: [[f64; 3]; 4] = [
    [0.96, 0.80, 0.69],
    [0.87, 0.67, 0.52],
    [0.68, 0.48, 0.34],
    [0.45, 0.30, 0.20],
];

fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Canvas {
    t: Tensor,
    h: usize,
    w: usize,
}

impl Canvas {
    fn put(&mut self, y: usize, x: usize, c: [f64; 3]) {
        for (k, v) in c.iter().enumerate() {
            self.t.set(0, k, y, x, *v);
        }
    }

    /// Fills pixels inside an axis-aligned ellipse, optionally only the part
    /// at or above `cut_y`.
    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, cut_y: Option<f64>, c: [f64; 3]) {
        let y0 = (cy - ry).floor().max(0.0) as usize;
        let y1 = ((cy + ry).ceil() as usize).min(self.h - 1);
        let x0 = (cx - rx).floor().max(0.0) as usize;
        let x1 = ((cx + rx).ceil() as usize).min(self.w - 1);
        for y in y0..=y1 {
            if cut_y.is_some_and(|cut| y as f64 > cut) {
                continue;
            }
            for x in x0..=x1 {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.put(y, x, c);
                }
            }
        }
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, c: [f64; 3]) {
        let ys = y0.round().max(0.0) as usize..=(y1.round() as usize).min(self.h - 1);
        for y in ys {
            for x in x0.round().max(0.0) as usize..=(x1.round() as usize).min(self.w - 1) {
                self.put(y, x, c);
            }
        }
    }
}

fn background(canvas: &mut Canvas, kind: Background, rng: &mut ChaCha8Rng) {
    let kind = match kind {
        Background::Mixed => [Background::Noise, Background::Gradient, Background::Texture][rng.random_range(0..3)],
        k => k,
    };
    let rand_color = |rng: &mut ChaCha8Rng| [0; 3].map(|_| rng.random_range(0.2f64..0.7));
    let (h, w) = (canvas.h, canvas.w);
    match kind {
        Background::Noise => {
            let base = rand_color(rng);
            let noise = Normal::<f64>::new(0.0, 0.06).expect("valid std");
            for y in 0..h {
                for x in 0..w {
                    let c = base.map(|b| (b + noise.sample(rng)).clamp(0.0, 1.0));
                    canvas.put(y, x, c);
                }
            }
        }
        Background::Gradient => {
            let (a, b) = (rand_color(rng), rand_color(rng));
            let vertical = rng.random_bool(0.5);
            for y in 0..h {
                for x in 0..w {
                    let t = if vertical { y as f64 / h as f64 } else { x as f64 / w as f64 };
                    canvas.put(y, x, [0, 1, 2].map(|k| a[k] * (1.0 - t) + b[k] * t));
                }
            }
        }
        Background::Texture | Background::Mixed => {
            let (a, b) = (rand_color(rng), rand_color(rng));
            let period = rng.random_range(6.0..20.0);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (s, c) = angle.sin_cos();
            for y in 0..h {
                for x in 0..w {
                    let u = ((x as f64 * c + y as f64 * s) / period * std::f64::consts::TAU).sin() * 0.5 + 0.5;
                    canvas.put(y, x, [0, 1, 2].map(|k| a[k] * (1.0 - u) + b[k] * u));
                }
            }
        }
    }
}

fn draw_size(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let fit = cfg.image_size.0.min(cfg.image_size.1) - 2;
    loop {
        let (lo, hi, want) = match cfg.sizes {
            SizeDistribution::Uniform { min, max } => (min, max, None),
            SizeDistribution::BucketBalanced => match rng.random_range(0..3) {
                0 => (10, 30, Some(ScaleBucket::Small)),
                1 => (34, 90, Some(ScaleBucket::Medium)),
                _ => (LARGE_MIN, (fit as f64 / MAX_ASPECT) as usize, Some(ScaleBucket::Large)),
            },
        };
        let bw = rng.random_range(lo..=hi);
        let bh = ((bw as f64 * rng.random_range(MIN_ASPECT..MAX_ASPECT)).round() as usize).clamp(4, fit);
        match want {
            Some(b) if ScaleBucket::of_area((bw * bh) as f64) != b => continue,
            _ => return (bw, bh),
        }
    }
}

fn overlaps(a: &GroundTruthBox, b: &GroundTruthBox, margin: f64) -> bool {
    a.tl_x - margin < b.br_x && b.tl_x - margin < a.br_x && a.tl_y - margin < b.br_y && b.tl_y - margin < a.br_y
}

/// One synthetic scene; `index` selects an independent random stream.
pub fn generate_one(cfg: &SynthConfig, index: u64) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, index));
    let (h, w) = cfg.image_size;
    let mut canvas = Canvas {
        t: Tensor::zeros(Shape::new(1, 3, h, w)),
        h,
        w,
    };
    background(&mut canvas, cfg.background, &mut rng);

    let want = rng.random_range(cfg.objects.0..=cfg.objects.1);
    let mut boxes: Vec<GroundTruthBox> = Vec::new();
    for _ in 0..want {
        for _attempt in 0..50 {
            let (bw, bh) = draw_size(cfg, &mut rng);
            let x0 = rng.random_range(0..=(w - 1 - bw)) as f64;
            let y0 = rng.random_range(0..=(h - 1 - bh)) as f64;
            let class_id = rng.random_range(0..cfg.classes.len());
            let b = GroundTruthBox::new(x0, y0, x0 + bw as f64, y0 + bh as f64, class_id);
            if boxes.iter().all(|o| !overlaps(o, &b, 2.0)) {
                boxes.push(b);
                break;
            }
        }
    }

    // bodies first so no torso covers another worker's head
    for b in &boxes {
        let (cx, _) = b.center();
        let shirt = [0; 3].map(|_| rng.random_range(0.05..0.95));
        let half = 0.75 * b.width();
        canvas.rect(cx - half, b.br_y + 1.0, cx + half, b.br_y + 1.5 * b.height(), shirt);
    }
    for b in &boxes {
        let (cx, _) = b.center();
        let (bw, bh) = (b.width(), b.height());
        let skin = SKIN[rng.random_range(0..SKIN.len())];
        match hat_color(&cfg.classes[b.class_id]) {
            Some(hat) => {
                let hat = hat.map(|v: f64| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
                let neck_y = b.tl_y + 0.72 * bh;
                canvas.ellipse(cx, neck_y, 0.36 * bw, 0.28 * bh, None, skin);
                canvas.ellipse(cx, b.tl_y + 0.5 * bh, bw / 2.0, 0.5 * bh, Some(b.tl_y + 0.5 * bh), hat);
                canvas.rect(b.tl_x, b.tl_y + 0.44 * bh, b.br_x, b.tl_y + 0.52 * bh, hat);
            }
            None => {
                let hair = [0; 3].map(|_| rng.random_range(0.05..0.2));
                canvas.ellipse(cx, b.tl_y + 0.5 * bh, 0.45 * bw, 0.5 * bh, None, skin);
                canvas.ellipse(cx, b.tl_y + 0.4 * bh, 0.45 * bw, 0.4 * bh, Some(b.tl_y + 0.3 * bh), hair);
            }
        }
    }

    let noise = Normal::new(0.0, 0.02).expect("valid std");
    for v in canvas.t.data_mut() {
        *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
    }
    Ok(Sample {
        image: canvas.t,
        boxes,
        id: format!("synth_{index:05}"),
    })
}

/// `n` scenes, bitwise reproducible from the config seed.
pub fn generate_synthetic(cfg: &SynthConfig, n: usize) -> Result<Vec<Sample>> {
    (0..n as u64).map(|i| generate_one(cfg, i)).collect()
}
