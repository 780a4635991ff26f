use std::path::Path;

use image::imageops::{resize, FilterType};
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::targets::GroundTruthBox;
use crate::tensor::{Shape, Tensor};

/// Decoded image as `[1, 3, H, W]` in `[0, 1]` plus its size on disk.
#[derive(Clone, Debug)]
pub struct LoadedImage {
    pub tensor: Tensor,
    pub original: (usize, usize),
}

fn to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set(0, c, y as usize, x as usize, px[c] as f64 / 255.0);
        }
    }
    t
}

/// Decodes PNG, PNM or JPEG; with `size = Some((h, w))` resizes bilinearly.
pub fn load_image(path: &Path, size: Option<(usize, usize)>) -> Result<LoadedImage> {
    let img = image::open(path).map_err(|e| Error::file(path, e))?.to_rgb8();
    let original = (img.height() as usize, img.width() as usize);
    let img = match size {
        Some((h, w)) if (h, w) != original => resize(&img, w as u32, h as u32, FilterType::Triangle),
        _ => img,
    };
    Ok(LoadedImage {
        tensor: to_tensor(&img),
        original,
    })
}

/// Quantizes the first image of `t` to 8-bit RGB and writes it; the format
/// follows the extension.
pub fn save_image(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.c() != 3 {
        return Err(Error::invalid(format!("save_image needs 3 channels, got {s}")));
    }
    let mut img = RgbImage::new(s.w() as u32, s.h() as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let v = |c| (t.at(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        *px = Rgb([v(0), v(1), v(2)]);
    }
    img.save(path).map_err(|e| Error::file(path, e))
}

/// Scales box coordinates from an `(h, w)` frame into another.
pub fn rescale_boxes(boxes: &[GroundTruthBox], from: (usize, usize), to: (usize, usize)) -> Vec<GroundTruthBox> {
    let sy = to.0 as f64 / from.0 as f64;
    let sx = to.1 as f64 / from.1 as f64;
    boxes
        .iter()
        .map(|b| GroundTruthBox::new(b.tl_x * sx, b.tl_y * sy, b.br_x * sx, b.br_y * sy, b.class_id))
        .collect()
}

/// Draws 1-pixel box outlines in place.
pub fn draw_boxes(t: &mut Tensor, boxes: &[([f64; 4], [f64; 3])]) {
    let s = t.shape();
    let (h, w) = (s.h() as isize, s.w() as isize);
    for (b, color) in boxes {
        let [x0, y0, x1, y1] = b.map(|v| v.round() as isize);
        let mut put = |x: isize, y: isize| {
            if x >= 0 && y >= 0 && x < w && y < h {
                for (c, &v) in color.iter().enumerate() {
                    t.set(0, c, y as usize, x as usize, v);
                }
            }
        };
        for x in x0..=x1 {
            put(x, y0);
            put(x, y1);
        }
        for y in y0..=y1 {
            put(x0, y);
            put(x1, y);
        }
    }
}
