//! Ground-truth boxes and their encoding into dense training targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Pixel-space box, origin top-left, x right, y down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub tl_x: f64,
    pub tl_y: f64,
    pub br_x: f64,
    pub br_y: f64,
    pub class_id: usize,
}

impl GroundTruthBox {
    pub fn new(tl_x: f64, tl_y: f64, br_x: f64, br_y: f64, class_id: usize) -> Self {
        GroundTruthBox {
            tl_x,
            tl_y,
            br_x,
            br_y,
            class_id,
        }
    }

    pub fn width(&self) -> f64 {
        self.br_x - self.tl_x
    }

    pub fn height(&self) -> f64 {
        self.br_y - self.tl_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.tl_x + self.br_x) / 2.0, (self.tl_y + self.br_y) / 2.0)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.tl_x, self.tl_y, self.br_x, self.br_y]
    }

    /// Checks ordering, finiteness, class range and (optionally) image bounds.
    pub fn validate(&self, num_classes: usize, bounds: Option<(usize, usize)>) -> Result<()> {
        if !self.coords().iter().all(|v| v.is_finite()) || self.tl_x >= self.br_x || self.tl_y >= self.br_y {
            return Err(Error::invalid(format!("degenerate box {:?}", self.coords())));
        }
        if self.class_id >= num_classes {
            return Err(Error::invalid(format!(
                "class id {} out of range for {num_classes} classes",
                self.class_id
            )));
        }
        if let Some((h, w)) = bounds {
            if self.tl_x < 0.0 || self.tl_y < 0.0 || self.br_x > w as f64 || self.br_y > h as f64 {
                return Err(Error::invalid(format!(
                    "box {:?} outside a {w}x{h} image",
                    self.coords()
                )));
            }
        }
        Ok(())
    }
}

/// Radius (same units as `w`, `h`) within which both corners may move while
/// the box keeps IoU >= `min_overlap` with the original: the smallest root
/// over the shrink, grow and translate cases.
pub fn gaussian_radius(w: f64, h: f64, min_overlap: f64) -> Result<f64> {
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::invalid(format!("gaussian_radius needs positive extents, got {w}x{h}")));
    }
    if !(min_overlap > 0.0 && min_overlap <= 1.0) {
        return Err(Error::invalid(format!("min_overlap must be in (0, 1], got {min_overlap}")));
    }
    let m = min_overlap;
    let (s, p) = (w + h, w * h);

    let b1 = s;
    let c1 = p * (1.0 - m) / (1.0 + m);
    let r1 = (b1 - (b1 * b1 - 4.0 * c1).max(0.0).sqrt()) / 2.0;

    let b2 = 2.0 * s;
    let c2 = (1.0 - m) * p;
    let r2 = (b2 - (b2 * b2 - 16.0 * c2).max(0.0).sqrt()) / 8.0;

    let a3 = 4.0 * m;
    let b3 = -2.0 * m * s;
    let c3 = (m - 1.0) * p;
    let r3 = (-b3 + (b3 * b3 - 4.0 * a3 * c3).max(0.0).sqrt()) / (2.0 * a3);

    Ok(r1.min(r2).min(r3).max(0.0))
}

/// Max-merges `exp(-(dx^2 + dy^2) / (2 sigma^2))`, `sigma = radius / 3`,
/// into `plane` around `(cy, cx)` out to `floor(radius)` cells.
pub fn draw_gaussian(plane: &mut [f64], h: usize, w: usize, cy: usize, cx: usize, radius: f64) {
    let reach = radius.floor().max(0.0) as isize;
    let sigma = radius / 3.0;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let (y, x) = (cy as isize + dy, cx as isize + dx);
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                continue;
            }
            let v = if dy == 0 && dx == 0 {
                1.0
            } else {
                (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()
            };
            let cell = &mut plane[y as usize * w + x as usize];
            if v > *cell {
                *cell = v;
            }
        }
    }
}

/// `(log(width / 2s), log(height / 2s))`.
pub fn encode_bounding_constraint(b: &GroundTruthBox, s: f64) -> Result<(f64, f64)> {
    if !(s >= 1.0) {
        return Err(Error::invalid(format!("stride must be >= 1, got {s}")));
    }
    let (w, h) = (b.width(), b.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::invalid(format!("box extent must be positive, got {w}x{h}")));
    }
    Ok(((w / (2.0 * s)).ln(), (h / (2.0 * s)).ln()))
}

/// Inverse of [`encode_bounding_constraint`] given the center: returns the
/// box `(tl_x, tl_y, br_x, br_y)`.
pub fn decode_bounding_constraint(bc_w: f64, bc_h: f64, center: (f64, f64), s: f64) -> [f64; 4] {
    let hw = s * bc_w.exp();
    let hh = s * bc_h.exp();
    [center.0 - hw, center.1 - hh, center.0 + hw, center.1 + hh]
}

#[derive(Clone, Debug, PartialEq)]
pub struct CornerTargets {
    /// `[N, C, h, w]`.
    pub heatmap: Tensor,
    /// `[N, 2, h, w]`, `(x, y)` channel order like every regression map.
    pub offset: Tensor,
    pub centripetal: Tensor,
    pub guiding: Tensor,
    /// One flag per `(n, y, x)` cell.
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterTargets {
    pub heatmap: Tensor,
    pub offset: Tensor,
    pub bc: Tensor,
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTargets {
    pub tl: CornerTargets,
    pub br: CornerTargets,
    pub center: CenterTargets,
    pub stride: usize,
    /// Ground-truth boxes per batch item.
    pub objects: Vec<usize>,
}

pub const MIN_OVERLAP: f64 = 0.7;

fn cell_of(coord: f64, s: f64, n: usize) -> (usize, f64) {
    let scaled = coord / s;
    let cell = (scaled.floor().max(0.0) as usize).min(n - 1);
    (cell, scaled - cell as f64)
}

struct Maps {
    heat: Tensor,
    off: Tensor,
    a: Tensor,
    b: Tensor,
    mask: Vec<bool>,
}

impl Maps {
    fn new(c: usize, h: usize, w: usize) -> Self {
        Maps {
            heat: Tensor::zeros(Shape::new(1, c, h, w)),
            off: Tensor::zeros(Shape::new(1, 2, h, w)),
            a: Tensor::zeros(Shape::new(1, 2, h, w)),
            b: Tensor::zeros(Shape::new(1, 2, h, w)),
            mask: vec![false; h * w],
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn put(&mut self, class: usize, (cy, cx): (usize, usize), radius: f64, off: (f64, f64), reg: (f64, f64)) {
        let s = self.heat.shape();
        let (h, w) = (s.h(), s.w());
        draw_gaussian(self.heat.plane_mut(0, class), h, w, cy, cx, radius);
        let i = cy * w + cx;
        self.mask[i] = true;
        for (t, v) in [(&mut self.off, off), (&mut self.a, reg), (&mut self.b, reg)] {
            t.plane_mut(0, 0)[i] = v.0;
            t.plane_mut(0, 1)[i] = v.1;
        }
    }
}

/// Dense targets for one image on an `h x w` grid of stride `s`.
///
/// Overlapping corner cells max-merge their heatmaps and take regression
/// targets from the later box.
pub fn encode_targets(
    boxes: &[GroundTruthBox],
    num_classes: usize,
    h: usize,
    w: usize,
    s: usize,
) -> Result<TrainingTargets> {
    if h == 0 || w == 0 || s == 0 {
        return Err(Error::invalid("encode_targets needs a non-empty grid and positive stride"));
    }
    let sf = s as f64;
    let mut tl = Maps::new(num_classes, h, w);
    let mut br = Maps::new(num_classes, h, w);
    let mut ce = Maps::new(num_classes, h, w);
    for b in boxes {
        b.validate(num_classes, None)?;
        let radius = gaussian_radius(b.width() / sf, b.height() / sf, MIN_OVERLAP)?;
        let half = ((b.width() / (2.0 * sf)).ln(), (b.height() / (2.0 * sf)).ln());

        let (tx, ox) = cell_of(b.tl_x, sf, w);
        let (ty, oy) = cell_of(b.tl_y, sf, h);
        tl.put(b.class_id, (ty, tx), radius, (ox, oy), half);

        let (bx, ox) = cell_of(b.br_x, sf, w);
        let (by, oy) = cell_of(b.br_y, sf, h);
        br.put(b.class_id, (by, bx), radius, (ox, oy), half);

        let (cx, cy) = b.center();
        let (gx, ox) = cell_of(cx, sf, w);
        let (gy, oy) = cell_of(cy, sf, h);
        let bc = encode_bounding_constraint(b, sf)?;
        ce.put(b.class_id, (gy, gx), radius, (ox, oy), bc);
    }
    let corner = |m: Maps| CornerTargets {
        heatmap: m.heat,
        offset: m.off,
        centripetal: m.a,
        guiding: m.b,
        mask: m.mask,
    };
    Ok(TrainingTargets {
        tl: corner(tl),
        br: corner(br),
        center: CenterTargets {
            heatmap: ce.heat,
            offset: ce.off,
            bc: ce.a,
            mask: ce.mask,
        },
        stride: s,
        objects: vec![boxes.len()],
    })
}

impl TrainingTargets {
    /// Concatenates per-image targets along the batch axis.
    pub fn stack(items: &[TrainingTargets]) -> Result<TrainingTargets> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack an empty target list"))?;
        let st = |f: &dyn Fn(&TrainingTargets) -> &Tensor| -> Result<Tensor> {
            Tensor::stack(&items.iter().map(|t| f(t).clone()).collect::<Vec<_>>())
        };
        let cat = |f: &dyn Fn(&TrainingTargets) -> &Vec<bool>| -> Vec<bool> {
            items.iter().flat_map(|t| f(t).iter().copied()).collect()
        };
        Ok(TrainingTargets {
            tl: CornerTargets {
                heatmap: st(&|t| &t.tl.heatmap)?,
                offset: st(&|t| &t.tl.offset)?,
                centripetal: st(&|t| &t.tl.centripetal)?,
                guiding: st(&|t| &t.tl.guiding)?,
                mask: cat(&|t| &t.tl.mask),
            },
            br: CornerTargets {
                heatmap: st(&|t| &t.br.heatmap)?,
                offset: st(&|t| &t.br.offset)?,
                centripetal: st(&|t| &t.br.centripetal)?,
                guiding: st(&|t| &t.br.guiding)?,
                mask: cat(&|t| &t.br.mask),
            },
            center: CenterTargets {
                heatmap: st(&|t| &t.center.heatmap)?,
                offset: st(&|t| &t.center.offset)?,
                bc: st(&|t| &t.center.bc)?,
                mask: cat(&|t| &t.center.mask),
            },
            stride: first.stride,
            objects: items.iter().flat_map(|t| t.objects.iter().copied()).collect(),
        })
    }
}
