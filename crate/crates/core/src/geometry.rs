use serde::{Deserialize, Serialize};

/// Axis-aligned box in pixels, `tl` up-left of `br`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub tl_x: f64,
    pub tl_y: f64,
    pub br_x: f64,
    pub br_y: f64,
}

impl BoundingBox {
    pub fn new(tl_x: f64, tl_y: f64, br_x: f64, br_y: f64) -> Self {
        BoundingBox { tl_x, tl_y, br_x, br_y }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.tl_x, self.tl_y, self.br_x, self.br_y]
    }

    pub fn width(&self) -> f64 {
        self.br_x - self.tl_x
    }

    pub fn height(&self) -> f64 {
        self.br_y - self.tl_y
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.tl_x + self.br_x) / 2.0, (self.tl_y + self.br_y) / 2.0)
    }
}

/// Intersection over union; 0 for disjoint or empty boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.br_x.min(b.br_x) - a.tl_x.max(b.tl_x)).max(0.0);
    let ih = (a.br_y.min(b.br_y) - a.tl_y.max(b.tl_y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
