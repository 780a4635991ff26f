use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Predictions are clamped into `[FOCAL_EPS, 1 - FOCAL_EPS]` before the logs.
pub const FOCAL_EPS: f64 = 1e-6;

#[inline]
pub fn smooth_l1(d: f64) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        0.5 * d * d
    } else {
        a - 0.5
    }
}

#[inline]
fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

impl Tape {
    /// Penalty-reduced focal loss on a probability heatmap.
    ///
    /// Cells where `target == 1` contribute `(1-p)^2 log p`; all others
    /// `(1-t)^4 p^2 log(1-p)`. Each batch item is normalized by its own
    /// object count (floored at 1) and the batch is averaged.
    pub fn gaussian_focal_loss(&mut self, pred: Var, target: &Tensor, objects: &[usize]) -> Result<Var> {
        let s = self.shape(pred);
        target.expect_shape(s, "gaussian_focal_loss")?;
        if objects.len() != s.n() {
            return Err(Error::invalid("gaussian_focal_loss: one object count per batch item"));
        }
        let per = s.c() * s.plane();
        let batch = s.n().max(1) as f64;
        let p = self.value(pred).data();
        let t = target.data();
        let mut total = 0.0;
        let mut dpred = vec![0.0; p.len()];
        let mut clamped = Vec::new();
        for (n, &cnt) in objects.iter().enumerate() {
            let norm = -1.0 / (cnt.max(1) as f64 * batch);
            for i in n * per..(n + 1) * per {
                let raw = p[i];
                let pv = raw.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
                let inside = pv == raw;
                if self.tracking() {
                    clamped.push(inside as u64);
                }
                let (val, d) = if t[i] == 1.0 {
                    let q = 1.0 - pv;
                    (q * q * pv.ln(), -2.0 * q * pv.ln() + q * q / pv)
                } else {
                    let wneg = (1.0 - t[i]).powi(4);
                    let l1p = (1.0 - pv).ln();
                    (
                        wneg * pv * pv * l1p,
                        wneg * (2.0 * pv * l1p - pv * pv / (1.0 - pv)),
                    )
                };
                total += norm * val;
                dpred[i] = if inside { norm * d } else { 0.0 };
            }
        }
        self.note_branches(clamped);
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(total), Op::FocalLoss { pred, dpred }, rg))
    }

    /// Mean smooth-L1 over the elements of cells where `mask` is set.
    ///
    /// `mask` holds one flag per `(n, y, x)` cell and applies to every channel.
    /// An empty mask yields exactly zero.
    pub fn smooth_l1_masked(&mut self, pred: Var, target: &Tensor, mask: &[bool]) -> Result<Var> {
        let s = self.shape(pred);
        target.expect_shape(s, "smooth_l1_masked")?;
        if mask.len() != s.n() * s.plane() {
            return Err(Error::invalid(format!(
                "smooth_l1_masked: mask has {} cells, prediction {s} needs {}",
                mask.len(),
                s.n() * s.plane()
            )));
        }
        let (c, plane) = (s.c(), s.plane());
        let cells = mask.iter().filter(|&&m| m).count();
        let p = self.value(pred).data();
        let t = target.data();
        let mut dpred = vec![0.0; p.len()];
        let mut total = 0.0;
        let mut branches = Vec::new();
        if cells > 0 {
            let norm = 1.0 / (cells * c) as f64;
            for n in 0..s.n() {
                for (cell, _) in mask[n * plane..(n + 1) * plane].iter().enumerate().filter(|(_, &m)| m) {
                    for ch in 0..c {
                        let i = (n * c + ch) * plane + cell;
                        let d = p[i] - t[i];
                        if self.tracking() {
                            branches.push((d.abs() < 1.0) as u64);
                        }
                        total += norm * smooth_l1(d);
                        dpred[i] = norm * smooth_l1_grad(d);
                    }
                }
            }
        }
        self.note_branches(branches);
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(total), Op::SmoothL1 { pred, dpred }, rg))
    }
}
