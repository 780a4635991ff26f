//! Bilinear sampling and the deformable 3x3 convolution built on it.

use super::gemm::gemm;
use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Four neighbour taps of a bilinear sample: `(flat index, weight)`, with
/// out-of-bounds neighbours omitted (they contribute zero).
#[derive(Clone, Copy, Debug, Default)]
struct Taps {
    idx: [usize; 4],
    w: [f64; 4],
    /// d(weight)/dx and d(weight)/dy per tap.
    dwx: [f64; 4],
    dwy: [f64; 4],
    len: usize,
    cell: (i64, i64),
}

#[inline]
fn taps(h: usize, w: usize, x: f64, y: f64) -> Taps {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut t = Taps {
        cell: (y0, x0),
        ..Taps::default()
    };
    let corners = [
        (y0, x0, (1.0 - fy) * (1.0 - fx), -(1.0 - fy), -(1.0 - fx)),
        (y0, x0 + 1, (1.0 - fy) * fx, 1.0 - fy, -fx),
        (y0 + 1, x0, fy * (1.0 - fx), -fy, 1.0 - fx),
        (y0 + 1, x0 + 1, fy * fx, fy, fx),
    ];
    for (cy, cx, wt, dwx, dwy) in corners {
        if cy >= 0 && cx >= 0 && (cy as usize) < h && (cx as usize) < w {
            t.idx[t.len] = cy as usize * w + cx as usize;
            t.w[t.len] = wt;
            t.dwx[t.len] = dwx;
            t.dwy[t.len] = dwy;
            t.len += 1;
        }
    }
    t
}

/// Bilinear interpolation of a row-major `h x w` plane at `(x, y)`.
/// Grid points outside the plane read as zero.
pub fn bilinear_sample(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let t = taps(h, w, x, y);
    (0..t.len).map(|k| plane[t.idx[k]] * t.w[k]).sum()
}

/// Partial derivatives of [`bilinear_sample`]: `(d/dx, d/dy, d/dplane)` where
/// the last is a sparse list of `(flat index, weight)`.
pub fn bilinear_sample_grad(
    plane: &[f64],
    h: usize,
    w: usize,
    x: f64,
    y: f64,
) -> (f64, f64, Vec<(usize, f64)>) {
    let t = taps(h, w, x, y);
    let mut dx = 0.0;
    let mut dy = 0.0;
    let mut dp = Vec::with_capacity(t.len);
    for k in 0..t.len {
        dx += plane[t.idx[k]] * t.dwx[k];
        dy += plane[t.idx[k]] * t.dwy[k];
        dp.push((t.idx[k], t.w[k]));
    }
    (dx, dy, dp)
}

struct DeformGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
}

impl DeformGeom {
    fn taps(&self) -> usize {
        self.k * self.k
    }
    fn p(&self) -> usize {
        self.h * self.w
    }
}

impl Tape {
    fn deform_geom(&self, input: Var, offsets: Var, kernel: Var, bias: Option<Var>) -> Result<DeformGeom> {
        let xs = self.shape(input);
        let os = self.shape(offsets);
        let ks = self.shape(kernel);
        if ks.c() != xs.c() || ks.h() != ks.w() || ks.h() % 2 == 0 {
            return Err(Error::ShapeMismatch {
                op: "deform_conv (kernel must be [Cout, Cin, k, k] with odd k)",
                lhs: xs,
                rhs: ks,
            });
        }
        let k = ks.h();
        let want = Shape::new(xs.n(), 2 * k * k, xs.h(), xs.w());
        if os != want {
            return Err(Error::ShapeMismatch {
                op: "deform_conv (offset field)",
                lhs: os,
                rhs: want,
            });
        }
        if let Some(b) = bias {
            if self.value(b).numel() != ks.n() {
                return Err(Error::ShapeMismatch {
                    op: "deform_conv (bias)",
                    lhs: self.shape(b),
                    rhs: ks,
                });
            }
        }
        Ok(DeformGeom {
            n: xs.n(),
            c: xs.c(),
            h: xs.h(),
            w: xs.w(),
            cout: ks.n(),
            k,
        })
    }

    /// Sampling taps for batch item `n`: one entry per `(tap, pixel)`.
    fn deform_taps(&self, geo: &DeformGeom, offsets: &[f64], n: usize) -> Vec<Taps> {
        let (p, nt, half) = (geo.p(), geo.taps(), (geo.k / 2) as f64);
        let off = &offsets[n * 2 * nt * p..(n + 1) * 2 * nt * p];
        let mut out = Vec::with_capacity(nt * p);
        for t in 0..nt {
            let (ki, kj) = ((t / geo.k) as f64, (t % geo.k) as f64);
            let dy = &off[2 * t * p..(2 * t + 1) * p];
            let dx = &off[(2 * t + 1) * p..(2 * t + 2) * p];
            for pix in 0..p {
                let (oy, ox) = ((pix / geo.w) as f64, (pix % geo.w) as f64);
                let y = oy - half + ki + dy[pix];
                let x = ox - half + kj + dx[pix];
                out.push(taps(geo.h, geo.w, x, y));
            }
        }
        out
    }

    /// Deformable `k x k` convolution (stride 1, "same" padding).
    ///
    /// `offsets` is `[N, 2*k*k, H, W]`, holding `(dy, dx)` per kernel tap in
    /// row-major tap order. Zero offsets reduce to a zero-padded `conv2d`.
    pub fn deform_conv2d(
        &mut self,
        input: Var,
        offsets: Var,
        kernel: Var,
        bias: Option<Var>,
    ) -> Result<Var> {
        let geo = self.deform_geom(input, offsets, kernel, bias)?;
        let (p, nt) = (geo.p(), geo.taps());
        let kk = geo.c * nt;
        let x = self.value(input).data();
        let off = self.value(offsets).data();
        let wt = self.value(kernel).data();
        let mut out = Tensor::zeros(Shape::new(geo.n, geo.cout, geo.h, geo.w));
        let mut cols = vec![0.0; kk * p];
        let mut cells = Vec::new();
        for n in 0..geo.n {
            let tp = self.deform_taps(&geo, off, n);
            if self.tracking() {
                cells.extend(tp.iter().map(|t| ((t.cell.0 as u64) << 32) ^ (t.cell.1 as u64)));
            }
            fill_cols(&geo, &x[n * geo.c * p..(n + 1) * geo.c * p], &tp, &mut cols);
            let dst = &mut out.data_mut()[n * geo.cout * p..(n + 1) * geo.cout * p];
            let beta = if let Some(b) = bias {
                let bv = self.value(b).data();
                for (co, row) in dst.chunks_mut(p).enumerate() {
                    row.fill(bv[co]);
                }
                1.0
            } else {
                0.0
            };
            gemm(geo.cout, kk, p, wt, false, &cols, false, beta, dst);
        }
        self.note_branches(cells);
        let rg = self.rg(input) || self.rg(offsets) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            out,
            Op::DeformConv {
                input,
                offsets,
                kernel,
                bias,
            },
            rg,
        ))
    }

    pub(super) fn deform_conv_backward(
        &self,
        input: Var,
        offsets: Var,
        kernel: Var,
        bias: Option<Var>,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let geo = self
            .deform_geom(input, offsets, kernel, bias)
            .expect("validated in forward");
        let (p, nt) = (geo.p(), geo.taps());
        let kk = geo.c * nt;
        let x = self.value(input).data();
        let off = self.value(offsets).data();
        let wt = self.value(kernel).data();
        let mut cols = vec![0.0; kk * p];
        let mut dcols = vec![0.0; kk * p];
        let mut dw = vec![0.0; geo.cout * kk];
        let mut dx = vec![0.0; x.len()];
        let mut doff = vec![0.0; off.len()];
        let mut db = vec![0.0; geo.cout];
        for n in 0..geo.n {
            let img = &x[n * geo.c * p..(n + 1) * geo.c * p];
            let gy = &g[n * geo.cout * p..(n + 1) * geo.cout * p];
            let tp = self.deform_taps(&geo, off, n);
            if self.rg(kernel) {
                fill_cols(&geo, img, &tp, &mut cols);
                gemm(geo.cout, p, kk, gy, false, &cols, true, 1.0, &mut dw);
            }
            for (co, row) in gy.chunks(p).enumerate() {
                db[co] += row.iter().sum::<f64>();
            }
            gemm(kk, geo.cout, p, wt, true, gy, false, 0.0, &mut dcols);
            let dimg = &mut dx[n * geo.c * p..(n + 1) * geo.c * p];
            let doff_n = &mut doff[n * 2 * nt * p..(n + 1) * 2 * nt * p];
            for t in 0..nt {
                for pix in 0..p {
                    let tap = &tp[t * p + pix];
                    let (mut gy_acc, mut gx_acc) = (0.0, 0.0);
                    for c in 0..geo.c {
                        let dc = dcols[(c * nt + t) * p + pix];
                        if dc == 0.0 {
                            continue;
                        }
                        let plane = &img[c * p..(c + 1) * p];
                        let dplane = &mut dimg[c * p..(c + 1) * p];
                        for k in 0..tap.len {
                            dplane[tap.idx[k]] += tap.w[k] * dc;
                            gx_acc += plane[tap.idx[k]] * tap.dwx[k] * dc;
                            gy_acc += plane[tap.idx[k]] * tap.dwy[k] * dc;
                        }
                    }
                    doff_n[2 * t * p + pix] += gy_acc;
                    doff_n[(2 * t + 1) * p + pix] += gx_acc;
                }
            }
        }
        self.acc(input, dx, grads);
        self.acc(offsets, doff, grads);
        self.acc(kernel, dw, grads);
        if let Some(b) = bias {
            self.acc(b, db, grads);
        }
    }
}

fn fill_cols(geo: &DeformGeom, img: &[f64], tp: &[Taps], cols: &mut [f64]) {
    let (p, nt) = (geo.p(), geo.taps());
    for c in 0..geo.c {
        let plane = &img[c * p..(c + 1) * p];
        for t in 0..nt {
            let row = &mut cols[(c * nt + t) * p..(c * nt + t + 1) * p];
            for (pix, r) in row.iter_mut().enumerate() {
                let tap = &tp[t * p + pix];
                let mut v = 0.0;
                for k in 0..tap.len {
                    v += plane[tap.idx[k]] * tap.w[k];
                }
                *r = v;
            }
        }
    }
}
