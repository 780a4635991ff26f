use super::gemm::gemm;
use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub(crate) fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Unfolds one `[C, H, W]` image into `[C*kh*kw, Ho*Wo]` columns.
#[allow(clippy::too_many_arguments)]
/// Output columns `lo..hi` whose stride-1 input column `ox + kj - pad`
/// falls inside `0..w`.
fn valid_span(kj: usize, pad: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kj).min(wo);
    let hi = (w + pad).saturating_sub(kj).clamp(lo, wo);
    (lo, hi)
}

fn im2col(
    img: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [f64],
) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut cols[((ci * kh + ki) * kw + kj) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        let (lo, hi) = valid_span(kj, pad, w, wo);
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        if lo < hi {
                            let s0 = lo + kj - pad;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            *d = if ix >= 0 && (ix as usize) < w {
                                src[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto the image, summing overlaps.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    img: &mut [f64],
) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &cols[((ci * kh + ki) * kw + kj) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        let (lo, hi) = valid_span(kj, pad, w, wo);
                        if lo < hi {
                            let d0 = lo + kj - pad;
                            for (d, v) in dst[d0..d0 + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                *d += v;
                            }
                        }
                        continue;
                    }
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.ho * self.wo
    }
    /// 1x1, stride 1, no padding: the input plane already is the column matrix.
    fn pointwise(&self, stride: usize, pad: usize) -> bool {
        self.kh == 1 && self.kw == 1 && stride == 1 && pad == 0
    }
}

impl Tape {
    /// 2-D cross-correlation with zero padding.
    ///
    /// `kernel` is `[Cout, Cin, kh, kw]`; `bias`, when given, holds `Cout` values.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let g = self.conv_geom(input, kernel, bias, stride, padding)?;
        let x = self.value(input).data();
        let wt = self.value(kernel).data();
        let mut out = Tensor::zeros(Shape::new(g.n, g.cout, g.ho, g.wo));
        let (k, p) = (g.k(), g.p());
        let pointwise = g.pointwise(stride, padding);
        let mut cols = if pointwise { Vec::new() } else { vec![0.0; k * p] };
        for n in 0..g.n {
            let img = &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
            let dst = &mut out.data_mut()[n * g.cout * p..(n + 1) * g.cout * p];
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for (co, row) in dst.chunks_mut(p).enumerate() {
                    row.fill(bv[co]);
                }
            }
            let beta = if bias.is_some() { 1.0 } else { 0.0 };
            if pointwise {
                gemm(g.cout, k, p, wt, false, img, false, beta, dst);
            } else {
                im2col(img, g.cin, g.h, g.w, g.kh, g.kw, stride, padding, g.ho, g.wo, &mut cols);
                gemm(g.cout, k, p, wt, false, &cols, false, beta, dst);
            }
        }
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    fn conv_geom(
        &self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<ConvGeom> {
        let xs = self.shape(input);
        let ks = self.shape(kernel);
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be >= 1"));
        }
        if xs.c() != ks.c() {
            return Err(Error::ShapeMismatch {
                op: "conv2d (input channels vs kernel Cin)",
                lhs: xs,
                rhs: ks,
            });
        }
        if let Some(b) = bias {
            if self.value(b).numel() != ks.n() {
                return Err(Error::ShapeMismatch {
                    op: "conv2d (bias vs kernel Cout)",
                    lhs: self.shape(b),
                    rhs: ks,
                });
            }
        }
        let (Some(ho), Some(wo)) = (
            conv_out(xs.h(), ks.h(), stride, padding),
            conv_out(xs.w(), ks.w(), stride, padding),
        ) else {
            return Err(Error::ShapeMismatch {
                op: "conv2d (kernel larger than padded input)",
                lhs: xs,
                rhs: ks,
            });
        };
        Ok(ConvGeom {
            n: xs.n(),
            cin: xs.c(),
            h: xs.h(),
            w: xs.w(),
            cout: ks.n(),
            kh: ks.h(),
            kw: ks.w(),
            ho,
            wo,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn conv2d_backward(
        &self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let geo = self
            .conv_geom(input, kernel, bias, stride, padding)
            .expect("validated in forward");
        let (k, p) = (geo.k(), geo.p());
        let x = self.value(input).data();
        let wt = self.value(kernel).data();
        let pointwise = geo.pointwise(stride, padding);
        let need_x = self.rg(input);
        let need_w = self.rg(kernel);
        let img_len = geo.cin * geo.h * geo.w;

        if let Some(b) = bias {
            if self.rg(b) {
                let mut db = vec![0.0; geo.cout];
                for n in 0..geo.n {
                    for (co, row) in g[n * geo.cout * p..(n + 1) * geo.cout * p]
                        .chunks(p)
                        .enumerate()
                    {
                        db[co] += row.iter().sum::<f64>();
                    }
                }
                self.acc(b, db, grads);
            }
        }
        let mut dw = if need_w { vec![0.0; geo.cout * k] } else { Vec::new() };
        let mut dx = if need_x { vec![0.0; x.len()] } else { Vec::new() };
        let mut cols = if pointwise { Vec::new() } else { vec![0.0; k * p] };
        let mut dcols = if need_x && !pointwise { vec![0.0; k * p] } else { Vec::new() };
        for n in 0..geo.n {
            let img = &x[n * img_len..(n + 1) * img_len];
            let gy = &g[n * geo.cout * p..(n + 1) * geo.cout * p];
            if need_w {
                if pointwise {
                    gemm(geo.cout, p, k, gy, false, img, true, 1.0, &mut dw);
                } else {
                    im2col(img, geo.cin, geo.h, geo.w, geo.kh, geo.kw, stride, padding, geo.ho, geo.wo, &mut cols);
                    gemm(geo.cout, p, k, gy, false, &cols, true, 1.0, &mut dw);
                }
            }
            if need_x {
                let dimg = &mut dx[n * img_len..(n + 1) * img_len];
                if pointwise {
                    gemm(k, geo.cout, p, wt, true, gy, false, 1.0, dimg);
                } else {
                    gemm(k, geo.cout, p, wt, true, gy, false, 0.0, &mut dcols);
                    col2im(&dcols, geo.cin, geo.h, geo.w, geo.kh, geo.kw, stride, padding, geo.ho, geo.wo, dimg);
                }
            }
        }
        if need_w {
            self.acc(kernel, dw, grads);
        }
        if need_x {
            self.acc(input, dx, grads);
        }
    }

    /// Transposed convolution (no padding). `kernel` is `[Cin, Cout, kh, kw]`;
    /// output spatial size is `stride*(H-1) + kh`, overlapping taps summed.
    pub fn transpose_conv2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::invalid("transpose_conv2d: stride must be >= 1"));
        }
        let xs = self.shape(input);
        let ks = self.shape(kernel);
        if xs.c() != ks.n() {
            return Err(Error::ShapeMismatch {
                op: "transpose_conv2d (input channels vs kernel Cin)",
                lhs: xs,
                rhs: ks,
            });
        }
        let (cin, cout, kh, kw) = (ks.n(), ks.c(), ks.h(), ks.w());
        let (h, w) = (xs.h(), xs.w());
        let ho = stride * h.saturating_sub(1) + kh;
        let wo = stride * w.saturating_sub(1) + kw;
        let kk = cout * kh * kw;
        let p = h * w;
        let x = self.value(input).data();
        let wt = self.value(kernel).data();
        let mut out = Tensor::zeros(Shape::new(xs.n(), cout, ho, wo));
        let mut cols = vec![0.0; kk * p];
        for n in 0..xs.n() {
            let img = &x[n * cin * p..(n + 1) * cin * p];
            // cols[(co,ki,kj), pix] = sum_ci W[ci, (co,ki,kj)] * x[ci, pix]
            gemm(kk, cin, p, wt, true, img, false, 0.0, &mut cols);
            let dst = &mut out.data_mut()[n * cout * ho * wo..(n + 1) * cout * ho * wo];
            col2im(&cols, cout, ho, wo, kh, kw, stride, 0, h, w, dst);
        }
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            out,
            Op::TransposeConv2d {
                input,
                kernel,
                stride,
            },
            rg,
        ))
    }

    pub(super) fn transpose_conv2d_backward(
        &self,
        input: Var,
        kernel: Var,
        stride: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let xs = self.shape(input);
        let ks = self.shape(kernel);
        let (cin, cout, kh, kw) = (ks.n(), ks.c(), ks.h(), ks.w());
        let (h, w) = (xs.h(), xs.w());
        let ho = stride * h.saturating_sub(1) + kh;
        let wo = stride * w.saturating_sub(1) + kw;
        let kk = cout * kh * kw;
        let p = h * w;
        let x = self.value(input).data();
        let wt = self.value(kernel).data();
        let mut dcols = vec![0.0; kk * p];
        let mut dw = vec![0.0; cin * kk];
        let mut dx = vec![0.0; x.len()];
        for n in 0..xs.n() {
            let gy = &g[n * cout * ho * wo..(n + 1) * cout * ho * wo];
            im2col(gy, cout, ho, wo, kh, kw, stride, 0, h, w, &mut dcols);
            let img = &x[n * cin * p..(n + 1) * cin * p];
            // dW[ci, kk] += x[ci, p] * dcols[kk, p]^T
            gemm(cin, p, kk, img, false, &dcols, true, 1.0, &mut dw);
            // dx[ci, p] = W[ci, kk] * dcols[kk, p]
            gemm(cin, kk, p, wt, false, &dcols, false, 0.0, &mut dx[n * cin * p..(n + 1) * cin * p]);
        }
        self.acc(kernel, dw, grads);
        self.acc(input, dx, grads);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_val(x: Tensor, k: Tensor, stride: usize, pad: usize) -> Tensor {
        let mut t = Tape::new();
        let xv = t.constant(x);
        let kv = t.constant(k);
        let y = t.conv2d(xv, kv, None, stride, pad).unwrap();
        t.value(y).clone()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = rand::rng();
        let x = Tensor::uniform(Shape::new(2, 1, 5, 4), -1.0, 1.0, &mut rng);
        let mut k = Tensor::zeros(Shape::new(1, 1, 3, 3));
        k.set(0, 0, 1, 1, 1.0);
        assert_eq!(conv_val(x.clone(), k, 1, 1), x);
    }

    #[test]
    fn direct_dot_product() {
        let x = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let k = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let y = conv_val(x, k, 1, 0);
        assert_eq!(y.rows(), vec![vec![10.0]]);
    }

    #[test]
    fn pointwise_scaling() {
        let x = Tensor::from_rows(&[&[1.0, -2.0], &[3.5, 4.0]]);
        let k = Tensor::full(Shape::new(1, 1, 1, 1), 2.0);
        assert_eq!(conv_val(x.clone(), k, 1, 0), x.map(|v| 2.0 * v));
    }

    #[test]
    fn output_dims_follow_stride_and_padding() {
        let x = Tensor::zeros(Shape::new(1, 2, 9, 8));
        let k = Tensor::zeros(Shape::new(3, 2, 3, 3));
        let y = conv_val(x, k, 2, 1);
        assert_eq!(y.shape(), Shape::new(1, 3, 5, 4));
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(Shape::new(1, 2, 4, 4)));
        let k = t.constant(Tensor::zeros(Shape::new(1, 3, 3, 3)));
        let msg = t.conv2d(x, k, None, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn transpose_single_tap_expansion() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[&[2.0]]));
        let k = t.constant(Tensor::full(Shape::new(1, 1, 2, 2), 1.0));
        let y = t.transpose_conv2d(x, k, 2).unwrap();
        assert_eq!(t.value(y).rows(), vec![vec![2.0, 2.0], vec![2.0, 2.0]]);
        let z = t.constant(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        let y0 = t.transpose_conv2d(x, z, 2).unwrap();
        assert!(t.value(y0).data().iter().all(|&v| v == 0.0));
        assert!(t.transpose_conv2d(x, k, 0).is_err());
    }

    #[test]
    fn transpose_output_dims() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(Shape::new(2, 4, 3, 5)));
        let k = t.constant(Tensor::zeros(Shape::new(4, 2, 3, 3)));
        let y = t.transpose_conv2d(x, k, 2).unwrap();
        assert_eq!(t.shape(y), Shape::new(2, 2, 7, 11));
    }
}
