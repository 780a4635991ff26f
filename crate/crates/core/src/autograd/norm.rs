use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel batch statistics from a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Population (biased) variance.
    pub var: Vec<f64>,
    /// Elements reduced per channel.
    pub count: usize,
}

impl Tape {
    fn check_bn(&self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<usize> {
        let c = self.shape(input).c();
        for p in [gamma, beta] {
            if self.value(p).numel() != c {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm (channels vs affine params)",
                    lhs: self.shape(input),
                    rhs: self.shape(p),
                });
            }
        }
        if eps <= 0.0 {
            return Err(Error::invalid("batch_norm: eps must be positive"));
        }
        Ok(c)
    }

    /// Training-mode batch norm: normalizes each channel by its batch mean and
    /// population variance, then applies `gamma * xhat + beta`.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        self.batch_norm_train_inner(input, gamma, beta, eps, true)
    }

    pub(crate) fn batch_norm_train_inner(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        check_eps: bool,
    ) -> Result<(Var, BatchStats)> {
        let c = if check_eps {
            self.check_bn(input, gamma, beta, eps)?
        } else {
            self.check_bn(input, gamma, beta, 1.0)?
        };
        let s = self.shape(input);
        let (n, p) = (s.n(), s.plane());
        let m = (n * p) as f64;
        let x = self.value(input).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (ci, mu) in mean.iter_mut().enumerate() {
            let mut acc = 0.0;
            for b in 0..n {
                acc += x[(b * c + ci) * p..(b * c + ci + 1) * p].iter().sum::<f64>();
            }
            *mu = acc / m;
        }
        for ci in 0..c {
            let mut acc = 0.0;
            for b in 0..n {
                acc += x[(b * c + ci) * p..(b * c + ci + 1) * p]
                    .iter()
                    .map(|v| (v - mean[ci]).powi(2))
                    .sum::<f64>();
            }
            var[ci] = acc / m;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = Tensor::zeros(s);
        for b in 0..n {
            for ci in 0..c {
                let r = (b * c + ci) * p..(b * c + ci + 1) * p;
                for ((xh, o), &xv) in xhat[r.clone()]
                    .iter_mut()
                    .zip(&mut out.data_mut()[r.clone()])
                    .zip(&x[r])
                {
                    *xh = (xv - mean[ci]) * inv_std[ci];
                    *o = gv[ci] * *xh + bv[ci];
                }
            }
        }
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        Ok((
            v,
            BatchStats {
                mean,
                var,
                count: n * p,
            },
        ))
    }

    /// Eval-mode batch norm with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let c = self.check_bn(input, gamma, beta, eps)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::invalid("batch_norm: running statistics length mismatch"));
        }
        let s = self.shape(input);
        let p = s.plane();
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = self.value(input).clone();
        for (k, chunk) in out.data_mut().chunks_mut(p.max(1)).enumerate() {
            let ci = k % c;
            let (a, b) = (gv[ci] * inv_std[ci], bv[ci] - gv[ci] * inv_std[ci] * running_mean[ci]);
            chunk.iter_mut().for_each(|v| *v = a * *v + b);
        }
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::ChannelAffine {
                input,
                gamma,
                beta,
                mean: running_mean.to_vec(),
                inv_std,
            },
            rg,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn batch_norm_backward(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: &[f64],
        inv_std: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let s = self.shape(input);
        let (n, c, p) = (s.n(), s.c(), s.plane());
        let m = (n * p) as f64;
        let gv = self.value(gamma).data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for b in 0..n {
            for ci in 0..c {
                let r = (b * c + ci) * p..(b * c + ci + 1) * p;
                for (&gy, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                    dgamma[ci] += gy * xh;
                    dbeta[ci] += gy;
                }
            }
        }
        if self.rg(input) {
            let mut dx = vec![0.0; g.len()];
            for b in 0..n {
                for ci in 0..c {
                    let r = (b * c + ci) * p..(b * c + ci + 1) * p;
                    // dx = gamma*inv_std/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
                    let k = gv[ci] * inv_std[ci] / m;
                    for ((d, &gy), &xh) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                        *d = k * (m * gy - dbeta[ci] - xh * dgamma[ci]);
                    }
                }
            }
            self.acc(input, dx, grads);
        }
        self.acc(gamma, dgamma, grads);
        self.acc(beta, dbeta, grads);
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn channel_affine_backward(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let s = self.shape(input);
        let (c, p) = (s.c(), s.plane());
        let x = self.value(input).data();
        let gv = self.value(gamma).data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut dx = vec![0.0; g.len()];
        for (k, (gc, xc)) in g.chunks(p.max(1)).zip(x.chunks(p.max(1))).enumerate() {
            let ci = k % c;
            let dxc = &mut dx[k * p..(k + 1) * p];
            for ((d, &gy), &xv) in dxc.iter_mut().zip(gc).zip(xc) {
                dgamma[ci] += gy * (xv - mean[ci]) * inv_std[ci];
                dbeta[ci] += gy;
                *d = gy * gv[ci] * inv_std[ci];
            }
        }
        self.acc(input, dx, grads);
        self.acc(gamma, dgamma, grads);
        self.acc(beta, dbeta, grads);
    }
}
