//! Convolution, batch-norm and composite blocks over a [`ParamStore`].

use crate::autograd::{BatchStats, Tape, Var};
use crate::error::Result;
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: the tape, the parameters it reads, and batch-norm
/// statistics collected in train mode (applied afterwards by the model).
pub struct Ctx<'s> {
    pub tape: Tape,
    pub store: &'s ParamStore,
    pub mode: Mode,
    pub bn_updates: Vec<(BufferId, BufferId, BatchStats)>,
}

impl<'s> Ctx<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode) -> Self {
        Ctx {
            tape: Tape::new(),
            store,
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn with_tape(store: &'s ParamStore, mode: Mode, tape: Tape) -> Self {
        Ctx {
            tape,
            store,
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.store.bind(&mut self.tape, id)
    }
}

/// Writes collected batch statistics into the running buffers.
pub fn apply_bn_updates(store: &mut ParamStore, updates: Vec<(BufferId, BufferId, BatchStats)>) {
    for (mean_id, var_id, stats) in updates {
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        for (r, m) in store.buffer_mut(mean_id).data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in store.buffer_mut(var_id).data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    /// He-normal kernel `std = sqrt(2 / (cin*k*k))`; bias (if any) zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let weight = store.add_normal(&format!("{name}.weight"), Shape::new(cout, cin, k, k), std)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, cout, 1, 1)))?)
        } else {
            None
        };
        Ok(Conv {
            weight,
            bias,
            stride,
            padding: k / 2,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        let s = Shape::new(1, c, 1, 1);
        Ok(BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(s, 1.0))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(s))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(s))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(s, 1.0))?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.tape.batch_norm_train(x, g, b, BN_EPS)?;
                ctx.bn_updates.push((self.running_mean, self.running_var, stats));
                Ok(y)
            }
            Mode::Eval => {
                let rm = ctx.store.buffer(self.running_mean).data();
                let rv = ctx.store.buffer(self.running_var).data();
                ctx.tape.batch_norm_eval(x, g, b, rm, rv, BN_EPS)
            }
        }
    }
}

/// Conv (no bias) then batch norm, optionally followed by ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        relu: bool,
    ) -> Result<Self> {
        Ok(ConvBn {
            conv: Conv::new(store, &format!("{name}.conv"), cin, cout, k, stride, false)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout)?,
            relu,
        })
    }

    /// Conv-BN-ReLU.
    pub fn cbr(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Self::new(store, name, cin, cout, k, 1, true)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(if self.relu { ctx.tape.relu(y) } else { y })
    }
}

#[derive(Clone, Debug)]
pub struct TransposeConv {
    pub weight: ParamId,
    pub stride: usize,
}

impl TransposeConv {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        Ok(TransposeConv {
            weight: store.add_normal(&format!("{name}.weight"), Shape::new(cin, cout, k, k), std)?,
            stride,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        ctx.tape.transpose_conv2d(x, w, self.stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::new(0);
        let bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
        let updates = {
            let mut ctx = Ctx::new(&store, Mode::Train);
            let x = ctx.tape.constant(Tensor::from_rows(&[&[1.0, 3.0]]));
            bn.forward(&mut ctx, x).unwrap();
            ctx.bn_updates
        };
        apply_bn_updates(&mut store, updates);
        // mean 2, unbiased variance 2
        assert!((store.buffer(bn.running_mean).data()[0] - 0.2).abs() < 1e-12);
        assert!((store.buffer(bn.running_var).data()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }
}
