use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::layers::{ConvBn, Ctx, TransposeConv};
use crate::params::ParamStore;
use crate::tensor::Tensor;

use super::ModelConfig;

/// `F4`, `F5`, `F6` at strides 4, 8 and 16.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub f4: Tensor,
    pub f5: Tensor,
    pub f6: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct PyramidVars {
    pub f4: Var,
    pub f5: Var,
    pub f6: Var,
}

impl PyramidVars {
    pub fn values(&self, ctx: &Ctx) -> FeaturePyramid {
        FeaturePyramid {
            f4: ctx.tape.value(self.f4).clone(),
            f5: ctx.tape.value(self.f5).clone(),
            f6: ctx.tape.value(self.f6).clone(),
        }
    }
}

/// `ReLU(BN(conv3x3(x)) + skip(x))`, with a strided 1x1 projection as skip
/// when the shape changes.
#[derive(Clone, Debug)]
struct ResidualUnit {
    main: ConvBn,
    project: Option<ConvBn>,
}

impl ResidualUnit {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        let project = if stride != 1 || cin != cout {
            Some(ConvBn::new(store, &format!("{name}.project"), cin, cout, 1, stride, false)?)
        } else {
            None
        };
        Ok(ResidualUnit {
            main: ConvBn::new(store, &format!("{name}.main"), cin, cout, 3, stride, false)?,
            project,
        })
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.main.forward(ctx, x)?;
        let skip = match &self.project {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        let s = ctx.tape.add(y, skip)?;
        Ok(ctx.tape.relu(s))
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    stem: ConvBn,
    stages: Vec<[ResidualUnit; 2]>,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let b = cfg.channel_base;
        let widths = [b / 2, b, 2 * b, 4 * b];
        let stem = ConvBn::new(store, "backbone.stem", 3, b / 2, 7, 1, true)?;
        let mut stages = Vec::new();
        let mut cin = b / 2;
        for (i, &w) in widths.iter().enumerate() {
            let name = format!("backbone.stage{}", i + 1);
            stages.push([
                ResidualUnit::new(store, &format!("{name}.unit1"), cin, w, 2)?,
                ResidualUnit::new(store, &format!("{name}.unit2"), w, w, 1)?,
            ]);
            cin = w;
        }
        Ok(Backbone { stem, stages })
    }

    pub fn forward(&self, ctx: &mut Ctx, image: Var) -> Result<PyramidVars> {
        let s = ctx.tape.shape(image);
        if s.c() != 3 {
            return Err(Error::invalid(format!("expected a 3-channel image, got {s}")));
        }
        if s.h() % 16 != 0 || s.w() % 16 != 0 || s.h() == 0 || s.w() == 0 {
            return Err(Error::invalid(format!("image size {}x{} is not divisible by 16", s.h(), s.w())));
        }
        let mut x = self.stem.forward(ctx, image)?;
        let mut outs = Vec::with_capacity(3);
        for (i, stage) in self.stages.iter().enumerate() {
            for unit in stage {
                x = unit.forward(ctx, x)?;
            }
            if i >= 1 {
                outs.push(x);
            }
        }
        Ok(PyramidVars {
            f4: outs[0],
            f5: outs[1],
            f6: outs[2],
        })
    }
}

/// Upsampling transform: Conv-BN-ReLU then a 2x2 stride-2 transpose conv
/// halving the channels.
#[derive(Clone, Debug)]
struct Up {
    cbr: ConvBn,
    tconv: TransposeConv,
}

impl Up {
    fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(Up {
            cbr: ConvBn::cbr(store, &format!("{name}.cbr"), c, c, 3)?,
            tconv: TransposeConv::new(store, &format!("{name}.tconv"), c, c / 2, 2, 2)?,
        })
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.cbr.forward(ctx, x)?;
        self.tconv.forward(ctx, y)
    }
}

/// Concat along channels then a 1x1 Conv-BN-ReLU.
#[derive(Clone, Debug)]
struct Fuse(ConvBn);

impl Fuse {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Fuse(ConvBn::cbr(store, name, cin, cout, 1)?))
    }

    fn forward(&self, ctx: &mut Ctx, a: Var, b: Var) -> Result<Var> {
        let cat = ctx.tape.concat(a, b)?;
        self.0.forward(ctx, cat)
    }
}

/// `F_out = c{ c[T(F5), F4], T[c(T(F6), F5)] }` at stride 4.
#[derive(Clone, Debug)]
pub struct Aggregator {
    up5: Up,
    fuse45: Fuse,
    up6: Up,
    fuse56: Fuse,
    up56: Up,
    fuse_out: Fuse,
}

impl Aggregator {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let (b, hc) = (cfg.channel_base, cfg.head_channels);
        Ok(Aggregator {
            up5: Up::new(store, "aggregate.up5", 2 * b)?,
            fuse45: Fuse::new(store, "aggregate.fuse45", 2 * b, hc)?,
            up6: Up::new(store, "aggregate.up6", 4 * b)?,
            fuse56: Fuse::new(store, "aggregate.fuse56", 4 * b, hc)?,
            up56: Up::new(store, "aggregate.up56", hc)?,
            fuse_out: Fuse::new(store, "aggregate.fuse_out", hc + hc / 2, hc)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, p: PyramidVars) -> Result<Var> {
        let t5 = self.up5.forward(ctx, p.f5)?;
        let low = self.fuse45.forward(ctx, t5, p.f4)?;
        let t6 = self.up6.forward(ctx, p.f6)?;
        let mid = self.fuse56.forward(ctx, t6, p.f5)?;
        let high = self.up56.forward(ctx, mid)?;
        self.fuse_out.forward(ctx, low, high)
    }
}
