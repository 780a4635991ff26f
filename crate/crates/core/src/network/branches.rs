use crate::autograd::Var;
use crate::error::Result;
use crate::layers::{Conv, ConvBn, Ctx};
use crate::params::{ParamId, ParamStore};
use crate::pooling::{registry, CornerType, PoolingModule};
use crate::tensor::{Shape, Tensor};

use super::ModelConfig;

/// Initial heatmap logit, `-ln((1 - 0.1) / 0.1)`, so early predictions sit
/// near 0.1 instead of 0.5.
pub const HEATMAP_PRIOR_BIAS: f64 = -2.197_224_577_336_219_6;

/// Std of the final 1x1 conv of every head.
const HEAD_OUT_STD: f64 = 0.01;

/// 3x3 conv + ReLU + 1x1 conv.
#[derive(Clone, Debug)]
pub struct Head {
    hidden: Conv,
    out: Conv,
}

impl Head {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let hidden = Conv::new(store, &format!("{name}.hidden"), cin, cin, 3, 1, true)?;
        let out = Conv::new(store, &format!("{name}.out"), cin, cout, 1, 1, true)?;
        let w = &mut store.get_mut(out.weight).value;
        let he = (2.0 / cin as f64).sqrt();
        *w = w.map(|v| v * HEAD_OUT_STD / he);
        Ok(Head { hidden, out })
    }

    fn heatmap(store: &mut ParamStore, name: &str, cin: usize, classes: usize) -> Result<Self> {
        let h = Self::new(store, name, cin, classes)?;
        let b = h.out.bias.expect("head convs carry a bias");
        store.get_mut(b).value.data_mut().fill(HEATMAP_PRIOR_BIAS);
        Ok(h)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.hidden.forward(ctx, x)?;
        let y = ctx.tape.relu(y);
        self.out.forward(ctx, y)
    }
}

/// Deformable conv whose offset field is a 3x3 conv of the guiding shift.
#[derive(Clone, Debug)]
pub struct CrossStarDeform {
    pub offset_conv: Conv,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl CrossStarDeform {
    /// The offset conv starts at zero so training begins from a plain conv.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, k: usize) -> Result<Self> {
        let offset_conv = Conv::new(store, &format!("{name}.offset"), 2, 2 * k * k, 3, 1, true)?;
        store.get_mut(offset_conv.weight).value.data_mut().fill(0.0);
        let std = (2.0 / (channels * k * k) as f64).sqrt();
        Ok(CrossStarDeform {
            offset_conv,
            weight: store.add_normal(&format!("{name}.weight"), Shape::new(channels, channels, k, k), std)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, channels, 1, 1)))?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, features: Var, guiding: Var) -> Result<Var> {
        let offsets = self.offset_conv.forward(ctx, guiding)?;
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.deform_conv2d(features, offsets, w, Some(b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CornerVars {
    pub heatmap: Var,
    pub offset: Var,
    pub centripetal: Var,
    pub guiding: Var,
}

#[derive(Clone, Debug)]
pub struct CornerBranch {
    pub corner: CornerType,
    pub pool: PoolingModule,
    guide_cbr: ConvBn,
    guide_out: Conv,
    deform: CrossStarDeform,
    heatmap: Head,
    offset: Head,
    centripetal: Head,
}

impl CornerBranch {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, corner: CornerType) -> Result<Self> {
        let hc = cfg.head_channels;
        let p = corner.short();
        Ok(CornerBranch {
            corner,
            pool: PoolingModule::new(store, &format!("{p}.pool"), cfg.pooling_variant.strategy(), hc)?,
            guide_cbr: ConvBn::cbr(store, &format!("{p}.guiding.cbr"), hc, hc, 3)?,
            guide_out: Conv::new(store, &format!("{p}.guiding.out"), hc, 2, 1, 1, true)?,
            deform: CrossStarDeform::new(store, &format!("{p}.deform"), hc, cfg.deform_kernel)?,
            heatmap: Head::heatmap(store, &format!("{p}.heatmap"), hc, cfg.num_classes)?,
            offset: Head::new(store, &format!("{p}.offset"), hc, 2)?,
            centripetal: Head::new(store, &format!("{p}.centripetal"), hc, 2)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, f_out: Var) -> Result<CornerVars> {
        let pooled = self.pool.forward(ctx, f_out, self.corner)?;
        let g = self.guide_cbr.forward(ctx, pooled)?;
        let guiding = self.guide_out.forward(ctx, g)?;
        let d = self.deform.forward(ctx, pooled, guiding)?;
        let d = ctx.tape.relu(d);
        let logits = self.heatmap.forward(ctx, d)?;
        Ok(CornerVars {
            heatmap: ctx.tape.sigmoid(logits),
            offset: self.offset.forward(ctx, d)?,
            centripetal: self.centripetal.forward(ctx, d)?,
            guiding,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CenterVars {
    pub heatmap: Var,
    pub offset: Var,
    pub bc: Var,
}

/// Training-only center-attention branch; every parameter lives under
/// [`CENTER_PREFIX`].
#[derive(Clone, Debug)]
pub struct CenterBranch {
    pool: PoolingModule,
    heatmap: Head,
    offset: Head,
    bc: Head,
}

pub const CENTER_PREFIX: &str = "center.";

impl CenterBranch {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let hc = cfg.head_channels;
        let strategy = registry().get("center").expect("center pooling is built in");
        Ok(CenterBranch {
            pool: PoolingModule::new(store, "center.pool", strategy, hc)?,
            heatmap: Head::heatmap(store, "center.heatmap", hc, cfg.num_classes)?,
            offset: Head::new(store, "center.offset", hc, 2)?,
            bc: Head::new(store, "center.bc", hc, 2)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, f_out: Var) -> Result<CenterVars> {
        let pooled = self.pool.forward(ctx, f_out, CornerType::TopLeft)?;
        let logits = self.heatmap.forward(ctx, pooled)?;
        Ok(CenterVars {
            heatmap: ctx.tape.sigmoid(logits),
            offset: self.offset.forward(ctx, pooled)?,
            bc: self.bc.forward(ctx, pooled)?,
        })
    }
}
