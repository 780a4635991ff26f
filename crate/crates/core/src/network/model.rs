use crate::autograd::{BatchStats, Var};
use crate::error::Result;
use crate::layers::{apply_bn_updates, Ctx, Mode};
use crate::params::{BufferId, ParamStore};
use crate::pooling::CornerType;
use crate::tensor::Tensor;

use super::backbone::{Aggregator, Backbone, FeaturePyramid, PyramidVars};
use super::branches::{CenterBranch, CenterVars, CornerBranch, CornerVars, CENTER_PREFIX};
use super::ModelConfig;

#[derive(Clone, Copy, Debug)]
pub struct PredictionVars {
    pub tl: CornerVars,
    pub br: CornerVars,
    pub center: Option<CenterVars>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CornerMaps {
    /// `[N, C, h, w]`, each value in `(0, 1)`.
    pub heatmap: Tensor,
    pub offset: Tensor,
    /// Log half-extents in cells, `(x, y)` channel order.
    pub centripetal: Tensor,
    pub guiding: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterMaps {
    pub heatmap: Tensor,
    pub offset: Tensor,
    pub bc: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawPredictions {
    pub tl: CornerMaps,
    pub br: CornerMaps,
    pub center: Option<CenterMaps>,
    pub stride: usize,
}

impl RawPredictions {
    pub fn from_vars(ctx: &Ctx, v: &PredictionVars, stride: usize) -> Self {
        let t = |x: Var| ctx.tape.value(x).clone();
        let corner = |c: &CornerVars| CornerMaps {
            heatmap: t(c.heatmap),
            offset: t(c.offset),
            centripetal: t(c.centripetal),
            guiding: t(c.guiding),
        };
        RawPredictions {
            tl: corner(&v.tl),
            br: corner(&v.br),
            center: v.center.map(|c| CenterMaps {
                heatmap: t(c.heatmap),
                offset: t(c.offset),
                bc: t(c.bc),
            }),
            stride,
        }
    }

    pub fn corner(&self, corner: CornerType) -> &CornerMaps {
        match corner {
            CornerType::TopLeft => &self.tl,
            CornerType::BottomRight => &self.br,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.tl.heatmap.shape().n()
    }

    /// Predictions of one batch element as a batch of one.
    pub fn item(&self, n: usize) -> RawPredictions {
        let corner = |c: &CornerMaps| CornerMaps {
            heatmap: c.heatmap.batch_item(n),
            offset: c.offset.batch_item(n),
            centripetal: c.centripetal.batch_item(n),
            guiding: c.guiding.batch_item(n),
        };
        RawPredictions {
            tl: corner(&self.tl),
            br: corner(&self.br),
            center: self.center.as_ref().map(|c| CenterMaps {
                heatmap: c.heatmap.batch_item(n),
                offset: c.offset.batch_item(n),
                bc: c.bc.batch_item(n),
            }),
            stride: self.stride,
        }
    }
}

/// Backbone, aggregation, two corner branches and an optional center branch,
/// with all parameters in one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    backbone: Backbone,
    aggregator: Aggregator,
    tl: CornerBranch,
    br: CornerBranch,
    center: Option<CenterBranch>,
}

impl Model {
    /// Each parameter's initial value depends only on `seed` and its name.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let backbone = Backbone::new(&mut store, &config)?;
        let aggregator = Aggregator::new(&mut store, &config)?;
        let tl = CornerBranch::new(&mut store, &config, CornerType::TopLeft)?;
        let br = CornerBranch::new(&mut store, &config, CornerType::BottomRight)?;
        let center = if config.with_bcca {
            Some(CenterBranch::new(&mut store, &config)?)
        } else {
            None
        };
        Ok(Model {
            config,
            store,
            backbone,
            aggregator,
            tl,
            br,
            center,
        })
    }

    pub fn bcca_present(&self) -> bool {
        self.center.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn stride(&self) -> usize {
        self.config.stride()
    }

    pub fn extract_features(&self, ctx: &mut Ctx, image: Var) -> Result<PyramidVars> {
        self.backbone.forward(ctx, image)
    }

    pub fn aggregate_features(&self, ctx: &mut Ctx, pyr: PyramidVars) -> Result<Var> {
        self.aggregator.forward(ctx, pyr)
    }

    /// Full forward pass. The center branch runs only in train mode.
    pub fn forward(&self, ctx: &mut Ctx, image: Var) -> Result<PredictionVars> {
        let pyr = self.extract_features(ctx, image)?;
        let f_out = self.aggregate_features(ctx, pyr)?;
        let tl = self.tl.forward(ctx, f_out)?;
        let br = self.br.forward(ctx, f_out)?;
        let center = match (&self.center, ctx.mode) {
            (Some(c), Mode::Train) => Some(c.forward(ctx, f_out)?),
            _ => None,
        };
        Ok(PredictionVars { tl, br, center })
    }

    /// Eval-mode forward on a batch.
    pub fn predict(&self, image: &Tensor) -> Result<RawPredictions> {
        let mut ctx = Ctx::new(&self.store, Mode::Eval);
        let x = ctx.tape.constant(image.clone());
        let v = self.forward(&mut ctx, x)?;
        Ok(RawPredictions::from_vars(&ctx, &v, self.stride()))
    }

    /// Eval-mode feature pyramid of a batch.
    pub fn pyramid(&self, image: &Tensor) -> Result<FeaturePyramid> {
        let mut ctx = Ctx::new(&self.store, Mode::Eval);
        let x = ctx.tape.constant(image.clone());
        let p = self.extract_features(&mut ctx, x)?;
        Ok(p.values(&ctx))
    }

    /// Folds batch statistics from a train-mode forward into running buffers.
    pub fn apply_bn_updates(&mut self, updates: Vec<(BufferId, BufferId, BatchStats)>) {
        apply_bn_updates(&mut self.store, updates);
    }

    /// Drops the center branch and its parameters. Returns `false` (and
    /// logs a warning) when there was nothing to prune.
    pub fn prune_bcca(&mut self) -> bool {
        if self.center.take().is_none() {
            log::warn!("prune_bcca: model has no center branch; nothing to do");
            return false;
        }
        self.store.remove_prefix(CENTER_PREFIX);
        self.config.with_bcca = false;
        true
    }
}
