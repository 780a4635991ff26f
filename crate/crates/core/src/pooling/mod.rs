//! Corner and center pooling modules.
//!
//! Each pooling family member is a [`PoolingStrategy`]: it knows how many
//! Conv-BN-ReLU branches it consumes, how it composes directional scans over
//! those branches, and how to run the same composition as a fused,
//! untracked core for benchmarking. Strategies are looked up by name through
//! the [`PoolingRegistry`]; [`PoolingModule`] wraps any of them with the
//! branch blocks, the final 3x3 Conv-BN and the 1x1 Conv-BN skip.

pub mod directional;
mod strategies;

use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

pub use directional::{directional_pool, naive_pool_oracle, Direction};
pub use strategies::{CascadeCornerPool, CenterPool, CornerPool, VerticalHorizontalCornerPool};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{ConvBn, Ctx};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CornerType {
    TopLeft,
    BottomRight,
}

impl CornerType {
    /// `(vertical, horizontal)` scan directions feeding this corner.
    pub fn directions(self) -> (Direction, Direction) {
        match self {
            CornerType::TopLeft => (Direction::Top, Direction::Left),
            CornerType::BottomRight => (Direction::Bottom, Direction::Right),
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            CornerType::TopLeft => "tl",
            CornerType::BottomRight => "br",
        }
    }
}

/// Corner pooling variant selectable in a model config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingVariant {
    Cp,
    Ccp,
    Vhcp,
}

impl PoolingVariant {
    pub const ALL: [PoolingVariant; 3] = [PoolingVariant::Cp, PoolingVariant::Ccp, PoolingVariant::Vhcp];

    pub fn name(self) -> &'static str {
        match self {
            PoolingVariant::Cp => "cp",
            PoolingVariant::Ccp => "ccp",
            PoolingVariant::Vhcp => "vhcp",
        }
    }

    pub fn strategy(self) -> Arc<dyn PoolingStrategy> {
        registry().get(self.name()).expect("built-in strategies are registered")
    }
}

impl std::str::FromStr for PoolingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PoolingVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown pooling variant {s:?} (cp, ccp, vhcp)")))
    }
}

pub trait PoolingStrategy: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Directional scans per module invocation.
    fn scans(&self) -> usize;

    /// Conv-BN-ReLU branches the core consumes.
    fn branches(&self) -> usize;

    /// Records the pooling core over precomputed branch features.
    fn compose(&self, tape: &mut Tape, branches: &[Var], corner: CornerType) -> Result<Var>;

    /// The same core with every branch equal to `f`, computed with fused
    /// scans and no gradient tracking.
    fn core(&self, f: &Tensor, corner: CornerType) -> Tensor;
}

#[derive(Debug, Default)]
pub struct PoolingRegistry {
    entries: Vec<Arc<dyn PoolingStrategy>>,
}

impl PoolingRegistry {
    pub fn builtin() -> Self {
        let mut r = PoolingRegistry::default();
        r.register(Arc::new(CornerPool));
        r.register(Arc::new(CascadeCornerPool));
        r.register(Arc::new(VerticalHorizontalCornerPool));
        r.register(Arc::new(CenterPool));
        r
    }

    /// Adds a strategy, replacing any previous one with the same name.
    pub fn register(&mut self, s: Arc<dyn PoolingStrategy>) {
        self.entries.retain(|e| e.name() != s.name());
        self.entries.push(s);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn PoolingStrategy>> {
        self.entries
            .iter()
            .find(|e| e.name().eq_ignore_ascii_case(name))
            .cloned()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }
}

pub fn registry() -> &'static PoolingRegistry {
    static REGISTRY: OnceLock<PoolingRegistry> = OnceLock::new();
    REGISTRY.get_or_init(PoolingRegistry::builtin)
}

/// `ReLU(ConvBn3x3(core(branches(F))) + ConvBn1x1(F))`.
#[derive(Clone, Debug)]
pub struct PoolingModule {
    pub strategy: Arc<dyn PoolingStrategy>,
    pub branches: Vec<ConvBn>,
    pub merge: ConvBn,
    pub skip: ConvBn,
}

impl PoolingModule {
    pub fn new(store: &mut ParamStore, name: &str, strategy: Arc<dyn PoolingStrategy>, channels: usize) -> Result<Self> {
        let branches = (0..strategy.branches())
            .map(|i| ConvBn::cbr(store, &format!("{name}.branch{i}"), channels, channels, 3))
            .collect::<Result<Vec<_>>>()?;
        Ok(PoolingModule {
            strategy,
            branches,
            merge: ConvBn::new(store, &format!("{name}.merge"), channels, channels, 3, 1, false)?,
            skip: ConvBn::new(store, &format!("{name}.skip"), channels, channels, 1, 1, false)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, corner: CornerType) -> Result<Var> {
        let feats = self
            .branches
            .iter()
            .map(|b| b.forward(ctx, x))
            .collect::<Result<Vec<_>>>()?;
        let core = self.strategy.compose(&mut ctx.tape, &feats, corner)?;
        let merged = self.merge.forward(ctx, core)?;
        let skip = self.skip.forward(ctx, x)?;
        let sum = ctx.tape.add(merged, skip)?;
        Ok(ctx.tape.relu(sum))
    }

    /// Identity-branch mode: branches replaced by identity, merge and skip
    /// disabled, leaving only the pooling core.
    pub fn forward_identity(&self, tape: &mut Tape, x: Var, corner: CornerType) -> Result<Var> {
        let feats = vec![x; self.strategy.branches()];
        self.strategy.compose(tape, &feats, corner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_builtins_by_name() {
        let r = registry();
        for name in ["cp", "ccp", "vhcp", "center"] {
            assert_eq!(r.get(name).unwrap().name(), name);
        }
        assert!(r.get("hourglass").is_none());
        assert_eq!(PoolingVariant::Vhcp.strategy().scans(), 2);
        assert!("VHCP".parse::<PoolingVariant>().is_ok());
        assert!("xcp".parse::<PoolingVariant>().is_err());
    }

    #[test]
    fn registering_same_name_replaces() {
        let mut r = PoolingRegistry::builtin();
        let before = r.names().len();
        r.register(Arc::new(CornerPool));
        assert_eq!(r.names().len(), before);
    }
}
