//! Backbone, feature aggregation and the corner and center branches.

mod backbone;
mod branches;
mod config;
mod model;

pub use backbone::{FeaturePyramid, PyramidVars};
pub use branches::{CenterVars, CornerVars, CrossStarDeform, CENTER_PREFIX, HEATMAP_PRIOR_BIAS};
pub use config::ModelConfig;
pub use model::{CenterMaps, CornerMaps, Model, PredictionVars, RawPredictions};
