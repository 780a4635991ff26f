//! Anchor-free corner-keypoint object detection on a small, self-contained
//! reverse-mode tensor engine.
//!
//! The detector predicts top-left and bottom-right corner heatmaps, sub-cell
//! offsets and centripetal shifts, pairs corners whose shifts agree on a
//! common center, and can be trained with an auxiliary center-attention head
//! that is pruned away before deployment.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod network;
pub mod optim;
pub mod params;
pub mod pooling;
pub mod targets;
pub mod tensor;
pub mod workflow;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
