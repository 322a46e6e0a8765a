//! Fisheye distortion toolkit: radial camera models, analytic appearance
//! flows, flow-based rectification, the training loss stack, image-quality
//! metrics and a miniature two-branch correction network trained with manual
//! backpropagation.

pub mod camera;
pub mod error;
pub mod flow;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod pattern;
pub mod synth;
pub mod warp;

pub use crate::camera::{ModelKind, ParamRanges, RadialModel};
pub use crate::error::{Error, Result};
pub use crate::flow::{FlowField, FlowPyramid};
pub use crate::image::{FeatureTensor, Image, Mask};
pub use crate::warp::Border;
