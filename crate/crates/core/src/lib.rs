//! Temporally-aggregating spatial encoder-decoder network for video
//! saliency prediction, built on a small self-contained tensor engine.

pub mod archive;
pub mod data;
pub mod error;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Parameter, ParamGroup, Tensor};
