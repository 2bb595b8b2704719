//! Representation towers and their parameters.

mod attention;
mod checkpoint;
mod params;
mod tower;

pub use attention::{softmax_rows, AttnCache, AttnSpec, AttnWeights};
pub use checkpoint::Checkpoint;
pub use params::{ModelConfig, ModelParams};
pub use tower::{cohesion_score, encode, fuse_preference, preference_score, window, SeqReps};
