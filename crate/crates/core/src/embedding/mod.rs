//! Per-frame-pair joint embedding and truncated frame distance.

mod attention;
mod distance;
mod model;

pub use attention::{attention_forward, AttentionOutput};
pub use distance::{
    joint_log_distance, truncated_distance, JointDistance, JointWeights, Truncation, TruncationPolicy,
};
pub use model::{embed_frame_pair, EmbedConfig, EmbedForward, EmbedModel, JointLayout};
