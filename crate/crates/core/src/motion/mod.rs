//! Pose-sequence data model, text formats and reference storage.

mod format;
mod sample;
mod sequence;

pub use crate::rotmath::topological_order;
pub use format::{
    load_sequence, parse_sequence, read_sequence, save_sequence, serialize_sequence,
    write_sequence, SEQUENCE_FORMAT_VERSION,
};
pub use sample::{
    load_samples, Checkpoint, ExpertScores, ReferenceLibrary, ScoredSample, Sidecar,
    SIDECAR_FORMAT_VERSION,
};
pub(crate) use sequence::check_same_skeleton;
pub use sequence::{MotionSequence, PoseFrame};
