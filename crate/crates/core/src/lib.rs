//! Motion scoring engine for sign-language pose sequences.
//!
//! A learner sequence is compared with a reference sequence in four steps:
//! temporal smoothing, per-joint attention embedding, derivative DTW
//! alignment and score regression.

pub mod alignment;
pub mod autodiff;
pub mod checkpoint;
pub mod embedding;
pub mod error;
pub mod motion;
pub mod pipeline;
pub mod rotmath;
pub mod scorehead;
pub mod smoothing;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use motion::{MotionSequence, PoseFrame, ReferenceLibrary, ScoredSample};
pub use rotmath::{AxisAngle, Quaternion, Skeleton, Vec3};
pub use scorehead::{FeatureVector, Score, ScoreHead};
pub use smoothing::{SmoothResult, SmootherModel};
