use crate::error::{Error, Result};
use crate::rotmath::{forward_kinematics, Quaternion, Skeleton, Vec3};

/// One captured pose: a canonical rotation per joint in skeleton order.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseFrame {
    timestamp: f64,
    rotations: Vec<Quaternion>,
}

impl PoseFrame {
    pub fn new(timestamp: f64, rotations: Vec<Quaternion>) -> Result<Self> {
        if !timestamp.is_finite() {
            return Err(Error::validation(format!("non-finite timestamp {timestamp}")));
        }
        let rotations = rotations.into_iter().map(Quaternion::canonical).collect();
        Ok(PoseFrame {
            timestamp,
            rotations,
        })
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn rotations(&self) -> &[Quaternion] {
        &self.rotations
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    /// Concatenated per-joint log maps (3N values).
    pub fn log_vector(&self) -> Vec<f64> {
        self.rotations
            .iter()
            .flat_map(|q| q.log_map().to_array())
            .collect()
    }

    pub fn global_positions(&self, skel: &Skeleton) -> Result<Vec<Vec3>> {
        forward_kinematics(skel, &self.rotations)
    }
}

/// A validated pose sequence: `T ≥ 2` frames of equal width with strictly
/// increasing timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    skeleton_id: String,
    fps: f64,
    frames: Vec<PoseFrame>,
}

impl MotionSequence {
    pub fn new(skeleton_id: impl Into<String>, fps: f64, frames: Vec<PoseFrame>) -> Result<Self> {
        let skeleton_id = skeleton_id.into();
        if skeleton_id.is_empty() || skeleton_id.chars().any(char::is_whitespace) {
            return Err(Error::validation(format!(
                "skeleton_id must be a non-empty token, got {skeleton_id:?}"
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::validation(format!("fps must be positive, got {fps}")));
        }
        if frames.len() < 2 {
            return Err(Error::validation(format!(
                "sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let n = frames[0].len();
        if n == 0 {
            return Err(Error::validation("frames carry no rotations"));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.len() != n {
                return Err(Error::validation(format!(
                    "frame {t}: expected {n} rotations, found {}",
                    f.len()
                )));
            }
            if t > 0 && f.timestamp <= frames[t - 1].timestamp {
                return Err(Error::validation(format!(
                    "frame {t}: timestamps must be strictly increasing ({} after {})",
                    f.timestamp,
                    frames[t - 1].timestamp
                )));
            }
        }
        Ok(MotionSequence {
            skeleton_id,
            fps,
            frames,
        })
    }

    /// Builds frames at `t / fps` from per-frame rotation lists.
    pub fn from_rotations(
        skeleton_id: impl Into<String>,
        fps: f64,
        rotations: Vec<Vec<Quaternion>>,
    ) -> Result<Self> {
        let frames = rotations
            .into_iter()
            .enumerate()
            .map(|(t, r)| PoseFrame::new(t as f64 / fps, r))
            .collect::<Result<Vec<_>>>()?;
        MotionSequence::new(skeleton_id, fps, frames)
    }

    pub fn skeleton_id(&self) -> &str {
        &self.skeleton_id
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[PoseFrame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &PoseFrame {
        &self.frames[t]
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames[0].len()
    }

    pub fn rotation(&self, t: usize, joint: usize) -> Quaternion {
        self.frames[t].rotations[joint]
    }

    /// Checks skeleton id and width against `skel`.
    pub fn validate_against(&self, skel: &Skeleton) -> Result<()> {
        if self.skeleton_id != skel.id() {
            return Err(Error::validation(format!(
                "sequence uses skeleton {:?} but {:?} was supplied",
                self.skeleton_id,
                skel.id()
            )));
        }
        if self.joint_count() != skel.len() {
            return Err(Error::validation(format!(
                "sequence has {} joints but skeleton {} has {}",
                self.joint_count(),
                skel.id(),
                skel.len()
            )));
        }
        Ok(())
    }

    /// Same poses and timestamps with rotations replaced frame by frame.
    pub fn with_rotations(&self, rotations: Vec<Vec<Quaternion>>) -> Result<Self> {
        if rotations.len() != self.len() {
            return Err(Error::validation(format!(
                "expected {} frames of rotations, got {}",
                self.len(),
                rotations.len()
            )));
        }
        let frames = self
            .frames
            .iter()
            .zip(rotations)
            .map(|(f, r)| PoseFrame::new(f.timestamp, r))
            .collect::<Result<Vec<_>>>()?;
        MotionSequence::new(self.skeleton_id.clone(), self.fps, frames)
    }
}

/// Fails unless both sequences have the same skeleton and width.
pub(crate) fn check_same_skeleton(a: &MotionSequence, b: &MotionSequence) -> Result<()> {
    if a.skeleton_id != b.skeleton_id || a.joint_count() != b.joint_count() {
        return Err(Error::validation(format!(
            "skeleton mismatch: {} ({} joints) vs {} ({} joints)",
            a.skeleton_id,
            a.joint_count(),
            b.skeleton_id,
            b.joint_count()
        )));
    }
    Ok(())
}
