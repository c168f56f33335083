use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{Quaternion, Vec3};

/// Log-map difference between a joint rotation and its reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointDistance {
    pub log: Vec3,
    /// `|log|`, in `[0, π/2]`.
    pub magnitude: f64,
}

/// `log(canonicalize(q · q_ref*))`.
pub fn joint_log_distance(q: Quaternion, q_ref: Quaternion) -> JointDistance {
    let log = q.compose(q_ref.conjugate()).canonical().log_map();
    JointDistance {
        log,
        magnitude: log.norm(),
    }
}

/// Per-joint difference weights in topological joint order.
#[derive(Clone, Debug, PartialEq)]
pub struct JointWeights {
    pub w: Vec<f64>,
}

impl JointWeights {
    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub threshold: f64,
    /// Charged for every joint after the truncation step.
    pub penalty: f64,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy {
            threshold: 1.0,
            penalty: 2.0,
        }
    }
}

impl TruncationPolicy {
    pub fn new(threshold: f64, penalty: f64) -> Result<Self> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::validation(format!("truncation threshold must be > 0, got {threshold}")));
        }
        if !(penalty.is_finite() && penalty >= 0.0) {
            return Err(Error::validation(format!("truncation penalty must be ≥ 0, got {penalty}")));
        }
        Ok(TruncationPolicy { threshold, penalty })
    }

    /// Threshold with the default penalty of twice the threshold.
    pub fn with_threshold(threshold: f64) -> Result<Self> {
        TruncationPolicy::new(threshold, 2.0 * threshold)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    /// Frame distance `D`.
    pub distance: f64,
    /// Index of the first joint whose weight exceeds the threshold, or `N`.
    pub step: usize,
}

impl Truncation {
    pub fn truncated(&self, n: usize) -> bool {
        self.step < n
    }
}

/// Scans joints in order and stops at the first weight above the threshold.
///
/// Weights up to and including that joint are summed; each joint after it
/// contributes the fixed penalty instead of its own weight.
pub fn truncated_distance(w: &JointWeights, policy: &TruncationPolicy) -> Truncation {
    let n = w.w.len();
    let step = w.w.iter().position(|&x| x > policy.threshold).unwrap_or(n);
    let kept = (step + 1).min(n);
    let distance = w.w[..kept].iter().sum::<f64>() + (n - kept) as f64 * policy.penalty;
    Truncation { distance, step }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::{quat_from_axis_angle, AxisAngle};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn same_rotation_has_zero_distance() {
        let q = quat_from_axis_angle(AxisAngle::new(0.3, -0.2, 0.5)).unwrap();
        assert_eq!(joint_log_distance(q, q).magnitude, 0.0);
    }

    #[test]
    fn quarter_turn_is_eighth_pi() {
        let q = quat_from_axis_angle(AxisAngle::new(FRAC_PI_2, 0.0, 0.0)).unwrap();
        let d = joint_log_distance(q, Quaternion::IDENTITY);
        assert!((d.magnitude - FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn truncation_cases() {
        let p = TruncationPolicy::new(1.0, 2.0).unwrap();
        let t = truncated_distance(&JointWeights { w: vec![0.0; 5] }, &p);
        assert_eq!((t.distance, t.step), (0.0, 5));
        let t = truncated_distance(&JointWeights { w: vec![0.1, 5.0, 0.2] }, &p);
        assert_eq!(t.step, 1);
        assert!((t.distance - 7.1).abs() < 1e-12);
        let t = truncated_distance(&JointWeights { w: vec![0.1, 0.2, 3.0] }, &p);
        assert_eq!(t.step, 2);
        assert!((t.distance - 3.3).abs() < 1e-12);
    }

    #[test]
    fn raising_threshold_never_lowers_step() {
        let w = JointWeights { w: vec![0.5, 1.5, 0.7, 2.5, 0.1] };
        let mut last = 0;
        for th in [0.1, 0.6, 1.0, 2.0, 3.0] {
            let s = truncated_distance(&w, &TruncationPolicy::with_threshold(th).unwrap()).step;
            assert!(s >= last);
            last = s;
        }
        assert_eq!(last, 5);
    }

    #[test]
    fn policy_validation() {
        assert!(TruncationPolicy::new(0.0, 1.0).is_err());
        assert!(TruncationPolicy::new(1.0, -1.0).is_err());
    }
}
