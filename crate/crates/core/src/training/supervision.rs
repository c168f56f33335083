use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::Checkpoint;

/// Checkpoint scores spread over time by a Gaussian of width `sigma_g` frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSupervision {
    pub checkpoints: Vec<Checkpoint>,
    pub sigma_g: f64,
}

impl CheckpointSupervision {
    pub fn new(checkpoints: Vec<Checkpoint>, sigma_g: f64) -> Result<Self> {
        if !(sigma_g.is_finite() && sigma_g > 0.0) {
            return Err(Error::validation(format!("sigma_g must be > 0, got {sigma_g}")));
        }
        if checkpoints.windows(2).any(|w| w[0].frame_index >= w[1].frame_index) {
            return Err(Error::validation("checkpoint indices must be strictly increasing"));
        }
        if checkpoints.iter().any(|c| !c.baseline_score.is_finite()) {
            return Err(Error::validation("checkpoint scores must be finite"));
        }
        Ok(CheckpointSupervision { checkpoints, sigma_g })
    }

    /// Fails if any checkpoint lies outside `[0, frames)`.
    pub fn check_frames(&self, frames: usize) -> Result<()> {
        match self.checkpoints.iter().find(|c| c.frame_index >= frames) {
            Some(c) => Err(Error::validation(format!(
                "checkpoint at frame {} is outside a {frames}-frame sequence",
                c.frame_index
            ))),
            None => Ok(()),
        }
    }
}

/// `max_c s_c · exp(−(t − t_c)² / 2σ_g²)`, or 0 with no checkpoints.
///
/// Nearby checkpoints do not add up: the largest decayed value wins.
pub fn checkpoint_weight(t: f64, sup: &CheckpointSupervision) -> f64 {
    let two_s2 = 2.0 * sup.sigma_g * sup.sigma_g;
    sup.checkpoints
        .iter()
        .map(|c| {
            let dt = t - c.frame_index as f64;
            c.baseline_score * (-dt * dt / two_s2).exp()
        })
        .reduce(f64::max)
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(frame_index: usize, baseline_score: f64) -> Checkpoint {
        Checkpoint {
            frame_index,
            baseline_score,
        }
    }

    #[test]
    fn peak_and_one_sigma() {
        let sup = CheckpointSupervision::new(vec![cp(10, 3.0)], 4.0).unwrap();
        assert_eq!(checkpoint_weight(10.0, &sup), 3.0);
        assert!((checkpoint_weight(14.0, &sup) - 3.0 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn overlapping_checkpoints_take_max() {
        let sup = CheckpointSupervision::new(vec![cp(0, 2.0), cp(10, 5.0)], 6.0).unwrap();
        let direct = |s: f64, d: f64| s * (-d * d / 72.0).exp();
        let want = direct(2.0, 5.0).max(direct(5.0, 5.0));
        assert_eq!(checkpoint_weight(5.0, &sup), want);
    }

    #[test]
    fn invalid_supervision() {
        assert!(CheckpointSupervision::new(vec![], 0.0).is_err());
        assert!(CheckpointSupervision::new(vec![cp(3, 1.0), cp(3, 1.0)], 1.0).is_err());
    }
}
