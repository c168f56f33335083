use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::tensor::Matrix;

/// Per-frame, per-joint angular speed magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSequence {
    /// `T×N`, one row per frame.
    pub grads: Matrix,
}

impl GradientSequence {
    pub fn len(&self) -> usize {
        self.grads.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.rows() == 0
    }

    pub fn joint_count(&self) -> usize {
        self.grads.cols()
    }
}

/// `|log(canon(q(t+1) q(t)*))|` in radians per frame. The last row repeats the
/// one before it so the output has `T` rows.
pub fn motion_gradient(seq: &MotionSequence) -> Result<GradientSequence> {
    let t = seq.len();
    if t < 2 {
        return Err(Error::validation(format!("motion gradient needs at least 2 frames, got {t}")));
    }
    let n = seq.joint_count();
    let mut grads = Matrix::zeros(t, n);
    for f in 0..t - 1 {
        let (a, b) = (seq.frame(f).rotations(), seq.frame(f + 1).rotations());
        for j in 0..n {
            let rel = b[j].compose(a[j].conjugate()).canonical();
            grads.set(f, j, rel.log_map().norm());
        }
    }
    let last: Vec<f64> = grads.row(t - 2).to_vec();
    grads.row_mut(t - 1).copy_from_slice(&last);
    Ok(GradientSequence { grads })
}

/// [`motion_gradient`] divided by each step's frame interval, in radians per second.
///
/// Rates stay comparable when learner and reference are sampled differently.
pub fn motion_gradient_rate(seq: &MotionSequence) -> Result<GradientSequence> {
    let mut g = motion_gradient(seq)?;
    let t = seq.len();
    for f in 0..t {
        let k = f.min(t - 2);
        let dt = seq.frame(k + 1).timestamp() - seq.frame(k).timestamp();
        g.grads.row_mut(f).iter_mut().for_each(|v| *v /= dt);
    }
    Ok(g)
}
