//! Derivative DTW between learner and reference motion.

mod dtw;
mod gradient;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dtw::{diagonal_result, dtw_align, dtw_from_costs, euclidean_costs, AlignmentResult};
pub use gradient::{motion_gradient, motion_gradient_rate, GradientSequence};

use crate::embedding::{truncated_distance, EmbedModel, TruncationPolicy};
use crate::error::{Error, Result};
use crate::motion::{check_same_skeleton, MotionSequence};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalCostKind {
    /// Euclidean distance between angular-speed rows.
    #[default]
    Gradient,
    /// Truncated embedding distance `D` of each frame pair.
    Embedding,
}

/// Local cost used by [`alignment_cost`].
#[derive(Clone, Copy, Debug)]
pub enum LocalCost<'a> {
    Gradient,
    Embedding {
        model: &'a EmbedModel,
        policy: TruncationPolicy,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentCost {
    /// Normalized DTW cost `C_a`.
    pub c_a: f64,
    pub result: AlignmentResult,
}

/// Options for [`alignment_cost_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Sakoe–Chiba half-width in frames; `None` searches the full grid.
    pub band: Option<usize>,
}

/// Grid of local costs between every learner and reference frame.
pub fn local_cost_grid(learner: &MotionSequence, reference: &MotionSequence, mode: LocalCost<'_>) -> Result<Matrix> {
    check_same_skeleton(learner, reference)?;
    match mode {
        LocalCost::Gradient => {
            let a = motion_gradient_rate(learner)?;
            let b = motion_gradient_rate(reference)?;
            euclidean_costs(&a.grads, &b.grads)
        }
        LocalCost::Embedding { model, policy } => {
            let (t1, t2) = (learner.len(), reference.len());
            let cells: Vec<f64> = (0..t1 * t2)
                .into_par_iter()
                .map(|k| {
                    let w = model.embed(learner.frame(k / t2), reference.frame(k % t2))?;
                    Ok(truncated_distance(&w, &policy).distance.abs())
                })
                .collect::<Result<_>>()?;
            Ok(Matrix::from_vec(t1, t2, cells))
        }
    }
}

/// `C_a` for a learner against a reference; both should already be smoothed.
///
/// Gradient rows are angular speeds per second, taken from each sequence's
/// timestamps, so sequences captured at different rates stay comparable.
pub fn alignment_cost(learner: &MotionSequence, reference: &MotionSequence, mode: LocalCost<'_>) -> Result<AlignmentCost> {
    alignment_cost_with(learner, reference, mode, AlignOptions::default())
}

pub fn alignment_cost_with(
    learner: &MotionSequence,
    reference: &MotionSequence,
    mode: LocalCost<'_>,
    opts: AlignOptions,
) -> Result<AlignmentCost> {
    if let LocalCost::Embedding { model, .. } = mode {
        if model.n_joints() != learner.joint_count() {
            return Err(Error::validation(format!(
                "embedding model expects {} joints, sequence has {}",
                model.n_joints(),
                learner.joint_count()
            )));
        }
    }
    let grid = local_cost_grid(learner, reference, mode)?;
    let result = dtw_from_costs(&grid, opts.band)?;
    Ok(AlignmentCost {
        c_a: result.cost,
        result,
    })
}

/// Writes one `t_learner t_reference cost` line per path cell.
pub fn write_path(out: &mut impl Write, result: &AlignmentResult) -> std::io::Result<()> {
    for (&(i, j), c) in result.path.iter().zip(&result.step_costs) {
        writeln!(out, "{i} {j} {c:.12e}")?;
    }
    Ok(())
}

pub fn save_path(path: impl AsRef<Path>, result: &AlignmentResult) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_path(&mut buf, result).expect("writing to memory");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
