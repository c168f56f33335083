use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::supervision::{checkpoint_weight, CheckpointSupervision};
use super::{Adam, LossTrace, TrainConfig};
use crate::alignment::{alignment_cost_with, AlignOptions, LocalCost};
use crate::embedding::{joint_log_distance, EmbedConfig, EmbedModel, JointLayout};
use crate::error::{Error, Result};
use crate::motion::{check_same_skeleton, MotionSequence};
use crate::rotmath::Skeleton;
use crate::tensor::Matrix;

/// One learner/reference pair with its checkpoint supervision.
///
/// Positive pairs show the same action; negative pairs show different actions
/// and contribute only the per-joint term.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub learner: MotionSequence,
    pub reference: MotionSequence,
    pub supervision: CheckpointSupervision,
    pub positive: bool,
    /// Matched `(learner, reference)` frames; filled by [`PairSet::align`].
    pub frames: Vec<(usize, usize)>,
}

impl TrainPair {
    pub fn new(learner: MotionSequence, reference: MotionSequence, supervision: CheckpointSupervision, positive: bool) -> Result<Self> {
        check_same_skeleton(&learner, &reference)?;
        supervision.check_frames(learner.len())?;
        Ok(TrainPair {
            learner,
            reference,
            supervision,
            positive,
            frames: Vec::new(),
        })
    }

    /// Pairs frames `(t, t)` up to the shorter length.
    pub fn with_diagonal_frames(mut self) -> Self {
        self.frames = (0..self.learner.len().min(self.reference.len())).map(|t| (t, t)).collect();
        self
    }
}

#[derive(Clone, Debug)]
pub struct PairSet {
    pub pairs: Vec<TrainPair>,
}

impl PairSet {
    pub fn new(pairs: Vec<TrainPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::validation("pair set is empty"));
        }
        let n = pairs[0].learner.joint_count();
        if let Some(p) = pairs.iter().find(|p| p.learner.joint_count() != n) {
            return Err(Error::validation(format!(
                "pair set mixes {n}-joint and {}-joint sequences",
                p.learner.joint_count()
            )));
        }
        Ok(PairSet { pairs })
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.positive).count()
    }

    /// Pairs frames along the gradient DTW path of each pair.
    pub fn align(&mut self, opts: AlignOptions) -> Result<()> {
        let paths: Vec<Vec<(usize, usize)>> = self
            .pairs
            .par_iter()
            .enumerate()
            .map(|(k, p)| {
                alignment_cost_with(&p.learner, &p.reference, LocalCost::Gradient, opts)
                    .map(|a| a.result.path)
                    .map_err(|e| e.at("alignment", format!("pair {k}")))
            })
            .collect::<Result<_>>()?;
        for (p, path) in self.pairs.iter_mut().zip(paths) {
            p.frames = path;
        }
        Ok(())
    }

    /// Frame pairs as precomputed training items.
    pub fn items(&self, layout: &JointLayout, stride: usize) -> Result<Vec<FrameItem>> {
        let stride = stride.max(1);
        let mut out = Vec::new();
        for (k, p) in self.pairs.iter().enumerate() {
            if p.frames.is_empty() {
                return Err(Error::validation(format!("pair {k} has no matched frames; align it first")));
            }
            for &(tl, tr) in p.frames.iter().step_by(stride) {
                if tl >= p.learner.len() || tr >= p.reference.len() {
                    return Err(Error::validation(format!("pair {k}: frame pair ({tl}, {tr}) out of range")));
                }
                let (fl, fr) = (p.learner.frame(tl), p.reference.frame(tr));
                let d = layout
                    .order
                    .iter()
                    .map(|&j| joint_log_distance(fl.rotations()[j], fr.rotations()[j]).magnitude)
                    .collect();
                out.push(FrameItem {
                    learner: layout.frame_matrix(fl)?,
                    reference: layout.frame_matrix(fr)?,
                    d,
                    target: p.positive.then(|| checkpoint_weight(tl as f64, &p.supervision)),
                });
            }
        }
        Ok(out)
    }
}

/// A matched frame pair ready for the loss.
#[derive(Clone, Debug)]
pub struct FrameItem {
    pub learner: Matrix,
    pub reference: Matrix,
    /// Per-joint log distances in topological order.
    pub d: Vec<f64>,
    /// Checkpoint target for `Σ w`; `None` on negative pairs.
    pub target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedLoss {
    /// `Σ_t |Σ_n w(n) − target(t)|` over positive pairs.
    pub l_s: f64,
    /// `Σ_t Σ_n (w(n) − d(n))²`.
    pub l_t: f64,
    pub l_d: f64,
    /// `∂L_D/∂θ` in [`EmbedModel::parameters`] order; empty when not requested.
    pub gradient: Vec<f64>,
}

fn item_loss(item: &FrameItem, model: &EmbedModel, grad: bool) -> (f64, f64, Vec<f64>) {
    let fwd = model.forward(item.learner.clone(), item.reference.clone());
    let w = fwd.tape.value(fwd.weights).data();
    let mut l_t = 0.0;
    let mut seed = vec![0.0; w.len()];
    for ((s, &wi), &di) in seed.iter_mut().zip(w).zip(&item.d) {
        l_t += (wi - di) * (wi - di);
        *s = 2.0 * (wi - di);
    }
    let mut l_s = 0.0;
    if let Some(target) = item.target {
        let r = w.iter().sum::<f64>() - target;
        l_s = r.abs();
        let sg = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        seed.iter_mut().for_each(|s| *s += sg);
    }
    let g = if grad { model.weight_gradient(&fwd, &seed) } else { Vec::new() };
    (l_s, l_t, g)
}

/// Losses and exact gradient over a list of frame items.
pub fn loss_items(items: &[FrameItem], model: &EmbedModel, grad: bool) -> Result<EmbedLoss> {
    let refs: Vec<&FrameItem> = items.iter().collect();
    loss_refs(&refs, model, grad)
}

fn loss_refs(items: &[&FrameItem], model: &EmbedModel, grad: bool) -> Result<EmbedLoss> {
    if items.is_empty() {
        return Err(Error::validation("embedding loss needs at least one frame pair"));
    }
    let parts: Vec<(f64, f64, Vec<f64>)> = items.par_iter().map(|it| item_loss(it, model, grad)).collect();
    let mut out = EmbedLoss {
        l_s: 0.0,
        l_t: 0.0,
        l_d: 0.0,
        gradient: if grad { vec![0.0; model.param_count()] } else { Vec::new() },
    };
    for (ls, lt, g) in parts {
        out.l_s += ls;
        out.l_t += lt;
        out.gradient.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    out.l_d = out.l_s + out.l_t;
    Ok(out)
}

/// `L_D = L_s + L_t` over every matched frame of `batch`, with its exact gradient.
pub fn loss_embedding(batch: &PairSet, embed: &EmbedModel) -> Result<EmbedLoss> {
    let items = batch.items(embed.layout(), 1)?;
    loss_items(&items, embed, true)
}

pub struct EmbedTraining {
    pub model: EmbedModel,
    /// Row 0 is the initial model; row `e` follows epoch `e`.
    pub trace: LossTrace,
}

/// Trains a fresh model on aligned pairs. Deterministic for a fixed seed.
pub fn train_embedding(pairs: &PairSet, skel: &Skeleton, arch: EmbedConfig, cfg: &TrainConfig) -> Result<EmbedTraining> {
    cfg.validate()?;
    let mut model = EmbedModel::new(skel, arch, cfg.seed)?;
    let items = pairs.items(model.layout(), cfg.frame_stride)?;
    let mut trace = LossTrace::new(&["l_s", "l_t", "l_d"]);
    let record = |trace: &mut LossTrace, epoch: usize, model: &EmbedModel| -> Result<()> {
        let l = loss_items(&items, model, false)?;
        if !l.l_d.is_finite() {
            return Err(Error::Divergence(format!("embedding loss became {} at epoch {epoch}", l.l_d)));
        }
        trace.push(epoch, vec![l.l_s, l.l_t, l.l_d]);
        Ok(())
    };
    record(&mut trace, 0, &model)?;
    let mut params = model.parameters();
    let mut opt = Adam::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e3b0);
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&FrameItem> = chunk.iter().map(|&i| &items[i]).collect();
            let l = loss_refs(&batch, &model, true)?;
            if !l.l_d.is_finite() || l.gradient.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!("embedding loss became {} in epoch {epoch}", l.l_d)));
            }
            let scale = 1.0 / batch.len() as f64;
            let g: Vec<f64> = l.gradient.iter().map(|v| v * scale).collect();
            opt.step(&mut params, &g);
            if params.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!("embedding parameters became non-finite in epoch {epoch}")));
            }
            model.set_parameters(&params);
        }
        record(&mut trace, epoch, &model)?;
    }
    Ok(EmbedTraining { model, trace })
}
