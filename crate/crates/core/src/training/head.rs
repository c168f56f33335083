use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adam, LossTrace, TrainConfig};
use crate::error::{Error, Result};
use crate::scorehead::{FeatureSet, FeatureVector, Score, ScoreHead, OUTPUTS};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreLoss {
    /// Mean absolute error over samples and dimensions.
    pub l_score: f64,
    /// Pairwise logistic rank surrogate, averaged over pairs and dimensions.
    pub l_rank: f64,
    pub total: f64,
    /// Set when the batch has fewer than 2 samples and the rank term was left out.
    pub rank_skipped: bool,
    pub gradient: Vec<f64>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `log(1 + e^{−m})` and its derivative in `m`, without overflow.
fn softplus_neg(m: f64) -> (f64, f64) {
    let v = if m > 0.0 { (-m).exp().ln_1p() } else { -m + m.exp().ln_1p() };
    let d = -1.0 / (1.0 + m.exp());
    (v, d)
}

/// `L_score + L_rank` on unclamped head outputs, with the exact parameter gradient.
pub fn loss_score(batch: &[(FeatureVector, Score)], head: &ScoreHead) -> Result<ScoreLoss> {
    if batch.is_empty() {
        return Err(Error::validation("score loss needs at least one sample"));
    }
    let inputs: Vec<Vec<f64>> = batch.iter().map(|(f, _)| f.to_vec(head.features())).collect::<Result<_>>()?;
    let targets: Vec<[f64; 3]> = batch.iter().map(|(_, s)| s.to_array()).collect();
    let preds: Vec<[f64; 3]> = inputs.iter().map(|x| head.forward_raw(x)).collect();
    let b = batch.len();
    let mut up = vec![[0.0; OUTPUTS]; b];

    let mae_norm = 1.0 / (b * OUTPUTS) as f64;
    let mut l_score = 0.0;
    for i in 0..b {
        for o in 0..OUTPUTS {
            let r = preds[i][o] - targets[i][o];
            l_score += r.abs() * mae_norm;
            up[i][o] += sign(r) * mae_norm;
        }
    }

    let rank_skipped = b < 2;
    let mut l_rank = 0.0;
    if !rank_skipped {
        let norm = 1.0 / (OUTPUTS * b * (b - 1) / 2) as f64;
        for o in 0..OUTPUTS {
            for i in 0..b {
                for j in i + 1..b {
                    let s = sign(targets[i][o] - targets[j][o]);
                    let m = s * (preds[i][o] - preds[j][o]);
                    let (v, dv) = softplus_neg(m);
                    l_rank += v * norm;
                    up[i][o] += dv * s * norm;
                    up[j][o] -= dv * s * norm;
                }
            }
        }
    }

    let mut gradient = vec![0.0; head.param_count()];
    for (x, u) in inputs.iter().zip(&up) {
        let (_, g) = head.forward_backward(x, *u);
        gradient.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok(ScoreLoss {
        l_score,
        l_rank,
        total: l_score + l_rank,
        rank_skipped,
        gradient,
    })
}

pub struct HeadTraining {
    pub head: ScoreHead,
    /// Row 0 is the initial head; row `e` follows epoch `e`.
    pub trace: LossTrace,
}

/// Feature mean and standard deviation, with unit scale for constant features.
pub fn feature_normalization(inputs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = inputs[0].len();
    let n = inputs.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| inputs.iter().map(|x| x[k]).sum::<f64>() / n).collect();
    let scale = (0..d)
        .map(|k| {
            let var = inputs.iter().map(|x| (x[k] - mean[k]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Fits a head to `(features, expert score)` pairs. Deterministic for a fixed seed.
pub fn train_scorehead(samples: &[(FeatureVector, Score)], features: FeatureSet, cfg: &TrainConfig) -> Result<HeadTraining> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::validation("score head training needs samples"));
    }
    let inputs: Vec<Vec<f64>> = samples.iter().map(|(f, _)| f.to_vec(features)).collect::<Result<_>>()?;
    let (shift, scale) = feature_normalization(&inputs);
    let n = samples.len() as f64;
    let mut bias = [0.0; 3];
    for (_, s) in samples {
        for (b, v) in bias.iter_mut().zip(s.to_array()) {
            *b += v / n;
        }
    }
    let mut head = ScoreHead::new(features, bias, cfg.seed).with_normalization(shift, scale)?;
    let mut trace = LossTrace::new(&["l_score", "l_rank", "total"]);
    let record = |trace: &mut LossTrace, epoch: usize, head: &ScoreHead| -> Result<()> {
        let l = loss_score(samples, head)?;
        if !l.total.is_finite() {
            return Err(Error::Divergence(format!("score loss became {} at epoch {epoch}", l.total)));
        }
        trace.push(epoch, vec![l.l_score, l.l_rank, l.total]);
        Ok(())
    };
    record(&mut trace, 0, &head)?;
    let mut params = head.parameters();
    let mut opt = Adam::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4ead_5c0e);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(FeatureVector, Score)> = chunk.iter().map(|&i| samples[i]).collect();
            let l = loss_score(&batch, &head)?;
            if !l.total.is_finite() || l.gradient.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!("score loss became {} in epoch {epoch}", l.total)));
            }
            opt.step(&mut params, &l.gradient);
            if params.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!("score head parameters became non-finite in epoch {epoch}")));
            }
            head.set_parameters(&params);
        }
        record(&mut trace, epoch, &head)?;
    }
    Ok(HeadTraining { head, trace })
}
