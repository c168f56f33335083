//! Windowed de-jittering of joint rotation tracks.
//!
//! Each joint's quaternion track is mapped to log space, giving three scalar
//! channels per joint. A window of `W` frames is slid over every channel with
//! stride 1. Inside a window the position values, their first differences and
//! their second differences each pass through a `W×W` branch matrix, and the
//! three branch outputs are fused linearly. Frames covered by several windows
//! take the mean of the overlapping outputs. The result is mapped back with
//! the exp map and canonicalized.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_text, write_text, CheckpointFile, TensorRecord};
use crate::error::{Error, Result};
use crate::motion::{check_same_skeleton, MotionSequence};
use crate::rotmath::{Quaternion, Vec3};
use crate::training::{Adam, OptimizerKind};

pub const DEFAULT_WINDOW: usize = 8;

/// Denominator floor for the relative smoothing cost.
pub const COST_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmootherMethod {
    /// Branch weights fitted to data.
    Learned,
    /// Parameter-free quadratic least-squares fallback.
    SavitzkyGolay,
    /// Pass-through configuration.
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmootherModel {
    window: usize,
    /// Position, velocity and acceleration branch matrices, row-major `W×W`.
    branches: [Vec<f64>; 3],
    fusion: [f64; 3],
    method: SmootherMethod,
    training_loss: Option<f64>,
}

impl SmootherModel {
    pub fn new(window: usize, branches: [Vec<f64>; 3], fusion: [f64; 3], method: SmootherMethod) -> Result<Self> {
        if window < 3 {
            return Err(Error::validation(format!("smoother window must be ≥ 3, got {window}")));
        }
        for (k, b) in branches.iter().enumerate() {
            if b.len() != window * window {
                return Err(Error::validation(format!(
                    "branch {k}: expected {} weights, found {}",
                    window * window,
                    b.len()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("branch {k}: non-finite weight")));
            }
        }
        if fusion.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite fusion weight"));
        }
        Ok(SmootherModel {
            window,
            branches,
            fusion,
            method,
            training_loss: None,
        })
    }

    /// Identity branches with fusion `(1, 0, 0)`: output equals input.
    pub fn identity(window: usize) -> Result<Self> {
        SmootherModel::new(
            window,
            [eye(window), vec![0.0; window * window], vec![0.0; window * window]],
            [1.0, 0.0, 0.0],
            SmootherMethod::Identity,
        )
    }

    /// Quadratic least-squares fit inside every window, averaged over overlaps.
    pub fn savitzky_golay(window: usize) -> Result<Self> {
        if window < 3 {
            return Err(Error::validation(format!("smoother window must be ≥ 3, got {window}")));
        }
        SmootherModel::new(
            window,
            [quadratic_hat_matrix(window), vec![0.0; window * window], vec![0.0; window * window]],
            [1.0, 0.0, 0.0],
            SmootherMethod::SavitzkyGolay,
        )
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn method(&self) -> SmootherMethod {
        self.method
    }

    pub fn training_loss(&self) -> Option<f64> {
        self.training_loss
    }

    pub fn fusion(&self) -> [f64; 3] {
        self.fusion
    }

    pub fn branches(&self) -> &[Vec<f64>; 3] {
        &self.branches
    }

    /// All trainable parameters: three branches then fusion weights.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.branches.iter().flatten().copied().collect();
        p.extend_from_slice(&self.fusion);
        p
    }

    pub fn set_parameters(&mut self, p: &[f64]) {
        let w2 = self.window * self.window;
        assert_eq!(p.len(), 3 * w2 + 3, "parameter vector length");
        for (k, b) in self.branches.iter_mut().enumerate() {
            b.copy_from_slice(&p[k * w2..(k + 1) * w2]);
        }
        self.fusion.copy_from_slice(&p[3 * w2..]);
    }

    /// The fused per-window map `M = f_p·A_p + f_v·A_v·D₁ + f_a·A_a·D₂`,
    /// where `D₁`, `D₂` take first and second differences (zero-padded).
    fn effective_matrix(&self) -> Vec<f64> {
        let w = self.window;
        let d1 = difference_matrix(w, 1);
        let d2 = difference_matrix(w, 2);
        let av = matmul(&self.branches[1], &d1, w);
        let aa = matmul(&self.branches[2], &d2, w);
        let [fp, fv, fa] = self.fusion;
        (0..w * w)
            .map(|i| fp * self.branches[0][i] + fv * av[i] + fa * aa[i])
            .collect()
    }

    /// Smooths `T×C` channel data (row-major by frame).
    pub fn smooth_channels(&self, data: &[f64], frames: usize, channels: usize) -> Result<Vec<f64>> {
        if frames < self.window {
            return Err(Error::validation(format!(
                "sequence has {frames} frames; smoothing needs at least {} (the window length)",
                self.window
            )));
        }
        Ok(apply_matrix(&self.effective_matrix(), self.window, data, frames, channels))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        SmootherModel::from_json(&read_text(path.as_ref())?)
    }

    pub fn to_json(&self) -> String {
        let w = self.window;
        let mut tensors = BTreeMap::new();
        for (name, b) in BRANCH_NAMES.iter().zip(&self.branches) {
            tensors.insert(name.to_string(), TensorRecord::new(vec![w, w], b.clone()));
        }
        tensors.insert("fusion".into(), TensorRecord::new(vec![3], self.fusion.to_vec()));
        CheckpointFile::new(
            SMOOTHER_MODEL_NAME,
            SmootherMeta {
                window: w,
                method: self.method,
                training_loss: self.training_loss,
            },
            tensors,
        )
        .to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile<SmootherMeta> = CheckpointFile::from_json(text, SMOOTHER_MODEL_NAME)?;
        let w = file.meta.window;
        let mut branches: [Vec<f64>; 3] = Default::default();
        for (b, name) in branches.iter_mut().zip(BRANCH_NAMES) {
            *b = file.tensor(name, &[w, w])?.data.clone();
        }
        let f = &file.tensor("fusion", &[3])?.data;
        let mut model = SmootherModel::new(w, branches, [f[0], f[1], f[2]], file.meta.method)?;
        model.training_loss = file.meta.training_loss;
        Ok(model)
    }
}

const SMOOTHER_MODEL_NAME: &str = "smoother";
const BRANCH_NAMES: [&str; 3] = ["position", "velocity", "acceleration"];

#[derive(Serialize, Deserialize)]
struct SmootherMeta {
    window: usize,
    method: SmootherMethod,
    training_loss: Option<f64>,
}

fn eye(w: usize) -> Vec<f64> {
    let mut m = vec![0.0; w * w];
    for i in 0..w {
        m[i * w + i] = 1.0;
    }
    m
}

fn matmul(a: &[f64], b: &[f64], w: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * w];
    for i in 0..w {
        for k in 0..w {
            let aik = a[i * w + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..w {
                out[i * w + j] += aik * b[k * w + j];
            }
        }
    }
    out
}

fn transpose(a: &[f64], w: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * w];
    for i in 0..w {
        for j in 0..w {
            out[j * w + i] = a[i * w + j];
        }
    }
    out
}

/// Row `k` of the order-`order` difference operator; the first `order` rows are zero.
fn difference_matrix(w: usize, order: usize) -> Vec<f64> {
    let mut m = vec![0.0; w * w];
    for k in order..w {
        match order {
            1 => {
                m[k * w + k] = 1.0;
                m[k * w + k - 1] = -1.0;
            }
            2 => {
                m[k * w + k] = 1.0;
                m[k * w + k - 1] = -2.0;
                m[k * w + k - 2] = 1.0;
            }
            _ => unreachable!("only first and second differences are used"),
        }
    }
    m
}

/// `V (VᵀV)⁻¹ Vᵀ` for the quadratic Vandermonde matrix on centred window offsets.
fn quadratic_hat_matrix(w: usize) -> Vec<f64> {
    let c = (w as f64 - 1.0) / 2.0;
    let rows: Vec<[f64; 3]> = (0..w)
        .map(|k| {
            let u = k as f64 - c;
            [1.0, u, u * u]
        })
        .collect();
    let mut g = [[0.0; 3]; 3];
    for r in &rows {
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] += r[i] * r[j];
            }
        }
    }
    let inv = invert3(g);
    let mut h = vec![0.0; w * w];
    for a in 0..w {
        for b in 0..w {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += rows[a][i] * inv[i][j] * rows[b][j];
                }
            }
            h[a * w + b] = s;
        }
    }
    h
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = adj[i][j] / det;
        }
    }
    out
}

/// Slides `m` over every channel and averages overlapping window outputs.
fn apply_matrix(m: &[f64], w: usize, data: &[f64], frames: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; frames * channels];
    let mut count = vec![0u32; frames];
    let mut y = vec![0.0; w];
    for s in 0..=frames - w {
        for t in s..s + w {
            count[t] += 1;
        }
        for c in 0..channels {
            for (k, yk) in y.iter_mut().enumerate() {
                let row = &m[k * w..(k + 1) * w];
                *yk = row
                    .iter()
                    .enumerate()
                    .map(|(j, mkj)| mkj * data[(s + j) * channels + c])
                    .sum();
            }
            for (k, yk) in y.iter().enumerate() {
                let t = s + k;
                let n = count[t] as f64;
                let acc = &mut out[t * channels + c];
                // running mean stays exact when every window agrees
                *acc += (yk - *acc) / n;
            }
        }
    }
    out
}

fn log_channels(seq: &MotionSequence) -> Vec<f64> {
    seq.frames().iter().flat_map(|f| f.log_vector()).collect()
}

/// Smoothed sequence `S` and its smoothing cost `C_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothResult {
    pub smoothed: MotionSequence,
    pub cost: f64,
    pub method: SmootherMethod,
}

pub fn smooth_sequence(seq: &MotionSequence, model: &SmootherModel) -> Result<SmoothResult> {
    let (t, n) = (seq.len(), seq.joint_count());
    let logs = log_channels(seq);
    let out = model.smooth_channels(&logs, t, 3 * n)?;
    let mut rotations = Vec::with_capacity(t);
    for f in 0..t {
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            let base = (f * n + j) * 3;
            let (orig, smooth) = (&logs[base..base + 3], &out[base..base + 3]);
            row.push(if orig == smooth {
                seq.rotation(f, j)
            } else {
                Quaternion::exp_map(Vec3::new(smooth[0], smooth[1], smooth[2])).canonical()
            });
        }
        rotations.push(row);
    }
    let smoothed = seq.with_rotations(rotations)?;
    let cost = smoothing_cost(seq, &smoothed)?;
    Ok(SmoothResult {
        smoothed,
        cost,
        method: model.method,
    })
}

/// `C_s`: mean over frames of `‖logvec(M(t)) − logvec(S(t))‖ / max(‖logvec(M(t))‖, ε)`.
pub fn smoothing_cost(original: &MotionSequence, smoothed: &MotionSequence) -> Result<f64> {
    check_same_skeleton(original, smoothed)?;
    if original.len() != smoothed.len() {
        return Err(Error::validation(format!(
            "smoothing cost needs equal lengths, got {} and {}",
            original.len(),
            smoothed.len()
        )));
    }
    let total: f64 = original
        .frames()
        .iter()
        .zip(smoothed.frames())
        .map(|(m, s)| {
            let (a, b) = (m.log_vector(), s.log_vector());
            let diff = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            diff / norm.max(COST_EPSILON)
        })
        .sum();
    Ok(total / original.len() as f64)
}

/// Settings for [`fit_smoother`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherFitConfig {
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
}

impl Default for SmootherFitConfig {
    fn default() -> Self {
        SmootherFitConfig {
            window: DEFAULT_WINDOW,
            epochs: 600,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Mean squared log-space error of `smooth(noisy)` against `clean`, held as
/// the exact quadratic form in the fused window matrix `M`:
/// `L(M) = (mᵀHm − 2bᵀm + c) / n` with `m = vec(M)`.
#[derive(Clone, Debug)]
pub struct SmootherObjective {
    window: usize,
    h: Vec<f64>,
    b: Vec<f64>,
    c: f64,
    n: f64,
}

impl SmootherObjective {
    pub fn new(pairs: &[(MotionSequence, MotionSequence)], window: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::validation("smoother fitting needs at least one (noisy, clean) pair"));
        }
        for (k, (noisy, clean)) in pairs.iter().enumerate() {
            check_same_skeleton(noisy, clean).map_err(|e| e.at("smoothing", format!("pair {k}")))?;
            if noisy.len() != clean.len() {
                return Err(Error::validation(format!("pair {k}: noisy and clean lengths differ")));
            }
            if noisy.len() < window {
                return Err(Error::validation(format!(
                    "pair {k}: {} frames is shorter than the window {window}",
                    noisy.len()
                )));
            }
        }
        let parts: Vec<SmootherObjective> = pairs
            .par_iter()
            .map(|(noisy, clean)| SmootherObjective::for_pair(noisy, clean, window))
            .collect();
        let w4 = window.pow(4);
        let mut total = SmootherObjective {
            window,
            h: vec![0.0; w4],
            b: vec![0.0; window * window],
            c: 0.0,
            n: 0.0,
        };
        for p in parts {
            total.h.iter_mut().zip(&p.h).for_each(|(a, b)| *a += b);
            total.b.iter_mut().zip(&p.b).for_each(|(a, b)| *a += b);
            total.c += p.c;
            total.n += p.n;
        }
        Ok(total)
    }

    fn for_pair(noisy: &MotionSequence, clean: &MotionSequence, w: usize) -> SmootherObjective {
        let (t_len, ch) = (noisy.len(), 3 * noisy.joint_count());
        let x = log_channels(noisy);
        let z = log_channels(clean);
        let w2 = w * w;
        let mut h = vec![0.0; w2 * w2];
        let mut b = vec![0.0; w2];
        let mut c = 0.0;
        let mut phi = vec![0.0; w2];
        let mut active = Vec::with_capacity(w2);
        let last_start = t_len - w;
        for t in 0..t_len {
            // windows starting at s cover t at in-window offset k = t - s
            let s_lo = t.saturating_sub(w - 1);
            let s_hi = t.min(last_start);
            let inv = 1.0 / (s_hi - s_lo + 1) as f64;
            for cidx in 0..ch {
                phi.iter_mut().for_each(|v| *v = 0.0);
                active.clear();
                for s in s_lo..=s_hi {
                    let k = t - s;
                    for j in 0..w {
                        phi[k * w + j] = x[(s + j) * ch + cidx] * inv;
                        active.push(k * w + j);
                    }
                }
                let target = z[t * ch + cidx];
                c += target * target;
                for &p in &active {
                    b[p] += phi[p] * target;
                    let row = &mut h[p * w2..(p + 1) * w2];
                    for &q in &active {
                        row[q] += phi[p] * phi[q];
                    }
                }
            }
        }
        SmootherObjective {
            window: w,
            h,
            b,
            c,
            n: (t_len * ch) as f64,
        }
    }

    pub fn loss_of_matrix(&self, m: &[f64]) -> f64 {
        let w2 = self.window * self.window;
        let mut quad = 0.0;
        for p in 0..w2 {
            let hp: f64 = (0..w2).map(|q| self.h[p * w2 + q] * m[q]).sum();
            quad += m[p] * hp;
        }
        let lin: f64 = self.b.iter().zip(m).map(|(b, m)| b * m).sum();
        ((quad - 2.0 * lin + self.c) / self.n).max(0.0)
    }

    fn grad_of_matrix(&self, m: &[f64]) -> Vec<f64> {
        let w2 = self.window * self.window;
        (0..w2)
            .map(|p| {
                let hp: f64 = (0..w2).map(|q| self.h[p * w2 + q] * m[q]).sum();
                2.0 * (hp - self.b[p]) / self.n
            })
            .collect()
    }

    /// Loss and its gradient with respect to [`SmootherModel::parameters`].
    pub fn loss_and_gradient(&self, model: &SmootherModel) -> (f64, Vec<f64>) {
        let w = self.window;
        let m = model.effective_matrix();
        let loss = self.loss_of_matrix(&m);
        let dm = self.grad_of_matrix(&m);
        let d1 = difference_matrix(w, 1);
        let d2 = difference_matrix(w, 2);
        let [fp, fv, fa] = model.fusion;
        let dm_d1t = matmul(&dm, &transpose(&d1, w), w);
        let dm_d2t = matmul(&dm, &transpose(&d2, w), w);
        let av = matmul(&model.branches[1], &d1, w);
        let aa = matmul(&model.branches[2], &d2, w);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut grad = Vec::with_capacity(3 * w * w + 3);
        grad.extend(dm.iter().map(|g| fp * g));
        grad.extend(dm_d1t.iter().map(|g| fv * g));
        grad.extend(dm_d2t.iter().map(|g| fa * g));
        grad.push(dot(&model.branches[0], &dm));
        grad.push(dot(&av, &dm));
        grad.push(dot(&aa, &dm));
        (loss, grad)
    }
}

/// Mean squared log-space error of `model` on the pairs, evaluated by smoothing.
pub fn smoother_loss(model: &SmootherModel, pairs: &[(MotionSequence, MotionSequence)]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (noisy, clean) in pairs {
        let ch = 3 * noisy.joint_count();
        let out = model.smooth_channels(&log_channels(noisy), noisy.len(), ch)?;
        let z = log_channels(clean);
        sum += out.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        n += out.len();
    }
    Ok(sum / n as f64)
}

/// Fits branch and fusion weights by gradient descent on the mean squared
/// log-space error between `smooth(noisy)` and `clean`.
///
/// Starts from the identity configuration with the velocity and acceleration
/// fusion weights at 0.5, so a model trained on `noisy = clean` stays at zero loss.
pub fn fit_smoother(pairs: &[(MotionSequence, MotionSequence)], cfg: &SmootherFitConfig) -> Result<SmootherModel> {
    let objective = SmootherObjective::new(pairs, cfg.window)?;
    let w = cfg.window;
    let mut model = SmootherModel::identity(w)?;
    model.fusion = [1.0, 0.5, 0.5];
    model.method = SmootherMethod::Learned;
    let mut params = model.parameters();
    let mut opt = Adam::new(cfg.optimizer, cfg.learning_rate, params.len());
    for epoch in 0..cfg.epochs {
        let (loss, grad) = objective.loss_and_gradient(&model);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("smoother loss became {loss} at epoch {epoch}")));
        }
        opt.step(&mut params, &grad);
        model.set_parameters(&params);
    }
    model.training_loss = Some(smoother_loss(&model, pairs)?);
    Ok(model)
}
