//! Score regression from difference features, plus rank and tier metrics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_text, write_text, CheckpointFile, TensorRecord};
use crate::error::{Error, Result};

pub const HIDDEN: usize = 16;
pub const OUTPUTS: usize = 3;
pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 100.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub smoothness: f64,
    pub completeness: f64,
    pub recognizability: f64,
}

impl Score {
    pub const NAMES: [&'static str; 3] = ["smoothness", "completeness", "recognizability"];

    pub fn new(smoothness: f64, completeness: f64, recognizability: f64) -> Self {
        Score {
            smoothness,
            completeness,
            recognizability,
        }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Score::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.smoothness, self.completeness, self.recognizability]
    }

    pub fn clamped(self) -> Self {
        Score::from_array(self.to_array().map(|v| v.clamp(SCORE_MIN, SCORE_MAX)))
    }

    /// Mean of the three dimensions.
    pub fn overall(self) -> f64 {
        self.to_array().iter().sum::<f64>() / 3.0
    }
}

/// Which difference features feed the head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// `(C_s, C_a)`.
    #[default]
    Base,
    /// `(C_s, C_a, C_e)`.
    WithEmbedding,
}

impl FeatureSet {
    pub fn dim(self) -> usize {
        match self {
            FeatureSet::Base => 2,
            FeatureSet::WithEmbedding => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub c_s: f64,
    pub c_a: f64,
    /// Per-frame mean embedded distance along the alignment path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_e: Option<f64>,
}

impl FeatureVector {
    pub fn new(c_s: f64, c_a: f64) -> Self {
        FeatureVector { c_s, c_a, c_e: None }
    }

    pub fn with_embedding(mut self, c_e: f64) -> Self {
        self.c_e = Some(c_e);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_s", Some(self.c_s)), ("c_a", Some(self.c_a)), ("c_e", self.c_e)] {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::validation(format!("feature {name} must be finite and ≥ 0, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn to_vec(&self, set: FeatureSet) -> Result<Vec<f64>> {
        self.validate()?;
        match set {
            FeatureSet::Base => Ok(vec![self.c_s, self.c_a]),
            FeatureSet::WithEmbedding => {
                let c_e = self
                    .c_e
                    .ok_or_else(|| Error::validation("head expects c_e but the feature vector has none"))?;
                Ok(vec![self.c_s, self.c_a, c_e])
            }
        }
    }
}

/// `O = W₂ tanh(W₁ x̂ + b₁) + b₂` with `x̂ = (x − shift) / scale`.
///
/// `shift` and `scale` are fixed from the training features and are not trained.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreHead {
    features: FeatureSet,
    shift: Vec<f64>,
    scale: Vec<f64>,
    /// `HIDDEN × d`, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// `OUTPUTS × HIDDEN`, row-major.
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Intermediate values of one forward pass.
struct Trace {
    x: Vec<f64>,
    h: Vec<f64>,
    out: [f64; 3],
}

impl ScoreHead {
    /// Seeded random weights, output bias at `bias`.
    pub fn new(features: FeatureSet, bias: [f64; 3], seed: u64) -> Self {
        let d = features.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("valid std");
        let n2 = Normal::new(0.0, (1.0 / HIDDEN as f64).sqrt()).expect("valid std");
        let w1 = (0..HIDDEN * d).map(|_| n1.sample(&mut rng)).collect();
        let w2 = (0..OUTPUTS * HIDDEN).map(|_| n2.sample(&mut rng)).collect();
        ScoreHead {
            features,
            shift: vec![0.0; d],
            scale: vec![1.0; d],
            w1,
            b1: vec![0.0; HIDDEN],
            w2,
            b2: bias.to_vec(),
        }
    }

    /// All weights zero; every output equals `bias`.
    pub fn zeroed(features: FeatureSet, bias: [f64; 3]) -> Self {
        let d = features.dim();
        ScoreHead {
            features,
            shift: vec![0.0; d],
            scale: vec![1.0; d],
            w1: vec![0.0; HIDDEN * d],
            b1: vec![0.0; HIDDEN],
            w2: vec![0.0; OUTPUTS * HIDDEN],
            b2: bias.to_vec(),
        }
    }

    /// Sets the input standardization. Scales must be positive.
    pub fn with_normalization(mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let d = self.features.dim();
        if shift.len() != d || scale.len() != d {
            return Err(Error::validation(format!("normalization must have {d} entries")));
        }
        if shift.iter().any(|v| !v.is_finite()) || scale.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::validation("normalization shift must be finite and scale positive"));
        }
        self.shift = shift;
        self.scale = scale;
        Ok(self)
    }

    pub fn features(&self) -> FeatureSet {
        self.features
    }

    pub fn input_dim(&self) -> usize {
        self.features.dim()
    }

    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.shift, &self.scale)
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Trainable parameters as `[w1, b1, w2, b2]`.
    pub fn parameters(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2].into_iter().flatten().copied().collect()
    }

    pub fn set_parameters(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let mut off = 0;
        for buf in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let n = buf.len();
            buf.copy_from_slice(&p[off..off + n]);
            off += n;
        }
    }

    fn trace(&self, raw: &[f64]) -> Trace {
        let d = self.input_dim();
        let x: Vec<f64> = (0..d).map(|i| (raw[i] - self.shift[i]) / self.scale[i]).collect();
        let h: Vec<f64> = (0..HIDDEN)
            .map(|k| {
                let z = self.b1[k] + (0..d).map(|i| self.w1[k * d + i] * x[i]).sum::<f64>();
                z.tanh()
            })
            .collect();
        let mut out = [0.0; 3];
        for (o, v) in out.iter_mut().enumerate() {
            *v = self.b2[o] + (0..HIDDEN).map(|k| self.w2[o * HIDDEN + k] * h[k]).sum::<f64>();
        }
        Trace { x, h, out }
    }

    /// Unclamped outputs for a raw input vector.
    pub fn forward_raw(&self, input: &[f64]) -> [f64; 3] {
        assert_eq!(input.len(), self.input_dim(), "input dimension");
        self.trace(input).out
    }

    /// Unclamped outputs and the parameter gradient of `Σ_o upstream[o]·out[o]`.
    pub fn forward_backward(&self, input: &[f64], upstream: [f64; 3]) -> ([f64; 3], Vec<f64>) {
        assert_eq!(input.len(), self.input_dim(), "input dimension");
        let d = self.input_dim();
        let Trace { x, h, out } = self.trace(input);
        let mut g_w1 = vec![0.0; HIDDEN * d];
        let mut g_b1 = vec![0.0; HIDDEN];
        let mut g_w2 = vec![0.0; OUTPUTS * HIDDEN];
        for o in 0..OUTPUTS {
            for k in 0..HIDDEN {
                g_w2[o * HIDDEN + k] = upstream[o] * h[k];
            }
        }
        for k in 0..HIDDEN {
            let dh: f64 = (0..OUTPUTS).map(|o| upstream[o] * self.w2[o * HIDDEN + k]).sum();
            let dz = dh * (1.0 - h[k] * h[k]);
            g_b1[k] = dz;
            for i in 0..d {
                g_w1[k * d + i] = dz * x[i];
            }
        }
        let mut grad = g_w1;
        grad.extend(g_b1);
        grad.extend(g_w2);
        grad.extend(upstream);
        (out, grad)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ScoreHead::from_json(&read_text(path.as_ref())?)
    }

    pub fn to_json(&self) -> String {
        let d = self.input_dim();
        let mut t = BTreeMap::new();
        let mut put = |name: &str, shape: Vec<usize>, data: &[f64]| {
            t.insert(name.to_string(), TensorRecord::new(shape, data.to_vec()));
        };
        put("input.shift", vec![d], &self.shift);
        put("input.scale", vec![d], &self.scale);
        put("hidden.weight", vec![HIDDEN, d], &self.w1);
        put("hidden.bias", vec![HIDDEN], &self.b1);
        put("output.weight", vec![OUTPUTS, HIDDEN], &self.w2);
        put("output.bias", vec![OUTPUTS], &self.b2);
        CheckpointFile::new(HEAD_MODEL_NAME, HeadMeta { features: self.features }, t).to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile<HeadMeta> = CheckpointFile::from_json(text, HEAD_MODEL_NAME)?;
        let features = file.meta.features;
        let d = features.dim();
        let get = |name: &str, shape: &[usize]| file.tensor(name, shape).map(|t| t.data.clone());
        let head = ScoreHead {
            features,
            shift: vec![0.0; d],
            scale: vec![1.0; d],
            w1: get("hidden.weight", &[HIDDEN, d])?,
            b1: get("hidden.bias", &[HIDDEN])?,
            w2: get("output.weight", &[OUTPUTS, HIDDEN])?,
            b2: get("output.bias", &[OUTPUTS])?,
        };
        head.with_normalization(get("input.shift", &[d])?, get("input.scale", &[d])?)
    }
}

const HEAD_MODEL_NAME: &str = "score_head";

#[derive(Clone, Serialize, Deserialize)]
struct HeadMeta {
    features: FeatureSet,
}

/// Predicted score, clamped to `[0, 100]`.
pub fn score_forward(features: &FeatureVector, head: &ScoreHead) -> Result<Score> {
    let x = features.to_vec(head.features())?;
    Ok(Score::from_array(head.forward_raw(&x)).clamped())
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation.
///
/// Without ties this is `1 − 6Σd²/(n(n²−1))`. With ties it is the Pearson
/// correlation of the average ranks. A constant input has no rank ordering
/// and gives 0.
pub fn spearman(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::validation(format!(
            "spearman: lengths differ ({} vs {})",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::validation("spearman needs at least 2 values"));
    }
    if y.iter().chain(y_hat).any(|v| !v.is_finite()) {
        return Err(Error::validation("spearman: non-finite value"));
    }
    let ra = average_ranks(y);
    let rb = average_ranks(y_hat);
    let has_ties = |r: &[f64]| r.iter().any(|x| x.fract() != 0.0) || {
        let mut s = r.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).any(|w| w[0] == w[1])
    };
    if has_ties(&ra) || has_ties(&rb) {
        return Ok(pearson(&ra, &rb));
    }
    let n = y.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

/// Five-point band index; 100 falls in the top band.
pub fn tier(x: f64) -> Result<usize> {
    if !(SCORE_MIN..=SCORE_MAX).contains(&x) {
        return Err(Error::validation(format!("score {x} is outside [0, 100]")));
    }
    Ok(((x / 5.0).floor() as usize).min(19))
}

/// Fraction of predictions in the same five-point band as the truth.
pub fn tier_accuracy(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::validation("tier_accuracy: lengths differ"));
    }
    if y.is_empty() {
        return Err(Error::validation("tier_accuracy needs at least one value"));
    }
    let mut hits = 0usize;
    for (a, b) in y.iter().zip(y_hat) {
        if tier(*a)? == tier(*b)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / y.len() as f64)
}
