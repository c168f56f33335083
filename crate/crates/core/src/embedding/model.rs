//! Encoder–decoder attention network producing per-joint difference weights.
//!
//! The encoder reads the learner frame (one quaternion per joint, joints in
//! topological order) with full self-attention. The decoder reads the
//! reference frame; its self-attention lets joint `i` see only itself and
//! its skeletal ancestors, and its cross-attention reads the encoder output.
//! A linear head maps every decoder position to one weight `w_i`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::attention::{multi_head, AttentionVars};
use super::distance::JointWeights;
use crate::autodiff::{Mask, Tape, Var};
use crate::checkpoint::{read_text, write_text, CheckpointFile, TensorRecord};
use crate::error::{Error, Result};
use crate::motion::PoseFrame;
use crate::rotmath::Skeleton;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_hidden: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            d_model: 32,
            n_heads: 4,
            ff_hidden: 64,
        }
    }
}

impl EmbedConfig {
    fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.ff_hidden == 0 {
            return Err(Error::validation("embedding dimensions must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::validation(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

macro_rules! params {
    ($($id:ident = $name:literal : [$r:ident, $c:ident]),* $(,)?) => {
        #[allow(non_camel_case_types, clippy::upper_case_acronyms)]
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub(crate) enum P { $($id),* }
        const PARAM_NAMES: &[&str] = &[$($name),*];
        fn param_shape(p: usize, dims: &Dims) -> (usize, usize) {
            const SHAPES: &[(Dim, Dim)] = &[$((Dim::$r, Dim::$c)),*];
            let (r, c) = SHAPES[p];
            (dims.get(r), dims.get(c))
        }
    };
}

#[derive(Clone, Copy)]
enum Dim {
    One,
    Four,
    D,
    H,
    N,
}

struct Dims {
    d: usize,
    h: usize,
    n: usize,
}

impl Dims {
    fn get(&self, d: Dim) -> usize {
        match d {
            Dim::One => 1,
            Dim::Four => 4,
            Dim::D => self.d,
            Dim::H => self.h,
            Dim::N => self.n,
        }
    }
}

params! {
    EncInW = "encoder.input.weight": [Four, D],
    EncInB = "encoder.input.bias": [One, D],
    EncJoint = "encoder.joint_embedding": [N, D],
    EncWq = "encoder.attn.query": [D, D],
    EncWk = "encoder.attn.key": [D, D],
    EncWv = "encoder.attn.value": [D, D],
    EncWo = "encoder.attn.out.weight": [D, D],
    EncBo = "encoder.attn.out.bias": [One, D],
    EncLn1G = "encoder.norm1.gain": [One, D],
    EncLn1B = "encoder.norm1.bias": [One, D],
    EncFfW1 = "encoder.ff.w1": [D, H],
    EncFfB1 = "encoder.ff.b1": [One, H],
    EncFfW2 = "encoder.ff.w2": [H, D],
    EncFfB2 = "encoder.ff.b2": [One, D],
    EncLn2G = "encoder.norm2.gain": [One, D],
    EncLn2B = "encoder.norm2.bias": [One, D],
    DecInW = "decoder.input.weight": [Four, D],
    DecInB = "decoder.input.bias": [One, D],
    DecJoint = "decoder.joint_embedding": [N, D],
    DecSWq = "decoder.self_attn.query": [D, D],
    DecSWk = "decoder.self_attn.key": [D, D],
    DecSWv = "decoder.self_attn.value": [D, D],
    DecSWo = "decoder.self_attn.out.weight": [D, D],
    DecSBo = "decoder.self_attn.out.bias": [One, D],
    DecLn1G = "decoder.norm1.gain": [One, D],
    DecLn1B = "decoder.norm1.bias": [One, D],
    DecCWq = "decoder.cross_attn.query": [D, D],
    DecCWk = "decoder.cross_attn.key": [D, D],
    DecCWv = "decoder.cross_attn.value": [D, D],
    DecCWo = "decoder.cross_attn.out.weight": [D, D],
    DecCBo = "decoder.cross_attn.out.bias": [One, D],
    DecLn2G = "decoder.norm2.gain": [One, D],
    DecLn2B = "decoder.norm2.bias": [One, D],
    DecFfW1 = "decoder.ff.w1": [D, H],
    DecFfB1 = "decoder.ff.b1": [One, H],
    DecFfW2 = "decoder.ff.w2": [H, D],
    DecFfB2 = "decoder.ff.b2": [One, D],
    DecLn3G = "decoder.norm3.gain": [One, D],
    DecLn3B = "decoder.norm3.bias": [One, D],
    HeadW = "head.weight": [D, One],
    HeadB = "head.bias": [One, One],
}

/// Joint ordering and ancestry mask derived from a skeleton.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLayout {
    pub skeleton_id: String,
    /// Skeleton joint index at each topological position.
    pub order: Vec<usize>,
    /// Parent position (in topological order) of each position.
    pub parents: Vec<Option<usize>>,
}

impl JointLayout {
    pub fn from_skeleton(skel: &Skeleton) -> Self {
        let order = skel.topological_indices().to_vec();
        let mut pos_of = vec![0; order.len()];
        for (p, &i) in order.iter().enumerate() {
            pos_of[i] = p;
        }
        let parents = order.iter().map(|&i| skel.parent_of(i).map(|p| pos_of[p])).collect();
        JointLayout {
            skeleton_id: skel.id().to_string(),
            order,
            parents,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Whether position `j` is `i` or one of its ancestors.
    pub fn is_ancestor_or_self(&self, j: usize, i: usize) -> bool {
        let mut cur = Some(i);
        while let Some(c) = cur {
            if c == j {
                return true;
            }
            cur = self.parents[c];
        }
        false
    }

    pub fn ancestry_mask(&self) -> Mask {
        let n = self.len();
        let allowed = (0..n * n).map(|k| self.is_ancestor_or_self(k % n, k / n)).collect();
        Mask { rows: n, cols: n, allowed }
    }

    fn validate(&self) -> Result<()> {
        let n = self.order.len();
        if self.parents.len() != n {
            return Err(Error::validation("joint layout: parents and order lengths differ"));
        }
        for (i, p) in self.parents.iter().enumerate() {
            if p.is_some_and(|p| p >= i) {
                return Err(Error::validation(format!(
                    "joint layout: position {i} has parent {p:?} that does not precede it"
                )));
            }
        }
        Ok(())
    }

    /// `N×4` matrix of quaternion components in topological order.
    pub fn frame_matrix(&self, frame: &PoseFrame) -> Result<Matrix> {
        if frame.len() != self.len() {
            return Err(Error::validation(format!(
                "frame has {} rotations but the embedding expects {} joints",
                frame.len(),
                self.len()
            )));
        }
        let mut m = Matrix::zeros(self.len(), 4);
        for (p, &i) in self.order.iter().enumerate() {
            m.row_mut(p).copy_from_slice(&frame.rotations()[i].to_array());
        }
        Ok(m)
    }
}

#[derive(Clone, Debug)]
pub struct EmbedModel {
    config: EmbedConfig,
    layout: JointLayout,
    mask: Arc<Mask>,
    params: Vec<Matrix>,
}

impl PartialEq for EmbedModel {
    fn eq(&self, o: &Self) -> bool {
        self.config == o.config && self.layout == o.layout && self.params == o.params
    }
}

/// Tape handles produced by [`EmbedModel::forward`].
pub struct EmbedForward {
    pub tape: Tape,
    /// `N×1` joint weights.
    pub weights: Var,
    pub params: Vec<Var>,
    pub learner_input: Var,
    pub reference_input: Var,
}

impl EmbedModel {
    /// Random initialization: weights `N(0, 1/fan_in)`, norm gains 1, biases 0.
    pub fn new(skel: &Skeleton, config: EmbedConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = JointLayout::from_skeleton(skel);
        let dims = Dims {
            d: config.d_model,
            h: config.ff_hidden,
            n: layout.len(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..PARAM_NAMES.len())
            .map(|p| {
                let (r, c) = param_shape(p, &dims);
                let name = PARAM_NAMES[p];
                if name.ends_with(".gain") {
                    Matrix::filled(r, c, 1.0)
                } else if name.ends_with("bias") || name.ends_with(".b1") || name.ends_with(".b2") {
                    Matrix::zeros(r, c)
                } else {
                    let std = if name.ends_with("joint_embedding") { 1.0 } else { (1.0 / r as f64).sqrt() };
                    let normal = Normal::new(0.0, std).expect("valid std");
                    Matrix::from_vec(r, c, (0..r * c).map(|_| normal.sample(&mut rng)).collect())
                }
            })
            .collect();
        Ok(EmbedModel::from_parts(config, layout, params))
    }

    fn from_parts(config: EmbedConfig, layout: JointLayout, params: Vec<Matrix>) -> Self {
        let mask = Arc::new(layout.ancestry_mask());
        EmbedModel {
            config,
            layout,
            mask,
            params,
        }
    }

    /// Sets the output head to zero weights and the given bias.
    pub fn with_zero_head(mut self, bias: f64) -> Self {
        self.params[P::HeadW as usize].data_mut().fill(0.0);
        self.params[P::HeadB as usize].data_mut()[0] = bias;
        self
    }

    pub fn config(&self) -> EmbedConfig {
        self.config
    }

    pub fn layout(&self) -> &JointLayout {
        &self.layout
    }

    pub fn n_joints(&self) -> usize {
        self.layout.len()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|m| m.data().len()).sum()
    }

    pub fn param_names() -> &'static [&'static str] {
        PARAM_NAMES
    }

    /// Shape of each parameter matrix, in [`Self::param_names`] order.
    pub fn parameter_shapes(&self) -> Vec<(usize, usize)> {
        self.params.iter().map(Matrix::shape).collect()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.params.iter().flat_map(|m| m.data().iter().copied()).collect()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter vector length");
        let mut off = 0;
        for m in &mut self.params {
            let len = m.data().len();
            m.data_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
    }

    /// Records the forward pass on a fresh tape. Inputs are `N×4` matrices in topological order.
    pub fn forward(&self, learner: Matrix, reference: Matrix) -> EmbedForward {
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.iter().map(|m| tape.leaf(m.clone())).collect();
        let p = |id: P| params[id as usize];
        let heads = self.config.n_heads;
        let t = &mut tape;

        let learner_input = t.leaf(learner);
        let reference_input = t.leaf(reference);

        // encoder over the learner frame
        let x = t.matmul(learner_input, p(P::EncInW));
        let x = t.add_row(x, p(P::EncInB));
        let x = t.add(x, p(P::EncJoint));
        let enc_attn = AttentionVars {
            wq: p(P::EncWq),
            wk: p(P::EncWk),
            wv: p(P::EncWv),
            wo: p(P::EncWo),
            bo: p(P::EncBo),
        };
        let a = multi_head(t, x, x, enc_attn, heads, None);
        let x = t.add(x, a);
        let x = t.layer_norm(x, p(P::EncLn1G), p(P::EncLn1B));
        let f = feed_forward(t, x, p(P::EncFfW1), p(P::EncFfB1), p(P::EncFfW2), p(P::EncFfB2));
        let x = t.add(x, f);
        let memory = t.layer_norm(x, p(P::EncLn2G), p(P::EncLn2B));

        // decoder over the reference frame
        let y = t.matmul(reference_input, p(P::DecInW));
        let y = t.add_row(y, p(P::DecInB));
        let y = t.add(y, p(P::DecJoint));
        let self_attn = AttentionVars {
            wq: p(P::DecSWq),
            wk: p(P::DecSWk),
            wv: p(P::DecSWv),
            wo: p(P::DecSWo),
            bo: p(P::DecSBo),
        };
        let a = multi_head(t, y, y, self_attn, heads, Some(self.mask.clone()));
        let y = t.add(y, a);
        let y = t.layer_norm(y, p(P::DecLn1G), p(P::DecLn1B));
        let cross = AttentionVars {
            wq: p(P::DecCWq),
            wk: p(P::DecCWk),
            wv: p(P::DecCWv),
            wo: p(P::DecCWo),
            bo: p(P::DecCBo),
        };
        let c = multi_head(t, y, memory, cross, heads, None);
        let y = t.add(y, c);
        let y = t.layer_norm(y, p(P::DecLn2G), p(P::DecLn2B));
        let f = feed_forward(t, y, p(P::DecFfW1), p(P::DecFfB1), p(P::DecFfW2), p(P::DecFfB2));
        let y = t.add(y, f);
        let y = t.layer_norm(y, p(P::DecLn3G), p(P::DecLn3B));

        let w = t.matmul(y, p(P::HeadW));
        let weights = t.add_row(w, p(P::HeadB));
        EmbedForward {
            tape,
            weights,
            params,
            learner_input,
            reference_input,
        }
    }

    /// Flattened parameter gradient of `Σ seed_i · w_i`, in [`Self::parameters`] order.
    pub fn weight_gradient(&self, fwd: &EmbedForward, seed: &[f64]) -> Vec<f64> {
        let grads = fwd.tape.backward(fwd.weights, Matrix::from_vec(seed.len(), 1, seed.to_vec()));
        let mut flat = Vec::with_capacity(self.param_count());
        for (v, m) in fwd.params.iter().zip(&self.params) {
            match grads.get(*v) {
                Some(g) => flat.extend_from_slice(g.data()),
                None => flat.extend(std::iter::repeat_n(0.0, m.data().len())),
            }
        }
        flat
    }

    /// Per-joint weights for a learner frame against a reference frame.
    pub fn embed(&self, frame: &PoseFrame, ref_frame: &PoseFrame) -> Result<JointWeights> {
        let a = self.layout.frame_matrix(frame)?;
        let b = self.layout.frame_matrix(ref_frame)?;
        let fwd = self.forward(a, b);
        Ok(JointWeights {
            w: fwd.tape.value(fwd.weights).data().to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        EmbedModel::from_json(&read_text(path.as_ref())?)
    }

    pub fn to_json(&self) -> String {
        let tensors: BTreeMap<String, TensorRecord> = PARAM_NAMES
            .iter()
            .zip(&self.params)
            .map(|(n, m)| (n.to_string(), TensorRecord::new(vec![m.rows(), m.cols()], m.data().to_vec())))
            .collect();
        CheckpointFile::new(
            EMBED_MODEL_NAME,
            EmbedMeta {
                config: self.config,
                layout: self.layout.clone(),
            },
            tensors,
        )
        .to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile<EmbedMeta> = CheckpointFile::from_json(text, EMBED_MODEL_NAME)?;
        let EmbedMeta { config, layout } = file.meta.clone();
        config.validate()?;
        layout.validate()?;
        let dims = Dims {
            d: config.d_model,
            h: config.ff_hidden,
            n: layout.len(),
        };
        let params = (0..PARAM_NAMES.len())
            .map(|p| {
                let (r, c) = param_shape(p, &dims);
                Ok(Matrix::from_vec(r, c, file.tensor(PARAM_NAMES[p], &[r, c])?.data.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbedModel::from_parts(config, layout, params))
    }

    /// Fails unless the model was built for `skel`.
    pub fn check_skeleton(&self, skel: &Skeleton) -> Result<()> {
        if self.layout != JointLayout::from_skeleton(skel) {
            return Err(Error::validation(format!(
                "embedding model was built for skeleton {:?}, not {:?}",
                self.layout.skeleton_id,
                skel.id()
            )));
        }
        Ok(())
    }
}

const EMBED_MODEL_NAME: &str = "embedding";

#[derive(Clone, Serialize, Deserialize)]
struct EmbedMeta {
    config: EmbedConfig,
    layout: JointLayout,
}

fn feed_forward(t: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Var {
    let h = t.matmul(x, w1);
    let h = t.add_row(h, b1);
    let h = t.tanh(h);
    let o = t.matmul(h, w2);
    t.add_row(o, b2)
}

/// Per-joint difference weights `W` for a learner frame against a reference frame.
pub fn embed_frame_pair(frame: &PoseFrame, ref_frame: &PoseFrame, model: &EmbedModel) -> Result<JointWeights> {
    model.embed(frame, ref_frame)
}
