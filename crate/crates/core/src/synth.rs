//! Synthetic gestures and a perturbation oracle that scores them.
//!
//! References are eased slerp paths through random keyposes. A learner is a
//! reference after four perturbations, applied in this order: uniform time
//! warp, slowly varying rotation errors on a subset of joints, held-pose
//! dropout segments, and per-frame Gaussian jitter. The oracle turns the
//! perturbation sizes into scores:
//!
//! ```text
//! smoothness      = 100 · exp(−ALPHA · jitter)
//! completeness    = 100 · (1 − held frames / T)
//! recognizability = 100 · exp(−BETA · mean joint error)
//! ```
//!
//! `jitter` is the per-axis standard deviation in radians and the mean joint
//! error is the injected rotation angle averaged over all joints and frames.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::joint_log_distance;
use crate::error::{Error, Result};
use crate::motion::{Checkpoint, MotionSequence, PoseFrame, ReferenceLibrary, ScoredSample};
use crate::rotmath::{quat_from_axis_angle, slerp, AxisAngle, Quaternion, Skeleton, Vec3};
use crate::scorehead::Score;

/// Smoothness decay per radian of jitter.
pub const ALPHA: f64 = 5.0;
/// Recognizability decay per radian of mean joint error.
pub const BETA: f64 = 5.0;

/// Quality bands `[lo, hi)` used to spread learners over the score range.
pub const BANDS: [(f64, f64); 4] = [(90.0, 100.0), (80.0, 90.0), (70.0, 80.0), (60.0, 70.0)];

/// Deterministic 64-bit mix for deriving child seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GestureSpec {
    pub skeleton_id: String,
    pub fps: f64,
    pub keyposes: Vec<PoseFrame>,
    /// Frames from each keypose to the next.
    pub durations: Vec<usize>,
    pub seed: u64,
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v * (1.0 / n);
        }
    }
}

impl GestureSpec {
    /// Random keyposes with joint angles in `[0.1, 0.9]` rad and segment
    /// lengths drawn from `segment_frames` (inclusive).
    pub fn random(skel: &Skeleton, keyposes: usize, segment_frames: (usize, usize), fps: f64, seed: u64) -> Result<Self> {
        if segment_frames.0 > segment_frames.1 {
            return Err(Error::validation("segment frame range is empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses = (0..keyposes)
            .map(|_| {
                let rot = (0..skel.len())
                    .map(|_| {
                        let axis = random_unit(&mut rng);
                        let angle = rng.random_range(0.1..0.9);
                        let v = axis * angle;
                        quat_from_axis_angle(AxisAngle::new(v.x, v.y, v.z))
                    })
                    .collect::<Result<Vec<_>>>()?;
                PoseFrame::new(0.0, rot)
            })
            .collect::<Result<Vec<_>>>()?;
        let durations = (1..keyposes)
            .map(|_| rng.random_range(segment_frames.0..=segment_frames.1))
            .collect();
        let spec = GestureSpec {
            skeleton_id: skel.id().to_string(),
            fps,
            keyposes: poses,
            durations,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.keyposes.len() < 2 {
            return Err(Error::validation("a gesture needs at least 2 keyposes"));
        }
        if self.durations.len() + 1 != self.keyposes.len() {
            return Err(Error::validation(format!(
                "{} keyposes need {} durations, got {}",
                self.keyposes.len(),
                self.keyposes.len() - 1,
                self.durations.len()
            )));
        }
        if let Some(d) = self.durations.iter().find(|&&d| d < 2) {
            return Err(Error::validation(format!("segment duration {d} is below 2 frames")));
        }
        let n = self.keyposes[0].len();
        if self.keyposes.iter().any(|k| k.len() != n) {
            return Err(Error::validation("keyposes differ in joint count"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::validation(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }

    /// Frame index of every keypose in the generated reference.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut out = vec![0];
        for d in &self.durations {
            out.push(out.last().unwrap() + d);
        }
        out
    }
}

fn smoothstep(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

/// Eased slerp through the keyposes; `Σ durations + 1` frames.
pub fn generate_reference(spec: &GestureSpec) -> Result<MotionSequence> {
    spec.validate()?;
    let mut rot = Vec::new();
    for (k, &d) in spec.durations.iter().enumerate() {
        let (a, b) = (spec.keyposes[k].rotations(), spec.keyposes[k + 1].rotations());
        for f in 0..d {
            let e = smoothstep(f as f64 / d as f64);
            rot.push(a.iter().zip(b).map(|(&qa, &qb)| slerp(qa, qb, e)).collect());
        }
    }
    rot.push(spec.keyposes.last().unwrap().rotations().to_vec());
    MotionSequence::from_rotations(spec.skeleton_id.clone(), spec.fps, rot)
}

/// A held-pose segment: frames `start..start + len` repeat frame `start − 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropoutSegment {
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    /// Per-axis jitter standard deviation, radians.
    pub jitter: f64,
    /// Target mean injected rotation error over all joints and frames, radians.
    pub joint_error: f64,
    /// Fraction of joints that carry the error.
    pub error_joint_fraction: f64,
    /// Output length over input length; in `[0.5, 2]`.
    pub warp: f64,
    /// Held segments, in frames of the warped sequence.
    pub dropout: Vec<DropoutSegment>,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        PerturbationParams {
            jitter: 0.0,
            joint_error: 0.0,
            error_joint_fraction: 0.25,
            warp: 1.0,
            dropout: Vec::new(),
        }
    }
}

impl PerturbationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("jitter", self.jitter), ("joint_error", self.joint_error)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        if !(self.error_joint_fraction > 0.0 && self.error_joint_fraction <= 1.0) {
            return Err(Error::validation("error_joint_fraction must be in (0, 1]"));
        }
        if !(0.5..=2.0).contains(&self.warp) {
            return Err(Error::validation(format!("warp factor {} is outside [0.5, 2]", self.warp)));
        }
        Ok(())
    }

    /// Length after warping a `t`-frame sequence.
    pub fn warped_len(&self, t: usize) -> usize {
        ((t - 1) as f64 * self.warp).round() as usize + 1
    }
}

/// Oracle scores for a perturbation applied to a `t_out`-frame learner.
pub fn oracle_score(params: &PerturbationParams, t_out: usize) -> Score {
    let held: usize = params.dropout.iter().map(|d| d.len).sum();
    Score::new(
        100.0 * (-ALPHA * params.jitter).exp(),
        100.0 * (1.0 - held as f64 / t_out as f64),
        100.0 * (-BETA * params.joint_error).exp(),
    )
    .clamped()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// The unperturbed reference.
    pub clean: MotionSequence,
    pub perturbed: MotionSequence,
    /// The learner before jitter; the clean target for smoother training.
    pub dejittered: MotionSequence,
    pub oracle_scores: Score,
    /// Keypose frames in learner time, scored by the true-correspondence joint distance.
    pub checkpoints: Vec<Checkpoint>,
    pub params: PerturbationParams,
}

fn warp_sequence(clean: &MotionSequence, warp: f64, t_out: usize) -> Result<Vec<Vec<Quaternion>>> {
    let t = clean.len();
    if warp == 1.0 {
        return Ok(clean.frames().iter().map(|f| f.rotations().to_vec()).collect());
    }
    let scale = (t - 1) as f64 / (t_out - 1) as f64;
    Ok((0..t_out)
        .map(|k| {
            let tau = k as f64 * scale;
            let i = (tau.floor() as usize).min(t - 1);
            let frac = tau - i as f64;
            let a = clean.frame(i).rotations();
            if frac == 0.0 || i + 1 >= t {
                return a.to_vec();
            }
            let b = clean.frame(i + 1).rotations();
            a.iter().zip(b).map(|(&qa, &qb)| slerp(qa, qb, frac)).collect()
        })
        .collect())
}

/// Source frame of learner frame `k` under a uniform warp.
fn source_frame(k: usize, t: usize, t_out: usize) -> usize {
    if t_out == 1 {
        return 0;
    }
    ((k as f64 * (t - 1) as f64 / (t_out - 1) as f64).round() as usize).min(t - 1)
}

/// Applies the perturbations in order and scores the result.
///
/// `boundaries` are keypose frames of `clean`; they become checkpoints.
pub fn perturb_with_oracle(clean: &MotionSequence, boundaries: &[usize], params: &PerturbationParams, seed: u64) -> Result<SyntheticSample> {
    params.validate()?;
    let t = clean.len();
    let n = clean.joint_count();
    let t_out = params.warped_len(t);
    if t_out < 2 {
        return Err(Error::validation("warped sequence is shorter than 2 frames"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rot = warp_sequence(clean, params.warp, t_out)?;

    // slowly varying errors on a joint subset, scaled to the exact target mean
    if params.joint_error > 0.0 {
        let k = ((params.error_joint_fraction * n as f64).round() as usize).clamp(1, n);
        let mut joints: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.random_range(i..n);
            joints.swap(i, j);
        }
        joints.truncate(k);
        joints.sort_unstable();
        let shapes: Vec<(Vec3, f64, f64)> = joints
            .iter()
            .map(|_| (random_unit(&mut rng), rng.random_range(0.5..2.0), rng.random_range(0.0..2.0 * PI)))
            .collect();
        let profile = |f: usize, (_, c, phi): &(Vec3, f64, f64)| 1.0 + 0.5 * (2.0 * PI * c * f as f64 / t_out as f64 + phi).sin();
        let total: f64 = (0..t_out).map(|f| shapes.iter().map(|s| profile(f, s)).sum::<f64>()).sum();
        let amp = params.joint_error * (t_out * n) as f64 / total;
        for (f, frame) in rot.iter_mut().enumerate() {
            for (&j, s) in joints.iter().zip(&shapes) {
                let v = s.0 * (amp * profile(f, s));
                let e = quat_from_axis_angle(AxisAngle::new(v.x, v.y, v.z))?;
                frame[j] = e.compose(frame[j]).canonical();
            }
        }
    }

    let mut sorted = params.dropout.clone();
    sorted.sort_by_key(|d| d.start);
    for w in sorted.windows(2) {
        if w[0].start + w[0].len > w[1].start {
            return Err(Error::validation("dropout segments overlap"));
        }
    }
    for d in &sorted {
        if d.start == 0 || d.start + d.len > t_out {
            return Err(Error::validation(format!(
                "dropout segment {}..{} does not fit in frames 1..{t_out}",
                d.start,
                d.start + d.len
            )));
        }
        for f in d.start..d.start + d.len {
            rot[f] = rot[d.start - 1].clone();
        }
    }
    let mut template = clean.clone();
    if t_out != t {
        template = MotionSequence::from_rotations(clean.skeleton_id(), clean.fps(), rot.clone())?;
    }
    let dejittered = template.with_rotations(rot.clone())?;

    if params.jitter > 0.0 {
        let normal = Normal::new(0.0, params.jitter).expect("valid jitter");
        for frame in rot.iter_mut() {
            for q in frame.iter_mut() {
                let e = AxisAngle::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
                *q = quat_from_axis_angle(e)?.compose(*q).canonical();
            }
        }
    }
    let perturbed = template.with_rotations(rot)?;

    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    for &b in boundaries {
        if b >= t {
            return Err(Error::validation(format!("boundary {b} is outside the {t}-frame reference")));
        }
        let k = (((b as f64) * (t_out - 1) as f64 / (t - 1) as f64).round() as usize).min(t_out - 1);
        if checkpoints.last().is_some_and(|c| c.frame_index >= k) {
            continue;
        }
        let src = source_frame(k, t, t_out);
        let (fl, fr) = (perturbed.frame(k), clean.frame(src));
        let baseline_score = fl
            .rotations()
            .iter()
            .zip(fr.rotations())
            .map(|(&a, &b)| joint_log_distance(a, b).magnitude)
            .sum();
        checkpoints.push(Checkpoint {
            frame_index: k,
            baseline_score,
        });
    }

    Ok(SyntheticSample {
        clean: clean.clone(),
        oracle_scores: oracle_score(params, t_out),
        perturbed,
        dejittered,
        checkpoints,
        params: params.clone(),
    })
}

/// Size and ranges of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub references: usize,
    pub learners_per_reference: usize,
    /// Keep only the first `limit` learners, if set.
    pub limit: Option<usize>,
    pub keyposes: (usize, usize),
    pub segment_frames: (usize, usize),
    pub fps: f64,
    pub warp: (f64, f64),
    pub error_joint_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            references: 8,
            learners_per_reference: 4,
            limit: None,
            keyposes: (4, 6),
            segment_frames: (10, 16),
            fps: 30.0,
            warp: (0.9, 1.1),
            error_joint_fraction: 0.25,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.references == 0 || self.learners_per_reference == 0 {
            return Err(Error::validation("dataset needs at least one reference and one learner"));
        }
        if self.keyposes.0 < 2 || self.keyposes.0 > self.keyposes.1 {
            return Err(Error::validation("keypose range must start at 2 or more and be nonempty"));
        }
        if self.segment_frames.0 < 2 || self.segment_frames.0 > self.segment_frames.1 {
            return Err(Error::validation("segment frame range must start at 2 or more and be nonempty"));
        }
        if !(0.5 <= self.warp.0 && self.warp.0 <= self.warp.1 && self.warp.1 <= 2.0) {
            return Err(Error::validation("warp range must lie inside [0.5, 2]"));
        }
        Ok(())
    }
}

/// A generated reference with its keypose frames.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticReference {
    pub id: String,
    pub motion: MotionSequence,
    pub boundaries: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SyntheticEntry {
    pub sample: ScoredSample,
    pub synthetic: SyntheticSample,
    /// Index into [`BANDS`] the learner was drawn from.
    pub band: usize,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub references: Vec<SyntheticReference>,
    pub entries: Vec<SyntheticEntry>,
}

impl SyntheticDataset {
    pub fn library(&self) -> Result<ReferenceLibrary> {
        let mut lib = ReferenceLibrary::new();
        for r in &self.references {
            lib.insert(r.id.clone(), r.motion.clone())?;
        }
        Ok(lib)
    }

    pub fn samples(&self) -> Vec<ScoredSample> {
        self.entries.iter().map(|e| e.sample.clone()).collect()
    }
}

/// Perturbation sized so every oracle dimension lands near `target`.
pub fn params_for_target(target: f64, t_out: usize, error_joint_fraction: f64, warp: f64, rng: &mut impl Rng) -> PerturbationParams {
    let decay = -(target / 100.0).ln();
    let held = (((1.0 - target / 100.0) * t_out as f64).round() as usize).min(t_out.saturating_sub(2));
    let dropout = if held > 0 {
        vec![DropoutSegment {
            start: rng.random_range(1..=t_out - held),
            len: held,
        }]
    } else {
        Vec::new()
    };
    PerturbationParams {
        jitter: decay / ALPHA,
        joint_error: decay / BETA,
        error_joint_fraction,
        warp,
        dropout,
    }
}

/// `references × learners_per_reference` scored learners; learner `k` of each
/// reference targets band `k mod 4`. Deterministic for a fixed seed.
pub fn build_dataset(skel: &Skeleton, cfg: &DatasetConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let references: Vec<SyntheticReference> = (0..cfg.references)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, r as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keyposes = rng.random_range(cfg.keyposes.0..=cfg.keyposes.1);
            let spec = GestureSpec::random(skel, keyposes, cfg.segment_frames, cfg.fps, derive_seed(seed, 1))?;
            Ok(SyntheticReference {
                id: format!("ref{r:03}"),
                motion: generate_reference(&spec)?,
                boundaries: spec.boundaries(),
            })
        })
        .collect::<Result<_>>()?;

    let total = cfg.references * cfg.learners_per_reference;
    let count = cfg.limit.map_or(total, |l| l.min(total));
    let entries: Vec<SyntheticEntry> = (0..count)
        .into_par_iter()
        .map(|i| {
            let (r, k) = (i / cfg.learners_per_reference, i % cfg.learners_per_reference);
            let reference = &references[r];
            let seed = derive_seed(cfg.seed ^ 0x1ea7_5eed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let band = k % BANDS.len();
            let (lo, hi) = BANDS[band];
            let target = rng.random_range(lo..hi);
            let warp = if cfg.warp.0 == cfg.warp.1 {
                cfg.warp.0
            } else {
                rng.random_range(cfg.warp.0..=cfg.warp.1)
            };
            let proto = PerturbationParams {
                warp,
                ..PerturbationParams::default()
            };
            let t_out = proto.warped_len(reference.motion.len());
            let params = params_for_target(target, t_out, cfg.error_joint_fraction, warp, &mut rng);
            let syn = perturb_with_oracle(&reference.motion, &reference.boundaries, &params, derive_seed(seed, 2))?;
            let sample = ScoredSample::new(
                format!("{}_l{k}", reference.id),
                syn.perturbed.clone(),
                reference.id.clone(),
                syn.oracle_scores,
                syn.checkpoints.clone(),
            )?;
            Ok(SyntheticEntry {
                sample,
                synthetic: syn,
                band,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SyntheticDataset { references, entries })
}
