//! End-to-end scoring: smooth, align, embed, regress. Also batch evaluation
//! and full training from scored samples.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{alignment_cost_with, AlignOptions, LocalCost, LocalCostKind};
use crate::checkpoint::{read_text, write_text};
use crate::embedding::{joint_log_distance, truncated_distance, EmbedConfig, EmbedModel, TruncationPolicy};
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, ReferenceLibrary, ScoredSample};
use crate::rotmath::{quat_from_axis_angle, AxisAngle, Skeleton};
use crate::scorehead::{score_forward, spearman, tier_accuracy, FeatureSet, FeatureVector, Score, ScoreHead};
use crate::smoothing::{fit_smoother, smooth_sequence, SmootherFitConfig, SmootherMethod, SmootherModel};
use crate::synth::derive_seed;
use crate::training::{
    train_embedding, train_scorehead, CheckpointSupervision, LossTrace, PairSet, TrainConfig, TrainPair,
};

/// Inference-time settings that are not model weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub truncation: TruncationPolicy,
    pub local_cost: LocalCostKind,
    pub band: Option<usize>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            truncation: TruncationPolicy::default(),
            local_cost: LocalCostKind::Gradient,
            band: None,
        }
    }
}

/// The trained models used by [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct Models {
    pub skeleton: Skeleton,
    pub smoother: SmootherModel,
    pub embed: EmbedModel,
    pub head: ScoreHead,
}

impl Models {
    pub fn check(&self) -> Result<()> {
        self.embed.check_skeleton(&self.skeleton)
    }
}

/// Everything computed on the way to a score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub c_s: f64,
    pub c_a: f64,
    pub c_e: f64,
    /// Truncated embedding distance `D` for each path cell.
    pub frame_distances: Vec<f64>,
    pub path: Vec<(usize, usize)>,
    /// How many path cells stopped before the last joint.
    pub truncated_frames: usize,
    /// Truncation step `S` for each path cell.
    pub truncation_steps: Vec<usize>,
    pub smoother: SmootherMethod,
}

impl Diagnostics {
    pub fn features(&self) -> FeatureVector {
        FeatureVector::new(self.c_s, self.c_a).with_embedding(self.c_e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub score: Score,
    pub diagnostics: Diagnostics,
}

/// Difference features of a learner against a reference, without the head.
pub fn compute_diagnostics(
    models: &Models,
    opts: &PipelineOptions,
    learner: &MotionSequence,
    reference: &MotionSequence,
) -> Result<Diagnostics> {
    learner.validate_against(&models.skeleton).map_err(|e| e.at("input", "learner"))?;
    reference.validate_against(&models.skeleton).map_err(|e| e.at("input", "reference"))?;
    let smoothed = smooth_sequence(learner, &models.smoother).map_err(|e| e.at("smoothing", "learner"))?;
    let ref_smoothed = smooth_sequence(reference, &models.smoother).map_err(|e| e.at("smoothing", "reference"))?;
    let (s, r) = (&smoothed.smoothed, &ref_smoothed.smoothed);

    let mode = match opts.local_cost {
        LocalCostKind::Gradient => LocalCost::Gradient,
        LocalCostKind::Embedding => LocalCost::Embedding {
            model: &models.embed,
            policy: opts.truncation,
        },
    };
    let aligned = alignment_cost_with(s, r, mode, AlignOptions { band: opts.band }).map_err(|e| e.at("alignment", "learner vs reference"))?;

    let n = models.embed.n_joints();
    let cells: Vec<(f64, usize, f64)> = aligned
        .result
        .path
        .par_iter()
        .map(|&(tl, tr)| {
            let (fl, fr) = (s.frame(tl), r.frame(tr));
            let w = models
                .embed
                .embed(fl, fr)
                .map_err(|e| e.at("embedding", format!("frame pair ({tl}, {tr})")))?;
            let t = truncated_distance(&w, &opts.truncation);
            let raw: f64 = fl
                .rotations()
                .iter()
                .zip(fr.rotations())
                .map(|(&a, &b)| joint_log_distance(a, b).magnitude)
                .sum();
            Ok((t.distance, t.step, raw))
        })
        .collect::<Result<_>>()?;
    let k = cells.len() as f64;
    Ok(Diagnostics {
        c_s: smoothed.cost,
        c_a: aligned.c_a,
        c_e: cells.iter().map(|c| c.2).sum::<f64>() / k,
        frame_distances: cells.iter().map(|c| c.0).collect(),
        truncated_frames: cells.iter().filter(|c| c.1 < n).count(),
        truncation_steps: cells.iter().map(|c| c.1).collect(),
        path: aligned.result.path,
        smoother: smoothed.method,
    })
}

/// Scores a learner against a reference.
pub fn run_pipeline(
    models: &Models,
    opts: &PipelineOptions,
    learner: &MotionSequence,
    reference: &MotionSequence,
) -> Result<PipelineOutput> {
    let diagnostics = compute_diagnostics(models, opts, learner, reference)?;
    let score = score_forward(&diagnostics.features(), &models.head).map_err(|e| e.at("scoring", "features"))?;
    Ok(PipelineOutput { score, diagnostics })
}

/// One evaluated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub reference_id: String,
    pub truth: Score,
    pub predicted: Score,
    pub c_s: f64,
    pub c_a: f64,
    pub c_e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rank correlation of the overall (mean of three dimensions) scores.
    pub spearman: f64,
    /// Five-point band accuracy of the overall scores.
    pub tier_accuracy: f64,
    /// Rank correlation per dimension.
    pub spearman_per_dimension: [f64; 3],
    pub tier_accuracy_per_dimension: [f64; 3],
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Computes metrics from finished rows.
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::validation(format!("evaluation needs at least 2 samples, got {}", rows.len())));
        }
        let truth: Vec<f64> = rows.iter().map(|r| r.truth.overall()).collect();
        let pred: Vec<f64> = rows.iter().map(|r| r.predicted.overall()).collect();
        let mut per_rho = [0.0; 3];
        let mut per_tier = [0.0; 3];
        for d in 0..3 {
            let t: Vec<f64> = rows.iter().map(|r| r.truth.to_array()[d]).collect();
            let p: Vec<f64> = rows.iter().map(|r| r.predicted.to_array()[d]).collect();
            per_rho[d] = spearman(&t, &p)?;
            per_tier[d] = tier_accuracy(&t, &p)?;
        }
        Ok(EvalReport {
            spearman: spearman(&truth, &pred)?,
            tier_accuracy: tier_accuracy(&truth, &pred)?,
            spearman_per_dimension: per_rho,
            tier_accuracy_per_dimension: per_tier,
            rows,
        })
    }

    /// Tab-separated per-sample table with a header line.
    pub fn table(&self) -> String {
        let mut out = String::from(
            "id\treference_id\ttrue_smoothness\ttrue_completeness\ttrue_recognizability\ttrue_overall\t\
             pred_smoothness\tpred_completeness\tpred_recognizability\tpred_overall\tc_s\tc_a\tc_e\n",
        );
        for r in &self.rows {
            let t = r.truth.to_array();
            let p = r.predicted.to_array();
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.9e}\t{:.9e}\t{:.9e}\n",
                r.id,
                r.reference_id,
                t[0],
                t[1],
                t[2],
                r.truth.overall(),
                p[0],
                p[1],
                p[2],
                r.predicted.overall(),
                r.c_s,
                r.c_a,
                r.c_e
            ));
        }
        out
    }
}

/// Runs the pipeline on every sample; rows come back sorted by sample id.
pub fn evaluate(models: &Models, opts: &PipelineOptions, samples: &[ScoredSample], library: &ReferenceLibrary) -> Result<EvalReport> {
    if samples.len() < 2 {
        return Err(Error::validation(format!("evaluation needs at least 2 samples, got {}", samples.len())));
    }
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let rows = sorted
        .par_iter()
        .map(|s| {
            let reference = library.get(&s.reference_id).map_err(|e| e.at("library", s.id.clone()))?;
            let out = run_pipeline(models, opts, &s.motion, reference).map_err(|e| e.at("pipeline", s.id.clone()))?;
            let d = &out.diagnostics;
            Ok(EvalRow {
                id: s.id.clone(),
                reference_id: s.reference_id.clone(),
                truth: s.expert_scores,
                predicted: out.score,
                c_s: d.c_s,
                c_a: d.c_a,
                c_e: d.c_e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_rows(rows)
}

/// Seeded split into `(train, test)` with `test_count` samples held out.
pub fn split_samples(samples: &[ScoredSample], test_count: usize, seed: u64) -> Result<(Vec<ScoredSample>, Vec<ScoredSample>)> {
    if test_count > samples.len() {
        return Err(Error::validation(format!(
            "cannot hold out {test_count} of {} samples",
            samples.len()
        )));
    }
    let mut sorted: Vec<ScoredSample> = samples.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = sorted.split_off(sorted.len() - test_count);
    Ok((sorted, test))
}

/// Settings for smoother fitting on self-jittered references.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherPlan {
    pub fit: SmootherFitConfig,
    /// Jitter levels (radians per axis) added to clean references to form training pairs.
    pub jitter_levels: Vec<f64>,
    pub seed: u64,
}

impl Default for SmootherPlan {
    fn default() -> Self {
        SmootherPlan {
            fit: SmootherFitConfig::default(),
            jitter_levels: vec![0.02, 0.05, 0.1],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedPlan {
    pub train: TrainConfig,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_hidden: usize,
    /// Gaussian width of checkpoint supervision, frames.
    pub sigma_g: f64,
    /// Mismatched references paired with each sample.
    pub negatives_per_sample: usize,
}

impl Default for EmbedPlan {
    fn default() -> Self {
        let arch = EmbedConfig::default();
        EmbedPlan {
            train: TrainConfig {
                learning_rate: 2e-3,
                epochs: 6,
                batch_size: 64,
                frame_stride: 4,
                ..TrainConfig::default()
            },
            d_model: arch.d_model,
            n_heads: arch.n_heads,
            ff_hidden: arch.ff_hidden,
            sigma_g: 12.0,
            negatives_per_sample: 1,
        }
    }
}

impl EmbedPlan {
    pub fn arch(&self) -> EmbedConfig {
        EmbedConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            ff_hidden: self.ff_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadPlan {
    pub train: TrainConfig,
    pub features: FeatureSet,
}

impl Default for HeadPlan {
    fn default() -> Self {
        HeadPlan {
            train: TrainConfig {
                learning_rate: 1e-2,
                epochs: 2000,
                batch_size: 256,
                ..TrainConfig::default()
            },
            features: FeatureSet::Base,
        }
    }
}

/// Settings for every training stage; the TOML form of `train --config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingPlan {
    pub smoother: SmootherPlan,
    pub embed: EmbedPlan,
    pub head: HeadPlan,
    pub pipeline: PipelineOptions,
}

impl TrainingPlan {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
            Error::parse(line, e.message().to_string())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TrainingPlan::from_toml_str(&read_text(path.as_ref())?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    /// Applies one seed to every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.smoother.seed = derive_seed(seed, 1);
        self.embed.train.seed = derive_seed(seed, 2);
        self.head.train.seed = derive_seed(seed, 3);
        self
    }
}

/// Adds per-axis Gaussian jitter of `sigma` radians to every rotation.
pub fn add_jitter(seq: &MotionSequence, sigma: f64, seed: u64) -> Result<MotionSequence> {
    if sigma == 0.0 {
        return Ok(seq.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::validation(format!("jitter sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = seq
        .frames()
        .iter()
        .map(|f| {
            f.rotations()
                .iter()
                .map(|q| {
                    let e = AxisAngle::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
                    Ok(quat_from_axis_angle(e)?.compose(*q).canonical())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    seq.with_rotations(rot)
}

/// Smoother training pairs: each reference jittered at every level.
pub fn smoother_pairs(library: &ReferenceLibrary, plan: &SmootherPlan) -> Result<Vec<(MotionSequence, MotionSequence)>> {
    let mut pairs = Vec::new();
    for (k, (_, seq)) in library.iter().enumerate() {
        for (l, &sigma) in plan.jitter_levels.iter().enumerate() {
            let seed = derive_seed(plan.seed, (k * plan.jitter_levels.len() + l) as u64);
            pairs.push((add_jitter(seq, sigma, seed)?, seq.clone()));
        }
    }
    Ok(pairs)
}

pub fn fit_pipeline_smoother(library: &ReferenceLibrary, plan: &SmootherPlan) -> Result<SmootherModel> {
    if library.is_empty() {
        return Err(Error::validation("smoother training needs at least one reference"));
    }
    fit_smoother(&smoother_pairs(library, plan)?, &plan.fit)
}

/// Positive pairs for every sample plus seeded mismatched-reference negatives,
/// all smoothed by the frozen smoother and aligned.
pub fn build_pair_set(
    samples: &[ScoredSample],
    library: &ReferenceLibrary,
    smoother: &SmootherModel,
    plan: &EmbedPlan,
    band: Option<usize>,
) -> Result<PairSet> {
    let ids: Vec<&str> = library.ids().collect();
    let smoothed_refs: Vec<MotionSequence> = ids
        .par_iter()
        .map(|id| Ok(smooth_sequence(library.get(id)?, smoother)?.smoothed))
        .collect::<Result<_>>()?;
    let index_of = |id: &str| ids.iter().position(|x| *x == id);
    let pairs: Vec<Vec<TrainPair>> = samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let own = index_of(&s.reference_id)
                .ok_or_else(|| Error::validation(format!("sample {} names unknown reference {}", s.id, s.reference_id)))?;
            let learner = smooth_sequence(&s.motion, smoother)?.smoothed;
            let sup = CheckpointSupervision::new(s.checkpoints.clone(), plan.sigma_g)?;
            let mut out = vec![TrainPair::new(learner.clone(), smoothed_refs[own].clone(), sup.clone(), true)?];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.train.seed, k as u64));
            if ids.len() > 1 {
                for _ in 0..plan.negatives_per_sample {
                    let mut other = rng.random_range(0..ids.len() - 1);
                    if other >= own {
                        other += 1;
                    }
                    out.push(TrainPair::new(learner.clone(), smoothed_refs[other].clone(), sup.clone(), false)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut set = PairSet::new(pairs.into_iter().flatten().collect())?;
    set.align(AlignOptions { band })?;
    Ok(set)
}

pub struct TrainedPipeline {
    pub models: Models,
    pub embed_trace: LossTrace,
    pub head_trace: LossTrace,
}

/// Fits the smoother, then the embedding with the smoother frozen, then the head.
pub fn train_pipeline(
    skeleton: &Skeleton,
    samples: &[ScoredSample],
    library: &ReferenceLibrary,
    plan: &TrainingPlan,
) -> Result<TrainedPipeline> {
    let smoother = fit_pipeline_smoother(library, &plan.smoother).map_err(|e| e.at("train", "smoother"))?;
    let embed_out = train_embed_stage(skeleton, samples, library, &smoother, plan)?;
    let mut models = Models {
        skeleton: skeleton.clone(),
        smoother,
        embed: embed_out.model,
        head: ScoreHead::zeroed(plan.head.features, [0.0; 3]),
    };
    let (head, head_trace) = train_head_stage(&models, samples, library, plan)?;
    models.head = head;
    Ok(TrainedPipeline {
        models,
        embed_trace: embed_out.trace,
        head_trace,
    })
}

pub fn train_embed_stage(
    skeleton: &Skeleton,
    samples: &[ScoredSample],
    library: &ReferenceLibrary,
    smoother: &SmootherModel,
    plan: &TrainingPlan,
) -> Result<crate::training::EmbedTraining> {
    let pairs = build_pair_set(samples, library, smoother, &plan.embed, plan.pipeline.band).map_err(|e| e.at("train", "embedding pairs"))?;
    train_embedding(&pairs, skeleton, plan.embed.arch(), &plan.embed.train).map_err(|e| e.at("train", "embedding"))
}

/// Training features for every sample under the given smoother and embedding.
pub fn sample_features(models: &Models, opts: &PipelineOptions, samples: &[ScoredSample], library: &ReferenceLibrary) -> Result<Vec<(FeatureVector, Score)>> {
    samples
        .par_iter()
        .map(|s| {
            let reference = library.get(&s.reference_id)?;
            let d = compute_diagnostics(models, opts, &s.motion, reference).map_err(|e| e.at("features", s.id.clone()))?;
            Ok((d.features(), s.expert_scores))
        })
        .collect()
}

pub fn train_head_stage(models: &Models, samples: &[ScoredSample], library: &ReferenceLibrary, plan: &TrainingPlan) -> Result<(ScoreHead, LossTrace)> {
    let data = sample_features(models, &plan.pipeline, samples, library)?;
    let out = train_scorehead(&data, plan.head.features, &plan.head.train).map_err(|e| e.at("train", "score head"))?;
    Ok((out.head, out.trace))
}

/// Where a trained pipeline lives on disk. Relative paths resolve against
/// the directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub format_version: u32,
    /// Skeleton file; the built-in two-hand skeleton when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<PathBuf>,
    pub smoother: PathBuf,
    pub embed: PathBuf,
    pub head: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<PathBuf>,
    #[serde(default)]
    pub options: PipelineOptions,
}

pub const PIPELINE_CONFIG_VERSION: u32 = 1;

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
            Error::parse(line, e.message().to_string())
        })?;
        if cfg.format_version != PIPELINE_CONFIG_VERSION {
            return Err(Error::validation(format!(
                "unsupported pipeline config format_version {}",
                cfg.format_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let cfg = PipelineConfig::from_toml_str(&read_text(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load_models(&self, base: &Path) -> Result<Models> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let skeleton = match &self.skeleton {
            Some(p) => Skeleton::load(at(p))?,
            None => Skeleton::hands32(),
        };
        let models = Models {
            skeleton,
            smoother: SmootherModel::load(at(&self.smoother))?,
            embed: EmbedModel::load(at(&self.embed))?,
            head: ScoreHead::load(at(&self.head))?,
        };
        models.check()?;
        Ok(models)
    }

    pub fn library_dir(&self, base: &Path) -> Option<PathBuf> {
        self.library.as_ref().map(|p| if p.is_absolute() { p.clone() } else { base.join(p) })
    }
}

/// Writes the three checkpoints and a `pipeline.toml` that names them.
pub fn save_pipeline(dir: impl AsRef<Path>, models: &Models, opts: &PipelineOptions, library: Option<PathBuf>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    models.smoother.save(dir.join("smoother.json"))?;
    models.embed.save(dir.join("embed.json"))?;
    models.head.save(dir.join("head.json"))?;
    let skeleton = if models.skeleton == Skeleton::hands32() {
        None
    } else {
        write_text(&dir.join("skeleton.toml"), &models.skeleton.to_toml_string())?;
        Some(PathBuf::from("skeleton.toml"))
    };
    let cfg = PipelineConfig {
        format_version: PIPELINE_CONFIG_VERSION,
        skeleton,
        smoother: "smoother.json".into(),
        embed: "embed.json".into(),
        head: "head.json".into(),
        library,
        options: *opts,
    };
    let path = dir.join("pipeline.toml");
    write_text(&path, &cfg.to_toml_string())?;
    Ok(path)
}
