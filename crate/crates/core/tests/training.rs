mod common;

use signscore::embedding::{joint_log_distance, EmbedConfig, EmbedModel};
use signscore::motion::Checkpoint;
use signscore::pipeline::{build_pair_set, EmbedPlan};
use signscore::rotmath::{Joint, Skeleton};
use signscore::scorehead::{FeatureSet, FeatureVector, Score, ScoreHead};
use signscore::synth::{build_dataset, DatasetConfig};
use signscore::training::{loss_embedding, loss_score, train_embedding, train_scorehead, CheckpointSupervision, PairSet, TrainConfig, TrainPair};
use signscore::{MotionSequence, SmootherModel, Vec3};

fn two_joint() -> Skeleton {
    let joint = |id, parent| Joint {
        id,
        name: format!("j{id}"),
        parent,
        rest_offset: Vec3::new(0.0, 1.0, 0.0),
    };
    Skeleton::new("pair", vec![joint(0, None), joint(1, Some(0))]).unwrap()
}

fn short_pair(skel: &Skeleton, seed: u64) -> (MotionSequence, MotionSequence) {
    let mut r = common::rng(seed);
    let mut make = || {
        let rot = (0..4).map(|_| (0..skel.len()).map(|_| common::random_quat(&mut r)).collect()).collect();
        MotionSequence::from_rotations(skel.id(), 30.0, rot).unwrap()
    };
    (make(), make())
}

fn supervision(baseline: f64) -> CheckpointSupervision {
    CheckpointSupervision::new(vec![Checkpoint { frame_index: 0, baseline_score: baseline }], 2.0).unwrap()
}

#[test]
fn embedding_loss_vanishes_on_its_zero_case() {
    let skel = Skeleton::hands32();
    let seq = common::gesture(&skel, 1);
    let model = EmbedModel::new(&skel, EmbedConfig::default(), 2).unwrap().with_zero_head(0.0);
    let pair = TrainPair::new(seq.clone(), seq, supervision(0.0), true).unwrap().with_diagonal_frames();
    let l = loss_embedding(&PairSet::new(vec![pair]).unwrap(), &model).unwrap();
    assert_eq!((l.l_s, l.l_t, l.l_d), (0.0, 0.0, 0.0));
    assert!(l.gradient.iter().all(|g| g.is_finite()));
}

#[test]
fn embedding_loss_matches_direct_arithmetic() {
    let skel = two_joint();
    let (a, b) = short_pair(&skel, 3);
    // constant head: w = (1.5, 1.5), target 2 → L_s = 1
    let model = EmbedModel::new(&skel, EmbedConfig::default(), 4).unwrap().with_zero_head(1.5);
    let mut pair = TrainPair::new(a.clone(), b.clone(), supervision(2.0), true).unwrap();
    pair.frames = vec![(0, 0)];
    let l = loss_embedding(&PairSet::new(vec![pair]).unwrap(), &model).unwrap();
    assert!((l.l_s - 1.0).abs() < 1e-12);
    let d: Vec<f64> = [0, 1].iter().map(|&j| joint_log_distance(a.rotation(0, j), b.rotation(0, j)).magnitude).collect();
    let order = model.layout().order.clone();
    let want: f64 = order.iter().map(|&j| (1.5 - d[j]).powi(2)).sum();
    assert!((l.l_t - want).abs() < 1e-12);
    assert!((l.l_d - l.l_s - l.l_t).abs() < 1e-15);

    // random head: L_s is |Σ w − target| of the model's own output
    let model = EmbedModel::new(&skel, EmbedConfig::default(), 5).unwrap();
    let mut pair = TrainPair::new(a.clone(), b.clone(), supervision(2.0), true).unwrap();
    pair.frames = vec![(0, 0)];
    let w = model.embed(a.frame(0), b.frame(0)).unwrap();
    let l = loss_embedding(&PairSet::new(vec![pair]).unwrap(), &model).unwrap();
    assert!((l.l_s - (w.sum() - 2.0).abs()).abs() < 1e-12);
}

#[test]
fn negative_pairs_skip_the_checkpoint_term() {
    let skel = two_joint();
    let (a, b) = short_pair(&skel, 6);
    let model = EmbedModel::new(&skel, EmbedConfig::default(), 7).unwrap();
    let pair = TrainPair::new(a, b, supervision(5.0), false).unwrap().with_diagonal_frames();
    let l = loss_embedding(&PairSet::new(vec![pair]).unwrap(), &model).unwrap();
    assert_eq!(l.l_s, 0.0);
    assert!(l.l_t > 0.0);
}

#[test]
fn empty_inputs_are_rejected() {
    assert!(PairSet::new(Vec::new()).is_err());
    let head = ScoreHead::zeroed(FeatureSet::Base, [50.0; 3]);
    assert!(loss_score(&[], &head).is_err());
}

#[test]
fn score_loss_zero_margin_value() {
    let y = Score::new(70.0, 80.0, 90.0);
    let head = ScoreHead::zeroed(FeatureSet::Base, y.to_array());
    let batch = vec![(FeatureVector::new(0.1, 0.2), y); 4];
    let l = loss_score(&batch, &head).unwrap();
    assert_eq!(l.l_score, 0.0);
    assert!((l.l_rank - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(!l.rank_skipped);

    let single = loss_score(&batch[..1], &head).unwrap();
    assert!(single.rank_skipped);
    assert_eq!(single.l_rank, 0.0);
}

#[test]
fn score_loss_saturates_for_well_separated_order() {
    let mut head = ScoreHead::new(FeatureSet::Base, [0.0; 3], 8);
    let mut p = head.parameters();
    let n = p.len();
    // scale the output layer so predicted margins become huge
    p[n - 3 * 16 - 3..].iter_mut().for_each(|v| *v *= 1e4);
    head.set_parameters(&p);
    let batch: Vec<(FeatureVector, Score)> = (0..6)
        .map(|k| {
            let f = FeatureVector::new(0.05 * k as f64, 0.3 * (k as f64).sqrt());
            let out = head.forward_raw(&f.to_vec(FeatureSet::Base).unwrap());
            (f, Score::from_array(out))
        })
        .collect();
    let l = loss_score(&batch, &head).unwrap();
    assert!(l.l_rank < 1e-6, "rank term {}", l.l_rank);
    assert_eq!(l.l_score, 0.0);
}

fn synthetic_pairs() -> (Skeleton, PairSet) {
    let skel = Skeleton::hands32();
    let data = build_dataset(
        &skel,
        &DatasetConfig {
            references: 6,
            seed: 10,
            ..DatasetConfig::default()
        },
    )
    .unwrap();
    let smoother = SmootherModel::savitzky_golay(8).unwrap();
    let pairs = build_pair_set(&data.samples(), &data.library().unwrap(), &smoother, &EmbedPlan::default(), None).unwrap();
    (skel, pairs)
}

#[test]
fn embedding_training_cuts_loss_tenfold_and_is_deterministic() {
    let (skel, pairs) = synthetic_pairs();
    assert_eq!(pairs.positives() * 2, pairs.pairs.len());
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        epochs: 8,
        batch_size: 32,
        frame_stride: 2,
        seed: 11,
        ..TrainConfig::default()
    };
    let a = train_embedding(&pairs, &skel, EmbedConfig::default(), &cfg).unwrap();
    let (first, last) = a.trace.first_last("l_d").unwrap();
    assert!(first / last >= 10.0, "L_D {first} -> {last}");
    assert_eq!(a.trace.rows.len(), cfg.epochs + 1);

    let b = train_embedding(&pairs, &skel, EmbedConfig::default(), &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.model.parameters(), b.model.parameters());
}

#[test]
fn smoother_is_untouched_by_embedding_training() {
    let skel = Skeleton::hands32();
    let data = build_dataset(&skel, &DatasetConfig { references: 2, seed: 12, ..DatasetConfig::default() }).unwrap();
    let smoother = SmootherModel::savitzky_golay(8).unwrap();
    let before = smoother.to_json();
    let plan = signscore::pipeline::TrainingPlan {
        embed: EmbedPlan {
            train: TrainConfig { epochs: 1, frame_stride: 8, ..TrainConfig::default() },
            ..EmbedPlan::default()
        },
        ..Default::default()
    };
    signscore::pipeline::train_embed_stage(&skel, &data.samples(), &data.library().unwrap(), &smoother, &plan).unwrap();
    assert_eq!(smoother.to_json(), before);
}

#[test]
fn head_training_is_deterministic_and_reduces_loss() {
    let mut r = common::rng(13);
    use rand::Rng;
    let samples: Vec<(FeatureVector, Score)> = (0..40)
        .map(|_| {
            let u: f64 = r.random_range(60.0..100.0);
            let f = FeatureVector::new((100.0 - u) / 200.0 + r.random_range(0.0..0.01), (100.0 - u) / 50.0);
            (f, Score::new(u, u, u))
        })
        .collect();
    let cfg = TrainConfig { learning_rate: 1e-2, epochs: 300, seed: 3, ..TrainConfig::default() };
    let a = train_scorehead(&samples, FeatureSet::Base, &cfg).unwrap();
    let b = train_scorehead(&samples, FeatureSet::Base, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    let (first, last) = a.trace.first_last("total").unwrap();
    assert!(last < first / 3.0, "{first} -> {last}");
}

#[test]
fn bad_configs_are_rejected() {
    let bad = [
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}
