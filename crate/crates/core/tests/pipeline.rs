mod common;

use signscore::embedding::{EmbedConfig, EmbedModel};
use signscore::pipeline::{
    evaluate, run_pipeline, save_pipeline, split_samples, EvalReport, EvalRow, Models, PipelineConfig, PipelineOptions,
    TrainingPlan,
};
use signscore::scorehead::{FeatureSet, Score, ScoreHead};
use signscore::synth::{build_dataset, DatasetConfig};
use signscore::{Error, MotionSequence, Skeleton, SmootherModel};

fn untrained_models() -> Models {
    let skel = Skeleton::hands32();
    Models {
        embed: EmbedModel::new(&skel, EmbedConfig::default(), 1).unwrap(),
        skeleton: skel,
        smoother: SmootherModel::savitzky_golay(8).unwrap(),
        head: ScoreHead::new(FeatureSet::WithEmbedding, [80.0, 80.0, 80.0], 2),
    }
}

#[test]
fn self_comparison_has_zero_alignment_cost() {
    let models = untrained_models();
    let seq = common::gesture(&models.skeleton, 3);
    let out = run_pipeline(&models, &PipelineOptions::default(), &seq, &seq).unwrap();
    let d = &out.diagnostics;
    assert_eq!(d.c_a, 0.0);
    assert_eq!(d.c_e, 0.0);
    assert!(d.c_s < 0.1);
    assert_eq!(d.path.len(), seq.len());
    assert_eq!(d.frame_distances.len(), d.path.len());
    assert_eq!(d.truncation_steps.len(), d.path.len());
    assert!(out.score.to_array().iter().all(|s| (0.0..=100.0).contains(s)));
}

#[test]
fn pipeline_is_bit_reproducible_through_saved_checkpoints() {
    let models = untrained_models();
    let opts = PipelineOptions::default();
    let learner = common::gesture(&models.skeleton, 4);
    let reference = common::gesture(&models.skeleton, 5);
    let direct = run_pipeline(&models, &opts, &learner, &reference).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = save_pipeline(dir.path(), &models, &opts, None).unwrap();
    let (cfg, base) = PipelineConfig::load(&path).unwrap();
    let loaded = cfg.load_models(&base).unwrap();
    let again = run_pipeline(&loaded, &cfg.options, &learner, &reference).unwrap();
    assert_eq!(direct, again);
}

#[test]
fn checkpoint_version_mismatch_is_rejected() {
    let models = untrained_models();
    let dir = tempfile::tempdir().unwrap();
    let path = save_pipeline(dir.path(), &models, &PipelineOptions::default(), None).unwrap();
    let head = dir.path().join("head.json");
    let text = std::fs::read_to_string(&head).unwrap();
    std::fs::write(&head, text.replacen("\"format_version\":1", "\"format_version\":99", 1)).unwrap();
    let (cfg, base) = PipelineConfig::load(&path).unwrap();
    assert!(cfg.load_models(&base).is_err());

    std::fs::remove_file(dir.path().join("embed.json")).unwrap();
    let err = cfg.load_models(&base).unwrap_err();
    assert_eq!(err.kind_name(), "IoError");
}

#[test]
fn config_rejects_unknown_keys_and_versions() {
    let good = "format_version = 1\nsmoother = \"s.json\"\nembed = \"e.json\"\nhead = \"h.json\"\n";
    assert!(PipelineConfig::from_toml_str(good).is_ok());
    let err = PipelineConfig::from_toml_str(&format!("{good}colour = 3\n")).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }));
    assert!(PipelineConfig::from_toml_str(&good.replace("= 1", "= 2")).is_err());
}

#[test]
fn errors_name_the_stage_and_input() {
    let models = untrained_models();
    let good = common::gesture(&models.skeleton, 6);
    let short: Vec<Vec<_>> = good.frames().iter().map(|f| f.rotations()[..10].to_vec()).collect();
    let bad = MotionSequence::from_rotations(good.skeleton_id(), good.fps(), short).unwrap();
    let err = run_pipeline(&models, &PipelineOptions::default(), &bad, &good).unwrap_err();
    assert_eq!(err.kind_name(), "ValidationError");
    let text = err.to_string();
    assert!(text.contains("input") && text.contains("learner"), "{text}");
}

#[test]
fn copied_predictions_score_perfectly() {
    let rows: Vec<EvalRow> = [(93.0, 91.0, 97.0), (71.0, 78.0, 75.0), (85.0, 82.0, 88.0), (62.0, 66.0, 61.0)]
        .iter()
        .enumerate()
        .map(|(k, &(a, b, c))| EvalRow {
            id: format!("s{k}"),
            reference_id: "r".into(),
            truth: Score::new(a, b, c),
            predicted: Score::new(a, b, c),
            c_s: 0.0,
            c_a: 0.0,
            c_e: 0.0,
        })
        .collect();
    let report = EvalReport::from_rows(rows.clone()).unwrap();
    assert_eq!(report.spearman, 1.0);
    assert_eq!(report.tier_accuracy, 1.0);
    assert_eq!(report.table().lines().count(), rows.len() + 1);
    assert!(EvalReport::from_rows(rows[..1].to_vec()).is_err());
}

#[test]
fn evaluation_orders_rows_by_id() {
    let models = untrained_models();
    let data = build_dataset(&models.skeleton, &DatasetConfig { references: 2, seed: 7, ..DatasetConfig::default() }).unwrap();
    let mut samples = data.samples();
    samples.reverse();
    let report = evaluate(&models, &PipelineOptions::default(), &samples, &data.library().unwrap()).unwrap();
    let ids: Vec<&str> = report.rows.iter().map(|r| r.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    assert_eq!(ids, sorted);
    assert!(evaluate(&models, &PipelineOptions::default(), &samples[..1], &data.library().unwrap()).is_err());
}

#[test]
fn split_is_seeded_and_disjoint() {
    let skel = Skeleton::hands32();
    let data = build_dataset(&skel, &DatasetConfig { references: 5, seed: 8, ..DatasetConfig::default() }).unwrap();
    let samples = data.samples();
    let (train, test) = split_samples(&samples, 6, 1).unwrap();
    assert_eq!((train.len(), test.len()), (14, 6));
    assert!(test.iter().all(|t| train.iter().all(|s| s.id != t.id)));
    let (_, again) = split_samples(&samples, 6, 1).unwrap();
    assert_eq!(test, again);
    let (_, other) = split_samples(&samples, 6, 2).unwrap();
    assert_ne!(test, other);
    assert!(split_samples(&samples, 21, 1).is_err());
}

#[test]
fn training_plan_round_trips_through_toml() {
    let plan = TrainingPlan::default().with_seed(42);
    let text = plan.to_toml_string();
    assert_eq!(TrainingPlan::from_toml_str(&text).unwrap(), plan);
    let partial = TrainingPlan::from_toml_str("[embed.train]\nepochs = 3\n").unwrap();
    assert_eq!(partial.embed.train.epochs, 3);
    assert_eq!(partial.head, TrainingPlan::default().head);
    assert!(TrainingPlan::from_toml_str("[embed]\nepoch = 3\n").is_err());
}
