//! `signscore`: score learner sign motion against reference recordings.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use signscore::alignment::{alignment_cost_with, save_path, AlignOptions, LocalCost};
use signscore::embedding::{truncated_distance, EmbedModel, TruncationPolicy};
use signscore::motion::{load_samples, load_sequence, save_sequence};
use signscore::pipeline::{
    evaluate, fit_pipeline_smoother, run_pipeline, save_pipeline, split_samples, train_embed_stage, train_head_stage,
    Models, PipelineConfig, PipelineOptions, TrainingPlan,
};
use signscore::scorehead::ScoreHead;
use signscore::smoothing::{smooth_sequence, DEFAULT_WINDOW};
use signscore::synth::{build_dataset, DatasetConfig};
use signscore::training::LossTrace;
use signscore::{Error, ReferenceLibrary, Result, Skeleton, SmootherModel};

#[derive(Parser)]
#[command(name = "signscore", version, about = "Score sign-language motion against reference recordings")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,

    /// Seed for every random choice; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with oracle scores.
    Synth(SynthArgs),
    /// Smooth one sequence and report the smoothing cost.
    Smooth(SmoothArgs),
    /// Per-joint difference weights for one learner frame against one reference frame.
    Embed(EmbedArgs),
    /// Align a learner to a reference and report the alignment cost.
    Align(AlignArgs),
    /// Run the full pipeline on one learner sequence.
    Score(ScoreArgs),
    /// Train one stage, or all of them in order.
    Train(TrainArgs),
    /// Score every sample in a directory and report rank and tier agreement.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of reference gestures.
    #[arg(long)]
    n: usize,
    /// Learners generated per reference.
    #[arg(long, default_value_t = 4)]
    learners: usize,
    /// Keep only this many learners overall.
    #[arg(long)]
    limit: Option<usize>,
    /// Hold out this many learners under `test/`; the rest go to `train/`.
    #[arg(long, default_value_t = 0)]
    test_count: usize,
    /// Dataset ranges as TOML; command-line counts take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SmoothArgs {
    /// Sequence file to smooth.
    input: PathBuf,
    /// Smoother checkpoint; the Savitzky–Golay fallback when absent.
    #[arg(long)]
    smoother: Option<PathBuf>,
    /// Write the smoothed sequence here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    learner: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Learner frame index.
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Reference frame index.
    #[arg(long, default_value_t = 0)]
    ref_frame: usize,
    /// Embedding checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    penalty: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostMode {
    Gradient,
    Embedding,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    learner: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, value_enum, default_value = "gradient")]
    mode: CostMode,
    /// Embedding checkpoint, required for `--mode embedding`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Sakoe–Chiba band half-width in frames.
    #[arg(long)]
    band: Option<usize>,
    /// Write the warping path as `i j cost` lines.
    #[arg(long)]
    path_out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Pipeline config written by `train all`.
    #[arg(long)]
    config: PathBuf,
    /// Learner sequence file.
    learner: PathBuf,
    /// Id of the reference in the library.
    #[arg(long)]
    reference_id: String,
    /// Reference library directory; overrides the config.
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    path_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Stage {
    Smoother,
    Embed,
    Head,
    All,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(value_enum)]
    stage: Stage,
    /// Training plan TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of scored samples.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Reference library directory.
    #[arg(long)]
    library: PathBuf,
    /// Skeleton file; the built-in two-hand skeleton when absent.
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Frozen smoother for the embed and head stages.
    #[arg(long)]
    smoother: Option<PathBuf>,
    /// Frozen embedding for the head stage.
    #[arg(long)]
    embed: Option<PathBuf>,
    /// Output directory for checkpoints.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory of scored samples.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    library: Option<PathBuf>,
    /// Write the per-sample table (tab-separated) here.
    #[arg(long)]
    table: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                eprintln!("{}", json!({ "error": e.kind_name(), "message": e.to_string() }));
            } else {
                eprintln!("error[{}]: {e}", e.kind_name());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Validation(_) => 2,
        Error::Parse { .. } => 3,
        Error::Divergence(_) => 4,
        _ => 1,
    }
}

fn emit(json: bool, value: Value, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(&value).expect("json output"));
    } else {
        print!("{}", text());
    }
}

fn run(cli: Cli) -> Result<()> {
    let (json, seed) = (cli.json, cli.seed);
    match cli.command {
        Command::Synth(a) => synth(a, json, seed.unwrap_or(0)),
        Command::Smooth(a) => smooth(a, json),
        Command::Embed(a) => embed(a, json),
        Command::Align(a) => align(a, json),
        Command::Score(a) => score(a, json),
        Command::Train(a) => train(a, json, seed),
        Command::Eval(a) => eval(a, json),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
        message: e.message().to_string(),
    })
}

fn synth(a: SynthArgs, json: bool, seed: u64) -> Result<()> {
    let mut cfg: DatasetConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => DatasetConfig::default(),
    };
    cfg.references = a.n;
    cfg.learners_per_reference = a.learners;
    cfg.limit = a.limit.or(cfg.limit);
    cfg.seed = seed;
    let skel = Skeleton::hands32();
    let data = build_dataset(&skel, &cfg)?;
    data.library()?.save_dir(a.out.join("references"))?;
    let samples = data.samples();
    let (train, test) = split_samples(&samples, a.test_count, seed)?;
    let train_dir = a.out.join(if a.test_count > 0 { "train" } else { "samples" });
    for (dir, set) in [(train_dir, &train), (a.out.join("test"), &test)] {
        if set.is_empty() {
            continue;
        }
        create_dir(&dir)?;
        for s in set {
            s.save(&dir)?;
        }
    }
    emit(
        json,
        json!({
            "references": data.references.len(),
            "samples": samples.len(),
            "train": train.len(),
            "test": test.len(),
            "out": a.out,
            "seed": seed,
        }),
        || {
            format!(
                "wrote {} references and {} samples ({} train, {} test) to {}\n",
                data.references.len(),
                samples.len(),
                train.len(),
                test.len(),
                a.out.display()
            )
        },
    );
    Ok(())
}

fn load_smoother(path: Option<&Path>) -> Result<SmootherModel> {
    match path {
        Some(p) => SmootherModel::load(p),
        None => SmootherModel::savitzky_golay(DEFAULT_WINDOW),
    }
}

fn smooth(a: SmoothArgs, json: bool) -> Result<()> {
    let seq = load_sequence(&a.input)?;
    let model = load_smoother(a.smoother.as_deref())?;
    let out = smooth_sequence(&seq, &model).map_err(|e| e.at("smoothing", a.input.display().to_string()))?;
    if let Some(p) = &a.out {
        save_sequence(&out.smoothed, p)?;
    }
    emit(json, json!({ "c_s": out.cost, "method": out.method, "frames": seq.len() }), || {
        format!("C_s {:.9e}\nmethod {:?}\nframes {}\n", out.cost, out.method, seq.len())
    });
    Ok(())
}

fn embed(a: EmbedArgs, json: bool) -> Result<()> {
    let learner = load_sequence(&a.learner)?;
    let reference = load_sequence(&a.reference)?;
    let model = EmbedModel::load(&a.model)?;
    for (name, seq, t) in [("learner", &learner, a.frame), ("reference", &reference, a.ref_frame)] {
        if t >= seq.len() {
            return Err(Error::Validation(format!("{name} frame {t} out of range for {} frames", seq.len())));
        }
    }
    let mut policy = match a.threshold {
        Some(t) => TruncationPolicy::with_threshold(t)?,
        None => TruncationPolicy::default(),
    };
    if let Some(p) = a.penalty {
        policy = TruncationPolicy::new(policy.threshold, p)?;
    }
    let w = model.embed(learner.frame(a.frame), reference.frame(a.ref_frame))?;
    let t = truncated_distance(&w, &policy);
    let order = model.layout().order.clone();
    emit(
        json,
        json!({ "weights": w.w, "joint_order": order, "distance": t.distance, "step": t.step }),
        || {
            let mut s = String::from("position joint weight\n");
            for (k, (j, v)) in order.iter().zip(&w.w).enumerate() {
                s.push_str(&format!("{k} {j} {v:.6e}\n"));
            }
            s.push_str(&format!("D {:.9e}\nS {}\n", t.distance, t.step));
            s
        },
    );
    Ok(())
}

fn align(a: AlignArgs, json: bool) -> Result<()> {
    let learner = load_sequence(&a.learner)?;
    let reference = load_sequence(&a.reference)?;
    let model = match (a.mode, &a.model) {
        (CostMode::Embedding, Some(p)) => Some(EmbedModel::load(p)?),
        (CostMode::Embedding, None) => return Err(Error::Validation("--mode embedding needs --model".into())),
        (CostMode::Gradient, _) => None,
    };
    let mode = match &model {
        Some(m) => LocalCost::Embedding {
            model: m,
            policy: TruncationPolicy::default(),
        },
        None => LocalCost::Gradient,
    };
    let out = alignment_cost_with(&learner, &reference, mode, AlignOptions { band: a.band })?;
    if let Some(p) = &a.path_out {
        save_path(p, &out.result)?;
    }
    emit(
        json,
        json!({ "c_a": out.c_a, "path_length": out.result.path.len(), "path": out.result.path }),
        || format!("C_a {:.9e}\npath_length {}\n", out.c_a, out.result.path.len()),
    );
    Ok(())
}

fn load_config(path: &Path) -> Result<(PipelineConfig, PathBuf, Models)> {
    let (cfg, base) = PipelineConfig::load(path)?;
    let models = cfg.load_models(&base)?;
    Ok((cfg, base, models))
}

fn library_for(cfg: &PipelineConfig, base: &Path, over: Option<PathBuf>) -> Result<ReferenceLibrary> {
    let dir = over
        .or_else(|| cfg.library_dir(base))
        .ok_or_else(|| Error::Validation("no reference library; pass --library".into()))?;
    ReferenceLibrary::load_dir(dir)
}

fn score(a: ScoreArgs, json: bool) -> Result<()> {
    let (cfg, base, models) = load_config(&a.config)?;
    let library = library_for(&cfg, &base, a.library)?;
    let learner = load_sequence(&a.learner)?;
    let reference = library.get(&a.reference_id)?;
    let out = run_pipeline(&models, &cfg.options, &learner, reference)?;
    if let Some(p) = &a.path_out {
        let path = out.diagnostics.path.iter().zip(&out.diagnostics.frame_distances);
        let text: String = path.map(|((i, j), d)| format!("{i} {j} {d:.9e}\n")).collect();
        std::fs::write(p, text).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }
    let s = out.score;
    let d = &out.diagnostics;
    emit(json, json!({ "score": s, "overall": s.overall(), "diagnostics": d }), || {
        format!(
            "smoothness {:.2}\ncompleteness {:.2}\nrecognizability {:.2}\noverall {:.2}\nC_s {:.6e}\nC_a {:.6e}\nC_e {:.6e}\npath_length {}\ntruncated_frames {}\n",
            s.smoothness,
            s.completeness,
            s.recognizability,
            s.overall(),
            d.c_s,
            d.c_a,
            d.c_e,
            d.path.len(),
            d.truncated_frames
        )
    });
    Ok(())
}

fn trace_json(trace: &LossTrace) -> Value {
    json!({ "names": trace.names, "rows": trace.rows })
}

fn train(a: TrainArgs, json: bool, seed: Option<u64>) -> Result<()> {
    let mut plan = match &a.config {
        Some(p) => TrainingPlan::load(p)?,
        None => TrainingPlan::default(),
    };
    if let Some(s) = seed {
        plan = plan.with_seed(s);
    }
    let skel = match &a.skeleton {
        Some(p) => Skeleton::load(p)?,
        None => Skeleton::hands32(),
    };
    let library = ReferenceLibrary::load_dir(&a.library)?;
    create_dir(&a.out)?;
    let samples = || -> Result<Vec<_>> {
        let dir = a.data.as_ref().ok_or_else(|| Error::Validation("this stage needs --data".into()))?;
        load_samples(dir)
    };
    let mut report = serde_json::Map::new();
    let mut text = String::new();

    let smoother = if matches!(a.stage, Stage::Smoother | Stage::All) {
        let m = fit_pipeline_smoother(&library, &plan.smoother).map_err(|e| e.at("train", "smoother"))?;
        let p = a.out.join("smoother.json");
        m.save(&p)?;
        report.insert("smoother".into(), json!({ "path": p, "loss": m.training_loss(), "fusion": m.fusion() }));
        text.push_str(&format!("smoother loss {:.6e} -> {}\n", m.training_loss().unwrap_or(f64::NAN), p.display()));
        Some(m)
    } else {
        None
    };
    if a.stage == Stage::Smoother {
        emit(json, Value::Object(report), || text);
        return Ok(());
    }

    let smoother = match smoother {
        Some(m) => m,
        None => SmootherModel::load(
            a.smoother
                .as_ref()
                .ok_or_else(|| Error::Validation("this stage needs --smoother".into()))?,
        )?,
    };
    let samples = samples()?;
    let embed = if matches!(a.stage, Stage::Embed | Stage::All) {
        let out = train_embed_stage(&skel, &samples, &library, &smoother, &plan)?;
        let p = a.out.join("embed.json");
        out.model.save(&p)?;
        report.insert("embed".into(), json!({ "path": p, "trace": trace_json(&out.trace) }));
        text.push_str(&format!("embedding -> {}\n{}", p.display(), out.trace));
        Some(out.model)
    } else {
        None
    };
    if a.stage == Stage::Embed {
        emit(json, Value::Object(report), || text);
        return Ok(());
    }

    let embed = match embed {
        Some(m) => m,
        None => EmbedModel::load(
            a.embed
                .as_ref()
                .ok_or_else(|| Error::Validation("the head stage needs --embed".into()))?,
        )?,
    };
    let mut models = Models {
        skeleton: skel,
        smoother,
        embed,
        head: ScoreHead::zeroed(plan.head.features, [0.0; 3]),
    };
    models.check()?;
    let (head, trace) = train_head_stage(&models, &samples, &library, &plan)?;
    models.head = head;
    let p = a.out.join("head.json");
    models.head.save(&p)?;
    let (first, last) = trace.first_last("total").unwrap_or((f64::NAN, f64::NAN));
    report.insert("head".into(), json!({ "path": p, "trace": trace_json(&trace) }));
    text.push_str(&format!("score head total loss {first:.6e} -> {last:.6e} -> {}\n", p.display()));

    if a.stage == Stage::All {
        let library_path = std::path::absolute(&a.library).map_err(|e| Error::Io {
            path: a.library.clone(),
            source: e,
        })?;
        let cfg = save_pipeline(&a.out, &models, &plan.pipeline, Some(library_path))?;
        report.insert("config".into(), json!(cfg));
        text.push_str(&format!("pipeline config -> {}\n", cfg.display()));
    }
    emit(json, Value::Object(report), || text);
    Ok(())
}

fn eval(a: EvalArgs, json: bool) -> Result<()> {
    let (cfg, base, models) = load_config(&a.config)?;
    let library = library_for(&cfg, &base, a.library)?;
    let samples = load_samples(&a.data)?;
    let opts: PipelineOptions = cfg.options;
    let report = evaluate(&models, &opts, &samples, &library)?;
    if let Some(p) = &a.table {
        std::fs::write(p, report.table()).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }
    emit(
        json,
        json!({
            "spearman": report.spearman,
            "tier_accuracy": report.tier_accuracy,
            "spearman_per_dimension": report.spearman_per_dimension,
            "tier_accuracy_per_dimension": report.tier_accuracy_per_dimension,
            "samples": report.rows.len(),
            "rows": report.rows,
        }),
        || {
            format!(
                "samples {}\nspearman {:.6}\ntier_accuracy {:.6}\n{}",
                report.rows.len(),
                report.spearman,
                report.tier_accuracy,
                if a.table.is_none() { report.table() } else { String::new() }
            )
        },
    );
    Ok(())
}
