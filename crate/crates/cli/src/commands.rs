use std::path::{Path, PathBuf};

use ascnet::audio_io::{read_wav, SceneClass};
use ascnet::error::{Error, Result};
use ascnet::evaluation::{Aggregation, ClipPrediction};
use ascnet::features::FeatureCache;
use ascnet::fsutil;
use ascnet::pipeline::{
    clip_features, compare_runs, load_dataset, load_dcase_setup, load_fold_plan, load_manifest,
    load_records, make_folds, run_cross_validation, write_fold_plan, write_synthetic_corpus,
    CorpusSpec, CvOptions, EpochRecord, FoldPlan, Manifest, RunRecord, TrainConfig, TrainedModel,
    MANIFEST_FILE,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

/// Acoustic scene classification with multi-channel log-mel CNNs.
#[derive(Debug, Parser)]
#[command(name = "ascnet", version, propagate_version = true)]
pub struct Cli {
    /// Print JSON instead of human-readable text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic labelled corpus and its manifest.
    SynthData(SynthArgs),
    /// Fill the feature cache for every clip of a manifest.
    Extract(ExtractArgs),
    /// Cross-validate a configuration and save the fold models.
    Train(TrainArgs),
    /// Score a labelled manifest with a saved model.
    Evaluate(EvaluateArgs),
    /// Classify one WAV file.
    Predict(PredictArgs),
    /// Tabulate run records side by side.
    Compare(CompareArgs),
    /// Generate a location-grouped fold plan.
    Folds(FoldsArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory; receives audio/ and manifest.tsv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    clips_per_class: usize,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    #[arg(long, default_value_t = 44100)]
    sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Consecutive clips of a class that share a location id.
    #[arg(long, default_value_t = 4)]
    group_size: usize,
}

#[derive(Debug, Args)]
struct CacheArg {
    /// Feature cache directory.
    #[arg(long, env = "ASCNET_CACHE")]
    cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Clip list: path, class, location (tab or comma separated).
    #[arg(long)]
    manifest: PathBuf,
    /// Training config; only its [features] table is used.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    cache: CacheArg,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Clip list: path, class, location (tab or comma separated).
    #[arg(long)]
    manifest: PathBuf,
    /// Training config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Fold plan file (clip, fold) or a directory with foldN_evaluate.txt
    /// lists. Defaults to the config's plan, else generated folds.
    #[arg(long)]
    fold_plan: Option<PathBuf>,
    /// Also train one model on every clip.
    #[arg(long)]
    train_on_all_folds: bool,
    /// Held-out manifest scored with the all-folds model.
    #[arg(long, requires = "train_on_all_folds")]
    eval_manifest: Option<PathBuf>,
    /// Output directory for checkpoints and the run record.
    #[arg(long)]
    out: PathBuf,
    /// Folds trained concurrently [default: available parallelism].
    #[arg(long)]
    workers: Option<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    cache: CacheArg,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Clip list: path, class, location (tab or comma separated).
    #[arg(long)]
    manifest: PathBuf,
    /// Model checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Patch aggregation: max, mean, median, majority or max-patch-argmax.
    #[arg(long, default_value_t = Aggregation::Max)]
    strategy: Aggregation,
    /// Config whose feature settings must match the checkpoint's.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write per-clip predictions as tab-separated text.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[command(flatten)]
    cache: CacheArg,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Stereo or mono WAV file.
    #[arg(long)]
    wav: PathBuf,
    /// Model checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Patch aggregation: max, mean, median, majority or max-patch-argmax.
    #[arg(long, default_value_t = Aggregation::Max)]
    strategy: Aggregation,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Run record files (JSON lines).
    #[arg(long, num_args = 1.., required = true)]
    records: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct FoldsArgs {
    /// Clip list: path, class, location (tab or comma separated).
    #[arg(long)]
    manifest: PathBuf,
    /// Number of folds.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output fold plan (clip, fold index).
    #[arg(long)]
    out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::SynthData(a) => synth_data(a, json),
        Command::Extract(a) => extract(a, json),
        Command::Train(a) => train(a, json),
        Command::Evaluate(a) => evaluate(a, json),
        Command::Predict(a) => predict(a, json),
        Command::Compare(a) => compare(a, json),
        Command::Folds(a) => folds(a, json),
    }
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json value serializes")
    );
}

fn feature_cache(arg: &CacheArg, config: &TrainConfig) -> Option<FeatureCache> {
    arg.cache
        .as_ref()
        .map(|dir| FeatureCache::new(dir, config.features.fingerprint()))
}

fn synth_data(a: SynthArgs, json: bool) -> Result<()> {
    let spec = CorpusSpec {
        clips_per_class: a.clips_per_class,
        duration_s: a.duration,
        sample_rate: a.sample_rate,
        seed: a.seed,
        group_size: a.group_size,
        ..CorpusSpec::default()
    };
    let manifest = write_synthetic_corpus(&a.out, &spec)?;
    let path = a.out.join(MANIFEST_FILE);
    if json {
        print_json(&json!({ "manifest": path, "clips": manifest.len() }));
    } else {
        println!(
            "wrote {} clips, manifest {}",
            manifest.len(),
            path.display()
        );
    }
    Ok(())
}

fn extract(a: ExtractArgs, json: bool) -> Result<()> {
    let config = TrainConfig::load(&a.config)?;
    let cache = feature_cache(&a.cache, &config)
        .ok_or_else(|| Error::Config("--cache (or ASCNET_CACHE) is required".into()))?;
    let manifest = load_manifest(&a.manifest)?;
    let extractor = ascnet::Extractor::new(config.features.clone())?;
    let mut frames = 0;
    for e in manifest.entries() {
        frames += clip_features(&manifest.resolve(e), &extractor, Some(&cache))?.frames();
    }
    if json {
        print_json(&json!({ "clips": manifest.len(), "frames": frames, "cache": cache.dir() }));
    } else {
        println!(
            "cached {} clips ({frames} frames) in {}",
            manifest.len(),
            cache.dir().display()
        );
    }
    Ok(())
}

fn fold_plan(a: &TrainArgs, config: &TrainConfig, manifest: &Manifest) -> Result<FoldPlan> {
    if a.fold_plan.is_some() && config.folds.is_some() {
        return Err(Error::Config(
            "--fold-plan conflicts with `folds` in the config".into(),
        ));
    }
    let Some(path) = a.fold_plan.as_ref().or(config.fold_plan.as_ref()) else {
        return make_folds(manifest, config.k(), config.seed);
    };
    let loaded = if path.is_dir() {
        load_dcase_setup(path, manifest)?
    } else {
        load_fold_plan(path, manifest)?
    };
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded.plan)
}

fn print_epoch(fold: usize, r: &EpochRecord) {
    let val = r
        .validation_accuracy
        .map_or_else(String::new, |v| format!(" val {v:.4}"));
    eprintln!(
        "fold {fold} epoch {} lr {:.5} loss {:.4} train {:.4}{val}",
        r.epoch, r.learning_rate, r.loss, r.train_accuracy
    );
}

fn train(a: TrainArgs, json: bool) -> Result<()> {
    let config = TrainConfig::load(&a.config)?;
    let manifest = load_manifest(&a.manifest)?;
    let plan = fold_plan(&a, &config, &manifest)?;
    let cache = feature_cache(&a.cache, &config);
    let dataset = load_dataset(
        &manifest,
        &config.features,
        config.channel_mode,
        cache.as_ref(),
    )?;
    let evaluation = match &a.eval_manifest {
        Some(p) => Some(load_dataset(
            &load_manifest(p)?,
            &config.features,
            config.channel_mode,
            cache.as_ref(),
        )?),
        None => None,
    };
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    write_fold_plan(&plan, &manifest, &a.out.join("folds.tsv"))?;
    fsutil::write_atomic(&a.out.join("config.toml"), config.to_toml().as_bytes())?;
    let hook = print_epoch;
    let options = CvOptions {
        workers,
        train_on_all_folds: a.train_on_all_folds,
        evaluation: evaluation.as_ref(),
        out_dir: Some(a.out.clone()),
        hook: (!a.quiet).then_some(&hook as _),
    };
    let outcome = run_cross_validation(&dataset, &plan, &config, &options)?;
    report_run(&outcome.record, json);
    Ok(())
}

fn report_run(r: &RunRecord, json: bool) {
    if json {
        print_json(&serde_json::to_value(r).expect("record serializes"));
        return;
    }
    for f in &r.folds {
        println!(
            "fold {}: {:.2}% ({} validation clips)",
            f.fold,
            f.validation_accuracy * 100.0,
            f.validation_clips
        );
    }
    let note = if r.degenerate {
        " (single fold: validated on training data)"
    } else {
        ""
    };
    println!("cross-validation: {:.2}%{note}", r.cv_mean * 100.0);
    if let Some(e) = r.evaluation_accuracy {
        println!("evaluation: {:.2}%", e * 100.0);
    }
}

fn evaluate(a: EvaluateArgs, json: bool) -> Result<()> {
    let model = TrainedModel::load(&a.checkpoint)?;
    let features = match &a.config {
        Some(p) => {
            let config = TrainConfig::load(p)?;
            model.check_features(&config.features)?;
            config.features
        }
        None => model.features.clone(),
    };
    let manifest = load_manifest(&a.manifest)?;
    let cache = a
        .cache
        .cache
        .as_ref()
        .map(|d| FeatureCache::new(d, features.fingerprint()));
    let dataset = load_dataset(&manifest, &features, model.channel_mode, cache.as_ref())?;
    let (report, predictions) = model.score(&dataset, a.strategy)?;
    if let Some(p) = &a.predictions {
        write_predictions(p, &predictions)?;
    }
    if json {
        print_json(&serde_json::to_value(&report).expect("report serializes"));
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn write_predictions(path: &Path, predictions: &[ClipPrediction]) -> Result<()> {
    let mut text = ClipPrediction::tsv_header();
    text.push('\n');
    for p in predictions {
        text.push_str(&p.tsv_row());
        text.push('\n');
    }
    fsutil::write_atomic(path, text.as_bytes())
}

fn predict(a: PredictArgs, json: bool) -> Result<()> {
    let model = TrainedModel::load(&a.checkpoint)?;
    let clip = read_wav(&a.wav)?;
    let p = model.predict_clip(&a.wav.display().to_string(), &clip, a.strategy)?;
    if json {
        let scores: serde_json::Map<String, serde_json::Value> = SceneClass::ALL
            .iter()
            .zip(&p.scores)
            .map(|(c, &s)| (c.name().to_string(), json!(s)))
            .collect();
        print_json(&json!({
            "clip": p.clip,
            "predicted": p.predicted.name(),
            "class_id": p.predicted.id(),
            "strategy": p.strategy,
            "scores": scores,
        }));
    } else {
        println!("{}", p.predicted.name());
        for (c, s) in SceneClass::ALL.iter().zip(&p.scores) {
            println!("  {:<18} {s:.6}", c.name());
        }
    }
    Ok(())
}

fn compare(a: CompareArgs, json: bool) -> Result<()> {
    let mut records = Vec::new();
    for p in &a.records {
        records.extend(load_records(p)?);
    }
    let comparison = compare_runs(&records)?;
    if json {
        print_json(&serde_json::to_value(&comparison).expect("comparison serializes"));
    } else {
        print!("{}", comparison.to_table());
    }
    Ok(())
}

fn folds(a: FoldsArgs, json: bool) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let plan = make_folds(&manifest, a.k, a.seed)?;
    write_fold_plan(&plan, &manifest, &a.out)?;
    let sizes: Vec<usize> = plan.folds().iter().map(Vec::len).collect();
    if json {
        print_json(&json!({ "out": a.out, "k": a.k, "fold_sizes": sizes }));
    } else {
        println!("wrote {} ({} folds, sizes {sizes:?})", a.out.display(), a.k);
    }
    Ok(())
}
