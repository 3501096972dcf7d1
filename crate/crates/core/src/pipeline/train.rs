use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ChannelMode, TrainConfig};
use super::data::{ClipData, Dataset};
use super::folds::FoldPlan;
use super::record::{EpochRecord, FoldRecord, RunRecord};
use crate::audio_io::AudioClip;
use crate::augment::{mixup_batch, LabeledExample, MixupPolicy};
use crate::error::{Error, Result};
use crate::evaluation::{argmax, Aggregation, ClipPrediction, MetricsReport};
use crate::features::{
    compute_norm_stats, extract_patches, normalize, FeatureConfig, FeatureExtractor, LogMelTensor,
};
use crate::nn::{
    build_network, load_checkpoint, save_checkpoint, sgd_step, softmax_cross_entropy, Mode,
    ModelState, OptimizerConfig, OutputGrad, SgdState, Tensor4,
};
use crate::rng::{self, stream, tags, Rng};

/// Patches per forward pass when predicting.
pub const EVAL_BATCH: usize = 16;

/// Seed of the `index`-th model of a run; index `k` is the all-folds model.
pub fn fold_seed(seed: u64, index: usize) -> u64 {
    rng::mix64(seed ^ rng::mix64(index as u64 + 1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean patch-level cross-entropy over the epoch.
    pub loss: f64,
    /// Fraction of training patches whose prediction matches the dominant
    /// class of their (possibly mixed) target, in train mode.
    pub accuracy: f64,
    pub examples: usize,
    pub batches: usize,
}

/// Minibatch SGD over a fixed set of normalized patches.
#[derive(Debug, Clone)]
pub struct Trainer {
    optimizer: OptimizerConfig,
    mixup: MixupPolicy,
    batch_size: usize,
    sgd: SgdState<f32>,
    shuffle_rng: Rng,
    mixup_rng: Rng,
    epoch: usize,
}

impl Trainer {
    /// Shuffling and mixup draw from separate streams of `seed`.
    pub fn new(
        optimizer: OptimizerConfig,
        mixup: MixupPolicy,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        Self {
            optimizer,
            mixup,
            batch_size: batch_size.max(1),
            sgd: SgdState::new(),
            shuffle_rng: stream(seed, tags::SHUFFLE),
            mixup_rng: stream(seed, tags::MIXUP),
            epoch: 0,
        }
    }

    pub fn from_config(config: &TrainConfig, seed: u64) -> Self {
        Self::new(
            config.optimizer,
            config.effective_mixup(),
            config.batch_size,
            seed,
        )
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer.lr_at(self.epoch)
    }

    /// One shuffled pass. A final partial batch of a single patch is dropped.
    pub fn run_epoch(
        &mut self,
        model: &mut ModelState<f32>,
        patches: &[LogMelTensor<f32>],
        classes: &[usize],
    ) -> Result<EpochStats> {
        use rand::seq::SliceRandom;
        if patches.len() != classes.len() {
            return Err(Error::shape(
                "training labels",
                patches.len(),
                classes.len(),
            ));
        }
        let k = model.n_classes();
        let mut order: Vec<usize> = (0..patches.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let lr = self.learning_rate();
        let (mut loss_sum, mut correct, mut seen, mut batches) = (0.0, 0usize, 0usize, 0usize);
        for (b, chunk) in order.chunks(self.batch_size).enumerate() {
            if chunk.len() < self.batch_size && chunk.len() < 2 {
                continue;
            }
            let examples: Vec<LabeledExample<f32>> = chunk
                .iter()
                .map(|&i| LabeledExample::one_hot(patches[i].clone(), classes[i], k))
                .collect();
            let mixed = mixup_batch(&examples, &self.mixup, &mut self.mixup_rng)?;
            let [c, m, t] = mixed[0].features.shape();
            let mut data = Vec::with_capacity(mixed.len() * c * m * t);
            let mut targets = Vec::with_capacity(mixed.len() * k);
            for ex in &mixed {
                data.extend_from_slice(ex.features.as_slice());
                targets.extend_from_slice(&ex.label);
            }
            let x = Tensor4::from_vec([mixed.len(), c, m, t], data)?;
            let at = |e: Error| match e {
                Error::NonFinite(what) => Error::NonFinite(format!(
                    "{what} at epoch {} batch {}",
                    self.epoch + 1,
                    b + 1
                )),
                other => other,
            };
            let (probs, cache) = model.forward(&x, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(cache.logits().as_slice(), &targets, k)?;
            if !loss.is_finite() {
                return Err(at(Error::NonFinite("training loss".into())));
            }
            let grads = model.backward(cache, OutputGrad::Logits(&grad))?;
            sgd_step(model, &grads, &mut self.sgd, &self.optimizer, lr).map_err(at)?;
            for (p, t) in probs
                .as_slice()
                .chunks_exact(k)
                .zip(targets.chunks_exact(k))
            {
                let p: Vec<f64> = p.iter().map(|&v| v as f64).collect();
                let t: Vec<f64> = t.iter().map(|&v| v as f64).collect();
                correct += usize::from(argmax(&p) == argmax(&t));
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Empty("training set yields no batches"));
        }
        self.epoch += 1;
        Ok(EpochStats {
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
            examples: seen,
            batches,
        })
    }
}

/// Class probabilities for each patch, normalized with the model's statistics.
pub fn patch_probabilities(
    model: &ModelState<f32>,
    patches: &[&LogMelTensor<f32>],
) -> Result<Vec<Vec<f64>>> {
    let k = model.n_classes();
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(EVAL_BATCH) {
        let [c, m, t] = chunk[0].shape();
        let mut data = Vec::with_capacity(chunk.len() * c * m * t);
        for p in chunk {
            data.extend_from_slice(normalize(p, model.norm_stats())?.as_slice());
        }
        let probs = model.predict(&Tensor4::from_vec([chunk.len(), c, m, t], data)?)?;
        out.extend(
            probs
                .as_slice()
                .chunks_exact(k)
                .map(|r| r.iter().map(|&v| v as f64).collect()),
        );
    }
    Ok(out)
}

/// Clip-level predictions and metrics.
pub fn score_clips(
    model: &ModelState<f32>,
    clips: &[&ClipData],
    strategy: Aggregation,
) -> Result<(MetricsReport, Vec<ClipPrediction>)> {
    let all: Vec<&LogMelTensor<f32>> = clips.iter().flat_map(|c| c.patches.iter()).collect();
    let mut probs = patch_probabilities(model, &all)?.into_iter();
    let predictions = clips
        .iter()
        .map(|c| {
            let p: Vec<Vec<f64>> = probs.by_ref().take(c.patches.len()).collect();
            ClipPrediction::new(c.path.clone(), Some(c.class), p, strategy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((MetricsReport::from_predictions(&predictions)?, predictions))
}

/// Called after every epoch with `(fold, record)`; the all-folds model
/// reports fold `k`.
pub type EpochHook<'a> = &'a (dyn Fn(usize, &EpochRecord) + Sync);

struct Fit {
    model: ModelState<f32>,
    epochs: Vec<EpochRecord>,
    metrics: Option<MetricsReport>,
}

fn fit(
    dataset: &Dataset,
    train: &[usize],
    validation: Option<&[usize]>,
    config: &TrainConfig,
    index: usize,
    hook: Option<EpochHook<'_>>,
) -> Result<Fit> {
    let seed = fold_seed(config.seed, index);
    let mut model = build_network::<f32>(&config.network_spec()?, seed)?;
    let mut raw = Vec::new();
    let mut classes = Vec::new();
    for &i in train {
        for p in &dataset.clips[i].patches {
            raw.push(p.clone());
            classes.push(dataset.clips[i].class.id());
        }
    }
    // statistics come from the training clips only
    model.set_norm_stats(compute_norm_stats(&raw)?)?;
    let patches = raw
        .iter()
        .map(|p| normalize(p, model.norm_stats()))
        .collect::<Result<Vec<_>>>()?;
    drop(raw);
    let val_clips: Option<Vec<&ClipData>> =
        validation.map(|v| v.iter().map(|&i| &dataset.clips[i]).collect());
    let mut trainer = Trainer::from_config(config, seed);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut metrics = None;
    for e in 0..config.epochs {
        let lr = trainer.learning_rate();
        let stats = trainer.run_epoch(&mut model, &patches, &classes)?;
        let last = e + 1 == config.epochs;
        let due = config.eval_every > 0 && (e + 1) % config.eval_every == 0;
        let mut validation_accuracy = None;
        if let Some(clips) = val_clips.as_ref().filter(|_| last || due) {
            let (report, _) = score_clips(&model, clips, config.aggregation)?;
            validation_accuracy = Some(report.overall_accuracy);
            if last {
                metrics = Some(report);
            }
        }
        let rec = EpochRecord {
            epoch: e + 1,
            learning_rate: lr,
            loss: stats.loss,
            train_accuracy: stats.accuracy,
            validation_accuracy,
        };
        if let Some(h) = hook {
            h(index, &rec);
        }
        epochs.push(rec);
    }
    Ok(Fit {
        model,
        epochs,
        metrics,
    })
}

/// Trains on every fold but `fold` and validates on `fold` after each
/// scheduled epoch. Returns the final-epoch model.
pub fn train_fold(
    dataset: &Dataset,
    plan: &FoldPlan,
    fold: usize,
    config: &TrainConfig,
    hook: Option<EpochHook<'_>>,
) -> Result<(ModelState<f32>, FoldRecord)> {
    if plan.assignment().len() != dataset.len() {
        return Err(Error::FoldPlan(format!(
            "plan covers {} clips, dataset has {}",
            plan.assignment().len(),
            dataset.len()
        )));
    }
    let (train, val) = plan.split(fold)?;
    let fit = fit(dataset, &train, Some(&val), config, fold, hook)?;
    let metrics = fit.metrics.expect("final epoch is always validated");
    let record = FoldRecord {
        fold,
        train_clips: train.len(),
        validation_clips: val.len(),
        validation_accuracy: metrics.overall_accuracy,
        epochs: fit.epochs,
        metrics,
    };
    Ok((fit.model, record))
}

/// Model plus the feature settings it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ModelState<f32>,
    pub features: FeatureConfig,
    pub channel_mode: ChannelMode,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    features: FeatureConfig,
    feature_fingerprint: String,
    channel_mode: ChannelMode,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            features: self.features.clone(),
            feature_fingerprint: self.features.fingerprint(),
            channel_mode: self.channel_mode,
        };
        save_checkpoint(
            path,
            &self.model,
            &serde_json::to_value(meta).expect("metadata serializes"),
        )
    }

    /// Loads a checkpoint and checks its stored feature fingerprint.
    pub fn load(path: &Path) -> Result<Self> {
        let (model, extra) = load_checkpoint::<f32>(path)?;
        let meta: CheckpointMeta = serde_json::from_value(extra)
            .map_err(|e| Error::Checkpoint(format!("{}: feature metadata: {e}", path.display())))?;
        let actual = meta.features.fingerprint();
        if actual != meta.feature_fingerprint {
            return Err(Error::Fingerprint {
                expected: meta.feature_fingerprint,
                found: actual,
            });
        }
        let [c, m, t] = model.spec().input_shape;
        if [c, m, t]
            != [
                meta.channel_mode.channels(),
                meta.features.n_mels,
                meta.features.patch_frames,
            ]
        {
            return Err(Error::Checkpoint(
                "network input does not match the feature settings".into(),
            ));
        }
        Ok(Self {
            model,
            features: meta.features,
            channel_mode: meta.channel_mode,
        })
    }

    /// Refuses feature settings that differ from the training ones.
    pub fn check_features(&self, features: &FeatureConfig) -> Result<()> {
        let (want, got) = (self.features.fingerprint(), features.fingerprint());
        if want != got {
            return Err(Error::Fingerprint {
                expected: want,
                found: got,
            });
        }
        Ok(())
    }

    pub fn score(
        &self,
        dataset: &Dataset,
        strategy: Aggregation,
    ) -> Result<(MetricsReport, Vec<ClipPrediction>)> {
        self.check_features(&dataset.features)?;
        if dataset.channel_mode != self.channel_mode {
            return Err(Error::Config(format!(
                "dataset uses channel mode {}, model expects {}",
                dataset.channel_mode, self.channel_mode
            )));
        }
        let clips: Vec<&ClipData> = dataset.clips.iter().collect();
        score_clips(&self.model, &clips, strategy)
    }

    pub fn predict_clip(
        &self,
        name: &str,
        clip: &AudioClip,
        strategy: Aggregation,
    ) -> Result<ClipPrediction> {
        let extractor = FeatureExtractor::<f32>::new(self.features.clone())?;
        let full = extractor.clip_log_mel(clip)?;
        let patches = extract_patches(
            &self.channel_mode.select(&full)?,
            self.features.patch_frames,
        )?;
        let refs: Vec<&LogMelTensor<f32>> = patches.iter().collect();
        let probs = patch_probabilities(&self.model, &refs)?;
        ClipPrediction::new(name.to_string(), None, probs, strategy)
    }
}

#[derive(Default)]
pub struct CvOptions<'a> {
    /// Folds trained concurrently; 0 or 1 trains sequentially.
    pub workers: usize,
    /// Also fit one model on every clip.
    pub train_on_all_folds: bool,
    /// Held-out clips scored with the all-folds model.
    pub evaluation: Option<&'a Dataset>,
    /// Where checkpoints and the run record are written.
    pub out_dir: Option<PathBuf>,
    pub hook: Option<EpochHook<'a>>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub record: RunRecord,
    pub fold_models: Vec<ModelState<f32>>,
    pub all_folds_model: Option<ModelState<f32>>,
}

/// File names used by [`run_cross_validation`] inside `out_dir`.
pub const RECORD_FILE: &str = "record.jsonl";
pub const ALL_FOLDS_CHECKPOINT: &str = "all_folds.ckpt";

pub fn fold_checkpoint_name(fold: usize) -> String {
    format!("fold{fold}.ckpt")
}

/// Trains every fold, averages validation accuracy, optionally fits and
/// scores an all-folds model, and persists checkpoints plus the record.
/// Reruns overwrite earlier outputs in `out_dir`.
pub fn run_cross_validation(
    dataset: &Dataset,
    plan: &FoldPlan,
    config: &TrainConfig,
    options: &CvOptions<'_>,
) -> Result<CvOutcome> {
    config.validate()?;
    if options.evaluation.is_some() && !options.train_on_all_folds {
        return Err(Error::Config(
            "held-out evaluation needs the all-folds model".into(),
        ));
    }
    let started = Instant::now();
    let k = plan.k();
    type Slot = Mutex<Option<Result<(ModelState<f32>, FoldRecord)>>>;
    let slots: Vec<Slot> = (0..k).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let f = next.fetch_add(1, Ordering::SeqCst);
        if f >= k {
            break;
        }
        let res = train_fold(dataset, plan, f, config, options.hook);
        *slots[f].lock().expect("fold slot") = Some(res);
    };
    let workers = options.workers.clamp(1, k);
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let mut fold_models = Vec::with_capacity(k);
    let mut folds = Vec::with_capacity(k);
    for slot in slots {
        let (m, r) = slot
            .into_inner()
            .expect("fold slot")
            .expect("every fold ran")?;
        fold_models.push(m);
        folds.push(r);
    }
    let all_folds_model = if options.train_on_all_folds {
        let every: Vec<usize> = (0..dataset.len()).collect();
        Some(fit(dataset, &every, None, config, k, options.hook)?.model)
    } else {
        None
    };
    let trained = |model: &ModelState<f32>| TrainedModel {
        model: model.clone(),
        features: config.features.clone(),
        channel_mode: config.channel_mode,
    };
    let evaluation = match (options.evaluation, &all_folds_model) {
        (Some(ds), Some(model)) => Some(trained(model).score(ds, config.aggregation)?.0),
        _ => None,
    };
    let record = RunRecord::new(
        config,
        plan,
        folds,
        options.train_on_all_folds,
        evaluation,
        started.elapsed().as_secs_f64(),
    );
    if let Some(dir) = &options.out_dir {
        for (f, m) in fold_models.iter().enumerate() {
            trained(m).save(&dir.join(fold_checkpoint_name(f)))?;
        }
        if let Some(m) = &all_folds_model {
            trained(m).save(&dir.join(ALL_FOLDS_CHECKPOINT))?;
        }
        super::record::write_records(&dir.join(RECORD_FILE), std::slice::from_ref(&record))?;
    }
    Ok(CvOutcome {
        record,
        fold_models,
        all_folds_model,
    })
}
