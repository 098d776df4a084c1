//! Run orchestration: wire a cached dataset, an embedder, and a model into
//! a training run directory with config snapshot, per-epoch metrics log,
//! and checkpoints; plus sentence-to-motion generation from a checkpoint.

use crate::checkpoint::{load_checkpoint, make_meta, save_checkpoint, CheckpointMeta, EmbedSpec, TrainState};
use crate::embed::{EmbeddingCache, SentenceEmbedder};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, NormalizationStats};
use crate::metrics::{evaluate, EvalOptions, EvalReport};
use crate::model::{ModelDims, TextMotionModel};
use crate::motion::MotionSequence;
use crate::scalar::Scalar;
use crate::skeleton::Skeleton;
use crate::train::{prepare_items, train_loop, AblationVariant, Adam, EpochRecord, TrainConfig, TrainItem};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const CONFIG_SNAPSHOT: &str = "config.json";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LAST_CHECKPOINT: &str = "last.npz";
pub const BEST_CHECKPOINT: &str = "best.npz";

/// Everything a run needs beyond the dataset itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub train: TrainConfig,
    pub ablation: AblationVariant,
    pub dims: ModelDims,
    pub model_seed: u64,
}

/// Fix the embedding width of the model to the embedder actually in use.
pub fn resolve_dims(mut dims: ModelDims, embed: &EmbedSpec) -> ModelDims {
    dims.embed_width = embed.width();
    dims
}

#[derive(Serialize)]
struct ConfigSnapshot<'a> {
    spec: &'a RunSpec,
    embed: &'a EmbedSpec,
    architecture: crate::model::ArchitectureManifest,
    cache_manifest: &'a crate::ingest::CacheManifest,
}

/// Outcome of [`train_run`].
pub struct TrainRunOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

/// Train (or resume) a run in `run_dir`.
pub fn train_run<S: Scalar>(
    dataset: &Dataset<S>,
    embedder: &SentenceEmbedder,
    embed_spec: &EmbedSpec,
    embed_cache: Option<&EmbeddingCache>,
    spec: &RunSpec,
    run_dir: &Path,
) -> Result<TrainRunOutcome> {
    spec.train.validate()?;
    if embed_spec.width() != spec.dims.embed_width {
        return Err(Error::Config(format!(
            "embedder width {} does not match model embed_width {}; use resolve_dims",
            embed_spec.width(),
            spec.dims.embed_width
        )));
    }
    std::fs::create_dir_all(run_dir.join(CHECKPOINT_DIR))?;
    let ckpt_dir = run_dir.join(CHECKPOINT_DIR);
    let last_path = ckpt_dir.join(LAST_CHECKPOINT);
    let best_path = ckpt_dir.join(BEST_CHECKPOINT);

    let train_items = prepare_items(&dataset.train, embedder, embed_cache)?;
    let val_items = prepare_items(&dataset.val, embedder, embed_cache)?;

    // fresh model or resume from the last checkpoint
    let variant = spec.ablation.stream_variant();
    let (mut model, start_epoch, mut state) = if last_path.exists() {
        let (model, meta, state) = load_checkpoint::<S>(&last_path)?;
        if meta.ablation != spec.ablation || meta.dims != spec.dims {
            return Err(Error::CheckpointMismatch(
                "existing run directory was trained with a different configuration".into(),
            ));
        }
        log::info!("resuming from epoch {}", meta.epoch + 1);
        let state = state.ok_or_else(|| Error::CheckpointMismatch("checkpoint lacks optimizer state".into()))?;
        (model, meta.epoch + 1, state)
    } else {
        let model = TextMotionModel::<S>::new(
            Skeleton::default_kit(),
            spec.dims.clone(),
            variant,
            spec.model_seed,
        );
        let state = TrainState {
            opt_gen: Adam::new(model.gen.len()),
            opt_disc: Adam::new(model.disc.len()),
            best_val: f64::INFINITY,
            best_epoch: 0,
        };
        (model, 0, state)
    };

    // config snapshot (overwritten on resume with identical content)
    let snapshot = ConfigSnapshot {
        spec,
        embed: embed_spec,
        architecture: model.manifest(),
        cache_manifest: &dataset.manifest,
    };
    std::fs::write(run_dir.join(CONFIG_SNAPSHOT), serde_json::to_string_pretty(&snapshot)?)?;

    let mut log_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(run_dir.join(METRICS_LOG))?;

    let mut best_val = state.best_val;
    let mut best_epoch = state.best_epoch;
    let stats = dataset.stats.clone();
    let mut opt_gen = std::mem::replace(&mut state.opt_gen, Adam::new(0));
    let mut opt_disc = std::mem::replace(&mut state.opt_disc, Adam::new(0));

    let outcome = train_loop(
        &mut model,
        &mut opt_gen,
        &mut opt_disc,
        &train_items,
        &val_items,
        &spec.train,
        spec.ablation,
        start_epoch,
        |record, model, opt_gen, opt_disc| {
            let line = serde_json::to_string(record)?;
            writeln!(log_file, "{line}")?;
            let val_total = record
                .val
                .as_ref()
                .map(|v| v.total_generator)
                .unwrap_or(record.train.total_generator);
            let improved = val_total < best_val;
            if improved {
                best_val = val_total;
                best_epoch = record.epoch;
            }
            let meta = make_meta(
                model,
                spec.ablation,
                embed_spec.clone(),
                stats.clone(),
                record.epoch,
                record.lr,
            );
            let ts = TrainState {
                opt_gen: opt_gen.clone(),
                opt_disc: opt_disc.clone(),
                best_val,
                best_epoch,
            };
            save_checkpoint(&last_path, model, &meta, Some(&ts))?;
            if improved {
                save_checkpoint(&best_path, model, &meta, None)?;
            }
            Ok(())
        },
    )?;

    Ok(TrainRunOutcome {
        history: outcome.history,
        best_epoch,
        best_val,
        last_checkpoint: last_path,
        best_checkpoint: best_path,
    })
}

/// Evaluate a checkpoint on one split of a cached dataset.
pub fn evaluate_checkpoint<S: Scalar>(
    checkpoint: &Path,
    dataset: &Dataset<S>,
    embedder: &SentenceEmbedder,
    embed_cache: Option<&EmbeddingCache>,
    split: &str,
    options: &EvalOptions,
) -> Result<(EvalReport, CheckpointMeta)> {
    let (model, meta, _) = load_checkpoint::<S>(checkpoint)?;
    if embedder.digest() != meta.embed_digest {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint embedder digest {} != provided {}",
            meta.embed_digest,
            embedder.digest()
        )));
    }
    let samples = dataset.split(split)?;
    if samples.is_empty() {
        return Err(Error::Empty(format!("split '{split}'")));
    }
    let items = prepare_items(samples, embedder, embed_cache)?;
    let report = evaluate(&model, &items, &meta.stats, &meta.embed, options)?;
    Ok((report, meta))
}

/// Generate a denormalized motion from a sentence and a checkpoint.
/// `initial` (normalized channels) defaults to the training mean pose
/// (all-zero in normalized space).
pub fn generate<S: Scalar>(
    model: &TextMotionModel<S>,
    stats: &NormalizationStats,
    embedder: &SentenceEmbedder,
    sentence: &str,
    initial: Option<Array1<S>>,
    frames: usize,
) -> Result<MotionSequence<S>> {
    if sentence.trim().is_empty() {
        return Err(Error::Empty("sentence".into()));
    }
    if frames == 0 {
        return Err(Error::Config("generation length must be at least 1 frame".into()));
    }
    let emb = embedder.embed(sentence)?;
    let code = model.encode_sentence(&emb)?;
    let initial = initial.unwrap_or_else(|| Array1::zeros(model.pose_width()));
    let normalized = model.decode(&code, &initial, frames)?;
    stats.invert(&normalized)
}
