//! Checkpoint archives: all parameter tensors, architecture dimensions,
//! embedder configuration, normalization statistics, and (optionally)
//! optimizer state for resumption. Validated against the rebuilt model's
//! parameter layout on load.

use crate::container::{ArchiveReader, ArchiveWriter, META_ENTRY};
use crate::embed::EmbedderConfig;
use crate::error::{Error, Result};
use crate::ingest::NormalizationStats;
use crate::model::{ArchitectureManifest, ModelDims, StreamVariant, TextMotionModel};
use crate::nn::ParamEntry;
use crate::scalar::Scalar;
use crate::skeleton::Skeleton;
use crate::train::{Adam, AblationVariant};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Which embedding backend a checkpoint was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EmbedSpec {
    Bert { config: EmbedderConfig },
    Static { width: usize },
}

impl EmbedSpec {
    pub fn width(&self) -> usize {
        match self {
            EmbedSpec::Bert { config } => config.output_width(),
            EmbedSpec::Static { width } => *width,
        }
    }

    pub fn digest(&self) -> String {
        match self {
            EmbedSpec::Bert { config } => config.digest(),
            EmbedSpec::Static { width } => format!("static-{width}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub dims: ModelDims,
    pub variant: StreamVariant,
    pub ablation: AblationVariant,
    pub seed: u64,
    pub skeleton_json: String,
    pub embed: EmbedSpec,
    pub embed_digest: String,
    pub stats: NormalizationStats,
    /// Last completed epoch.
    pub epoch: usize,
    pub lr: f64,
    pub arch: ArchitectureManifest,
}

/// Optimizer and schedule state for resuming a run.
pub struct TrainState<S: Scalar> {
    pub opt_gen: Adam<S>,
    pub opt_disc: Adam<S>,
    pub best_val: f64,
    pub best_epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct OptMeta {
    t_gen: u64,
    t_disc: u64,
    best_val: f64,
    best_epoch: usize,
}

fn values_to_f64<S: Scalar>(values: &[S]) -> Array1<f64> {
    Array1::from_iter(values.iter().map(|v| v.to_f64_lossy()))
}

fn values_from_f64<S: Scalar>(arr: &ndarray::ArrayD<f64>) -> Vec<S> {
    arr.iter().map(|&v| S::from_f64_lossy(v)).collect()
}

/// Write a checkpoint atomically.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &TextMotionModel<S>,
    meta: &CheckpointMeta,
    train_state: Option<&TrainState<S>>,
) -> Result<()> {
    let mut w = ArchiveWriter::create(path)?;
    w.put_json(META_ENTRY, meta)?;
    w.put_f64("gen_values", values_to_f64(model.gen.values()).view().into_dyn())?;
    w.put_f64("disc_values", values_to_f64(model.disc.values()).view().into_dyn())?;
    w.put_json("gen_layout", &model.gen.entries().to_vec())?;
    w.put_json("disc_layout", &model.disc.entries().to_vec())?;
    if let Some(ts) = train_state {
        let (gm, gv) = ts.opt_gen.state();
        let (dm, dv) = ts.opt_disc.state();
        w.put_f64("opt_gen_m", values_to_f64(gm).view().into_dyn())?;
        w.put_f64("opt_gen_v", values_to_f64(gv).view().into_dyn())?;
        w.put_f64("opt_disc_m", values_to_f64(dm).view().into_dyn())?;
        w.put_f64("opt_disc_v", values_to_f64(dv).view().into_dyn())?;
        w.put_json(
            "opt_meta",
            &OptMeta {
                t_gen: ts.opt_gen.t,
                t_disc: ts.opt_disc.t,
                best_val: ts.best_val,
                best_epoch: ts.best_epoch,
            },
        )?;
    }
    w.finish()
}

/// Load and validate a checkpoint, rebuilding the model.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(TextMotionModel<S>, CheckpointMeta, Option<TrainState<S>>)> {
    let mut r = ArchiveReader::open(path)?;
    let meta: CheckpointMeta = r.get_json(META_ENTRY)?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint version {} != supported {CHECKPOINT_VERSION}",
            meta.version
        )));
    }
    let skeleton = Skeleton::from_json(&meta.skeleton_json)?;
    let mut model = TextMotionModel::<S>::new(skeleton, meta.dims.clone(), meta.variant, meta.seed);

    let gen_layout: Vec<ParamEntry> = r.get_json("gen_layout")?;
    let disc_layout: Vec<ParamEntry> = r.get_json("disc_layout")?;
    if gen_layout != model.gen.entries() || disc_layout != model.disc.entries() {
        return Err(Error::CheckpointMismatch(
            "stored parameter layout does not match the rebuilt architecture".into(),
        ));
    }
    if meta.embed.width() != meta.dims.embed_width {
        return Err(Error::CheckpointMismatch(format!(
            "embedder width {} does not match model embed_width {}",
            meta.embed.width(),
            meta.dims.embed_width
        )));
    }
    if meta.embed.digest() != meta.embed_digest {
        return Err(Error::CheckpointMismatch("embedder digest mismatch".into()));
    }

    let gen_values = r.get_f64("gen_values")?;
    let disc_values = r.get_f64("disc_values")?;
    if gen_values.len() != model.gen.len() || disc_values.len() != model.disc.len() {
        return Err(Error::CheckpointMismatch("parameter buffer length mismatch".into()));
    }
    model.gen.load_values(values_from_f64(&gen_values));
    model.disc.load_values(values_from_f64(&disc_values));

    let train_state = if r.has("opt_meta") {
        let om: OptMeta = r.get_json("opt_meta")?;
        let mut opt_gen = Adam::new(model.gen.len());
        let mut opt_disc = Adam::new(model.disc.len());
        opt_gen.restore(
            om.t_gen,
            values_from_f64(&r.get_f64("opt_gen_m")?),
            values_from_f64(&r.get_f64("opt_gen_v")?),
        );
        opt_disc.restore(
            om.t_disc,
            values_from_f64(&r.get_f64("opt_disc_m")?),
            values_from_f64(&r.get_f64("opt_disc_v")?),
        );
        Some(TrainState {
            opt_gen,
            opt_disc,
            best_val: om.best_val,
            best_epoch: om.best_epoch,
        })
    } else {
        None
    };
    Ok((model, meta, train_state))
}

/// Build a checkpoint meta block from its parts.
#[allow(clippy::too_many_arguments)]
pub fn make_meta<S: Scalar>(
    model: &TextMotionModel<S>,
    ablation: AblationVariant,
    embed: EmbedSpec,
    stats: NormalizationStats,
    epoch: usize,
    lr: f64,
) -> CheckpointMeta {
    CheckpointMeta {
        version: CHECKPOINT_VERSION,
        dims: model.dims.clone(),
        variant: model.variant,
        ablation,
        seed: model.seed,
        skeleton_json: model.skeleton().to_json().to_string(),
        embed_digest: embed.digest(),
        embed,
        stats,
        epoch,
        lr,
        arch: model.manifest(),
    }
}
