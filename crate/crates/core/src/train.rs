//! Training: loss-graph assembly on the tape, the Adam optimizer, single
//! steps, and the epoch loop with the four ablation schedules.

use crate::embed::{EmbeddingCache, SentenceEmbedder, WordEmbeddingSequence};
use crate::error::{Error, Result};
use crate::ingest::Sample;
use crate::loss::{LossBundle, LossWeights};
use crate::model::{LatentVars, StreamVariant, TextMotionModel};
use crate::motion::MotionSequence;
use crate::nn::{Tape, Var};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// The four ablations plus the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    /// Two-phase training: pose autoencoder first, then the sentence path.
    NoJointTraining,
    /// One 2h-wide latent for the whole body.
    NoTwoStream,
    /// Generator objective reduced to the pose prediction loss.
    NoExtraLosses,
    /// Static word embeddings instead of contextual features.
    NoBert,
}

impl AblationVariant {
    pub fn from_flag(flag: &str) -> Result<Self> {
        Ok(match flag {
            "full" => AblationVariant::Full,
            "jt" => AblationVariant::NoJointTraining,
            "2st" => AblationVariant::NoTwoStream,
            "lo" => AblationVariant::NoExtraLosses,
            "bert" => AblationVariant::NoBert,
            other => return Err(Error::Config(format!("unknown ablation '{other}' (use jt|2st|lo|bert|full)"))),
        })
    }

    pub fn flag(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoJointTraining => "jt",
            AblationVariant::NoTwoStream => "2st",
            AblationVariant::NoExtraLosses => "lo",
            AblationVariant::NoBert => "bert",
        }
    }

    pub fn stream_variant(&self) -> StreamVariant {
        match self {
            AblationVariant::NoTwoStream => StreamVariant::SingleStream,
            _ => StreamVariant::TwoStream,
        }
    }
}

/// Which generated sequences feed the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscInputs {
    Both,
    SentenceOnly,
    PoseOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied each epoch.
    pub lr_decay: f64,
    pub seed: u64,
    /// Global-norm clip for generator gradients; None disables.
    pub grad_clip: Option<f64>,
    pub weights: LossWeights,
    pub disc_inputs: DiscInputs,
    /// Also run the manifold/velocity terms on the pose-conditioned path.
    pub symmetric_manifold: bool,
    /// First-phase length for the two-phase ablation (default: half).
    pub jt_phase1_epochs: Option<usize>,
    /// Keep only this many training samples (smoke runs).
    pub limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 350,
            batch_size: 32,
            learning_rate: 0.001,
            lr_decay: 0.99,
            seed: 0,
            grad_clip: Some(1.0),
            weights: LossWeights::default(),
            disc_inputs: DiscInputs::Both,
            symmetric_manifold: false,
            jt_phase1_epochs: None,
            limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::Config("lr decay must be positive".into()));
        }
        self.weights.validate()
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }
}

/// One training sample with its precomputed sentence features.
#[derive(Debug, Clone)]
pub struct TrainItem<S: Scalar> {
    pub motion: MotionSequence<S>,
    pub embedding: WordEmbeddingSequence,
    pub motion_id: String,
    pub annotation_index: usize,
    pub sentence: String,
}

/// Embed every sample's sentence (through the cache when given).
pub fn prepare_items<S: Scalar>(
    samples: &[Sample<S>],
    embedder: &SentenceEmbedder,
    cache: Option<&EmbeddingCache>,
) -> Result<Vec<TrainItem<S>>> {
    samples
        .iter()
        .map(|s| {
            let embedding = match cache {
                Some(c) => c.embed_cached(embedder, &s.sentence)?,
                None => embedder.embed(&s.sentence)?,
            };
            Ok(TrainItem {
                motion: s.motion.clone(),
                embedding,
                motion_id: s.motion_id.clone(),
                annotation_index: s.annotation_index,
                sentence: s.sentence.clone(),
            })
        })
        .collect()
}

/// Training schedule position (two-phase ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// End-to-end: both decode paths, all terms.
    Joint,
    /// Pose autoencoder only (no sentence encoder in the graph).
    PoseOnly,
    /// Sentence encoder + decoder tuning; pose encoder frozen.
    SentenceTune,
}

impl Phase {
    pub fn for_epoch(ablation: AblationVariant, config: &TrainConfig, epoch: usize) -> Phase {
        match ablation {
            AblationVariant::NoJointTraining => {
                let phase1 = config.jt_phase1_epochs.unwrap_or(config.epochs / 2).max(1);
                if epoch < phase1 {
                    Phase::PoseOnly
                } else {
                    Phase::SentenceTune
                }
            }
            _ => Phase::Joint,
        }
    }
}

/// Scalar loss nodes of one training graph.
pub struct GraphLosses {
    pub reconstruction: Var,
    pub manifold: Var,
    pub velocity: Var,
    pub embedding: Var,
    pub generator_adv: Var,
    pub discriminator: Var,
    pub total_generator: Var,
    pub total_discriminator: Var,
}

impl GraphLosses {
    pub fn bundle<S: Scalar>(&self, tape: &Tape<S>) -> LossBundle {
        LossBundle {
            reconstruction: tape.scalar(self.reconstruction).to_f64_lossy(),
            manifold: tape.scalar(self.manifold).to_f64_lossy(),
            velocity: tape.scalar(self.velocity).to_f64_lossy(),
            embedding: tape.scalar(self.embedding).to_f64_lossy(),
            generator_adv: tape.scalar(self.generator_adv).to_f64_lossy(),
            discriminator: tape.scalar(self.discriminator).to_f64_lossy(),
            total_generator: tape.scalar(self.total_generator).to_f64_lossy(),
            total_discriminator: tape.scalar(self.total_discriminator).to_f64_lossy(),
        }
    }
}

fn latent_smooth_l1<S: Scalar>(tape: &mut Tape<S>, a: &LatentVars, b: &LatentVars) -> Var {
    match (a, b) {
        (LatentVars::Two { ub: au, lb: al }, LatentVars::Two { ub: bu, lb: bl }) => {
            let u = tape.smooth_l1(*au, *bu);
            let l = tape.smooth_l1(*al, *bl);
            tape.add_n(&[u, l])
        }
        (LatentVars::One(a), LatentVars::One(b)) => tape.smooth_l1(*a, *b),
        _ => panic!("latent kinds differ"),
    }
}

/// Mean of per-step smooth-L1 terms over a sequence.
fn sequence_smooth_l1<S: Scalar>(tape: &mut Tape<S>, gen: &[Var], gt: &[Var]) -> Var {
    assert_eq!(gen.len(), gt.len());
    let terms: Vec<Var> = gen.iter().zip(gt.iter()).map(|(&a, &b)| tape.smooth_l1(a, b)).collect();
    let sum = tape.add_n(&terms);
    tape.scale(sum, S::from_f64_lossy(1.0 / terms.len() as f64))
}

/// Build the complete loss graph for one equal-length batch of items.
pub fn build_losses<S: Scalar>(
    model: &TextMotionModel<S>,
    tape: &mut Tape<S>,
    items: &[&TrainItem<S>],
    config: &TrainConfig,
    phase: Phase,
    ablation: AblationVariant,
) -> Result<GraphLosses> {
    assert!(!items.is_empty(), "empty batch");
    let t_len = items[0].motion.len();
    if items.iter().any(|it| it.motion.len() != t_len) {
        return Err(Error::Config("batch items must share sequence length".into()));
    }
    let joints = model.skeleton().joint_count();

    // ground-truth frames, batched: one (B, C) constant per step
    let gt_frames: Vec<Var> = (0..t_len)
        .map(|t| {
            let mut m = ndarray::Array2::zeros((items.len(), model.pose_width()));
            for (b, it) in items.iter().enumerate() {
                m.row_mut(b).assign(&it.motion.channels(t));
            }
            tape.constant(m)
        })
        .collect();

    let z_p = model.encode_pose_vars(tape, &gt_frames);
    let initial = gt_frames[0];
    let zero = tape.constant(ndarray::Array2::from_elem((1, 1), S::zero()));

    // sentence latents: per sample, then stacked into batch rows
    let z_s = if phase == Phase::PoseOnly {
        None
    } else {
        let mut ubs = Vec::with_capacity(items.len());
        let mut lbs = Vec::with_capacity(items.len());
        let mut singles = Vec::with_capacity(items.len());
        for it in items {
            if it.embedding.width() != model.dims.embed_width {
                return Err(Error::shape(
                    "word embeddings",
                    format!("width {}", model.dims.embed_width),
                    format!("{}", it.embedding.width()),
                ));
            }
            let words: Vec<Var> = (0..it.embedding.word_count())
                .map(|w| {
                    let row: Vec<S> = it
                        .embedding
                        .vectors
                        .row(w)
                        .iter()
                        .map(|&v| S::from_f64_lossy(v as f64))
                        .collect();
                    let m = ndarray::Array2::from_shape_vec((1, row.len()), row).expect("row");
                    tape.constant(m)
                })
                .collect();
            match model.encode_sentence_vars(tape, &words) {
                LatentVars::Two { ub, lb } => {
                    ubs.push(ub);
                    lbs.push(lb);
                }
                LatentVars::One(z) => singles.push(z),
            }
        }
        Some(if singles.is_empty() {
            LatentVars::Two {
                ub: tape.concat_rows(&ubs),
                lb: tape.concat_rows(&lbs),
            }
        } else {
            LatentVars::One(tape.concat_rows(&singles))
        })
    };

    // decode paths
    let p_hat_p = match phase {
        Phase::SentenceTune => None,
        _ => Some(model.decode_vars(tape, &z_p, initial, t_len)),
    };
    let p_hat_s = match (&z_s, phase) {
        (Some(z), Phase::Joint) | (Some(z), Phase::SentenceTune) => {
            Some(model.decode_vars(tape, z, initial, t_len))
        }
        _ => None,
    };

    // L_R over every decoded path
    let mut recon_terms = Vec::new();
    if let Some(seq) = &p_hat_s {
        recon_terms.push(sequence_smooth_l1(tape, seq, &gt_frames));
    }
    if let Some(seq) = &p_hat_p {
        recon_terms.push(sequence_smooth_l1(tape, seq, &gt_frames));
    }
    let reconstruction = tape.add_n(&recon_terms);

    // designated output: the sentence-conditioned sequence when present
    let designated: Option<&Vec<Var>> = p_hat_s.as_ref().or(p_hat_p.as_ref());

    // L_M: re-encode the generated poses and compare latents
    let manifold = match (phase, designated) {
        (Phase::SentenceTune, _) | (_, None) => zero,
        (_, Some(seq)) => {
            let z_re = model.encode_pose_vars(tape, seq);
            let mut m = latent_smooth_l1(tape, &z_re, &z_p);
            if config.symmetric_manifold && p_hat_s.is_some() {
                if let Some(pp) = &p_hat_p {
                    let z_re_p = model.encode_pose_vars(tape, pp);
                    let extra = latent_smooth_l1(tape, &z_re_p, &z_p);
                    m = tape.add_n(&[m, extra]);
                }
            }
            m
        }
    };

    // L_V over joint coordinates (trajectory channels are already velocities)
    let velocity = match (phase, designated) {
        (Phase::SentenceTune, _) | (_, None) => zero,
        (_, Some(seq)) if t_len >= 2 => {
            let joint_cols = joints * 3;
            let vel_of = |tape: &mut Tape<S>, frames: &[Var]| -> Vec<Var> {
                (0..frames.len() - 1)
                    .map(|t| {
                        let a = tape.slice_cols(frames[t + 1], 0, joint_cols);
                        let b = tape.slice_cols(frames[t], 0, joint_cols);
                        tape.sub(a, b)
                    })
                    .collect()
            };
            let gen_v = vel_of(tape, seq);
            let gt_v = vel_of(tape, &gt_frames);
            let mut v = sequence_smooth_l1(tape, &gen_v, &gt_v);
            if config.symmetric_manifold && p_hat_s.is_some() {
                if let Some(pp) = &p_hat_p {
                    let pp_v = vel_of(tape, pp);
                    let extra = sequence_smooth_l1(tape, &pp_v, &gt_v);
                    v = tape.add_n(&[v, extra]);
                }
            }
            v
        }
        _ => zero,
    };

    // L_E between pose and sentence latents
    let embedding = match (&z_s, phase) {
        (Some(z), Phase::Joint) | (Some(z), Phase::SentenceTune) => latent_smooth_l1(tape, z, &z_p),
        _ => zero,
    };

    // adversarial pair
    let (generator_adv, discriminator) = if phase == Phase::SentenceTune {
        (zero, zero)
    } else {
        let mut fakes: Vec<&Vec<Var>> = Vec::new();
        match (config.disc_inputs, &p_hat_s, &p_hat_p) {
            (DiscInputs::Both, Some(s), Some(p)) => {
                fakes.push(s);
                fakes.push(p);
            }
            (DiscInputs::Both, Some(s), None) => fakes.push(s),
            (DiscInputs::Both, None, Some(p)) => fakes.push(p),
            (DiscInputs::SentenceOnly, Some(s), _) => fakes.push(s),
            (DiscInputs::SentenceOnly, None, Some(p)) => fakes.push(p),
            (DiscInputs::PoseOnly, _, Some(p)) => fakes.push(p),
            (DiscInputs::PoseOnly, Some(s), None) => fakes.push(s),
            _ => {}
        }
        if fakes.is_empty() {
            (zero, zero)
        } else {
            let real_logits = model.discriminate_logits_vars(tape, &gt_frames);
            let mut g_terms = Vec::with_capacity(fakes.len());
            let mut d_fake_terms = Vec::with_capacity(fakes.len());
            for f in &fakes {
                let logits = model.discriminate_logits_vars(tape, f);
                g_terms.push(tape.bce_with_logits(logits, S::one()));
                d_fake_terms.push(tape.bce_with_logits(logits, S::zero()));
            }
            let inv = S::from_f64_lossy(1.0 / fakes.len() as f64);
            let g_sum = tape.add_n(&g_terms);
            let g = tape.scale(g_sum, inv);
            let d_fake_sum = tape.add_n(&d_fake_terms);
            let d_fake = tape.scale(d_fake_sum, inv);
            let d_real = tape.bce_with_logits(real_logits, S::one());
            let d = tape.add_n(&[d_fake, d_real]);
            (g, d)
        }
    };

    // weighted totals
    let w = &config.weights;
    let total_generator = match (ablation, phase) {
        (AblationVariant::NoExtraLosses, _) => reconstruction,
        (AblationVariant::NoJointTraining, Phase::SentenceTune) => {
            // L_R + lambda_E * L_E per the two-phase schedule
            let e = tape.scale(embedding, S::from_f64_lossy(w.lambda_e));
            tape.add_n(&[reconstruction, e])
        }
        _ => {
            let m = tape.scale(manifold, S::from_f64_lossy(w.lambda_m));
            let v = tape.scale(velocity, S::from_f64_lossy(w.lambda_v));
            let e = tape.scale(embedding, S::from_f64_lossy(w.lambda_e));
            let g = tape.scale(generator_adv, S::from_f64_lossy(w.lambda_g));
            tape.add_n(&[reconstruction, m, v, e, g])
        }
    };
    let total_discriminator = tape.scale(discriminator, S::from_f64_lossy(w.lambda_g));

    Ok(GraphLosses {
        reconstruction,
        manifold,
        velocity,
        embedding,
        generator_adv,
        discriminator,
        total_generator,
        total_discriminator,
    })
}

// ---- optimizer ------------------------------------------------------------

/// Adam with the standard moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
        }
    }

    pub fn step(&mut self, lr: f64, params: &mut [S], grads: &[S]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1 = S::from_f64_lossy(self.beta1);
        let b2 = S::from_f64_lossy(self.beta2);
        let one = S::one();
        let bc1 = S::from_f64_lossy(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = S::from_f64_lossy(1.0 - self.beta2.powi(self.t as i32));
        let lr_s = S::from_f64_lossy(lr);
        let eps = S::from_f64_lossy(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - lr_s * m_hat / (v_hat.sqrt() + eps);
        }
    }

    pub fn state(&self) -> (&[S], &[S]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<S>, v: Vec<S>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.t = t;
        self.m = m;
        self.v = v;
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm<S: Scalar>(grads: &mut [S], max_norm: f64) {
    let norm: f64 = grads.iter().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = S::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            *g = *g * scale;
        }
    }
}

/// Result of one optimizer step.
pub struct StepOutcome {
    pub losses: LossBundle,
    /// False when non-finite gradients made the step a no-op.
    pub applied: bool,
}

/// One generator update and one discriminator update on a batch.
pub fn train_step<S: Scalar>(
    model: &mut TextMotionModel<S>,
    items: &[&TrainItem<S>],
    opt_gen: &mut Adam<S>,
    opt_disc: &mut Adam<S>,
    lr: f64,
    config: &TrainConfig,
    phase: Phase,
    ablation: AblationVariant,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let graph = build_losses(model, &mut tape, items, config, phase, ablation)?;
    let losses = graph.bundle(&tape);
    if !losses.is_finite() {
        return Err(Error::NonFinite(format!("loss bundle {losses:?}")));
    }

    let gen_grads = tape.backward(graph.total_generator, &[&model.gen, &model.disc]);
    let mut gen_grads = gen_grads.into_iter().next().expect("gen slot");

    // the pose encoder freezes during the sentence-tuning phase
    if phase == Phase::SentenceTune {
        for (a, b) in model.gen_prefix_ranges("pe.") {
            for g in &mut gen_grads[a..b] {
                *g = S::zero();
            }
        }
    }

    let train_disc = ablation != AblationVariant::NoExtraLosses && phase != Phase::SentenceTune;
    let disc_grads = if train_disc {
        let mut grads = tape.backward(graph.total_discriminator, &[&model.gen, &model.disc]);
        Some(grads.pop().expect("disc slot"))
    } else {
        None
    };

    let finite = gen_grads.iter().all(|g| g.is_finite())
        && disc_grads.as_ref().map_or(true, |d| d.iter().all(|g| g.is_finite()));
    if !finite {
        log::warn!("non-finite gradients; skipping parameter update");
        return Ok(StepOutcome { losses, applied: false });
    }

    if let Some(c) = config.grad_clip {
        clip_global_norm(&mut gen_grads, c);
    }
    opt_gen.step(lr, model.gen.values_mut(), &gen_grads);
    if let Some(mut d) = disc_grads {
        if let Some(c) = config.grad_clip {
            clip_global_norm(&mut d, c);
        }
        opt_disc.step(lr, model.disc.values_mut(), &d);
    }
    Ok(StepOutcome { losses, applied: true })
}

/// Forward-only mean losses over a set of items (validation).
pub fn evaluate_losses<S: Scalar>(
    model: &TextMotionModel<S>,
    items: &[TrainItem<S>],
    config: &TrainConfig,
    phase: Phase,
    ablation: AblationVariant,
) -> Result<LossBundle> {
    let groups = group_indices_by_len(items, usize::MAX);
    let mut acc = LossBundle {
        reconstruction: 0.0,
        manifold: 0.0,
        velocity: 0.0,
        embedding: 0.0,
        generator_adv: 0.0,
        discriminator: 0.0,
        total_generator: 0.0,
        total_discriminator: 0.0,
    };
    let mut n = 0usize;
    for group in groups {
        let refs: Vec<&TrainItem<S>> = group.iter().map(|&i| &items[i]).collect();
        let mut tape = Tape::new();
        let graph = build_losses(model, &mut tape, &refs, config, phase, ablation)?;
        let b = graph.bundle(&tape);
        let w = refs.len() as f64;
        acc.reconstruction += b.reconstruction * w;
        acc.manifold += b.manifold * w;
        acc.velocity += b.velocity * w;
        acc.embedding += b.embedding * w;
        acc.generator_adv += b.generator_adv * w;
        acc.discriminator += b.discriminator * w;
        acc.total_generator += b.total_generator * w;
        acc.total_discriminator += b.total_discriminator * w;
        n += refs.len();
    }
    if n == 0 {
        return Err(Error::Empty("validation items".into()));
    }
    let inv = 1.0 / n as f64;
    acc.reconstruction *= inv;
    acc.manifold *= inv;
    acc.velocity *= inv;
    acc.embedding *= inv;
    acc.generator_adv *= inv;
    acc.discriminator *= inv;
    acc.total_generator *= inv;
    acc.total_discriminator *= inv;
    Ok(acc)
}

/// Group item indices into equal-length batches of at most `batch_size`,
/// preserving encounter order within each length bucket.
pub fn group_indices<S: Scalar>(items: &[TrainItem<S>], order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut out = Vec::new();
    for &i in order {
        let t = items[i].motion.len();
        let bucket = buckets.entry(t).or_default();
        bucket.push(i);
        if bucket.len() == batch_size {
            out.push(std::mem::take(bucket));
        }
    }
    for (_, bucket) in buckets {
        if !bucket.is_empty() {
            out.push(bucket);
        }
    }
    out
}

fn group_indices_by_len<S: Scalar>(items: &[TrainItem<S>], batch_size: usize) -> Vec<Vec<usize>> {
    let order: Vec<usize> = (0..items.len()).collect();
    group_indices(items, &order, batch_size)
}

/// Per-epoch log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub phase: Phase,
    pub train: LossBundle,
    pub val: Option<LossBundle>,
    pub skipped_steps: usize,
    pub seconds: f64,
}

/// Outcome of a training run.
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Epoch loop over prepared items. Checkpointing and resumption are
/// handled by the caller through `on_epoch`.
pub fn train_loop<S: Scalar>(
    model: &mut TextMotionModel<S>,
    opt_gen: &mut Adam<S>,
    opt_disc: &mut Adam<S>,
    train_items: &[TrainItem<S>],
    val_items: &[TrainItem<S>],
    config: &TrainConfig,
    ablation: AblationVariant,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochRecord, &TextMotionModel<S>, &Adam<S>, &Adam<S>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_items = match config.limit {
        Some(n) => &train_items[..n.min(train_items.len())],
        None => train_items,
    };
    if train_items.is_empty() {
        return Err(Error::Empty("training items".into()));
    }

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    for epoch in start_epoch..config.epochs {
        let started = std::time::Instant::now();
        let lr = config.lr_at_epoch(epoch);
        let phase = Phase::for_epoch(ablation, config, epoch);

        // per-epoch deterministic order, independent of prior epochs so
        // resumed runs behave identically
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        order.shuffle(&mut rng);
        let groups = group_indices(train_items, &order, config.batch_size);

        let mut sum = vec![0.0f64; 8];
        let mut n = 0usize;
        let mut skipped = 0usize;
        for group in groups {
            let refs: Vec<&TrainItem<S>> = group.iter().map(|&i| &train_items[i]).collect();
            match train_step(model, &refs, opt_gen, opt_disc, lr, config, phase, ablation) {
                Ok(outcome) => {
                    if !outcome.applied {
                        skipped += 1;
                    }
                    let b = outcome.losses;
                    let w = refs.len() as f64;
                    for (slot, v) in [
                        b.reconstruction,
                        b.manifold,
                        b.velocity,
                        b.embedding,
                        b.generator_adv,
                        b.discriminator,
                        b.total_generator,
                        b.total_discriminator,
                    ]
                    .iter()
                    .enumerate()
                    {
                        sum[slot] += v * w;
                    }
                    n += refs.len();
                }
                Err(Error::NonFinite(what)) => {
                    log::warn!("epoch {epoch}: non-finite losses ({what}); step skipped");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if n == 0 {
            return Err(Error::NonFinite(format!("epoch {epoch}: every step failed")));
        }
        let inv = 1.0 / n as f64;
        let train = LossBundle {
            reconstruction: sum[0] * inv,
            manifold: sum[1] * inv,
            velocity: sum[2] * inv,
            embedding: sum[3] * inv,
            generator_adv: sum[4] * inv,
            discriminator: sum[5] * inv,
            total_generator: sum[6] * inv,
            total_discriminator: sum[7] * inv,
        };
        let val = if val_items.is_empty() {
            None
        } else {
            Some(evaluate_losses(model, val_items, config, phase, ablation)?)
        };

        let record = EpochRecord {
            epoch,
            lr,
            phase,
            train,
            val,
            skipped_steps: skipped,
            seconds: started.elapsed().as_secs_f64(),
        };
        let val_total = record.val.as_ref().map(|v| v.total_generator).unwrap_or(train.total_generator);
        if val_total < best_val {
            best_val = val_total;
            best_epoch = epoch;
        }
        on_epoch(&record, model, opt_gen, opt_disc)?;
        history.push(record);
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::skeleton::Skeleton;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn toy_items(n: usize, t: usize, k: usize, seed: u64) -> Vec<TrainItem<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let frames = ndarray::Array3::from_shape_fn((t, 21, 3), |_| rng.gen_range(-1.0..1.0));
                let traj = ndarray::Array2::from_shape_fn((t, 3), |_| rng.gen_range(-0.5..0.5));
                let w = 2 + (i % 3);
                let emb = WordEmbeddingSequence::new(
                    ndarray::Array2::from_shape_fn((w, k), |_| rng.gen_range(-1.0f32..1.0)),
                    (0..w).map(|x| format!("w{x}")).collect(),
                )
                .unwrap();
                TrainItem {
                    motion: MotionSequence::new(frames, traj, 12.5).unwrap(),
                    embedding: emb,
                    motion_id: format!("{i:05}"),
                    annotation_index: 0,
                    sentence: format!("sentence {i}"),
                }
            })
            .collect()
    }

    fn tiny_model(seed: u64) -> TextMotionModel<f64> {
        TextMotionModel::new(Skeleton::default_kit(), ModelDims::tiny(12), StreamVariant::TwoStream, seed)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 0.003,
            lr_decay: 0.99,
            seed: 5,
            grad_clip: Some(1.0),
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bitwise_unchanged() {
        let mut model = tiny_model(1);
        let items = toy_items(4, 6, 12, 2);
        let refs: Vec<&TrainItem<f64>> = items.iter().collect();
        let before_gen = model.gen.values().to_vec();
        let before_disc = model.disc.values().to_vec();
        let mut og = Adam::new(model.gen.len());
        let mut od = Adam::new(model.disc.len());
        let cfg = tiny_config();
        let out = train_step(&mut model, &refs, &mut og, &mut od, 0.0, &cfg, Phase::Joint, AblationVariant::Full).unwrap();
        assert!(out.applied);
        assert_eq!(model.gen.values(), &before_gen[..]);
        assert_eq!(model.disc.values(), &before_disc[..]);
    }

    #[test]
    fn reconstruction_only_weights_give_exactly_zero_disc_gradients() {
        let model = tiny_model(2);
        let items = toy_items(3, 5, 12, 3);
        let refs: Vec<&TrainItem<f64>> = items.iter().collect();
        let mut cfg = tiny_config();
        cfg.weights = LossWeights::reconstruction_only();
        let mut tape = Tape::new();
        let graph = build_losses(&model, &mut tape, &refs, &cfg, Phase::Joint, AblationVariant::Full).unwrap();
        let grads = tape.backward(graph.total_discriminator, &[&model.gen, &model.disc]);
        assert!(grads[1].iter().all(|&g| g == 0.0), "disc grads must be exactly zero");
        // generator total also carries no adversarial gradient into D
        let gen_side = tape.backward(graph.total_generator, &[&model.gen, &model.disc]);
        assert!(gen_side[1].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn generator_and_discriminator_updates_are_isolated() {
        let mut model = tiny_model(3);
        let items = toy_items(4, 6, 12, 4);
        let refs: Vec<&TrainItem<f64>> = items.iter().collect();
        let cfg = tiny_config();
        let mut tape = Tape::new();
        let graph = build_losses(&model, &mut tape, &refs, &cfg, Phase::Joint, AblationVariant::Full).unwrap();

        // generator update from the generator total only
        let gen_grads = tape.backward(graph.total_generator, &[&model.gen, &model.disc]);
        let disc_before = model.disc.values().to_vec();
        let mut og = Adam::new(model.gen.len());
        og.step(0.01, model.gen.values_mut(), &gen_grads[0]);
        assert_eq!(model.disc.values(), &disc_before[..], "gen step must not touch D");

        // discriminator update from the discriminator total only
        let disc_grads = tape.backward(graph.total_discriminator, &[&model.gen, &model.disc]);
        let gen_after = model.gen.values().to_vec();
        let mut od = Adam::new(model.disc.len());
        od.step(0.01, model.disc.values_mut(), &disc_grads[1]);
        assert_eq!(model.gen.values(), &gen_after[..], "disc step must not touch G");
    }

    #[test]
    fn repeated_steps_on_one_batch_shrink_the_loss() {
        let mut model = tiny_model(4);
        let items = toy_items(4, 8, 12, 5);
        let refs: Vec<&TrainItem<f64>> = items.iter().collect();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..tiny_config()
        };
        let mut og = Adam::new(model.gen.len());
        let mut od = Adam::new(model.disc.len());
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..300 {
            let out = train_step(&mut model, &refs, &mut og, &mut od, 0.01, &cfg, Phase::Joint, AblationVariant::Full)
                .unwrap();
            if first.is_none() {
                first = Some(out.losses.total_generator);
            }
            last = out.losses.total_generator;
        }
        let first = first.unwrap();
        assert!(
            last <= 0.2 * first,
            "300 steps must cut the loss by at least 80% ({first} -> {last})"
        );
    }

    #[test]
    fn loss_trajectory_is_reproducible_across_runs() {
        let run = || -> Vec<f64> {
            let mut model = tiny_model(6);
            let items = toy_items(8, 6, 12, 7);
            let cfg = TrainConfig {
                epochs: 5,
                batch_size: 4,
                ..tiny_config()
            };
            let mut og = Adam::new(model.gen.len());
            let mut od = Adam::new(model.disc.len());
            let out = train_loop(
                &mut model,
                &mut og,
                &mut od,
                &items,
                &[],
                &cfg,
                AblationVariant::Full,
                0,
                |_, _, _, _| Ok(()),
            )
            .unwrap();
            out.history.iter().map(|r| r.train.total_generator).collect()
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn no_extra_losses_total_is_reconstruction_node() {
        let model = tiny_model(8);
        let items = toy_items(3, 5, 12, 9);
        let refs: Vec<&TrainItem<f64>> = items.iter().collect();
        let cfg = tiny_config();
        let mut tape = Tape::new();
        let graph = build_losses(&model, &mut tape, &refs, &cfg, Phase::Joint, AblationVariant::NoExtraLosses).unwrap();
        assert_eq!(graph.total_generator, graph.reconstruction);
        // gradients of the removed terms are exactly absent: backward of the
        // total equals backward of L_R alone
        let a = tape.backward(graph.total_generator, &[&model.gen, &model.disc]);
        let b = tape.backward(graph.reconstruction, &[&model.gen, &model.disc]);
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn pose_only_phase_has_zero_sentence_encoder_gradients() {
        let model = tiny_model(9);
        let items = toy_items(3, 6, 12, 10);
        let refs: Vec<&TrainItem<f64>> = items.iter().collect();
        let cfg = tiny_config();
        let mut tape = Tape::new();
        let graph = build_losses(&model, &mut tape, &refs, &cfg, Phase::PoseOnly, AblationVariant::NoJointTraining).unwrap();
        let grads = tape.backward(graph.total_generator, &[&model.gen, &model.disc]);
        for (a, b) in model.gen_prefix_ranges("se.") {
            assert!(grads[0][a..b].iter().all(|&g| g == 0.0), "sentence encoder untouched in phase 1");
        }
        // pose path carries gradient
        let pe_has = model
            .gen_prefix_ranges("pe.")
            .iter()
            .any(|&(a, b)| grads[0][a..b].iter().any(|&g| g != 0.0));
        assert!(pe_has);
    }

    #[test]
    fn sentence_tune_phase_freezes_pose_encoder() {
        let mut model = tiny_model(10);
        let items = toy_items(4, 6, 12, 11);
        let refs: Vec<&TrainItem<f64>> = items.iter().collect();
        let cfg = tiny_config();
        let mut og = Adam::new(model.gen.len());
        let mut od = Adam::new(model.disc.len());
        let pe_ranges = model.gen_prefix_ranges("pe.");
        let before: Vec<f64> = pe_ranges
            .iter()
            .flat_map(|&(a, b)| model.gen.values()[a..b].to_vec())
            .collect();
        let disc_before = model.disc.values().to_vec();
        train_step(
            &mut model,
            &refs,
            &mut og,
            &mut od,
            0.01,
            &cfg,
            Phase::SentenceTune,
            AblationVariant::NoJointTraining,
        )
        .unwrap();
        let after: Vec<f64> = pe_ranges
            .iter()
            .flat_map(|&(a, b)| model.gen.values()[a..b].to_vec())
            .collect();
        assert_eq!(before, after, "pose encoder frozen in phase 2");
        assert_eq!(model.disc.values(), &disc_before[..], "discriminator idle in phase 2");
        // but the sentence encoder moved
        let se_moved = model
            .gen_prefix_ranges("se.")
            .iter()
            .any(|&(a, b)| model.gen.values()[a..b].iter().any(|&v| v != 0.0));
        assert!(se_moved);
    }

    #[test]
    fn gradients_flow_to_both_encoders_in_joint_phase() {
        let model = tiny_model(11);
        let items = toy_items(2, 5, 12, 12);
        let refs: Vec<&TrainItem<f64>> = items.iter().collect();
        let cfg = tiny_config();
        let mut tape = Tape::new();
        let graph = build_losses(&model, &mut tape, &refs, &cfg, Phase::Joint, AblationVariant::Full).unwrap();
        let grads = tape.backward(graph.total_generator, &[&model.gen, &model.disc]);
        for prefix in ["pe.", "se.", "de."] {
            let has = model
                .gen_prefix_ranges(prefix)
                .iter()
                .any(|&(a, b)| grads[0][a..b].iter().any(|&g| g != 0.0));
            assert!(has, "{prefix} must receive gradient");
        }
    }

    #[test]
    fn value_level_losses_agree_with_graph() {
        // same sample through the tape graph and the value-level formulas
        let model = tiny_model(12);
        let items = toy_items(1, 6, 12, 13);
        let refs: Vec<&TrainItem<f64>> = items.iter().collect();
        let cfg = TrainConfig {
            disc_inputs: DiscInputs::Both,
            ..tiny_config()
        };
        let mut tape = Tape::new();
        let graph = build_losses(&model, &mut tape, &refs, &cfg, Phase::Joint, AblationVariant::Full).unwrap();
        let tape_bundle = graph.bundle(&tape);

        let item = &items[0];
        let out = model.model_forward(&item.motion, &item.embedding).unwrap();
        let z_re = model.encode_pose(&out.p_hat_s).unwrap();
        let d_real = model.discriminate(&item.motion).unwrap();
        let d_fake_s = model.discriminate(&out.p_hat_s).unwrap();
        let d_fake_p = model.discriminate(&out.p_hat_p).unwrap();
        let value_bundle = crate::loss::compute_losses(
            &item.motion,
            &out.p_hat_p,
            &out.p_hat_s,
            &out.z_p,
            &out.z_s,
            &z_re,
            d_real,
            d_fake_s,
            Some(d_fake_p),
            &cfg.weights,
        )
        .unwrap();

        for (name, a, b) in [
            ("L_R", tape_bundle.reconstruction, value_bundle.reconstruction),
            ("L_M", tape_bundle.manifold, value_bundle.manifold),
            ("L_V", tape_bundle.velocity, value_bundle.velocity),
            ("L_E", tape_bundle.embedding, value_bundle.embedding),
            ("L_G", tape_bundle.generator_adv, value_bundle.generator_adv),
            ("L_D", tape_bundle.discriminator, value_bundle.discriminator),
            ("gen", tape_bundle.total_generator, value_bundle.total_generator),
            ("disc", tape_bundle.total_discriminator, value_bundle.total_discriminator),
        ] {
            assert!((a - b).abs() < 1e-9, "{name}: graph {a} vs value {b}");
        }
    }

    #[test]
    fn grouping_respects_lengths_and_batch_size() {
        let mut items = toy_items(5, 6, 12, 20);
        items.extend(toy_items(3, 9, 12, 21));
        let order: Vec<usize> = (0..items.len()).collect();
        let groups = group_indices(&items, &order, 2);
        for g in &groups {
            assert!(g.len() <= 2);
            let t = items[g[0]].motion.len();
            assert!(g.iter().all(|&i| items[i].motion.len() == t));
        }
        let total: usize = groups.iter().map(|g| g.len()).sum();
        assert_eq!(total, 8);
    }
}
