//! The differentiable model: hierarchical two-stream pose encoder, two-layer
//! recurrent sentence encoder, hierarchical residual pose decoder, and the
//! temporal-convolution pose discriminator.
//!
//! Pose frames enter as flat channel vectors (J*3 joint coordinates followed
//! by the trajectory channels). Each frame is split into the five body
//! parts; trajectory channels ride with the trunk. Part features combine
//! with the trunk feature into four limb-trunk pairs; the arm pairs drive
//! the upper-body stream and the leg pairs the lower-body stream, giving
//! two latent vectors. The decoder mirrors this hierarchy in reverse and
//! adds its per-frame delta onto the previous pose (residual recurrence,
//! no teacher forcing).

use crate::embed::WordEmbeddingSequence;
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, TRAJECTORY_CHANNELS};
use crate::nn::{Conv1d, GruCell, Linear, LstmStack, ParamId, ParamStore, Tape, Var};
use crate::scalar::Scalar;
use crate::skeleton::{BodyPart, Skeleton};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Parameter-store slot of the generator (encoders + decoder) on the tape.
pub const GEN_SLOT: usize = 0;
/// Parameter-store slot of the discriminator on the tape.
pub const DISC_SLOT: usize = 1;

/// Layer widths. Defaults follow the reference configuration
/// (h1=32, h2=128, h=512, K=4096); tests shrink them freely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Part-layer output width (h1).
    pub part_width: usize,
    /// Pair-layer output width (h2).
    pub pair_width: usize,
    /// Per-stream latent width (h); the sentence latent is 2h.
    pub latent_width: usize,
    /// Word-embedding width (K).
    pub embed_width: usize,
    pub sentence_layers: usize,
    pub disc_channels: [usize; 2],
    pub disc_kernel: usize,
    pub disc_stride: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            part_width: 32,
            pair_width: 128,
            latent_width: 512,
            embed_width: 4096,
            sentence_layers: 2,
            disc_channels: [64, 128],
            disc_kernel: 4,
            disc_stride: 2,
        }
    }
}

impl ModelDims {
    /// Reduced dimensions for fast tests; same architecture.
    pub fn tiny(embed_width: usize) -> Self {
        ModelDims {
            part_width: 8,
            pair_width: 16,
            latent_width: 32,
            embed_width,
            sentence_layers: 2,
            disc_channels: [8, 16],
            disc_kernel: 4,
            disc_stride: 2,
        }
    }
}

/// Upper/lower-body split versus the single-latent ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamVariant {
    TwoStream,
    SingleStream,
}

/// Latent code produced by either encoder (values, not tape nodes).
#[derive(Debug, Clone, PartialEq)]
pub enum LatentCode<S: Scalar> {
    TwoStream { ub: Array1<S>, lb: Array1<S> },
    Single(Array1<S>),
}

impl<S: Scalar> LatentCode<S> {
    /// Concatenated [ub | lb] (or the single vector), width 2h either way.
    pub fn concat(&self) -> Array1<S> {
        match self {
            LatentCode::TwoStream { ub, lb } => {
                let mut out = Array1::zeros(ub.len() + lb.len());
                out.slice_mut(ndarray::s![..ub.len()]).assign(ub);
                out.slice_mut(ndarray::s![ub.len()..]).assign(lb);
                out
            }
            LatentCode::Single(z) => z.clone(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            LatentCode::TwoStream { ub, lb } => ub.len() + lb.len(),
            LatentCode::Single(z) => z.len(),
        }
    }
}

/// Latent tape nodes during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum LatentVars {
    Two { ub: Var, lb: Var },
    One(Var),
}

/// The four limb-trunk pairs in canonical order.
const PAIR_LIMBS: [BodyPart; 4] = [
    BodyPart::LeftArm,
    BodyPart::RightArm,
    BodyPart::LeftLeg,
    BodyPart::RightLeg,
];

/// Per-part input layout inside a frame channel vector.
#[derive(Debug, Clone)]
struct PartLayout {
    /// Column ranges (contiguous per joint) making up each part's input,
    /// in canonical part order. The trunk's ranges include the trajectory
    /// columns.
    ranges: [Vec<(usize, usize)>; 5],
    widths: [usize; 5],
    pose_width: usize,
}

impl PartLayout {
    fn from_skeleton(skeleton: &Skeleton) -> Self {
        let joints = skeleton.joint_count();
        let mut ranges: [Vec<(usize, usize)>; 5] = Default::default();
        let mut widths = [0usize; 5];
        for part in BodyPart::ALL {
            let mut r = Vec::new();
            for &j in skeleton.part(part) {
                r.push((j * 3, j * 3 + 3));
            }
            if part == BodyPart::Trunk {
                r.push((joints * 3, joints * 3 + TRAJECTORY_CHANNELS));
            }
            widths[part.index()] = r.iter().map(|(a, b)| b - a).sum();
            ranges[part.index()] = r;
        }
        PartLayout {
            ranges,
            widths,
            pose_width: joints * 3 + TRAJECTORY_CHANNELS,
        }
    }

    /// Gather one part's input columns from a frame vector.
    fn gather<S: Scalar>(&self, tape: &mut Tape<S>, frame: Var, part: BodyPart) -> Var {
        let slices: Vec<Var> = self.ranges[part.index()]
            .iter()
            .map(|&(a, b)| tape.slice_cols(frame, a, b))
            .collect();
        if slices.len() == 1 {
            slices[0]
        } else {
            tape.concat_cols(&slices)
        }
    }
}

struct PoseEncoder {
    part_layers: [Linear; 5],
    pair_layers: [Linear; 4],
    streams: EncoderStreams,
}

enum EncoderStreams {
    Two { ub: GruCell, lb: GruCell },
    One(GruCell),
}

struct SentenceEncoder {
    lstm: LstmStack,
}

struct PoseDecoder {
    init_maps: Vec<Linear>,
    part_layers: [Linear; 5],
    pair_layers: [Linear; 4],
    streams: DecoderStreams,
    /// Per pair: limb-half decoder, limb delta head, trunk delta head.
    pair_decoders: [Linear; 4],
    limb_heads: [Linear; 4],
    trunk_heads: [Linear; 4],
}

enum DecoderStreams {
    Two { ub: GruCell, lb: GruCell, expand_ub: Linear, expand_lb: Linear },
    One { gru: GruCell, expand: Linear },
}

struct Discriminator {
    conv1: Conv1d,
    conv2: Conv1d,
    head: Linear,
}

/// The full model: generator parameters (pose encoder, sentence encoder,
/// pose decoder) in one store, discriminator parameters in another.
pub struct TextMotionModel<S: Scalar> {
    pub dims: ModelDims,
    pub variant: StreamVariant,
    pub gen: ParamStore<S>,
    pub disc: ParamStore<S>,
    skeleton: Skeleton,
    layout: PartLayout,
    pe: PoseEncoder,
    se: SentenceEncoder,
    de: PoseDecoder,
    d: Discriminator,
    pub seed: u64,
}

impl<S: Scalar> TextMotionModel<S> {
    pub fn new(skeleton: Skeleton, dims: ModelDims, variant: StreamVariant, seed: u64) -> Self {
        let layout = PartLayout::from_skeleton(&skeleton);
        let mut gen = ParamStore::new();
        let mut disc = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let h1 = dims.part_width;
        let h2 = dims.pair_width;
        let h = dims.latent_width;

        let part_layers = BodyPart::ALL.map(|p| {
            Linear::new(
                &mut gen,
                &format!("pe.part.{}", p.name()),
                layout.widths[p.index()],
                h1,
                &mut rng,
            )
        });
        let pair_layers = [0, 1, 2, 3].map(|i| {
            Linear::new(
                &mut gen,
                &format!("pe.pair.{}", PAIR_LIMBS[i].name()),
                2 * h1,
                h2,
                &mut rng,
            )
        });
        let pe_streams = match variant {
            StreamVariant::TwoStream => EncoderStreams::Two {
                ub: GruCell::new(&mut gen, "pe.gru.ub", 2 * h2, h, &mut rng),
                lb: GruCell::new(&mut gen, "pe.gru.lb", 2 * h2, h, &mut rng),
            },
            StreamVariant::SingleStream => {
                EncoderStreams::One(GruCell::new(&mut gen, "pe.gru.body", 4 * h2, 2 * h, &mut rng))
            }
        };
        let pe = PoseEncoder {
            part_layers,
            pair_layers,
            streams: pe_streams,
        };

        let se = SentenceEncoder {
            lstm: LstmStack::new(&mut gen, "se.lstm", dims.embed_width, 2 * h, dims.sentence_layers, &mut rng),
        };

        let de_part_layers = BodyPart::ALL.map(|p| {
            Linear::new(
                &mut gen,
                &format!("de.part.{}", p.name()),
                layout.widths[p.index()],
                h1,
                &mut rng,
            )
        });
        let de_pair_layers = [0, 1, 2, 3].map(|i| {
            Linear::new(
                &mut gen,
                &format!("de.pair.{}", PAIR_LIMBS[i].name()),
                2 * h1,
                h2,
                &mut rng,
            )
        });
        let (de_streams, init_maps) = match variant {
            StreamVariant::TwoStream => (
                DecoderStreams::Two {
                    ub: GruCell::new(&mut gen, "de.gru.ub", 2 * h2, h, &mut rng),
                    lb: GruCell::new(&mut gen, "de.gru.lb", 2 * h2, h, &mut rng),
                    expand_ub: Linear::new(&mut gen, "de.expand.ub", h, 2 * h2, &mut rng),
                    expand_lb: Linear::new(&mut gen, "de.expand.lb", h, 2 * h2, &mut rng),
                },
                vec![
                    Linear::new(&mut gen, "de.init.ub", h, h, &mut rng),
                    Linear::new(&mut gen, "de.init.lb", h, h, &mut rng),
                ],
            ),
            StreamVariant::SingleStream => (
                DecoderStreams::One {
                    gru: GruCell::new(&mut gen, "de.gru.body", 4 * h2, 2 * h, &mut rng),
                    expand: Linear::new(&mut gen, "de.expand.body", 2 * h, 4 * h2, &mut rng),
                },
                vec![Linear::new(&mut gen, "de.init.body", 2 * h, 2 * h, &mut rng)],
            ),
        };
        let pair_decoders = [0, 1, 2, 3].map(|i| {
            Linear::new(
                &mut gen,
                &format!("de.pairdec.{}", PAIR_LIMBS[i].name()),
                h2,
                2 * h1,
                &mut rng,
            )
        });
        // delta heads start at zero so a fresh decoder reproduces its seed
        // pose; see the residual identity invariant
        let limb_heads = [0, 1, 2, 3].map(|i| {
            let limb = PAIR_LIMBS[i];
            Linear::new_zeroed(
                &mut gen,
                &format!("de.head.{}", limb.name()),
                h1,
                layout.widths[limb.index()],
            )
        });
        let trunk_heads = [0, 1, 2, 3].map(|i| {
            Linear::new_zeroed(
                &mut gen,
                &format!("de.head.trunk_from_{}", PAIR_LIMBS[i].name()),
                h1,
                layout.widths[BodyPart::Trunk.index()],
            )
        });
        let de = PoseDecoder {
            init_maps,
            part_layers: de_part_layers,
            pair_layers: de_pair_layers,
            streams: de_streams,
            pair_decoders,
            limb_heads,
            trunk_heads,
        };

        let d = Discriminator {
            conv1: Conv1d::new(
                &mut disc,
                "d.conv1",
                layout.pose_width,
                dims.disc_channels[0],
                dims.disc_kernel,
                dims.disc_stride,
                &mut rng,
            ),
            conv2: Conv1d::new(
                &mut disc,
                "d.conv2",
                dims.disc_channels[0],
                dims.disc_channels[1],
                dims.disc_kernel,
                dims.disc_stride,
                &mut rng,
            ),
            head: Linear::new(&mut disc, "d.head", dims.disc_channels[1], 1, &mut rng),
        };

        TextMotionModel {
            dims,
            variant,
            gen,
            disc,
            skeleton,
            layout,
            pe,
            se,
            de,
            d,
            seed,
        }
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn pose_width(&self) -> usize {
        self.layout.pose_width
    }

    /// Latent width of the concatenated code (2h for both variants).
    pub fn code_width(&self) -> usize {
        2 * self.dims.latent_width
    }

    // ---- tape-level forward passes -------------------------------------

    /// Hierarchical part/pair features for one frame, in pair order.
    fn pair_features(
        &self,
        tape: &mut Tape<S>,
        ps: &ParamStore<S>,
        part_layers: &[Linear; 5],
        pair_layers: &[Linear; 4],
        frame: Var,
    ) -> [Var; 4] {
        let part_feat = BodyPart::ALL.map(|p| {
            let x = self.layout.gather(tape, frame, p);
            let y = part_layers[p.index()].forward(tape, GEN_SLOT, ps, x);
            tape.tanh(y)
        });
        let trunk = part_feat[BodyPart::Trunk.index()];
        [0, 1, 2, 3].map(|i| {
            let limb = part_feat[PAIR_LIMBS[i].index()];
            let cat = tape.concat_cols(&[limb, trunk]);
            let y = pair_layers[i].forward(tape, GEN_SLOT, ps, cat);
            tape.tanh(y)
        })
    }

    /// Encode a sequence of frame vectors into the latent code.
    pub fn encode_pose_vars(&self, tape: &mut Tape<S>, frames: &[Var]) -> LatentVars {
        assert!(!frames.is_empty(), "encode_pose needs at least one frame");
        let pairs_per_t: Vec<[Var; 4]> = frames
            .iter()
            .map(|&f| self.pair_features(tape, &self.gen, &self.pe.part_layers, &self.pe.pair_layers, f))
            .collect();
        match &self.pe.streams {
            EncoderStreams::Two { ub, lb } => {
                let ub_inputs: Vec<Var> = pairs_per_t
                    .iter()
                    .map(|p| tape.concat_cols(&[p[0], p[1]]))
                    .collect();
                let lb_inputs: Vec<Var> = pairs_per_t
                    .iter()
                    .map(|p| tape.concat_cols(&[p[2], p[3]]))
                    .collect();
                LatentVars::Two {
                    ub: ub.run(tape, GEN_SLOT, &self.gen, &ub_inputs),
                    lb: lb.run(tape, GEN_SLOT, &self.gen, &lb_inputs),
                }
            }
            EncoderStreams::One(gru) => {
                let inputs: Vec<Var> = pairs_per_t
                    .iter()
                    .map(|p| tape.concat_cols(&[p[0], p[1], p[2], p[3]]))
                    .collect();
                LatentVars::One(gru.run(tape, GEN_SLOT, &self.gen, &inputs))
            }
        }
    }

    /// Encode word-embedding steps; final recurrent output split (or kept
    /// whole in the single-stream variant).
    pub fn encode_sentence_vars(&self, tape: &mut Tape<S>, words: &[Var]) -> LatentVars {
        assert!(!words.is_empty(), "encode_sentence needs at least one word");
        let z = self.se.lstm.run(tape, GEN_SLOT, &self.gen, words);
        let h = self.dims.latent_width;
        match self.variant {
            StreamVariant::TwoStream => {
                let ub = tape.slice_cols(z, 0, h);
                let lb = tape.slice_cols(z, h, 2 * h);
                LatentVars::Two { ub, lb }
            }
            StreamVariant::SingleStream => LatentVars::One(z),
        }
    }

    /// Decode `t_steps` frames starting from `initial` (a frame channel
    /// vector). The first output frame is one residual step away from the
    /// seed pose.
    pub fn decode_vars(&self, tape: &mut Tape<S>, latents: &LatentVars, initial: Var, t_steps: usize) -> Vec<Var> {
        assert!(t_steps >= 1, "decode needs t_steps >= 1");
        let ps = &self.gen;
        // condition the recurrent state on the latent code
        let mut stream_h: Vec<Var> = match (latents, &self.de.streams) {
            (LatentVars::Two { ub, lb }, DecoderStreams::Two { .. }) => vec![
                self.de.init_maps[0].forward(tape, GEN_SLOT, ps, *ub),
                self.de.init_maps[1].forward(tape, GEN_SLOT, ps, *lb),
            ],
            (LatentVars::One(z), DecoderStreams::One { .. }) => {
                vec![self.de.init_maps[0].forward(tape, GEN_SLOT, ps, *z)]
            }
            _ => panic!("latent kind does not match decoder variant"),
        };

        let mut pose = initial;
        let mut out = Vec::with_capacity(t_steps);
        for _ in 0..t_steps {
            let pairs = self.pair_features(tape, ps, &self.de.part_layers, &self.de.pair_layers, pose);
            // advance each stream on its pairs
            let pair_codes: [Var; 4] = match &self.de.streams {
                DecoderStreams::Two {
                    ub,
                    lb,
                    expand_ub,
                    expand_lb,
                } => {
                    let xu = tape.concat_cols(&[pairs[0], pairs[1]]);
                    let xl = tape.concat_cols(&[pairs[2], pairs[3]]);
                    stream_h[0] = ub.step(tape, GEN_SLOT, ps, xu, stream_h[0]);
                    stream_h[1] = lb.step(tape, GEN_SLOT, ps, xl, stream_h[1]);
                    let eu = expand_ub.forward(tape, GEN_SLOT, ps, stream_h[0]);
                    let eu = tape.tanh(eu);
                    let el = expand_lb.forward(tape, GEN_SLOT, ps, stream_h[1]);
                    let el = tape.tanh(el);
                    let h2 = self.dims.pair_width;
                    [
                        tape.slice_cols(eu, 0, h2),
                        tape.slice_cols(eu, h2, 2 * h2),
                        tape.slice_cols(el, 0, h2),
                        tape.slice_cols(el, h2, 2 * h2),
                    ]
                }
                DecoderStreams::One { gru, expand } => {
                    let x = tape.concat_cols(&[pairs[0], pairs[1], pairs[2], pairs[3]]);
                    stream_h[0] = gru.step(tape, GEN_SLOT, ps, x, stream_h[0]);
                    let e = expand.forward(tape, GEN_SLOT, ps, stream_h[0]);
                    let e = tape.tanh(e);
                    let h2 = self.dims.pair_width;
                    [
                        tape.slice_cols(e, 0, h2),
                        tape.slice_cols(e, h2, 2 * h2),
                        tape.slice_cols(e, 2 * h2, 3 * h2),
                        tape.slice_cols(e, 3 * h2, 4 * h2),
                    ]
                }
            };

            // pair codes -> limb delta + trunk delta contribution
            let h1 = self.dims.part_width;
            let mut limb_deltas: Vec<(BodyPart, Var)> = Vec::with_capacity(4);
            let mut trunk_parts: Vec<Var> = Vec::with_capacity(4);
            for i in 0..4 {
                let dec = self.de.pair_decoders[i].forward(tape, GEN_SLOT, ps, pair_codes[i]);
                let dec = tape.tanh(dec);
                let limb_half = tape.slice_cols(dec, 0, h1);
                let trunk_half = tape.slice_cols(dec, h1, 2 * h1);
                let limb_delta = self.de.limb_heads[i].forward(tape, GEN_SLOT, ps, limb_half);
                let trunk_delta = self.de.trunk_heads[i].forward(tape, GEN_SLOT, ps, trunk_half);
                limb_deltas.push((PAIR_LIMBS[i], limb_delta));
                trunk_parts.push(trunk_delta);
            }
            // the four trunk predictions (two per stream) are averaged
            let trunk_sum = tape.add_n(&trunk_parts);
            let trunk_delta = tape.scale(trunk_sum, S::from_f64_lossy(0.25));

            let delta = self.assemble_delta(tape, &limb_deltas, trunk_delta);
            pose = tape.add(pose, delta);
            out.push(pose);
        }
        out
    }

    /// Scatter per-part delta vectors back into frame channel order.
    fn assemble_delta(&self, tape: &mut Tape<S>, limb_deltas: &[(BodyPart, Var)], trunk_delta: Var) -> Var {
        let joints = self.skeleton.joint_count();
        let mut per_joint: Vec<Option<Var>> = vec![None; joints];
        let mut traj: Option<Var> = None;

        let mut place = |tape: &mut Tape<S>, part: BodyPart, v: Var| {
            let ids = self.skeleton.part(part);
            for (k, &j) in ids.iter().enumerate() {
                per_joint[j] = Some(tape.slice_cols(v, k * 3, k * 3 + 3));
            }
            if part == BodyPart::Trunk {
                let off = ids.len() * 3;
                traj = Some(tape.slice_cols(v, off, off + TRAJECTORY_CHANNELS));
            }
        };
        for &(part, v) in limb_deltas {
            place(tape, part, v);
        }
        place(tape, BodyPart::Trunk, trunk_delta);

        let mut chunks: Vec<Var> = per_joint.into_iter().map(|v| v.expect("all joints covered")).collect();
        chunks.push(traj.expect("trunk provides trajectory delta"));
        tape.concat_cols(&chunks)
    }

    /// Discriminator logits for a sequence of frame vectors.
    pub fn discriminate_logits_vars(&self, tape: &mut Tape<S>, frames: &[Var]) -> Var {
        let ps = &self.disc;
        let c1 = self.d.conv1.forward_seq(tape, DISC_SLOT, ps, frames);
        let c1: Vec<Var> = c1.into_iter().map(|v| tape.tanh(v)).collect();
        let c2 = self.d.conv2.forward_seq(tape, DISC_SLOT, ps, &c1);
        let c2: Vec<Var> = c2.into_iter().map(|v| tape.tanh(v)).collect();
        let pooled = tape.add_n(&c2);
        let pooled = tape.scale(pooled, S::from_f64_lossy(1.0 / c2.len() as f64));
        self.d.head.forward(tape, DISC_SLOT, ps, pooled)
    }

    // ---- value-level API ------------------------------------------------

    /// Frame vars (batch of one) from a normalized motion sequence.
    pub fn frame_constants(&self, tape: &mut Tape<S>, seq: &MotionSequence<S>) -> Result<Vec<Var>> {
        if seq.joint_count() != self.skeleton.joint_count() {
            return Err(Error::shape(
                "motion",
                format!("{} joints", self.skeleton.joint_count()),
                format!("{}", seq.joint_count()),
            ));
        }
        Ok((0..seq.len())
            .map(|t| {
                let row = seq.channels(t);
                let m = Array2::from_shape_vec((1, row.len()), row.to_vec()).expect("row shape");
                tape.constant(m)
            })
            .collect())
    }

    fn word_constants(&self, tape: &mut Tape<S>, emb: &WordEmbeddingSequence) -> Result<Vec<Var>> {
        if emb.width() != self.dims.embed_width {
            return Err(Error::shape(
                "word embeddings",
                format!("width {}", self.dims.embed_width),
                format!("{}", emb.width()),
            ));
        }
        Ok((0..emb.word_count())
            .map(|w| {
                let row: Vec<S> = emb.vectors.row(w).iter().map(|&v| S::from_f64_lossy(v as f64)).collect();
                let m = Array2::from_shape_vec((1, row.len()), row).expect("row shape");
                tape.constant(m)
            })
            .collect())
    }

    fn latent_values(&self, tape: &Tape<S>, vars: &LatentVars) -> LatentCode<S> {
        match vars {
            LatentVars::Two { ub, lb } => LatentCode::TwoStream {
                ub: tape.value(*ub).row(0).to_owned(),
                lb: tape.value(*lb).row(0).to_owned(),
            },
            LatentVars::One(z) => LatentCode::Single(tape.value(*z).row(0).to_owned()),
        }
    }

    fn latent_constants(&self, tape: &mut Tape<S>, code: &LatentCode<S>) -> LatentVars {
        match code {
            LatentCode::TwoStream { ub, lb } => {
                let u = Array2::from_shape_vec((1, ub.len()), ub.to_vec()).expect("row");
                let l = Array2::from_shape_vec((1, lb.len()), lb.to_vec()).expect("row");
                LatentVars::Two {
                    ub: tape.constant(u),
                    lb: tape.constant(l),
                }
            }
            LatentCode::Single(z) => {
                let m = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row");
                LatentVars::One(tape.constant(m))
            }
        }
    }

    /// Encode a normalized motion into its latent code.
    pub fn encode_pose(&self, seq: &MotionSequence<S>) -> Result<LatentCode<S>> {
        if seq.is_empty() {
            return Err(Error::TooShort {
                what: "encode_pose".into(),
                min: 1,
                got: 0,
            });
        }
        let mut tape = Tape::new();
        let frames = self.frame_constants(&mut tape, seq)?;
        let vars = self.encode_pose_vars(&mut tape, &frames);
        Ok(self.latent_values(&tape, &vars))
    }

    /// Batched encoding; sequences may differ in length.
    pub fn encode_pose_batch(&self, seqs: &[MotionSequence<S>]) -> Result<Vec<LatentCode<S>>> {
        seqs.iter().map(|s| self.encode_pose(s)).collect()
    }

    /// Encode a sentence's word-embedding sequence.
    pub fn encode_sentence(&self, emb: &WordEmbeddingSequence) -> Result<LatentCode<S>> {
        let mut tape = Tape::new();
        let words = self.word_constants(&mut tape, emb)?;
        let vars = self.encode_sentence_vars(&mut tape, &words);
        Ok(self.latent_values(&tape, &vars))
    }

    /// Decode `t_steps` frames from a latent code and an initial frame
    /// channel vector (normalized space).
    pub fn decode(&self, code: &LatentCode<S>, initial: &Array1<S>, t_steps: usize) -> Result<MotionSequence<S>> {
        if t_steps == 0 {
            return Err(Error::TooShort {
                what: "decode".into(),
                min: 1,
                got: 0,
            });
        }
        if initial.len() != self.layout.pose_width {
            return Err(Error::shape(
                "initial pose",
                format!("{} channels", self.layout.pose_width),
                format!("{}", initial.len()),
            ));
        }
        let mut tape = Tape::new();
        let latents = self.latent_constants(&mut tape, code);
        let init = Array2::from_shape_vec((1, initial.len()), initial.to_vec()).expect("row");
        let init = tape.constant(init);
        let frames = self.decode_vars(&mut tape, &latents, init, t_steps);
        let mut channels = Array2::zeros((t_steps, self.layout.pose_width));
        for (t, &f) in frames.iter().enumerate() {
            channels.row_mut(t).assign(&tape.value(f).row(0));
        }
        MotionSequence::from_channel_matrix(&channels, self.skeleton.joint_count(), 12.5)
    }

    /// Probability that a (normalized) sequence is real.
    pub fn discriminate(&self, seq: &MotionSequence<S>) -> Result<S> {
        let mut tape = Tape::new();
        let frames = self.frame_constants(&mut tape, seq)?;
        let logits = self.discriminate_logits_vars(&mut tape, &frames);
        let prob = tape.sigmoid(logits);
        Ok(tape.scalar(prob))
    }

    /// Full forward for one sample: latents from both encoders and both
    /// decoded sequences (shared decoder). The sentence-conditioned
    /// sequence is the designated output.
    pub fn model_forward(
        &self,
        motion: &MotionSequence<S>,
        emb: &WordEmbeddingSequence,
    ) -> Result<ModelForwardOut<S>> {
        let z_p = self.encode_pose(motion)?;
        let z_s = self.encode_sentence(emb)?;
        let initial = motion.channels(0);
        let p_hat_p = self.decode(&z_p, &initial, motion.len())?;
        let p_hat_s = self.decode(&z_s, &initial, motion.len())?;
        Ok(ModelForwardOut {
            p_hat_p,
            p_hat_s,
            z_p,
            z_s,
        })
    }

    // ---- parameter groups ------------------------------------------------

    /// Ids of the decoder's delta output heads (zero these to make the
    /// decoder the identity on its seed pose).
    pub fn delta_head_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for l in &self.de.limb_heads {
            out.extend(l.param_ids());
        }
        for t in &self.de.trunk_heads {
            out.extend(t.param_ids());
        }
        out
    }

    pub fn zero_delta_heads(&mut self) {
        for id in self.delta_head_ids() {
            self.gen.zero_param(id);
        }
    }

    /// Generator parameter ids grouped by submodule prefix.
    pub fn gen_group(&self, prefix: &str) -> Vec<usize> {
        self.gen
            .entries()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.name.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }

    /// Flat value ranges of generator parameters under a name prefix.
    pub fn gen_prefix_ranges(&self, prefix: &str) -> Vec<(usize, usize)> {
        self.gen
            .entries()
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| (e.offset, e.offset + e.rows * e.cols))
            .collect()
    }

    /// Summary of the architecture for manifests and checkpoint validation.
    pub fn manifest(&self) -> ArchitectureManifest {
        let latents = match self.variant {
            StreamVariant::TwoStream => vec![
                ("upper_body".to_string(), self.dims.latent_width),
                ("lower_body".to_string(), self.dims.latent_width),
            ],
            StreamVariant::SingleStream => vec![("body".to_string(), 2 * self.dims.latent_width)],
        };
        ArchitectureManifest {
            variant: self.variant,
            dims: self.dims.clone(),
            latents,
            pose_width: self.layout.pose_width,
            part_widths: BodyPart::ALL.map(|p| (p.name().to_string(), self.layout.widths[p.index()])).to_vec(),
            generator_params: self.gen.len(),
            discriminator_params: self.disc.len(),
            skeleton_checksum: self.skeleton.checksum(),
        }
    }
}

/// Output bundle of [`TextMotionModel::model_forward`].
pub struct ModelForwardOut<S: Scalar> {
    pub p_hat_p: MotionSequence<S>,
    pub p_hat_s: MotionSequence<S>,
    pub z_p: LatentCode<S>,
    pub z_s: LatentCode<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureManifest {
    pub variant: StreamVariant,
    pub dims: ModelDims,
    /// (name, width) of each latent vector.
    pub latents: Vec<(String, usize)>,
    pub pose_width: usize,
    pub part_widths: Vec<(String, usize)>,
    pub generator_params: usize,
    pub discriminator_params: usize,
    pub skeleton_checksum: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Skeleton;
    use rand::prelude::*;

    fn tiny_model() -> TextMotionModel<f64> {
        TextMotionModel::new(Skeleton::default_kit(), ModelDims::tiny(24), StreamVariant::TwoStream, 7)
    }

    fn random_motion(t: usize, seed: u64) -> MotionSequence<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = ndarray::Array3::from_shape_fn((t, 21, 3), |_| rng.gen_range(-1.0..1.0));
        let traj = ndarray::Array2::from_shape_fn((t, 3), |_| rng.gen_range(-1.0..1.0));
        MotionSequence::new(frames, traj, 12.5).unwrap()
    }

    fn random_embedding(w: usize, k: usize, seed: u64) -> WordEmbeddingSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WordEmbeddingSequence::new(
            ndarray::Array2::from_shape_fn((w, k), |_| rng.gen_range(-1.0f32..1.0)),
            (0..w).map(|i| format!("w{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn encode_pose_yields_two_latents_of_width_h() {
        // default dims: h = 512 per stream
        let model = TextMotionModel::<f64>::new(
            Skeleton::default_kit(),
            ModelDims::default(),
            StreamVariant::TwoStream,
            1,
        );
        let seq = random_motion(16, 1);
        match model.encode_pose(&seq).unwrap() {
            LatentCode::TwoStream { ub, lb } => {
                assert_eq!(ub.len(), 512);
                assert_eq!(lb.len(), 512);
                assert!(ub.iter().all(|v| v.is_finite()));
            }
            _ => panic!("two-stream model must produce a latent pair"),
        }
    }

    #[test]
    fn arm_perturbation_leaves_lower_latent_bit_identical() {
        let model = tiny_model();
        let sk = model.skeleton().clone();
        let base = random_motion(10, 2);
        let mut bumped = base.clone();
        let lw = sk.joint_id("LW").unwrap();
        for t in 0..bumped.len() {
            bumped.frames_mut()[(t, lw, 0)] += 0.5;
        }
        let (a, b) = (model.encode_pose(&base).unwrap(), model.encode_pose(&bumped).unwrap());
        match (a, b) {
            (LatentCode::TwoStream { ub: u1, lb: l1 }, LatentCode::TwoStream { ub: u2, lb: l2 }) => {
                assert_eq!(l1, l2, "leg stream must not see arm joints");
                assert_ne!(u1, u2, "arm stream must see the change");
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn leg_perturbation_leaves_upper_latent_bit_identical() {
        let model = tiny_model();
        let sk = model.skeleton().clone();
        let base = random_motion(10, 3);
        let mut bumped = base.clone();
        let rf = sk.joint_id("RF").unwrap();
        for t in 0..bumped.len() {
            bumped.frames_mut()[(t, rf, 2)] -= 0.25;
        }
        match (model.encode_pose(&base).unwrap(), model.encode_pose(&bumped).unwrap()) {
            (LatentCode::TwoStream { ub: u1, lb: l1 }, LatentCode::TwoStream { ub: u2, lb: l2 }) => {
                assert_eq!(u1, u2);
                assert_ne!(l1, l2);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn trunk_perturbation_changes_both_streams() {
        let model = tiny_model();
        let sk = model.skeleton().clone();
        let base = random_motion(10, 4);
        let mut bumped = base.clone();
        let bt = sk.joint_id("BT").unwrap();
        for t in 0..bumped.len() {
            bumped.frames_mut()[(t, bt, 1)] += 0.4;
        }
        match (model.encode_pose(&base).unwrap(), model.encode_pose(&bumped).unwrap()) {
            (LatentCode::TwoStream { ub: u1, lb: l1 }, LatentCode::TwoStream { ub: u2, lb: l2 }) => {
                assert_ne!(u1, u2);
                assert_ne!(l1, l2);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn trajectory_perturbation_changes_both_streams() {
        let model = tiny_model();
        let base = random_motion(10, 5);
        let mut bumped = base.clone();
        for t in 0..bumped.len() {
            bumped.trajectory_mut()[(t, 0)] += 0.3;
        }
        match (model.encode_pose(&base).unwrap(), model.encode_pose(&bumped).unwrap()) {
            (LatentCode::TwoStream { ub: u1, lb: l1 }, LatentCode::TwoStream { ub: u2, lb: l2 }) => {
                assert_ne!(u1, u2, "trajectory routes through the trunk into both streams");
                assert_ne!(l1, l2);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn batched_encoding_matches_per_item() {
        let model = tiny_model();
        let seqs: Vec<MotionSequence<f64>> = (0..4).map(|i| random_motion(8, 10 + i)).collect();
        let batch = model.encode_pose_batch(&seqs).unwrap();
        for (i, seq) in seqs.iter().enumerate() {
            let single = model.encode_pose(seq).unwrap();
            let a = batch[i].concat();
            let b = single.concat();
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sentence_encoder_handles_single_word_and_is_deterministic() {
        let model = tiny_model();
        let emb = random_embedding(1, 24, 6);
        let a = model.encode_sentence(&emb).unwrap();
        let b = model.encode_sentence(&emb).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.width(), model.code_width());
    }

    #[test]
    fn sentence_encoding_is_word_order_sensitive() {
        let model = tiny_model();
        let emb = random_embedding(5, 24, 7);
        let mut reversed_vectors = emb.vectors.clone();
        for (i, row) in emb.vectors.outer_iter().enumerate() {
            reversed_vectors.row_mut(4 - i).assign(&row);
        }
        let reversed = WordEmbeddingSequence::new(reversed_vectors, emb.words.clone()).unwrap();
        let a = model.encode_sentence(&emb).unwrap();
        let b = model.encode_sentence(&reversed).unwrap();
        assert_ne!(a, b, "recurrence must be order-sensitive");
    }

    #[test]
    fn sentence_width_mismatch_is_shape_error() {
        let model = tiny_model();
        let emb = random_embedding(3, 25, 8);
        assert!(matches!(model.encode_sentence(&emb), Err(Error::Shape { .. })));
    }

    #[test]
    fn decode_single_step_and_initial_pose_sensitivity() {
        let model = tiny_model();
        let code = model.encode_pose(&random_motion(6, 11)).unwrap();
        let init_a = Array1::from_elem(model.pose_width(), 0.1);
        let init_b = Array1::from_elem(model.pose_width(), -0.2);
        let one = model.decode(&code, &init_a, 1).unwrap();
        assert_eq!(one.len(), 1);
        let a = model.decode(&code, &init_a, 5).unwrap();
        let b = model.decode(&code, &init_b, 5).unwrap();
        assert_ne!(a, b, "different seeds must give different sequences");
    }

    #[test]
    fn zeroed_delta_heads_repeat_initial_pose_exactly() {
        let mut model = tiny_model();
        model.zero_delta_heads();
        let code = model.encode_pose(&random_motion(6, 12)).unwrap();
        let init: Array1<f64> = Array1::from_shape_fn(model.pose_width(), |i| (i as f64) * 0.01 - 0.3);
        let out = model.decode(&code, &init, 7).unwrap();
        for t in 0..7 {
            let row = out.channels(t);
            assert_eq!(row, init, "frame {t} must equal the seed pose bit-exactly");
        }
    }

    #[test]
    fn fresh_model_is_residual_identity_by_construction() {
        // delta heads initialize at zero, so an untrained decoder already
        // repeats its seed
        let model = tiny_model();
        let code = model.encode_pose(&random_motion(4, 13)).unwrap();
        let init = Array1::from_elem(model.pose_width(), 0.25);
        let out = model.decode(&code, &init, 3).unwrap();
        assert_eq!(out.channels(2), init);
    }

    #[test]
    fn discriminator_outputs_probability_strictly_inside_unit_interval() {
        let model = tiny_model();
        for i in 0..5 {
            let p = model.discriminate(&random_motion(9, 20 + i)).unwrap();
            assert!(p > 0.0 && p < 1.0, "sigmoid output {p} must be in (0,1)");
        }
        // short sequences are handled by end clamping
        let p = model.discriminate(&random_motion(2, 30)).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn shared_decoder_gives_identical_outputs_for_identical_latents() {
        let model = tiny_model();
        let motion = random_motion(8, 14);
        let z_p = model.encode_pose(&motion).unwrap();
        let initial = motion.channels(0);
        let from_pose = model.decode(&z_p, &initial, 8).unwrap();
        let from_sentence_forced = model.decode(&z_p, &initial, 8).unwrap();
        assert_eq!(from_pose, from_sentence_forced);
    }

    #[test]
    fn model_forward_shapes() {
        let model = tiny_model();
        let motion = random_motion(9, 15);
        let emb = random_embedding(4, 24, 16);
        let out = model.model_forward(&motion, &emb).unwrap();
        assert_eq!(out.p_hat_p.len(), 9);
        assert_eq!(out.p_hat_s.len(), 9);
        assert_eq!(out.p_hat_p.joint_count(), 21);
        assert_eq!(out.z_p.width(), model.code_width());
        assert_eq!(out.z_s.width(), model.code_width());
    }

    #[test]
    fn parameter_shapes_match_hierarchy_contract() {
        let model = TextMotionModel::<f64>::new(
            Skeleton::default_kit(),
            ModelDims::default(),
            StreamVariant::TwoStream,
            3,
        );
        let e = |name: &str| {
            let id = model.gen.id(name).unwrap_or_else(|| panic!("missing {name}"));
            let entry = model.gen.entry(id);
            (entry.rows, entry.cols)
        };
        // arms and legs map 3*|joints| -> h1; trunk adds trajectory channels
        assert_eq!(e("pe.part.left_arm.w"), (9, 32));
        assert_eq!(e("pe.part.right_arm.w"), (9, 32));
        assert_eq!(e("pe.part.left_leg.w"), (15, 32));
        assert_eq!(e("pe.part.right_leg.w"), (15, 32));
        assert_eq!(e("pe.part.trunk.w"), (15 + 3, 32));
        // pair layers map 2*h1 -> h2
        assert_eq!(e("pe.pair.left_arm.w"), (64, 128));
        // recurrent input is two pair vectors = 256 per stream
        assert_eq!(e("pe.gru.ub.w_ih"), (256, 3 * 512));
        assert_eq!(e("pe.gru.lb.w_hh"), (512, 3 * 512));
        // sentence encoder: K -> 2h over two layers
        assert_eq!(e("se.lstm.layer0.w_ih"), (4096, 4 * 1024));
        assert_eq!(e("se.lstm.layer1.w_ih"), (1024, 4 * 1024));
    }

    #[test]
    fn single_stream_variant_has_one_wide_latent() {
        let model = TextMotionModel::<f64>::new(
            Skeleton::default_kit(),
            ModelDims::tiny(24),
            StreamVariant::SingleStream,
            9,
        );
        let code = model.encode_pose(&random_motion(6, 40)).unwrap();
        match &code {
            LatentCode::Single(z) => assert_eq!(z.len(), 2 * model.dims.latent_width),
            _ => panic!("single-stream model must produce one latent"),
        }
        let m = model.manifest();
        assert_eq!(m.latents, vec![("body".to_string(), 2 * model.dims.latent_width)]);
        // decoding works with the single code
        let out = model
            .decode(&code, &Array1::zeros(model.pose_width()), 4)
            .unwrap();
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn manifest_reports_two_stream_latents() {
        let model = tiny_model();
        let m = model.manifest();
        assert_eq!(
            m.latents,
            vec![
                ("upper_body".to_string(), model.dims.latent_width),
                ("lower_body".to_string(), model.dims.latent_width)
            ]
        );
        assert_eq!(m.pose_width, 66);
        assert!(m.generator_params > 0 && m.discriminator_params > 0);
    }
}
