//! Deterministic fixtures for tests and local experiments: a randomly
//! initialized encoder checkpoint in the standard on-disk layout, a small
//! static embedding table, and synthetic corpora. Not used by production
//! paths.

use crate::embed::safetensors_io::write_safetensors;
use crate::error::Result;
use ndarray::ArrayD;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Words available to fixture sentences (beyond the special tokens).
pub const FIXTURE_WORDS: &[&str] = &[
    "a", "person", "walks", "walk", "##s", "forward", "forwards", "backwards", "slowly", "quickly", "the",
    "and", "then", "turns", "left", "right", "waves", "hand", "arms", "raises", "kicks", "leg", "foot",
    "jumps", "runs", "wa", "##lt", "##z", "bank", "river", "money", "sits", "down", "up", "stands", "picks",
    "steps", "two", "three", "four", "circle", "in", "while", "spinning", "plays", "violin", "stretches",
    "them", "again", "human", "pivots", "degrees", "back", "to", "where", "they", "started", ",", ".",
];

/// Shape of a fixture encoder checkpoint.
#[derive(Debug, Clone)]
pub struct TinyBertSpec {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_size: usize,
    pub intermediate: usize,
    pub seed: u64,
}

impl TinyBertSpec {
    /// Small and fast; enough layers to select {12..15}.
    pub fn small() -> Self {
        TinyBertSpec {
            hidden: 48,
            layers: 15,
            heads: 2,
            head_size: 8,
            intermediate: 32,
            seed: 1234,
        }
    }

    /// Hidden width 1024 so the production layer-concatenation width comes
    /// out at 4096; attention kept narrow to stay fast.
    pub fn wide() -> Self {
        TinyBertSpec {
            hidden: 1024,
            layers: 15,
            heads: 4,
            head_size: 16,
            intermediate: 64,
            seed: 1234,
        }
    }
}

/// Write a random-weight encoder checkpoint (`config.json`,
/// `model.safetensors`, `vocab.txt`) under `dir`.
pub fn write_tiny_bert(dir: &Path, spec: &TinyBertSpec) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut vocab: Vec<String> = vec!["[PAD]".into(), "[UNK]".into(), "[CLS]".into(), "[SEP]".into()];
    vocab.extend(FIXTURE_WORDS.iter().map(|w| w.to_string()));
    std::fs::write(dir.join("vocab.txt"), vocab.join("\n") + "\n")?;

    let config = serde_json::json!({
        "hidden_size": spec.hidden,
        "num_hidden_layers": spec.layers,
        "num_attention_heads": spec.heads,
        "intermediate_size": spec.intermediate,
        "vocab_size": vocab.len(),
        "max_position_embeddings": 512,
        "layer_norm_eps": 1e-12,
        "attention_head_size": spec.head_size,
    });
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config)?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tensors: Vec<(String, ArrayD<f32>)> = Vec::new();
    let normal = |shape: &[usize], rng: &mut ChaCha8Rng| -> ArrayD<f32> {
        let n: usize = shape.iter().product();
        let vals: Vec<f32> = (0..n)
            .map(|_| {
                let u1: f64 = rng.gen_range(1e-9..1.0);
                let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                ((-2.0 * u1.ln()).sqrt() * u2.cos() * 0.05) as f32
            })
            .collect();
        ArrayD::from_shape_vec(ndarray::IxDyn(shape), vals).expect("shape matches")
    };
    let ones = |shape: &[usize]| ArrayD::from_elem(ndarray::IxDyn(shape), 1.0f32);
    let zeros = |shape: &[usize]| ArrayD::from_elem(ndarray::IxDyn(shape), 0.0f32);

    let h = spec.hidden;
    let a = spec.heads * spec.head_size;
    tensors.push((
        "bert.embeddings.word_embeddings.weight".into(),
        normal(&[vocab.len(), h], &mut rng),
    ));
    tensors.push(("bert.embeddings.position_embeddings.weight".into(), normal(&[512, h], &mut rng)));
    tensors.push(("bert.embeddings.token_type_embeddings.weight".into(), normal(&[2, h], &mut rng)));
    tensors.push(("bert.embeddings.LayerNorm.weight".into(), ones(&[h])));
    tensors.push(("bert.embeddings.LayerNorm.bias".into(), zeros(&[h])));
    for i in 0..spec.layers {
        let p = format!("bert.encoder.layer.{i}");
        // torch convention: linear weight is (out, in)
        tensors.push((format!("{p}.attention.self.query.weight"), normal(&[a, h], &mut rng)));
        tensors.push((format!("{p}.attention.self.query.bias"), normal(&[a], &mut rng)));
        tensors.push((format!("{p}.attention.self.key.weight"), normal(&[a, h], &mut rng)));
        tensors.push((format!("{p}.attention.self.key.bias"), normal(&[a], &mut rng)));
        tensors.push((format!("{p}.attention.self.value.weight"), normal(&[a, h], &mut rng)));
        tensors.push((format!("{p}.attention.self.value.bias"), normal(&[a], &mut rng)));
        tensors.push((format!("{p}.attention.output.dense.weight"), normal(&[h, a], &mut rng)));
        tensors.push((format!("{p}.attention.output.dense.bias"), normal(&[h], &mut rng)));
        tensors.push((format!("{p}.attention.output.LayerNorm.weight"), ones(&[h])));
        tensors.push((format!("{p}.attention.output.LayerNorm.bias"), zeros(&[h])));
        tensors.push((format!("{p}.intermediate.dense.weight"), normal(&[spec.intermediate, h], &mut rng)));
        tensors.push((format!("{p}.intermediate.dense.bias"), normal(&[spec.intermediate], &mut rng)));
        tensors.push((format!("{p}.output.dense.weight"), normal(&[h, spec.intermediate], &mut rng)));
        tensors.push((format!("{p}.output.dense.bias"), normal(&[h], &mut rng)));
        tensors.push((format!("{p}.output.LayerNorm.weight"), ones(&[h])));
        tensors.push((format!("{p}.output.LayerNorm.bias"), zeros(&[h])));
    }
    write_safetensors(&dir.join("model.safetensors"), &tensors)
}

/// Write a small static embedding table in the text format.
pub fn write_static_table(path: &Path, dim: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<&str> = FIXTURE_WORDS.iter().copied().filter(|w| !w.starts_with("##")).collect();
    let mut out = format!("{} {dim}\n", words.len());
    for w in words {
        let vals: Vec<String> = (0..dim).map(|_| format!("{:.6}", rng.gen_range(-1.0..1.0))).collect();
        out.push_str(&format!("{w} {}\n", vals.join(" ")));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// A plausible standing pose (millimeters, Y-up, facing +Z, left side at
/// +X), used to synthesize raw motions with a stable facing estimate.
pub fn rest_pose(skeleton: &crate::skeleton::Skeleton) -> ndarray::Array2<f64> {
    let coords: &[(&str, [f64; 3])] = &[
        ("root", [0.0, 1000.0, 0.0]),
        ("BP", [0.0, 1100.0, 0.0]),
        ("BT", [0.0, 1250.0, 0.0]),
        ("BLN", [0.0, 1400.0, 0.0]),
        ("BUN", [0.0, 1500.0, 0.0]),
        ("LS", [150.0, 1400.0, 0.0]),
        ("LE", [180.0, 1150.0, 0.0]),
        ("LW", [200.0, 950.0, 20.0]),
        ("RS", [-150.0, 1400.0, 0.0]),
        ("RE", [-180.0, 1150.0, 0.0]),
        ("RW", [-200.0, 950.0, 20.0]),
        ("LH", [100.0, 950.0, 0.0]),
        ("LK", [110.0, 500.0, 10.0]),
        ("LA", [120.0, 80.0, 0.0]),
        ("LM", [130.0, 20.0, 60.0]),
        ("LF", [130.0, 10.0, 130.0]),
        ("RH", [-100.0, 950.0, 0.0]),
        ("RK", [-110.0, 500.0, 10.0]),
        ("RA", [-120.0, 80.0, 0.0]),
        ("RM", [-130.0, 20.0, 60.0]),
        ("RF", [-130.0, 10.0, 130.0]),
    ];
    let mut pose = ndarray::Array2::<f64>::zeros((skeleton.joint_count(), 3));
    for (name, p) in coords {
        let j = skeleton.joint_id(name).unwrap_or_else(|| panic!("fixture joint {name}"));
        for c in 0..3 {
            pose[(j, c)] = p[c];
        }
    }
    pose
}

/// Synthesize a raw global-coordinate motion: the rest pose with smooth
/// per-joint sinusoidal movement, walking forward while slowly turning.
/// Y-up, millimeters.
pub fn toy_raw_motion(
    skeleton: &crate::skeleton::Skeleton,
    frames: usize,
    fps: f64,
    seed: u64,
) -> crate::ingest::RawMotion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = rest_pose(skeleton);
    let j = skeleton.joint_count();
    let amp: Vec<f64> = (0..j * 3).map(|_| rng.gen_range(5.0..60.0)).collect();
    let freq: Vec<f64> = (0..j * 3).map(|_| rng.gen_range(0.3..2.0)).collect();
    let phase: Vec<f64> = (0..j * 3).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let turn_rate = rng.gen_range(-0.02..0.02);
    let speed = rng.gen_range(15.0..45.0);

    let mut positions = ndarray::Array3::<f64>::zeros((frames, j, 3));
    let mut heading = 0.0f64;
    let mut cx = 0.0f64;
    let mut cz = 0.0f64;
    for t in 0..frames {
        let (sin_h, cos_h) = heading.sin_cos();
        for jj in 0..j {
            // local wiggle around the rest pose, rigid-rotated by heading
            let time = t as f64 / fps.max(1.0);
            let lx = base[(jj, 0)] + amp[jj * 3] * (freq[jj * 3] * time + phase[jj * 3]).sin();
            let ly = base[(jj, 1)] + amp[jj * 3 + 1] * (freq[jj * 3 + 1] * time + phase[jj * 3 + 1]).sin();
            let lz = base[(jj, 2)] + amp[jj * 3 + 2] * (freq[jj * 3 + 2] * time + phase[jj * 3 + 2]).sin();
            positions[(t, jj, 0)] = cos_h * lx + sin_h * lz + cx;
            positions[(t, jj, 1)] = ly;
            positions[(t, jj, 2)] = -sin_h * lx + cos_h * lz + cz;
        }
        cx += speed * heading.sin();
        cz += speed * heading.cos();
        heading += turn_rate;
    }
    crate::ingest::RawMotion {
        id: format!("toy{seed}"),
        positions,
        fps,
    }
}

/// Fixture sentences built from the shared vocabulary.
pub fn fixture_sentence(index: usize) -> String {
    const SENTENCES: &[&str] = &[
        "a person walks forward",
        "a person walks forward and turns left",
        "a person raises the arms and waves",
        "a person kicks the leg forward",
        "a person walks backwards slowly",
        "a person runs forward quickly",
        "a person turns right and walks two steps",
        "a person jumps up and down",
        "a person walks in a circle",
        "a person stands up and sits down",
        "a person picks up the foot",
        "a person waves the hand while spinning",
        "a person plays the violin",
        "a person stretches the arms and raises them again",
        "a human walks forwards two steps and pivots",
        "a person walks three steps back to where they started",
    ];
    SENTENCES[index % SENTENCES.len()].to_string()
}

/// Write a toy corpus in the release layout: `annotations_per_motion[i]`
/// annotations for motion i, each motion `frames` frames at `fps`.
/// Positions are written Y-up; pass `UpAxis::Y` when preprocessing.
pub fn write_toy_corpus(
    dir: &Path,
    skeleton: &crate::skeleton::Skeleton,
    annotations_per_motion: &[usize],
    frames: usize,
    fps: f64,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, &n_ann) in annotations_per_motion.iter().enumerate() {
        let id = format!("{i:05}");
        let raw = toy_raw_motion(skeleton, frames, fps, seed + i as u64);
        let mut csv = String::from("# toy corpus positions export, mm, y-up\n");
        for t in 0..frames {
            let mut row = Vec::with_capacity(skeleton.joint_count() * 3);
            for j in 0..skeleton.joint_count() {
                for c in 0..3 {
                    row.push(format!("{:.6}", raw.positions[(t, j, c)]));
                }
            }
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        std::fs::write(dir.join(format!("{id}_fke.csv")), csv)?;
        let sentences: Vec<String> = (0..n_ann).map(|k| fixture_sentence(i * 3 + k)).collect();
        std::fs::write(
            dir.join(format!("{id}_annotations.json")),
            serde_json::to_string_pretty(&sentences)?,
        )?;
        std::fs::write(
            dir.join(format!("{id}_meta.json")),
            format!("{{\"fps\": {fps}}}"),
        )?;
    }
    Ok(())
}
