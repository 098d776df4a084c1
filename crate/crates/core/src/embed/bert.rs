//! Frozen BERT encoder for feature extraction.
//!
//! Loads a standard checkpoint directory (`config.json`,
//! `model.safetensors`, `vocab.txt`) and exposes the per-layer hidden
//! states. Inference only, f32, single sentence at a time. Layer indices
//! are 1-based over transformer blocks; index 0 is the embedding output.

use crate::embed::safetensors_io::read_safetensors;
use crate::embed::wordpiece::{Piece, WordPiece};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayD, Axis};
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, serde::Deserialize)]
pub struct BertConfig {
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    #[serde(default = "default_max_pos")]
    pub max_position_embeddings: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
    /// Per-head width; standard checkpoints leave this implicit as
    /// hidden_size / num_attention_heads.
    #[serde(default)]
    pub attention_head_size: Option<usize>,
}

fn default_max_pos() -> usize {
    512
}

fn default_ln_eps() -> f64 {
    1e-12
}

impl BertConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Resource {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn head_size(&self) -> usize {
        self.attention_head_size
            .unwrap_or(self.hidden_size / self.num_attention_heads)
    }

    pub fn all_head_size(&self) -> usize {
        self.head_size() * self.num_attention_heads
    }
}

struct BertLayer {
    wq: Array2<f32>,
    bq: Array1<f32>,
    wk: Array2<f32>,
    bk: Array1<f32>,
    wv: Array2<f32>,
    bv: Array1<f32>,
    wo: Array2<f32>,
    bo: Array1<f32>,
    ln1_g: Array1<f32>,
    ln1_b: Array1<f32>,
    wi: Array2<f32>,
    bi: Array1<f32>,
    wo2: Array2<f32>,
    bo2: Array1<f32>,
    ln2_g: Array1<f32>,
    ln2_b: Array1<f32>,
}

pub struct BertModel {
    pub config: BertConfig,
    word_emb: Array2<f32>,
    pos_emb: Array2<f32>,
    type_emb: Array2<f32>,
    emb_ln_g: Array1<f32>,
    emb_ln_b: Array1<f32>,
    layers: Vec<BertLayer>,
}

struct TensorBag {
    tensors: HashMap<String, ArrayD<f32>>,
    path: std::path::PathBuf,
}

impl TensorBag {
    fn get(&self, names: &[String]) -> Result<&ArrayD<f32>> {
        for n in names {
            if let Some(t) = self.tensors.get(n) {
                return Ok(t);
            }
        }
        Err(Error::Container {
            path: self.path.clone(),
            detail: format!("missing tensor {}", names.join(" / ")),
        })
    }

    /// PyTorch linear weights are stored (out, in); transpose into the
    /// row-vector convention used here.
    fn linear_weight(&self, base: &str) -> Result<Array2<f32>> {
        let t = self.get(&[format!("bert.{base}.weight"), format!("{base}.weight")])?;
        let m = as_2d(t)?;
        Ok(m.t().to_owned())
    }

    fn vector(&self, names: &[String]) -> Result<Array1<f32>> {
        let t = self.get(names)?;
        if t.ndim() != 1 {
            return Err(Error::Container {
                path: self.path.clone(),
                detail: format!("expected 1-d tensor, got {:?}", t.shape()),
            });
        }
        Ok(t.to_owned().into_dimensionality().expect("checked 1-d"))
    }

    fn bias(&self, base: &str) -> Result<Array1<f32>> {
        self.vector(&[format!("bert.{base}.bias"), format!("{base}.bias")])
    }

    fn layer_norm(&self, base: &str) -> Result<(Array1<f32>, Array1<f32>)> {
        let g = self.vector(&[
            format!("bert.{base}.weight"),
            format!("{base}.weight"),
            format!("bert.{base}.gamma"),
            format!("{base}.gamma"),
        ])?;
        let b = self.vector(&[
            format!("bert.{base}.bias"),
            format!("{base}.bias"),
            format!("bert.{base}.beta"),
            format!("{base}.beta"),
        ])?;
        Ok((g, b))
    }

    fn embedding(&self, base: &str) -> Result<Array2<f32>> {
        let t = self.get(&[format!("bert.{base}.weight"), format!("{base}.weight")])?;
        as_2d(t)
    }
}

fn as_2d(t: &ArrayD<f32>) -> Result<Array2<f32>> {
    t.to_owned()
        .into_dimensionality()
        .map_err(|e| Error::Config(format!("expected 2-d tensor: {e}")))
}

impl BertModel {
    /// Load from a checkpoint directory holding `config.json` and
    /// `model.safetensors`.
    pub fn load(dir: &Path) -> Result<Self> {
        let config = BertConfig::from_json_file(&dir.join("config.json"))?;
        let st_path = dir.join("model.safetensors");
        let tensors = read_safetensors(&st_path)?;
        let bag = TensorBag {
            tensors,
            path: st_path,
        };

        let word_emb = bag.embedding("embeddings.word_embeddings")?;
        let pos_emb = bag.embedding("embeddings.position_embeddings")?;
        let type_emb = bag.embedding("embeddings.token_type_embeddings")?;
        let (emb_ln_g, emb_ln_b) = bag.layer_norm("embeddings.LayerNorm")?;

        let mut layers = Vec::with_capacity(config.num_hidden_layers);
        for i in 0..config.num_hidden_layers {
            let p = format!("encoder.layer.{i}");
            let (ln1_g, ln1_b) = bag.layer_norm(&format!("{p}.attention.output.LayerNorm"))?;
            let (ln2_g, ln2_b) = bag.layer_norm(&format!("{p}.output.LayerNorm"))?;
            layers.push(BertLayer {
                wq: bag.linear_weight(&format!("{p}.attention.self.query"))?,
                bq: bag.bias(&format!("{p}.attention.self.query"))?,
                wk: bag.linear_weight(&format!("{p}.attention.self.key"))?,
                bk: bag.bias(&format!("{p}.attention.self.key"))?,
                wv: bag.linear_weight(&format!("{p}.attention.self.value"))?,
                bv: bag.bias(&format!("{p}.attention.self.value"))?,
                wo: bag.linear_weight(&format!("{p}.attention.output.dense"))?,
                bo: bag.bias(&format!("{p}.attention.output.dense"))?,
                ln1_g,
                ln1_b,
                wi: bag.linear_weight(&format!("{p}.intermediate.dense"))?,
                bi: bag.bias(&format!("{p}.intermediate.dense"))?,
                wo2: bag.linear_weight(&format!("{p}.output.dense"))?,
                bo2: bag.bias(&format!("{p}.output.dense"))?,
                ln2_g,
                ln2_b,
            });
        }
        Ok(BertModel {
            config,
            word_emb,
            pos_emb,
            type_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
        })
    }

    /// Forward over token ids; returns all hidden states, index 0 being the
    /// embedding output and index l the output of block l.
    pub fn forward(&self, ids: &[usize]) -> Result<Vec<Array2<f32>>> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::Empty("token sequence".into()));
        }
        if n > self.config.max_position_embeddings {
            return Err(Error::Config(format!(
                "sequence of {n} tokens exceeds position table {}",
                self.config.max_position_embeddings
            )));
        }
        let hidden = self.config.hidden_size;
        let mut h = Array2::<f32>::zeros((n, hidden));
        for (row, &id) in ids.iter().enumerate() {
            if id >= self.config.vocab_size {
                return Err(Error::Config(format!("token id {id} out of vocab")));
            }
            for c in 0..hidden {
                h[(row, c)] = self.word_emb[(id, c)] + self.pos_emb[(row, c)] + self.type_emb[(0, c)];
            }
        }
        layer_norm(&mut h, &self.emb_ln_g, &self.emb_ln_b, self.config.layer_norm_eps);

        let mut states = Vec::with_capacity(self.layers.len() + 1);
        states.push(h.clone());
        for layer in &self.layers {
            h = self.block(&h, layer);
            states.push(h.clone());
        }
        Ok(states)
    }

    fn block(&self, h: &Array2<f32>, l: &BertLayer) -> Array2<f32> {
        let heads = self.config.num_attention_heads;
        let dh = self.config.head_size();
        let n = h.dim().0;

        let q = linear(h, &l.wq, &l.bq);
        let k = linear(h, &l.wk, &l.bk);
        let v = linear(h, &l.wv, &l.bv);

        let scale = 1.0 / (dh as f32).sqrt();
        let mut ctx = Array2::<f32>::zeros((n, heads * dh));
        for head in 0..heads {
            let cols = head * dh..(head + 1) * dh;
            let qh = q.slice(ndarray::s![.., cols.clone()]);
            let kh = k.slice(ndarray::s![.., cols.clone()]);
            let vh = v.slice(ndarray::s![.., cols.clone()]);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|x| x * scale);
            softmax_rows(&mut scores);
            let ctx_h = scores.dot(&vh);
            ctx.slice_mut(ndarray::s![.., cols]).assign(&ctx_h);
        }

        let attn = linear(&ctx, &l.wo, &l.bo);
        let mut h1 = h + &attn;
        layer_norm(&mut h1, &l.ln1_g, &l.ln1_b, self.config.layer_norm_eps);

        let mut inter = linear(&h1, &l.wi, &l.bi);
        inter.mapv_inplace(gelu);
        let out = linear(&inter, &l.wo2, &l.bo2);
        let mut h2 = &h1 + &out;
        layer_norm(&mut h2, &l.ln2_g, &l.ln2_b, self.config.layer_norm_eps);
        h2
    }
}

fn linear(x: &Array2<f32>, w: &Array2<f32>, b: &Array1<f32>) -> Array2<f32> {
    let mut y = x.dot(w);
    for mut row in y.axis_iter_mut(Axis(0)) {
        row += b;
    }
    y
}

fn layer_norm(x: &mut Array2<f32>, gamma: &Array1<f32>, beta: &Array1<f32>, eps: f64) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let n = row.len() as f64;
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let denom = (var + eps).sqrt();
        for (v, (&g, &b)) in row.iter_mut().zip(gamma.iter().zip(beta.iter())) {
            *v = (((*v as f64 - mean) / denom) as f32) * g + b;
        }
    }
}

fn softmax_rows(x: &mut Array2<f32>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Exact GELU via an erf approximation accurate to ~1.5e-7.
fn gelu(x: f32) -> f32 {
    let xd = x as f64;
    (0.5 * xd * (1.0 + erf(xd / std::f64::consts::SQRT_2))) as f32
}

fn erf(x: f64) -> f64 {
    // Abramowitz & Stegun 7.1.26
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

/// Tokenized sentence with raw hidden states, for pooling and for tests
/// that need piece-level access.
pub struct SentenceStates {
    pub pieces: Vec<Piece>,
    /// Hidden states per layer (0 = embeddings); rows are [CLS], pieces.., [SEP].
    pub states: Vec<Array2<f32>>,
}

impl BertModel {
    /// Tokenize with `tokenizer` and run the encoder. Pieces beyond the
    /// position table (minus the two special tokens) are dropped.
    pub fn encode_sentence(&self, tokenizer: &WordPiece, sentence: &str) -> Result<SentenceStates> {
        let mut pieces = tokenizer.tokenize(sentence);
        if pieces.is_empty() {
            return Err(Error::Empty(format!("sentence '{sentence}' produced no tokens")));
        }
        let cap = self.config.max_position_embeddings - 2;
        if pieces.len() > cap {
            log::warn!("sentence of {} pieces truncated to {cap}", pieces.len());
            pieces.truncate(cap);
        }
        let mut ids = Vec::with_capacity(pieces.len() + 2);
        ids.push(tokenizer.cls_id);
        ids.extend(pieces.iter().map(|p| p.id));
        ids.push(tokenizer.sep_id);
        let states = self.forward(&ids)?;
        Ok(SentenceStates { pieces, states })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_reference_values() {
        assert!((erf(0.0)).abs() < 2e-7);
        assert!((erf(1.0) - 0.8427007929).abs() < 2e-7);
        assert!((erf(-1.0) + 0.8427007929).abs() < 2e-7);
        assert!((erf(2.0) - 0.9953222650).abs() < 2e-7);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut m = ndarray::arr2(&[[1.0f32, 2.0, 3.0], [-5.0, 0.0, 5.0]]);
        softmax_rows(&mut m);
        for row in m.axis_iter(Axis(0)) {
            let s: f32 = row.sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let mut m = ndarray::arr2(&[[1.0f32, 2.0, 3.0, 4.0]]);
        let g = Array1::ones(4);
        let b = Array1::zeros(4);
        layer_norm(&mut m, &g, &b, 1e-12);
        let mean: f32 = m.row(0).sum() / 4.0;
        assert!(mean.abs() < 1e-6);
        let var: f32 = m.row(0).iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!((var - 1.0).abs() < 1e-4);
    }
}
