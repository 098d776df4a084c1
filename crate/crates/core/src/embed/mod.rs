//! Sentence-to-feature conversion.
//!
//! The contextual path concatenates selected hidden layers of a frozen
//! cased BERT encoder and pools subword pieces into one vector per
//! whitespace-level word. The static path is a plain per-word lookup used
//! by the no-contextual-embedding ablation. Embeddings are precomputed
//! during preprocessing and cached on disk keyed by (sentence, config).

pub mod bert;
pub mod safetensors_io;
pub mod static_table;
pub mod wordpiece;

use crate::container::{ArchiveReader, ArchiveWriter, META_ENTRY};
use crate::error::{Error, Result};
use crate::skeleton::hex_string;
use bert::BertModel;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use static_table::StaticTable;
use std::path::{Path, PathBuf};
use wordpiece::WordPiece;

/// How subword pieces become word-level vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubwordPooling {
    /// Arithmetic mean over the word's pieces (default).
    Mean,
    /// First piece only.
    First,
    /// No pooling: emit one vector per piece.
    Pieces,
}

/// Configuration of the contextual embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub model_id: String,
    /// 1-based transformer block indices whose hidden states are concatenated.
    pub selected_layers: Vec<usize>,
    pub per_layer_width: usize,
    pub subword_pooling: SubwordPooling,
    pub max_words: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            model_id: "bert-large-cased".to_string(),
            selected_layers: vec![12, 13, 14, 15],
            per_layer_width: 1024,
            subword_pooling: SubwordPooling::Mean,
            max_words: 64,
        }
    }
}

impl EmbedderConfig {
    /// Output width K = per-layer width times number of selected layers.
    pub fn output_width(&self) -> usize {
        self.per_layer_width * self.selected_layers.len()
    }

    /// Stable digest used to key the embedding cache and checkpoints.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        hex_string(&h.finalize())[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        if self.selected_layers.is_empty() {
            return Err(Error::Config("selected_layers must be non-empty".into()));
        }
        if self.max_words == 0 {
            return Err(Error::Config("max_words must be positive".into()));
        }
        Ok(())
    }
}

/// Per-word feature vectors for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingSequence {
    /// W x K
    pub vectors: Array2<f32>,
    pub words: Vec<String>,
}

impl WordEmbeddingSequence {
    pub fn new(vectors: Array2<f32>, words: Vec<String>) -> Result<Self> {
        if vectors.dim().0 == 0 || vectors.dim().0 != words.len() {
            return Err(Error::shape(
                "word embedding sequence",
                format!("{} word vectors", words.len()),
                format!("{}", vectors.dim().0),
            ));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("word embeddings".into()));
        }
        Ok(WordEmbeddingSequence { vectors, words })
    }

    pub fn word_count(&self) -> usize {
        self.vectors.dim().0
    }

    pub fn width(&self) -> usize {
        self.vectors.dim().1
    }
}

/// Contextual embedder: frozen encoder + tokenizer + layer selection.
pub struct BertEmbedder {
    model: BertModel,
    tokenizer: WordPiece,
    config: EmbedderConfig,
}

impl BertEmbedder {
    /// Load from a local weights directory (`config.json`,
    /// `model.safetensors`, `vocab.txt`).
    pub fn load(dir: &Path, config: EmbedderConfig) -> Result<Self> {
        config.validate()?;
        if !dir.is_dir() {
            return Err(Error::Resource {
                path: dir.to_path_buf(),
                detail: "model weights directory not found".into(),
            });
        }
        let model = BertModel::load(dir)?;
        if model.config.hidden_size != config.per_layer_width {
            return Err(Error::Config(format!(
                "model hidden size {} != configured per-layer width {}",
                model.config.hidden_size, config.per_layer_width
            )));
        }
        if let Some(&max_layer) = config.selected_layers.iter().max() {
            if max_layer > model.config.num_hidden_layers || config.selected_layers.iter().any(|&l| l == 0) {
                return Err(Error::Config(format!(
                    "selected layers {:?} out of range 1..={}",
                    config.selected_layers, model.config.num_hidden_layers
                )));
            }
        }
        let tokenizer = WordPiece::from_vocab_file(&dir.join("vocab.txt"))?;
        Ok(BertEmbedder {
            model,
            tokenizer,
            config,
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    /// Raw tokenization + all hidden states; rows are [CLS], pieces, [SEP].
    pub fn hidden_states(&self, sentence: &str) -> Result<bert::SentenceStates> {
        self.model.encode_sentence(&self.tokenizer, sentence)
    }

    /// One vector per whitespace-level word: the concatenation of the
    /// selected layers' hidden states, pooled over the word's pieces.
    pub fn embed(&self, sentence: &str) -> Result<WordEmbeddingSequence> {
        let trimmed = sentence.trim();
        if trimmed.is_empty() {
            return Err(Error::Empty("sentence".into()));
        }
        let mut words = WordPiece::words(trimmed);
        if words.len() > self.config.max_words {
            log::warn!(
                "sentence of {} words truncated to max_words={}",
                words.len(),
                self.config.max_words
            );
            words.truncate(self.config.max_words);
        }
        let truncated = words.join(" ");
        let st = self.hidden_states(&truncated)?;

        // piece row r in the state matrices is r+1 ([CLS] first)
        let k = self.config.output_width();
        let width = self.config.per_layer_width;

        match self.config.subword_pooling {
            SubwordPooling::Pieces => {
                let n = st.pieces.len();
                let mut vectors = Array2::<f32>::zeros((n, k));
                for (row, _piece) in st.pieces.iter().enumerate() {
                    for (li, &layer) in self.config.selected_layers.iter().enumerate() {
                        let state = &st.states[layer];
                        for c in 0..width {
                            vectors[(row, li * width + c)] = state[(row + 1, c)];
                        }
                    }
                }
                let tokens = st.pieces.iter().map(|p| p.token.clone()).collect();
                WordEmbeddingSequence::new(vectors, tokens)
            }
            SubwordPooling::Mean | SubwordPooling::First => {
                // words that lost all pieces to truncation are dropped
                let live_words: Vec<usize> = {
                    let mut seen = Vec::new();
                    for p in &st.pieces {
                        if seen.last() != Some(&p.word_index) {
                            seen.push(p.word_index);
                        }
                    }
                    seen
                };
                let mut vectors = Array2::<f32>::zeros((live_words.len(), k));
                for (out_row, &w) in live_words.iter().enumerate() {
                    let rows: Vec<usize> = st
                        .pieces
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| p.word_index == w)
                        .map(|(i, _)| i + 1)
                        .collect();
                    let pooled: Vec<usize> = match self.config.subword_pooling {
                        SubwordPooling::First => vec![rows[0]],
                        _ => rows,
                    };
                    let inv = 1.0 / pooled.len() as f32;
                    for (li, &layer) in self.config.selected_layers.iter().enumerate() {
                        let state = &st.states[layer];
                        for c in 0..width {
                            let mut sum = 0.0f32;
                            for &r in &pooled {
                                sum += state[(r, c)];
                            }
                            vectors[(out_row, li * width + c)] = sum * inv;
                        }
                    }
                }
                let words_out = live_words.iter().map(|&w| words[w].clone()).collect();
                WordEmbeddingSequence::new(vectors, words_out)
            }
        }
    }
}

/// Static embedder wrapper producing [`WordEmbeddingSequence`]s.
pub struct StaticEmbedder {
    table: StaticTable,
}

impl StaticEmbedder {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(StaticEmbedder {
            table: StaticTable::from_text_file(path)?,
        })
    }

    pub fn from_table(table: StaticTable) -> Self {
        StaticEmbedder { table }
    }

    pub fn width(&self) -> usize {
        self.table.dim()
    }

    pub fn embed(&self, sentence: &str) -> Result<WordEmbeddingSequence> {
        let words = WordPiece::words(sentence.trim());
        if words.is_empty() {
            return Err(Error::Empty("sentence".into()));
        }
        let mut vectors = Array2::<f32>::zeros((words.len(), self.table.dim()));
        for (i, w) in words.iter().enumerate() {
            vectors.row_mut(i).assign(&self.table.lookup(w));
        }
        WordEmbeddingSequence::new(vectors, words)
    }
}

/// Either embedding backend behind one call.
pub enum SentenceEmbedder {
    Bert(BertEmbedder),
    Static(StaticEmbedder),
}

impl SentenceEmbedder {
    pub fn embed(&self, sentence: &str) -> Result<WordEmbeddingSequence> {
        match self {
            SentenceEmbedder::Bert(b) => b.embed(sentence),
            SentenceEmbedder::Static(s) => s.embed(sentence),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            SentenceEmbedder::Bert(b) => b.config.output_width(),
            SentenceEmbedder::Static(s) => s.width(),
        }
    }

    /// Digest contributing to cache keys: embedder identity + config.
    pub fn digest(&self) -> String {
        match self {
            SentenceEmbedder::Bert(b) => b.config.digest(),
            SentenceEmbedder::Static(s) => format!("static-{}", s.width()),
        }
    }
}

/// Append-only on-disk cache of word embeddings, one archive per
/// (sentence, embedder config) key.
pub struct EmbeddingCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    sentence: String,
    words: Vec<String>,
    config_digest: String,
}

impl EmbeddingCache {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(EmbeddingCache { dir: dir.to_path_buf() })
    }

    fn key(sentence: &str, config_digest: &str) -> String {
        let mut h = Sha256::new();
        h.update(sentence.as_bytes());
        h.update(b"\x00");
        h.update(config_digest.as_bytes());
        hex_string(&h.finalize())[..32].to_string()
    }

    fn path_for(&self, sentence: &str, config_digest: &str) -> PathBuf {
        self.dir.join(format!("{}.npz", Self::key(sentence, config_digest)))
    }

    pub fn get(&self, sentence: &str, config_digest: &str) -> Result<Option<WordEmbeddingSequence>> {
        let path = self.path_for(sentence, config_digest);
        if !path.exists() {
            return Ok(None);
        }
        let mut r = ArchiveReader::open(&path)?;
        let meta: CacheMeta = r.get_json(META_ENTRY)?;
        let vectors = r.get_f32("vectors")?;
        let vectors: Array2<f32> = vectors.into_dimensionality().map_err(|e| Error::Container {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        Ok(Some(WordEmbeddingSequence::new(vectors, meta.words)?))
    }

    pub fn put(&self, sentence: &str, config_digest: &str, emb: &WordEmbeddingSequence) -> Result<()> {
        let path = self.path_for(sentence, config_digest);
        if path.exists() {
            return Ok(()); // append-only: first write wins
        }
        let mut w = ArchiveWriter::create(&path)?;
        w.put_f32("vectors", emb.vectors.view().into_dyn())?;
        w.put_json(
            META_ENTRY,
            &CacheMeta {
                sentence: sentence.to_string(),
                words: emb.words.clone(),
                config_digest: config_digest.to_string(),
            },
        )?;
        w.finish()
    }

    /// Embed through the cache.
    pub fn embed_cached(&self, embedder: &SentenceEmbedder, sentence: &str) -> Result<WordEmbeddingSequence> {
        let digest = embedder.digest();
        if let Some(hit) = self.get(sentence, &digest)? {
            return Ok(hit);
        }
        let emb = embedder.embed(sentence)?;
        self.put(sentence, &digest, &emb)?;
        Ok(emb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_width_is_layers_times_width() {
        let c = EmbedderConfig::default();
        assert_eq!(c.output_width(), 4096);
        assert_eq!(c.selected_layers, vec![12, 13, 14, 15]);
        assert_eq!(c.per_layer_width, 1024);
    }

    #[test]
    fn digest_changes_with_layers() {
        let a = EmbedderConfig::default();
        let mut b = a.clone();
        b.selected_layers = vec![1, 2, 3, 4];
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn static_embedder_repeats_rows_for_repeated_words() {
        let table = StaticTable::from_text("2 3\nwalks 1 2 3\nperson 4 5 6\n").unwrap();
        let e = StaticEmbedder::from_table(table);
        let seq = e.embed("walks walks").unwrap();
        assert_eq!(seq.word_count(), 2);
        assert_eq!(seq.vectors.row(0), seq.vectors.row(1));
        assert_eq!(seq.vectors.row(0).to_vec(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_sentence_is_rejected() {
        let table = StaticTable::from_text("1 2\nx 1 2\n").unwrap();
        let e = StaticEmbedder::from_table(table);
        assert!(matches!(e.embed("   "), Err(Error::Empty(_))));
    }

    #[test]
    fn cache_round_trip_and_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path()).unwrap();
        let emb = WordEmbeddingSequence::new(
            Array2::from_shape_fn((2, 4), |(r, c)| (r * 4 + c) as f32),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        cache.put("a b", "cfg", &emb).unwrap();
        let back = cache.get("a b", "cfg").unwrap().unwrap();
        assert_eq!(back, emb);
        assert!(cache.get("a b", "other-cfg").unwrap().is_none());
    }
}
