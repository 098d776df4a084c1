//! Static per-word embedding table (word2vec text format), used by the
//! no-contextual-embedding ablation. Out-of-vocabulary words map to the
//! zero vector.

use crate::error::{Error, Result};
use ndarray::Array1;
use std::collections::HashMap;
use std::path::Path;

pub struct StaticTable {
    dim: usize,
    table: HashMap<String, Array1<f32>>,
}

impl StaticTable {
    /// Parse the text format: header line `count dim`, then one
    /// `word v1 .. vD` line per entry.
    pub fn from_text_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Resource {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Empty("embedding table".into()))?;
        let mut parts = header.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config("embedding table header must be 'count dim'".into()))?;
        let dim: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config("embedding table header must be 'count dim'".into()))?;
        let mut table = HashMap::with_capacity(count);
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields
                .next()
                .ok_or_else(|| Error::Config(format!("embedding table line {} malformed", lineno + 2)))?;
            let vals: Vec<f32> = fields.map(|f| f.parse().unwrap_or(f32::NAN)).collect();
            if vals.len() != dim || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "embedding table line {}: expected {dim} finite values",
                    lineno + 2
                )));
            }
            table.insert(word.to_string(), Array1::from(vals));
        }
        Ok(StaticTable { dim, table })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.table.contains_key(word)
    }

    /// Table row for `word`, or the designated OOV vector (zeros).
    pub fn lookup(&self, word: &str) -> Array1<f32> {
        match self.table.get(word) {
            Some(v) => v.clone(),
            None => Array1::zeros(self.dim),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "3 4\nwalks 0.1 0.2 0.3 0.4\nperson 1 2 3 4\na -1 0 1 0\n";

    #[test]
    fn lookup_exact_row() {
        let t = StaticTable::from_text(TOY).unwrap();
        assert_eq!(t.dim(), 4);
        assert_eq!(t.len(), 3);
        assert_eq!(t.lookup("person").to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn oov_maps_to_zero_vector() {
        let t = StaticTable::from_text(TOY).unwrap();
        assert!(!t.contains("zzzqqq"));
        assert!(t.lookup("zzzqqq").iter().all(|&v| v == 0.0));
    }

    #[test]
    fn malformed_line_is_rejected() {
        assert!(StaticTable::from_text("1 3\nword 0.1 0.2\n").is_err());
    }
}
