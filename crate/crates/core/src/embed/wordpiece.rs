//! Cased WordPiece tokenization compatible with the standard BERT vocab
//! layout (`vocab.txt`, one token per line, `##` continuation prefix).

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

const MAX_CHARS_PER_WORD: usize = 100;

pub struct WordPiece {
    vocab: HashMap<String, usize>,
    pub cls_id: usize,
    pub sep_id: usize,
    pub unk_id: usize,
}

/// One sub-word piece with the index of the whitespace-level word it
/// belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub token: String,
    pub id: usize,
    pub word_index: usize,
}

impl WordPiece {
    pub fn from_vocab_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Resource {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Self::from_vocab_lines(text.lines())
    }

    pub fn from_vocab_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut vocab = HashMap::new();
        for (i, line) in lines.enumerate() {
            let tok = line.trim_end_matches(['\r', '\n']);
            if !tok.is_empty() {
                vocab.insert(tok.to_string(), i);
            }
        }
        let lookup = |name: &str| {
            vocab
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocab missing special token {name}")))
        };
        let cls_id = lookup("[CLS]")?;
        let sep_id = lookup("[SEP]")?;
        let unk_id = lookup("[UNK]")?;
        Ok(WordPiece { vocab, cls_id, sep_id, unk_id })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Whitespace-level words of a sentence (the unit the per-word
    /// embedding vectors are reported for).
    pub fn words(sentence: &str) -> Vec<String> {
        sentence.split_whitespace().map(str::to_string).collect()
    }

    /// Tokenize into word pieces, tracking which whitespace-level word each
    /// piece came from. No lowercasing (cased model).
    pub fn tokenize(&self, sentence: &str) -> Vec<Piece> {
        let mut pieces = Vec::new();
        for (word_index, word) in sentence.split_whitespace().enumerate() {
            for chunk in split_punctuation(word) {
                self.wordpiece_chunk(&chunk, word_index, &mut pieces);
            }
        }
        pieces
    }

    fn wordpiece_chunk(&self, chunk: &str, word_index: usize, out: &mut Vec<Piece>) {
        let chars: Vec<char> = chunk.chars().collect();
        if chars.is_empty() {
            return;
        }
        if chars.len() > MAX_CHARS_PER_WORD {
            out.push(Piece {
                token: "[UNK]".to_string(),
                id: self.unk_id,
                word_index,
            });
            return;
        }
        let mut start = 0;
        let mut found: Vec<Piece> = Vec::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut matched: Option<(String, usize)> = None;
            while start < end {
                let mut candidate: String = chars[start..end].iter().collect();
                if start > 0 {
                    candidate = format!("##{candidate}");
                }
                if let Some(&id) = self.vocab.get(&candidate) {
                    matched = Some((candidate, id));
                    break;
                }
                end -= 1;
            }
            match matched {
                Some((token, id)) => {
                    found.push(Piece { token, id, word_index });
                    start = end;
                }
                None => {
                    // whole chunk becomes [UNK]
                    out.push(Piece {
                        token: "[UNK]".to_string(),
                        id: self.unk_id,
                        word_index,
                    });
                    return;
                }
            }
        }
        out.extend(found);
    }
}

/// Split a whitespace token on punctuation, keeping punctuation marks as
/// separate chunks (standard BERT basic tokenization, minus lowercasing).
fn split_punctuation(word: &str) -> Vec<String> {
    let mut chunks = Vec::new();
    let mut current = String::new();
    for ch in word.chars() {
        if is_punctuation(ch) {
            if !current.is_empty() {
                chunks.push(std::mem::take(&mut current));
            }
            chunks.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

fn is_punctuation(ch: char) -> bool {
    let c = ch as u32;
    // ASCII ranges treated as punctuation by BERT
    (33..=47).contains(&c) || (58..=64).contains(&c) || (91..=96).contains(&c) || (123..=126).contains(&c)
        || ch.is_ascii_punctuation()
        || unicode_punct(ch)
}

fn unicode_punct(ch: char) -> bool {
    matches!(ch, '\u{2000}'..='\u{206f}' | '\u{2e00}'..='\u{2e7f}')
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_vocab() -> WordPiece {
        let lines = [
            "[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "person", "walk", "##s", "##ing", "the", ",", ".", "wa",
            "##lt", "##z",
        ];
        WordPiece::from_vocab_lines(lines.iter().copied()).unwrap()
    }

    #[test]
    fn greedy_longest_match_with_continuations() {
        let wp = toy_vocab();
        let pieces = wp.tokenize("a person walks");
        let tokens: Vec<&str> = pieces.iter().map(|p| p.token.as_str()).collect();
        assert_eq!(tokens, vec!["a", "person", "walk", "##s"]);
        let words: Vec<usize> = pieces.iter().map(|p| p.word_index).collect();
        assert_eq!(words, vec![0, 1, 2, 2]);
    }

    #[test]
    fn three_piece_word() {
        let wp = toy_vocab();
        let pieces = wp.tokenize("waltz");
        let tokens: Vec<&str> = pieces.iter().map(|p| p.token.as_str()).collect();
        assert_eq!(tokens, vec!["wa", "##lt", "##z"]);
        assert!(pieces.iter().all(|p| p.word_index == 0));
    }

    #[test]
    fn punctuation_splits_but_stays_with_word() {
        let wp = toy_vocab();
        let pieces = wp.tokenize("walks, person.");
        let tokens: Vec<&str> = pieces.iter().map(|p| p.token.as_str()).collect();
        assert_eq!(tokens, vec!["walk", "##s", ",", "person", "."]);
        let words: Vec<usize> = pieces.iter().map(|p| p.word_index).collect();
        assert_eq!(words, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn unknown_word_maps_to_unk() {
        let wp = toy_vocab();
        let pieces = wp.tokenize("zzzqqq");
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].token, "[UNK]");
        assert_eq!(pieces[0].id, wp.unk_id);
    }

    #[test]
    fn cased_not_lowercased() {
        let wp = toy_vocab();
        // "Person" (capital P) is not in the toy vocab and must not match "person"
        let pieces = wp.tokenize("Person");
        assert_eq!(pieces[0].token, "[UNK]");
    }
}
