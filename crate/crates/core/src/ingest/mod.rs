//! Corpus ingestion: parse the motion-language release layout, preprocess
//! motions into the local-coordinate + trajectory representation, build
//! deterministic splits, fit normalization on the training split, and cache
//! model-ready samples.
//!
//! Expected layout, per motion id:
//!   `<id>_annotations.json` — JSON array of sentences
//!   `<id>_fke.csv`          — T rows of J*3 global joint positions (mm),
//!                             as exported by the corpus kinematics tools
//!   `<id>_meta.json`        — optional, `{"fps": 100.0, ...}`
//!
//! The raw release stores motions as joint-angle XML tied to the external
//! reference-model toolchain; this loader consumes the standard Cartesian
//! export of those files instead.

mod cache;
mod normalize;
mod preprocess;
mod split;

pub use cache::{build_dataset, cache_is_current, load_dataset, read_manifest, write_dataset, CacheManifest, Dataset, SplitSamples, CACHE_VERSION, MANIFEST_FILE};
pub use normalize::{fit_normalization, NormalizationStats, STD_EPSILON};
pub use preprocess::{make_samples, preprocess_motion, PreprocessConfig, UpAxis};
pub use split::{split_samples, SplitConfig, SplitUnit};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::scalar::Scalar;
use crate::skeleton::{hex_string, Skeleton};
use ndarray::Array3;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

/// One natural-language annotation of a motion recording.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnnotationRecord {
    pub motion_id: String,
    pub sentence: String,
    pub annotation_index: usize,
}

/// Raw (global-coordinate) motion as read from the corpus.
#[derive(Debug, Clone)]
pub struct RawMotion {
    pub id: String,
    /// T x J x 3 global joint positions in millimeters.
    pub positions: Array3<f64>,
    pub fps: f64,
}

/// One corpus recording with its annotations.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub motion: RawMotion,
    pub annotations: Vec<AnnotationRecord>,
}

/// Result of scanning a corpus directory.
pub struct CorpusReport {
    pub entries: Vec<CorpusEntry>,
    pub warnings: Vec<String>,
    /// (motion id, reason) for items skipped under the permissive flag.
    pub errors: Vec<(String, String)>,
    /// SHA-256 over the corpus files that were read.
    pub checksum: String,
}

impl CorpusReport {
    pub fn annotation_count(&self) -> usize {
        self.entries.iter().map(|e| e.annotations.len()).sum()
    }
}

/// A model-ready (motion, sentence) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<S: Scalar> {
    pub motion: MotionSequence<S>,
    pub sentence: String,
    pub motion_id: String,
    pub annotation_index: usize,
}

/// Scan `root` for the corpus layout and load every motion with its
/// annotations. With `permissive`, unreadable items are collected in the
/// report instead of failing the whole load.
pub fn load_corpus(root: &Path, skeleton: &Skeleton, permissive: bool) -> Result<CorpusReport> {
    if !root.is_dir() {
        return Err(Error::Resource {
            path: root.to_path_buf(),
            detail: "corpus directory not found".into(),
        });
    }
    // id -> has_annotations / has_motion
    let mut ids: BTreeMap<String, (bool, bool)> = BTreeMap::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(id) = name.strip_suffix("_annotations.json") {
            ids.entry(id.to_string()).or_default().0 = true;
        } else if let Some(id) = name.strip_suffix("_fke.csv") {
            ids.entry(id.to_string()).or_default().1 = true;
        }
    }

    let mut report = CorpusReport {
        entries: Vec::new(),
        warnings: Vec::new(),
        errors: Vec::new(),
        checksum: String::new(),
    };
    if ids.is_empty() {
        report.warnings.push(format!("no corpus files found under {}", root.display()));
        log::warn!("no corpus files found under {}", root.display());
    }

    let mut hasher = Sha256::new();
    for (id, (has_ann, has_motion)) in &ids {
        let mut load_one = || -> Result<CorpusEntry> {
            if !has_motion {
                return Err(Error::Resource {
                    path: root.join(format!("{id}_fke.csv")),
                    detail: "motion file missing".into(),
                });
            }
            let motion_path = root.join(format!("{id}_fke.csv"));
            let motion_bytes = std::fs::read(&motion_path)?;
            hasher.update(id.as_bytes());
            hasher.update(&motion_bytes);
            let fps = read_meta_fps(root, id)?;
            let positions = parse_positions_csv(&motion_bytes, skeleton.joint_count(), &motion_path)?;
            let motion = RawMotion {
                id: id.clone(),
                positions,
                fps,
            };

            let mut annotations = Vec::new();
            if *has_ann {
                let ann_path = root.join(format!("{id}_annotations.json"));
                let ann_bytes = std::fs::read(&ann_path)?;
                hasher.update(&ann_bytes);
                let sentences: Vec<String> = serde_json::from_slice(&ann_bytes)?;
                for (i, s) in sentences.into_iter().enumerate() {
                    let trimmed = s.trim().to_string();
                    if trimmed.is_empty() {
                        report.warnings.push(format!("{id}: annotation {i} empty after trimming, dropped"));
                        continue;
                    }
                    annotations.push(AnnotationRecord {
                        motion_id: id.clone(),
                        sentence: trimmed,
                        annotation_index: i,
                    });
                }
            }
            if annotations.is_empty() {
                report.warnings.push(format!("{id}: motion has no annotations"));
            }
            Ok(CorpusEntry { motion, annotations })
        };
        match load_one() {
            Ok(entry) => report.entries.push(entry),
            Err(e) => report.errors.push((id.clone(), e.to_string())),
        }
    }
    report.checksum = hex_string(&hasher.finalize());
    if !permissive && !report.errors.is_empty() {
        return Err(Error::Ingest {
            items: report.errors,
        });
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(report)
}

fn read_meta_fps(root: &Path, id: &str) -> Result<f64> {
    let meta_path = root.join(format!("{id}_meta.json"));
    if !meta_path.exists() {
        return Ok(100.0);
    }
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(&meta_path)?)?;
    Ok(meta.get("fps").and_then(|v| v.as_f64()).unwrap_or(100.0))
}

/// Parse a positions table: one frame per line, J*3 numeric columns,
/// commas and/or whitespace as separators, `#`/header lines skipped.
fn parse_positions_csv(bytes: &[u8], joints: usize, path: &Path) -> Result<Array3<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Container {
        path: path.to_path_buf(),
        detail: "motion file is not utf-8".into(),
    })?;
    let width = joints * 3;
    let mut rows: Vec<f64> = Vec::new();
    let mut frames = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        if frames == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue; // header row
        }
        if fields.len() != width {
            return Err(Error::Container {
                path: path.to_path_buf(),
                detail: format!("line {}: expected {width} values, got {}", lineno + 1, fields.len()),
            });
        }
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::Container {
                path: path.to_path_buf(),
                detail: format!("line {}: non-numeric value '{f}'", lineno + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{}:{}", path.display(), lineno + 1)));
            }
            rows.push(v);
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::Empty(format!("motion file {}", path.display())));
    }
    Array3::from_shape_vec((frames, joints, 3), rows).map_err(|e| Error::Container {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    #[test]
    fn empty_directory_warns_and_returns_no_entries() {
        let dir = tempfile::tempdir().unwrap();
        let report = load_corpus(dir.path(), &Skeleton::default_kit(), false).unwrap();
        assert!(report.entries.is_empty());
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn fixture_counts_and_zero_annotation_flag() {
        let dir = tempfile::tempdir().unwrap();
        let sk = Skeleton::default_kit();
        testkit::write_toy_corpus(dir.path(), &sk, &[1, 2, 0], 40, 100.0, 7).unwrap();
        let report = load_corpus(dir.path(), &sk, false).unwrap();
        assert_eq!(report.entries.len(), 3);
        assert_eq!(report.annotation_count(), 3);
        assert!(report.warnings.iter().any(|w| w.contains("no annotations")));
    }

    #[test]
    fn corrupt_motion_is_itemized() {
        let dir = tempfile::tempdir().unwrap();
        let sk = Skeleton::default_kit();
        testkit::write_toy_corpus(dir.path(), &sk, &[1], 10, 100.0, 3).unwrap();
        std::fs::write(dir.path().join("corrupt_annotations.json"), "[\"a person walks\"]").unwrap();
        std::fs::write(dir.path().join("corrupt_fke.csv"), "1,2,notanumber\n").unwrap();

        // strict: fails, naming the offender
        let err = load_corpus(dir.path(), &sk, false).err().expect("must fail");
        match err {
            Error::Ingest { items } => {
                assert_eq!(items.len(), 1);
                assert_eq!(items[0].0, "corrupt");
            }
            other => panic!("unexpected error {other}"),
        }

        // permissive: loads the good one, reports the bad one
        let report = load_corpus(dir.path(), &sk, true).unwrap();
        assert_eq!(report.entries.len(), 1);
        assert_eq!(report.errors.len(), 1);
    }

    #[test]
    fn checksum_changes_with_content() {
        let dir = tempfile::tempdir().unwrap();
        let sk = Skeleton::default_kit();
        testkit::write_toy_corpus(dir.path(), &sk, &[1, 1], 16, 100.0, 3).unwrap();
        let a = load_corpus(dir.path(), &sk, false).unwrap().checksum;
        std::fs::write(dir.path().join("00000_annotations.json"), "[\"a person runs\"]").unwrap();
        let b = load_corpus(dir.path(), &sk, false).unwrap().checksum;
        assert_ne!(a, b);
    }
}
