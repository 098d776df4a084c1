//! On-disk cache of preprocessed, normalized samples: one archive per
//! split plus a human-readable manifest pinning corpus checksum,
//! preprocessing configuration, and normalization statistics.

use super::normalize::NormalizationStats;
use super::preprocess::PreprocessConfig;
use super::split::SplitConfig;
use super::{CorpusReport, Sample};
use crate::container::{ArchiveReader, ArchiveWriter, META_ENTRY};
use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::scalar::Scalar;
use crate::skeleton::Skeleton;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CACHE_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
const SPLIT_FILES: [&str; 3] = ["train.npz", "val.npz", "test.npz"];

/// Everything needed to reproduce and validate the cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub version: u32,
    pub corpus_checksum: String,
    pub skeleton_name: String,
    pub skeleton_checksum: String,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub stats: NormalizationStats,
    pub motions: usize,
    pub annotations: usize,
    /// samples per split (train, val, test)
    pub counts: (usize, usize, usize),
    pub joints: usize,
    pub fps: f64,
}

/// Preprocessed, normalized samples with their statistics.
pub struct Dataset<S: Scalar> {
    pub train: Vec<Sample<S>>,
    pub val: Vec<Sample<S>>,
    pub test: Vec<Sample<S>>,
    pub stats: NormalizationStats,
    pub manifest: CacheManifest,
}

/// One split's samples (kept as a named type for external callers).
pub type SplitSamples<S> = Vec<Sample<S>>;

impl<S: Scalar> Dataset<S> {
    pub fn split(&self, name: &str) -> Result<&[Sample<S>]> {
        match name {
            "train" => Ok(&self.train),
            "val" | "validation" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Preprocess a loaded corpus end to end: samples, split, normalization.
pub fn build_dataset<S: Scalar>(
    report: &CorpusReport,
    skeleton: &Skeleton,
    preprocess: &PreprocessConfig,
    split: &SplitConfig,
) -> Result<Dataset<S>> {
    let samples: Vec<Sample<S>> = super::make_samples(&report.entries, skeleton, preprocess)?;
    let (train, val, test) = super::split_samples(samples, split)?;
    let stats = NormalizationStats::fit(&train)?;
    let normalize = |xs: Vec<Sample<S>>| -> Result<Vec<Sample<S>>> {
        xs.into_iter()
            .map(|mut s| {
                s.motion = stats.apply(&s.motion)?;
                Ok(s)
            })
            .collect()
    };
    let train = normalize(train)?;
    let val = normalize(val)?;
    let test = normalize(test)?;
    let manifest = CacheManifest {
        version: CACHE_VERSION,
        corpus_checksum: report.checksum.clone(),
        skeleton_name: skeleton.name().to_string(),
        skeleton_checksum: skeleton.checksum(),
        preprocess: preprocess.clone(),
        split: split.clone(),
        stats: stats.clone(),
        motions: report.entries.len(),
        annotations: report.annotation_count(),
        counts: (train.len(), val.len(), test.len()),
        joints: skeleton.joint_count(),
        fps: preprocess.target_fps,
    };
    Ok(Dataset {
        train,
        val,
        test,
        stats,
        manifest,
    })
}

#[derive(Serialize, Deserialize)]
struct SplitMeta {
    version: u32,
    items: Vec<ItemMeta>,
}

#[derive(Serialize, Deserialize)]
struct ItemMeta {
    motion_id: String,
    annotation_index: usize,
    sentence: String,
    fps: f64,
}

/// Write the manifest and the three split archives under `dir`.
pub fn write_dataset<S: Scalar>(dir: &Path, dataset: &Dataset<S>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (file, samples) in SPLIT_FILES
        .iter()
        .zip([&dataset.train, &dataset.val, &dataset.test])
    {
        let mut w = ArchiveWriter::create(&dir.join(file))?;
        let mut items = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let frames = s.motion.frames().mapv(|v| v.to_f64_lossy());
            let traj = s.motion.trajectory().mapv(|v| v.to_f64_lossy());
            w.put_f64(&format!("frames/{i}"), frames.view().into_dyn())?;
            w.put_f64(&format!("traj/{i}"), traj.view().into_dyn())?;
            items.push(ItemMeta {
                motion_id: s.motion_id.clone(),
                annotation_index: s.annotation_index,
                sentence: s.sentence.clone(),
                fps: s.motion.fps(),
            });
        }
        w.put_json(
            META_ENTRY,
            &SplitMeta {
                version: CACHE_VERSION,
                items,
            },
        )?;
        w.finish()?;
    }
    let manifest_text = serde_json::to_string_pretty(&dataset.manifest)?;
    std::fs::write(dir.join(MANIFEST_FILE), manifest_text)?;
    Ok(())
}

/// Load a cache written by [`write_dataset`].
pub fn load_dataset<S: Scalar>(dir: &Path) -> Result<Dataset<S>> {
    let manifest = read_manifest(dir)?;
    if manifest.version != CACHE_VERSION {
        return Err(Error::Container {
            path: dir.join(MANIFEST_FILE),
            detail: format!("cache version {} != supported {CACHE_VERSION}", manifest.version),
        });
    }
    let mut splits: Vec<Vec<Sample<S>>> = Vec::with_capacity(3);
    for file in SPLIT_FILES {
        let path = dir.join(file);
        let mut r = ArchiveReader::open(&path)?;
        let meta: SplitMeta = r.get_json(META_ENTRY)?;
        let mut samples = Vec::with_capacity(meta.items.len());
        for (i, item) in meta.items.iter().enumerate() {
            let frames = r.get_f64(&format!("frames/{i}"))?;
            let traj = r.get_f64(&format!("traj/{i}"))?;
            let frames = frames
                .into_dimensionality::<ndarray::Ix3>()
                .map_err(|e| Error::Container {
                    path: path.clone(),
                    detail: e.to_string(),
                })?
                .mapv(S::from_f64_lossy);
            let traj = traj
                .into_dimensionality::<ndarray::Ix2>()
                .map_err(|e| Error::Container {
                    path: path.clone(),
                    detail: e.to_string(),
                })?
                .mapv(S::from_f64_lossy);
            samples.push(Sample {
                motion: MotionSequence::new(frames, traj, item.fps)?,
                sentence: item.sentence.clone(),
                motion_id: item.motion_id.clone(),
                annotation_index: item.annotation_index,
            });
        }
        splits.push(samples);
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Dataset {
        train,
        val,
        test,
        stats: manifest.stats.clone(),
        manifest,
    })
}

pub fn read_manifest(dir: &Path) -> Result<CacheManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Resource {
        path,
        detail: e.to_string(),
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// True when an existing cache matches the corpus and configuration, so
/// preprocessing can be skipped.
pub fn cache_is_current(
    dir: &Path,
    corpus_checksum: &str,
    preprocess: &PreprocessConfig,
    split: &SplitConfig,
) -> bool {
    match read_manifest(dir) {
        Ok(m) => {
            m.version == CACHE_VERSION
                && m.corpus_checksum == corpus_checksum
                && &m.preprocess == preprocess
                && &m.split == split
                && SPLIT_FILES.iter().all(|f| dir.join(f).exists())
        }
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{load_corpus, PreprocessConfig, SplitConfig};
    use super::*;
    use crate::testkit;

    fn toy_dataset(dir: &Path) -> Dataset<f64> {
        let sk = Skeleton::default_kit();
        testkit::write_toy_corpus(dir, &sk, &[1, 2, 1, 1, 1], 32, 100.0, 11).unwrap();
        let report = load_corpus(dir, &sk, false).unwrap();
        build_dataset(
            &report,
            &sk,
            &PreprocessConfig::default(),
            &SplitConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn cache_round_trip_is_value_exact() {
        let corpus_dir = tempfile::tempdir().unwrap();
        let cache_dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset(corpus_dir.path());
        write_dataset(cache_dir.path(), &ds).unwrap();
        let back: Dataset<f64> = load_dataset(cache_dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.train.len(), ds.train.len());
        for (a, b) in back.train.iter().zip(ds.train.iter()) {
            assert_eq!(a, b, "train samples must round-trip bit-exactly");
        }
        for (a, b) in back.test.iter().zip(ds.test.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn manifest_freshness_check() {
        let corpus_dir = tempfile::tempdir().unwrap();
        let cache_dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset(corpus_dir.path());
        write_dataset(cache_dir.path(), &ds).unwrap();
        let pre = PreprocessConfig::default();
        let split = SplitConfig::default();
        assert!(cache_is_current(cache_dir.path(), &ds.manifest.corpus_checksum, &pre, &split));
        assert!(!cache_is_current(cache_dir.path(), "other-checksum", &pre, &split));
        let other_split = SplitConfig {
            seed: 42,
            ..Default::default()
        };
        assert!(!cache_is_current(cache_dir.path(), &ds.manifest.corpus_checksum, &pre, &other_split));
    }

    #[test]
    fn splits_are_normalized_and_counted() {
        let corpus_dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset(corpus_dir.path());
        let (a, b, c) = ds.manifest.counts;
        assert_eq!(a + b + c, 6); // 5 motions, one with 2 annotations
        assert_eq!(ds.manifest.motions, 5);
        assert_eq!(ds.manifest.annotations, 6);
        // normalized training channels have near-zero mean
        let mut sum = 0.0;
        let mut n = 0.0;
        for s in &ds.train {
            for v in s.motion.frames().iter() {
                sum += v;
                n += 1.0;
            }
        }
        assert!((sum / n).abs() < 0.3, "normalized mean should be near zero, got {}", sum / n);
    }
}
