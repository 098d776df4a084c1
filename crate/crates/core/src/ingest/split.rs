//! Deterministic train/val/test splitting.
//!
//! The default unit is the motion id, so all annotations of one recording
//! land in the same split and no motion leaks across splits. Splitting by
//! annotation is available for strict-replication experiments.

use super::Sample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    Motion,
    Annotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub unit: SplitUnit,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: (0.6, 0.2, 0.2),
            seed: 0,
            unit: SplitUnit::Motion,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        if a < 0.0 || b < 0.0 || c < 0.0 {
            return Err(Error::Config("split ratios must be non-negative".into()));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1.0, got {}", a + b + c)));
        }
        Ok(())
    }
}

/// Split samples into (train, val, test), deterministic under the seed.
pub fn split_samples<S: Scalar>(
    samples: Vec<Sample<S>>,
    config: &SplitConfig,
) -> Result<(Vec<Sample<S>>, Vec<Sample<S>>, Vec<Sample<S>>)> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    match config.unit {
        SplitUnit::Motion => {
            // stable key order before shuffling, so the assignment depends
            // only on the id set and the seed
            let mut ids: Vec<String> = samples.iter().map(|s| s.motion_id.clone()).collect();
            ids.sort();
            ids.dedup();
            ids.shuffle(&mut rng);
            let n = ids.len();
            let n_train = (config.ratios.0 * n as f64).round() as usize;
            let n_val = ((config.ratios.1 * n as f64).round() as usize).min(n - n_train.min(n));
            let assign = |id: &str| -> usize {
                let pos = ids.iter().position(|x| x == id).expect("id present");
                if pos < n_train {
                    0
                } else if pos < n_train + n_val {
                    1
                } else {
                    2
                }
            };
            let mut out: [Vec<Sample<S>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for s in samples {
                let slot = assign(&s.motion_id);
                out[slot].push(s);
            }
            let [train, val, test] = out;
            Ok((train, val, test))
        }
        SplitUnit::Annotation => {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut rng);
            let n = samples.len();
            let n_train = (config.ratios.0 * n as f64).round() as usize;
            let n_val = ((config.ratios.1 * n as f64).round() as usize).min(n.saturating_sub(n_train));
            let mut slot_of = vec![2usize; n];
            for (rank, &idx) in order.iter().enumerate() {
                slot_of[idx] = if rank < n_train {
                    0
                } else if rank < n_train + n_val {
                    1
                } else {
                    2
                };
            }
            let mut out: [Vec<Sample<S>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for (i, s) in samples.into_iter().enumerate() {
                out[slot_of[i]].push(s);
            }
            let [train, val, test] = out;
            Ok((train, val, test))
        }
    }
}
