//! Per-channel normalization statistics, fit on the training split only.

use super::Sample;
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, TRAJECTORY_CHANNELS};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Standard deviations are clamped below this to keep channels invertible.
pub const STD_EPSILON: f64 = 1e-6;

/// Per-channel mean and standard deviation over the training split.
/// Channels are the flattened J*3 joint coordinates followed by the
/// trajectory channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Identity statistics (mean 0, std 1), for already-normalized data.
    pub fn identity(channels: usize) -> Self {
        NormalizationStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Two-pass population statistics over every frame of every sample.
    pub fn fit<S: Scalar>(samples: &[Sample<S>]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Empty("training samples".into()))?;
        let joints = first.motion.joint_count();
        let channels = joints * 3 + TRAJECTORY_CHANNELS;

        let mut mean = vec![0.0f64; channels];
        let mut count = 0usize;
        for s in samples {
            let m = s.motion.channel_matrix();
            for row in m.rows() {
                for (c, v) in row.iter().enumerate() {
                    mean[c] += v.to_f64_lossy();
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Empty("training frames".into()));
        }
        for m in &mut mean {
            *m /= count as f64;
        }

        let mut var = vec![0.0f64; channels];
        for s in samples {
            let m = s.motion.channel_matrix();
            for row in m.rows() {
                for (c, v) in row.iter().enumerate() {
                    let d = v.to_f64_lossy() - mean[c];
                    var[c] += d * d;
                }
            }
        }
        let std: Vec<f64> = var
            .iter()
            .enumerate()
            .map(|(c, &v)| {
                let s = (v / count as f64).sqrt();
                if s < STD_EPSILON {
                    log::warn!("channel {c}: std {s:.3e} clamped to {STD_EPSILON:.0e}");
                    STD_EPSILON
                } else {
                    s
                }
            })
            .collect();
        Ok(NormalizationStats { mean, std })
    }

    /// (x - mean) / std per channel.
    pub fn apply<S: Scalar>(&self, seq: &MotionSequence<S>) -> Result<MotionSequence<S>> {
        self.map(seq, |v, mean, std| (v - mean) / std)
    }

    /// x * std + mean per channel.
    pub fn invert<S: Scalar>(&self, seq: &MotionSequence<S>) -> Result<MotionSequence<S>> {
        self.map(seq, |v, mean, std| v * std + mean)
    }

    fn map<S: Scalar>(&self, seq: &MotionSequence<S>, f: impl Fn(f64, f64, f64) -> f64) -> Result<MotionSequence<S>> {
        let joints = seq.joint_count();
        if joints * 3 + TRAJECTORY_CHANNELS != self.channels() {
            return Err(Error::shape(
                "normalization",
                format!("{} channels", self.channels()),
                format!("{}", joints * 3 + TRAJECTORY_CHANNELS),
            ));
        }
        let mut frames = seq.frames().clone();
        for t in 0..seq.len() {
            for j in 0..joints {
                for c in 0..3 {
                    let ch = j * 3 + c;
                    let v = frames[(t, j, c)].to_f64_lossy();
                    frames[(t, j, c)] = S::from_f64_lossy(f(v, self.mean[ch], self.std[ch]));
                }
            }
        }
        let mut trajectory = seq.trajectory().clone();
        for t in 0..seq.len() {
            for c in 0..TRAJECTORY_CHANNELS {
                let ch = joints * 3 + c;
                let v = trajectory[(t, c)].to_f64_lossy();
                trajectory[(t, c)] = S::from_f64_lossy(f(v, self.mean[ch], self.std[ch]));
            }
        }
        MotionSequence::new(frames, trajectory, seq.fps())
    }
}

/// Convenience alias matching the operation naming used elsewhere.
pub fn fit_normalization<S: Scalar>(train: &[Sample<S>]) -> Result<NormalizationStats> {
    NormalizationStats::fit(train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::MotionSequence;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_from(seq: MotionSequence<f64>) -> Sample<f64> {
        Sample {
            motion: seq,
            sentence: "x".into(),
            motion_id: "m".into(),
            annotation_index: 0,
        }
    }

    #[test]
    fn all_zero_data_clamps_std() {
        let s = sample_from(MotionSequence::zeros(4, 21, 12.5));
        let stats = fit_normalization(&[s]).unwrap();
        assert!(stats.mean.iter().all(|&m| m == 0.0));
        assert!(stats.std.iter().all(|&v| v == STD_EPSILON));
    }

    #[test]
    fn constant_data_has_mean_c() {
        let mut seq = MotionSequence::<f64>::zeros(3, 21, 12.5);
        seq.frames_mut().fill(7.5);
        let stats = fit_normalization(&[sample_from(seq)]).unwrap();
        for c in 0..21 * 3 {
            assert_eq!(stats.mean[c], 7.5);
            assert_eq!(stats.std[c], STD_EPSILON);
        }
        // trajectory channels stayed zero
        assert_eq!(stats.mean[21 * 3], 0.0);
    }

    #[test]
    fn random_data_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let samples: Vec<Sample<f64>> = (0..3)
            .map(|_| {
                let frames = ndarray::Array3::from_shape_fn((5, 21, 3), |_| rng.gen_range(-50.0..50.0));
                let traj = ndarray::Array2::from_shape_fn((5, 3), |_| rng.gen_range(-2.0..2.0));
                sample_from(MotionSequence::new(frames, traj, 12.5).unwrap())
            })
            .collect();
        let stats = fit_normalization(&samples).unwrap();

        // naive oracle: gather every frame row, compute mean/std per channel
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for s in &samples {
            let m = s.motion.channel_matrix();
            for r in m.rows() {
                rows.push(r.to_vec());
            }
        }
        let n = rows.len() as f64;
        for c in 0..66 {
            let mean: f64 = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var: f64 = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            assert!((stats.mean[c] - mean).abs() < 1e-9);
            assert!((stats.std[c] - var.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn apply_then_invert_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let frames = ndarray::Array3::from_shape_fn((6, 21, 3), |_| rng.gen_range(-100.0..100.0));
        let traj = ndarray::Array2::from_shape_fn((6, 3), |_| rng.gen_range(-5.0..5.0));
        let seq = MotionSequence::new(frames, traj, 12.5).unwrap();
        let stats = fit_normalization(&[sample_from(seq.clone())]).unwrap();
        let normalized = stats.apply(&seq).unwrap();
        let back = stats.invert(&normalized).unwrap();
        for (a, b) in back.frames().iter().zip(seq.frames().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in back.trajectory().iter().zip(seq.trajectory().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
