//! Evaluation metrics (average position error, average variance error,
//! content/style encoding errors) and the harness that scores a checkpoint
//! on a dataset split, producing the per-joint report table.

use crate::checkpoint::EmbedSpec;
use crate::error::{Error, Result};
use crate::ingest::NormalizationStats;
use crate::model::{LatentCode, TextMotionModel};
use crate::motion::MotionSequence;
use crate::scalar::Scalar;
use crate::skeleton::Skeleton;
use crate::train::TrainItem;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

/// Reading of the content-encoding formula (the paper's inner sum over
/// features combined with a vector norm is dimensionally ambiguous).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeeReading {
    /// Elementwise |difference|, averaged over features and samples.
    ElementwiseAbs,
    /// Per-sample Euclidean distance, averaged over samples.
    SampleEuclidean,
}

/// Normalizer of the style-encoding error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeeNormalizer {
    /// Literal 1/(M N) prefactor.
    FeatureCount,
    /// 1/(M^2 N), matching the Gram matrix entry count.
    FeatureCountSquared,
}

/// Per-sequence-pair validation shared by APE/AVE.
fn check_pair<S: Scalar>(gen: &MotionSequence<S>, gt: &MotionSequence<S>, n: usize) -> Result<()> {
    if gen.len() != gt.len() {
        return Err(Error::shape(
            format!("sequence pair {n}"),
            format!("{} frames", gt.len()),
            format!("{}", gen.len()),
        ));
    }
    if gen.joint_count() != gt.joint_count() {
        return Err(Error::shape(
            format!("sequence pair {n}"),
            format!("{} joints", gt.joint_count()),
            format!("{}", gen.joint_count()),
        ));
    }
    Ok(())
}

/// Average positional error of joint `j` in millimeters:
/// the Euclidean distance between generated and ground-truth positions,
/// averaged over each sequence's frames and then over sequences.
pub fn ape<S: Scalar>(gen: &[MotionSequence<S>], gt: &[MotionSequence<S>], joint: usize) -> Result<f64> {
    if gen.len() != gt.len() || gen.is_empty() {
        return Err(Error::shape("ape", format!("{} pairs", gt.len()), format!("{}", gen.len())));
    }
    let mut total = 0.0;
    for (n, (g, r)) in gen.iter().zip(gt.iter()).enumerate() {
        check_pair(g, r, n)?;
        let t_len = r.len();
        let mut seq_sum = 0.0;
        for t in 0..t_len {
            let mut d2 = 0.0;
            for c in 0..3 {
                let d = g.frames()[(t, joint, c)].to_f64_lossy() - r.frames()[(t, joint, c)].to_f64_lossy();
                d2 += d * d;
            }
            seq_sum += d2.sqrt();
        }
        total += seq_sum / t_len as f64;
    }
    Ok(total / gen.len() as f64)
}

/// APE over the trajectory channels, treated as one joint-like dimension.
pub fn ape_trajectory<S: Scalar>(gen: &[MotionSequence<S>], gt: &[MotionSequence<S>]) -> Result<f64> {
    if gen.len() != gt.len() || gen.is_empty() {
        return Err(Error::shape("ape", format!("{} pairs", gt.len()), format!("{}", gen.len())));
    }
    let mut total = 0.0;
    for (n, (g, r)) in gen.iter().zip(gt.iter()).enumerate() {
        check_pair(g, r, n)?;
        let t_len = r.len();
        let channels = r.trajectory().dim().1;
        let mut seq_sum = 0.0;
        for t in 0..t_len {
            let mut d2 = 0.0;
            for c in 0..channels {
                let d = g.trajectory()[(t, c)].to_f64_lossy() - r.trajectory()[(t, c)].to_f64_lossy();
                d2 += d * d;
            }
            seq_sum += d2.sqrt();
        }
        total += seq_sum / t_len as f64;
    }
    Ok(total / gen.len() as f64)
}

/// Elementwise temporal variance of one joint over a sequence (1/(T-1)).
fn joint_variance<S: Scalar>(seq: &MotionSequence<S>, joint: usize) -> Result<[f64; 3]> {
    let t_len = seq.len();
    if t_len < 2 {
        return Err(Error::TooShort {
            what: "variance".into(),
            min: 2,
            got: t_len,
        });
    }
    let mut mean = [0.0f64; 3];
    for t in 0..t_len {
        for c in 0..3 {
            mean[c] += seq.frames()[(t, joint, c)].to_f64_lossy();
        }
    }
    for m in &mut mean {
        *m /= t_len as f64;
    }
    let mut var = [0.0f64; 3];
    for t in 0..t_len {
        for c in 0..3 {
            let d = seq.frames()[(t, joint, c)].to_f64_lossy() - mean[c];
            var[c] += d * d;
        }
    }
    for v in &mut var {
        *v /= (t_len - 1) as f64;
    }
    Ok(var)
}

fn trajectory_variance<S: Scalar>(seq: &MotionSequence<S>) -> Result<Vec<f64>> {
    let t_len = seq.len();
    if t_len < 2 {
        return Err(Error::TooShort {
            what: "variance".into(),
            min: 2,
            got: t_len,
        });
    }
    let channels = seq.trajectory().dim().1;
    let mut mean = vec![0.0f64; channels];
    for t in 0..t_len {
        for c in 0..channels {
            mean[c] += seq.trajectory()[(t, c)].to_f64_lossy();
        }
    }
    for m in &mut mean {
        *m /= t_len as f64;
    }
    let mut var = vec![0.0f64; channels];
    for t in 0..t_len {
        for c in 0..channels {
            let d = seq.trajectory()[(t, c)].to_f64_lossy() - mean[c];
            var[c] += d * d;
        }
    }
    for v in &mut var {
        *v /= (t_len - 1) as f64;
    }
    Ok(var)
}

/// Average variance error of joint `j`: the Euclidean norm of the
/// difference between generated and ground-truth per-axis variances,
/// averaged over sequences.
pub fn ave<S: Scalar>(gen: &[MotionSequence<S>], gt: &[MotionSequence<S>], joint: usize) -> Result<f64> {
    if gen.len() != gt.len() || gen.is_empty() {
        return Err(Error::shape("ave", format!("{} pairs", gt.len()), format!("{}", gen.len())));
    }
    let mut total = 0.0;
    for (n, (g, r)) in gen.iter().zip(gt.iter()).enumerate() {
        check_pair(g, r, n)?;
        let vg = joint_variance(g, joint)?;
        let vr = joint_variance(r, joint)?;
        let d2: f64 = (0..3).map(|c| (vg[c] - vr[c]).powi(2)).sum();
        total += d2.sqrt();
    }
    Ok(total / gen.len() as f64)
}

/// AVE over the trajectory channels.
pub fn ave_trajectory<S: Scalar>(gen: &[MotionSequence<S>], gt: &[MotionSequence<S>]) -> Result<f64> {
    if gen.len() != gt.len() || gen.is_empty() {
        return Err(Error::shape("ave", format!("{} pairs", gt.len()), format!("{}", gen.len())));
    }
    let mut total = 0.0;
    for (n, (g, r)) in gen.iter().zip(gt.iter()).enumerate() {
        check_pair(g, r, n)?;
        let vg = trajectory_variance(g)?;
        let vr = trajectory_variance(r)?;
        let d2: f64 = vg.iter().zip(vr.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        total += d2.sqrt();
    }
    Ok(total / gen.len() as f64)
}

fn check_code_sets<S: Scalar>(zs: &[Array1<S>], zp: &[Array1<S>]) -> Result<usize> {
    if zs.len() != zp.len() || zs.is_empty() {
        return Err(Error::shape("encoding error", format!("{} codes", zp.len()), format!("{}", zs.len())));
    }
    let m = zs[0].len();
    for (n, (a, b)) in zs.iter().zip(zp.iter()).enumerate() {
        if a.len() != m || b.len() != m {
            return Err(Error::shape(
                format!("encoding pair {n}"),
                format!("width {m}"),
                format!("{} / {}", a.len(), b.len()),
            ));
        }
    }
    Ok(m)
}

/// Content encoding error between sentence- and pose-derived codes.
pub fn cee<S: Scalar>(zs: &[Array1<S>], zp: &[Array1<S>], reading: CeeReading) -> Result<f64> {
    let m = check_code_sets(zs, zp)?;
    let n = zs.len();
    match reading {
        CeeReading::ElementwiseAbs => {
            let mut total = 0.0;
            for (a, b) in zs.iter().zip(zp.iter()) {
                for (x, y) in a.iter().zip(b.iter()) {
                    total += (x.to_f64_lossy() - y.to_f64_lossy()).abs();
                }
            }
            Ok(total / (m * n) as f64)
        }
        CeeReading::SampleEuclidean => {
            let mut total = 0.0;
            for (a, b) in zs.iter().zip(zp.iter()) {
                let d2: f64 = a
                    .iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
                    .sum();
                total += d2.sqrt();
            }
            Ok(total / n as f64)
        }
    }
}

/// Style encoding error: Frobenius distance between the Gram matrices of
/// the two codes, computed through the rank-one identity
/// ||a a' - b b'||_F^2 = (a'a)^2 + (b'b)^2 - 2 (a'b)^2.
pub fn see<S: Scalar>(zs: &[Array1<S>], zp: &[Array1<S>], normalizer: SeeNormalizer) -> Result<f64> {
    let m = check_code_sets(zs, zp)?;
    let n = zs.len();
    let mut total = 0.0;
    for (a, b) in zs.iter().zip(zp.iter()) {
        let aa: f64 = a.iter().map(|x| x.to_f64_lossy().powi(2)).sum();
        let bb: f64 = b.iter().map(|x| x.to_f64_lossy().powi(2)).sum();
        let ab: f64 = a.iter().zip(b.iter()).map(|(x, y)| x.to_f64_lossy() * y.to_f64_lossy()).sum();
        let fro2 = (aa * aa + bb * bb - 2.0 * ab * ab).max(0.0);
        total += fro2.sqrt();
    }
    let denom = match normalizer {
        SeeNormalizer::FeatureCount => (m * n) as f64,
        SeeNormalizer::FeatureCountSquared => (m * m * n) as f64,
    };
    Ok(total / denom)
}

/// Options of the evaluation harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub cee_reading: CeeReading,
    pub see_normalizer: SeeNormalizer,
    /// Score the ground truth against itself (pipeline check).
    pub gt_vs_gt: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            cee_reading: CeeReading::ElementwiseAbs,
            see_normalizer: SeeNormalizer::FeatureCount,
            gt_vs_gt: false,
        }
    }
}

/// One row of the per-joint table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub ape: f64,
    pub ave: f64,
}

/// Full evaluation result for one model on one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub ape_per_joint: Vec<f64>,
    pub ave_per_joint: Vec<f64>,
    pub ape_trajectory: f64,
    pub ave_trajectory: f64,
    pub ape_mean: f64,
    pub ape_mean_without_trajectory: f64,
    pub ave_mean: f64,
    pub ave_mean_without_trajectory: f64,
    pub cee: f64,
    pub see: f64,
    pub n: usize,
    pub options: EvalOptions,
}

/// Table row labels in the reference order.
pub fn report_row_labels(skeleton: &Skeleton) -> Vec<String> {
    let mut labels = vec!["Trajectory".to_string()];
    labels.extend(skeleton.report_groups().iter().map(|(l, _)| l.clone()));
    labels.push("Mean w/o trajectory".to_string());
    labels.push("Mean".to_string());
    labels
}

/// Score generated sequences against ground truth plus the latent sets.
pub fn build_report<S: Scalar>(
    skeleton: &Skeleton,
    gen: &[MotionSequence<S>],
    gt: &[MotionSequence<S>],
    z_s: &[Array1<S>],
    z_p: &[Array1<S>],
    options: &EvalOptions,
) -> Result<EvalReport> {
    let joints = skeleton.joint_count();
    let mut ape_per_joint = Vec::with_capacity(joints);
    let mut ave_per_joint = Vec::with_capacity(joints);
    for j in 0..joints {
        ape_per_joint.push(ape(gen, gt, j)?);
        ave_per_joint.push(ave(gen, gt, j)?);
    }
    let ape_traj = ape_trajectory(gen, gt)?;
    let ave_traj = ave_trajectory(gen, gt)?;

    let ape_mean_wo = ape_per_joint.iter().sum::<f64>() / joints as f64;
    let ave_mean_wo = ave_per_joint.iter().sum::<f64>() / joints as f64;
    let ape_mean = (ape_per_joint.iter().sum::<f64>() + ape_traj) / (joints + 1) as f64;
    let ave_mean = (ave_per_joint.iter().sum::<f64>() + ave_traj) / (joints + 1) as f64;

    let group_mean = |vals: &[f64], ids: &[usize]| -> f64 {
        ids.iter().map(|&j| vals[j]).sum::<f64>() / ids.len() as f64
    };
    let mut rows = vec![ReportRow {
        label: "Trajectory".into(),
        ape: ape_traj,
        ave: ave_traj,
    }];
    for (label, ids) in skeleton.report_groups() {
        rows.push(ReportRow {
            label: label.clone(),
            ape: group_mean(&ape_per_joint, ids),
            ave: group_mean(&ave_per_joint, ids),
        });
    }
    rows.push(ReportRow {
        label: "Mean w/o trajectory".into(),
        ape: ape_mean_wo,
        ave: ave_mean_wo,
    });
    rows.push(ReportRow {
        label: "Mean".into(),
        ape: ape_mean,
        ave: ave_mean,
    });

    Ok(EvalReport {
        rows,
        ape_per_joint,
        ave_per_joint,
        ape_trajectory: ape_traj,
        ave_trajectory: ave_traj,
        ape_mean,
        ape_mean_without_trajectory: ape_mean_wo,
        ave_mean,
        ave_mean_without_trajectory: ave_mean_wo,
        cee: cee(z_s, z_p, options.cee_reading)?,
        see: see(z_s, z_p, options.see_normalizer)?,
        n: gen.len(),
        options: options.clone(),
    })
}

/// Generate from every item's sentence (seeded with its first frame),
/// denormalize, and score against the denormalized ground truth.
pub fn evaluate<S: Scalar>(
    model: &TextMotionModel<S>,
    items: &[TrainItem<S>],
    stats: &NormalizationStats,
    embed: &EmbedSpec,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Empty("evaluation items".into()));
    }
    if embed.width() != model.dims.embed_width {
        return Err(Error::CheckpointMismatch(format!(
            "embedder width {} does not match model {}",
            embed.width(),
            model.dims.embed_width
        )));
    }
    let mut gen_set = Vec::with_capacity(items.len());
    let mut gt_set = Vec::with_capacity(items.len());
    let mut z_s_set = Vec::with_capacity(items.len());
    let mut z_p_set = Vec::with_capacity(items.len());
    for item in items {
        let z_p = model.encode_pose(&item.motion)?;
        let z_s = model.encode_sentence(&item.embedding)?;
        let gen_norm = if options.gt_vs_gt {
            item.motion.clone()
        } else {
            model.decode(&z_s, &item.motion.channels(0), item.motion.len())?
        };
        gen_set.push(stats.invert(&gen_norm)?);
        gt_set.push(stats.invert(&item.motion)?);
        z_s_set.push(z_s.concat());
        z_p_set.push(z_p.concat());
    }
    build_report(model.skeleton(), &gen_set, &gt_set, &z_s_set, &z_p_set, options)
}

/// Aligned text table matching the reference row labels.
pub fn format_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<22}{:>12}{:>12}\n", "", "APE", "AVE"));
    for row in &report.rows {
        out.push_str(&format!("{:<22}{:>12.4}{:>12.4}\n", row.label, row.ape, row.ave));
    }
    out.push_str(&format!("\n{:<22}{:>12.4}\n", "CEE", report.cee));
    out.push_str(&format!("{:<22}{:>12.4}\n", "SEE", report.see));
    out.push_str(&format!("{:<22}{:>12}\n", "N", report.n));
    out
}
