//! Motion representation: root-relative joint positions plus global
//! root-trajectory channels, with the basic geometric operations
//! (partitioning, velocity, frame-rate subsampling) and export.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::skeleton::{BodyPart, Skeleton};
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use std::io::Write;
use std::path::Path;

/// Number of global root-trajectory channels per frame:
/// ground-plane translational velocity (x, z) in the character's local frame,
/// and rotational velocity about the vertical axis, in radians.
pub const TRAJECTORY_CHANNELS: usize = 3;

/// A time-indexed sequence of skeleton poses plus global root trajectory.
///
/// `frames` holds per-frame joint positions in millimeters, expressed in the
/// character's local (root-relative, facing-aligned) coordinate frame with
/// +Y up. `trajectory` holds the per-frame global root-motion channels; the
/// last frame repeats the previous frame's values so both arrays share T.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence<S: Scalar> {
    frames: Array3<S>,
    trajectory: Array2<S>,
    fps: f64,
}

impl<S: Scalar> MotionSequence<S> {
    pub fn new(frames: Array3<S>, trajectory: Array2<S>, fps: f64) -> Result<Self> {
        if frames.dim().0 != trajectory.dim().0 {
            return Err(Error::shape(
                "motion sequence",
                format!("trajectory with {} frames", frames.dim().0),
                format!("{}", trajectory.dim().0),
            ));
        }
        if frames.dim().2 != 3 {
            return Err(Error::shape("motion frames", "J x 3 per frame", format!("J x {}", frames.dim().2)));
        }
        if trajectory.dim().1 != TRAJECTORY_CHANNELS {
            return Err(Error::shape(
                "trajectory",
                format!("{TRAJECTORY_CHANNELS} channels"),
                format!("{}", trajectory.dim().1),
            ));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        let seq = MotionSequence { frames, trajectory, fps };
        if !seq.is_finite() {
            return Err(Error::NonFinite("motion sequence".into()));
        }
        Ok(seq)
    }

    /// Zero-motion sequence, mainly for tests and defaults.
    pub fn zeros(frames: usize, joints: usize, fps: f64) -> Self {
        MotionSequence {
            frames: Array3::zeros((frames, joints, 3)),
            trajectory: Array2::zeros((frames, TRAJECTORY_CHANNELS)),
            fps,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn joint_count(&self) -> usize {
        self.frames.dim().1
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &Array3<S> {
        &self.frames
    }

    pub fn trajectory(&self) -> &Array2<S> {
        &self.trajectory
    }

    pub fn frames_mut(&mut self) -> &mut Array3<S> {
        &mut self.frames
    }

    pub fn trajectory_mut(&mut self) -> &mut Array2<S> {
        &mut self.trajectory
    }

    pub fn pose(&self, t: usize) -> ArrayView2<'_, S> {
        self.frames.index_axis(Axis(0), t)
    }

    fn is_finite(&self) -> bool {
        self.frames.iter().all(|v| v.is_finite()) && self.trajectory.iter().all(|v| v.is_finite())
    }

    /// Flatten frame `t` into the model's per-frame channel vector:
    /// J*3 joint coordinates followed by the trajectory channels.
    pub fn channels(&self, t: usize) -> Array1<S> {
        let j = self.joint_count();
        let mut out = Array1::zeros(j * 3 + TRAJECTORY_CHANNELS);
        for (i, v) in self.pose(t).iter().enumerate() {
            out[i] = *v;
        }
        for c in 0..TRAJECTORY_CHANNELS {
            out[j * 3 + c] = self.trajectory[(t, c)];
        }
        out
    }

    /// All frames as a T x (J*3 + trajectory) channel matrix.
    pub fn channel_matrix(&self) -> Array2<S> {
        let t = self.len();
        let width = self.joint_count() * 3 + TRAJECTORY_CHANNELS;
        let mut out = Array2::zeros((t, width));
        for i in 0..t {
            out.row_mut(i).assign(&self.channels(i));
        }
        out
    }

    /// Rebuild a sequence from a channel matrix produced by [`Self::channel_matrix`].
    pub fn from_channel_matrix(channels: &Array2<S>, joints: usize, fps: f64) -> Result<Self> {
        let width = joints * 3 + TRAJECTORY_CHANNELS;
        if channels.dim().1 != width {
            return Err(Error::shape(
                "channel matrix",
                format!("{width} channels"),
                format!("{}", channels.dim().1),
            ));
        }
        let t = channels.dim().0;
        let mut frames = Array3::zeros((t, joints, 3));
        let mut trajectory = Array2::zeros((t, TRAJECTORY_CHANNELS));
        for i in 0..t {
            let row = channels.row(i);
            for j in 0..joints {
                for c in 0..3 {
                    frames[(i, j, c)] = row[j * 3 + c];
                }
            }
            for c in 0..TRAJECTORY_CHANNELS {
                trajectory[(i, c)] = row[joints * 3 + c];
            }
        }
        MotionSequence::new(frames, trajectory, fps)
    }
}

/// One frame's coordinates split into the five body parts.
///
/// Each part vector is the flattened (x, y, z) coordinates of that part's
/// joints, in skeleton order. Concatenating the parts in canonical order and
/// un-permuting reproduces the original pose exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedPose<S: Scalar> {
    parts: [Array1<S>; 5],
}

impl<S: Scalar> PartitionedPose<S> {
    pub fn part(&self, part: BodyPart) -> &Array1<S> {
        &self.parts[part.index()]
    }
}

/// Split a J x 3 pose into the five body-part coordinate vectors.
pub fn partition_pose<S: Scalar>(pose: ArrayView2<'_, S>, skeleton: &Skeleton) -> Result<PartitionedPose<S>> {
    if pose.dim().0 != skeleton.joint_count() || pose.dim().1 != 3 {
        return Err(Error::shape(
            "partition_pose",
            format!("{} x 3", skeleton.joint_count()),
            format!("{} x {}", pose.dim().0, pose.dim().1),
        ));
    }
    let parts = BodyPart::ALL.map(|part| {
        let ids = skeleton.part(part);
        let mut v = Array1::zeros(ids.len() * 3);
        for (k, &j) in ids.iter().enumerate() {
            for c in 0..3 {
                v[k * 3 + c] = pose[(j, c)];
            }
        }
        v
    });
    Ok(PartitionedPose { parts })
}

/// Inverse of [`partition_pose`].
pub fn unpartition_pose<S: Scalar>(parts: &PartitionedPose<S>, skeleton: &Skeleton) -> Array2<S> {
    let mut pose = Array2::zeros((skeleton.joint_count(), 3));
    for part in BodyPart::ALL {
        let ids = skeleton.part(part);
        let v = parts.part(part);
        for (k, &j) in ids.iter().enumerate() {
            for c in 0..3 {
                pose[(j, c)] = v[k * 3 + c];
            }
        }
    }
    pose
}

/// Forward differences of the joint positions: out[t] = frames[t+1] - frames[t].
pub fn velocity<S: Scalar>(seq: &MotionSequence<S>) -> Result<Array3<S>> {
    let t = seq.len();
    if t < 2 {
        return Err(Error::TooShort {
            what: "velocity".into(),
            min: 2,
            got: t,
        });
    }
    let j = seq.joint_count();
    let mut out = Array3::zeros((t - 1, j, 3));
    for i in 0..t - 1 {
        let next = seq.frames.index_axis(Axis(0), i + 1);
        let cur = seq.frames.index_axis(Axis(0), i);
        let mut row = out.index_axis_mut(Axis(0), i);
        row.assign(&(&next - &cur));
    }
    Ok(out)
}

/// Keep every (fps / target_fps)-th frame starting at frame 0.
///
/// Pure selection: kept frame and trajectory values are bit-identical to the
/// input. The source rate must be an integer multiple of the target rate.
pub fn subsample<S: Scalar>(seq: &MotionSequence<S>, target_fps: f64) -> Result<MotionSequence<S>> {
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return Err(Error::Config(format!("target fps must be positive, got {target_fps}")));
    }
    let ratio = seq.fps / target_fps;
    let step = ratio.round();
    if (ratio - step).abs() > 1e-9 || step < 1.0 {
        return Err(Error::Config(format!(
            "source fps {} is not an integer multiple of target fps {target_fps}",
            seq.fps
        )));
    }
    let step = step as usize;
    let frames = seq.frames.slice(s![..;step, .., ..]).to_owned();
    let trajectory = seq.trajectory.slice(s![..;step, ..]).to_owned();
    Ok(MotionSequence {
        frames,
        trajectory,
        fps: target_fps,
    })
}

/// Reconstruct global joint positions by integrating the trajectory channels,
/// starting at the origin facing +Z. Inverse of the preprocessing transform
/// up to the unknown initial placement.
pub fn to_global<S: Scalar>(seq: &MotionSequence<S>) -> Array3<S> {
    let t = seq.len();
    let j = seq.joint_count();
    let mut out = Array3::zeros((t, j, 3));
    let mut x = 0.0f64;
    let mut z = 0.0f64;
    let mut theta = 0.0f64;
    for i in 0..t {
        let (sin_t, cos_t) = theta.sin_cos();
        for jj in 0..j {
            let lx = seq.frames[(i, jj, 0)].to_f64_lossy();
            let ly = seq.frames[(i, jj, 1)].to_f64_lossy();
            let lz = seq.frames[(i, jj, 2)].to_f64_lossy();
            // rotate local (x, z) by theta about +Y, then translate
            let gx = cos_t * lx + sin_t * lz + x;
            let gz = -sin_t * lx + cos_t * lz + z;
            out[(i, jj, 0)] = S::from_f64_lossy(gx);
            out[(i, jj, 1)] = S::from_f64_lossy(ly);
            out[(i, jj, 2)] = S::from_f64_lossy(gz);
        }
        // advance root state by this frame's velocities
        let vx = seq.trajectory[(i, 0)].to_f64_lossy();
        let vz = seq.trajectory[(i, 1)].to_f64_lossy();
        let w = seq.trajectory[(i, 2)].to_f64_lossy();
        let dx = cos_t * vx + sin_t * vz;
        let dz = -sin_t * vx + cos_t * vz;
        x += dx;
        z += dz;
        theta += w;
    }
    out
}

/// Export as a plain-text BVH file with per-joint translation channels,
/// parent-relative, so generic viewers can replay the stick figure.
/// Values are converted to global coordinates first.
pub fn export_bvh<S: Scalar>(seq: &MotionSequence<S>, skeleton: &Skeleton, path: &Path) -> Result<()> {
    let global = to_global(seq);
    let j = skeleton.joint_count();
    let mut parent: Vec<Option<usize>> = vec![None; j];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); j];
    for &(a, b) in skeleton.bones() {
        parent[b] = Some(a);
        children[a].push(b);
    }
    let root = (0..j)
        .find(|&i| parent[i].is_none())
        .ok_or_else(|| Error::Config("skeleton bone list has no root".into()))?;

    // depth-first channel order
    let mut order = Vec::with_capacity(j);
    fn visit(node: usize, children: &[Vec<usize>], order: &mut Vec<usize>) {
        order.push(node);
        for &c in &children[node] {
            visit(c, children, order);
        }
    }
    visit(root, &children, &mut order);

    let mut out = String::new();
    out.push_str("HIERARCHY\n");
    fn write_joint(
        node: usize,
        depth: usize,
        is_root: bool,
        skeleton: &Skeleton,
        children: &[Vec<usize>],
        out: &mut String,
    ) {
        let indent = "  ".repeat(depth);
        let kind = if is_root { "ROOT" } else { "JOINT" };
        out.push_str(&format!("{indent}{kind} {}\n{indent}{{\n", skeleton.joint_names()[node]));
        out.push_str(&format!("{indent}  OFFSET 0.0 0.0 0.0\n"));
        out.push_str(&format!("{indent}  CHANNELS 3 Xposition Yposition Zposition\n"));
        if children[node].is_empty() {
            out.push_str(&format!(
                "{indent}  End Site\n{indent}  {{\n{indent}    OFFSET 0.0 0.0 0.0\n{indent}  }}\n"
            ));
        } else {
            for &c in &children[node] {
                write_joint(c, depth + 1, false, skeleton, children, out);
            }
        }
        out.push_str(&format!("{indent}}}\n"));
    }
    write_joint(root, 0, true, skeleton, &children, &mut out);

    out.push_str("MOTION\n");
    out.push_str(&format!("Frames: {}\n", seq.len()));
    out.push_str(&format!("Frame Time: {:.8}\n", 1.0 / seq.fps()));
    for t in 0..seq.len() {
        let mut vals: Vec<String> = Vec::with_capacity(j * 3);
        for &node in &order {
            for c in 0..3 {
                let v = global[(t, node, c)].to_f64_lossy();
                let rel = match parent[node] {
                    Some(p) => v - global[(t, p, c)].to_f64_lossy(),
                    None => v,
                };
                vals.push(format!("{rel:.4}"));
            }
        }
        out.push_str(&vals.join(" "));
        out.push('\n');
    }

    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
