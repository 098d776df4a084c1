//! Skeleton definition: joint names, five-part body decomposition, bone
//! topology for rendering, and the joint groups used in evaluation tables.
//!
//! The concrete 21-joint assignment ships as data (an embedded, versioned
//! JSON document) rather than code, so alternative reductions of the motion
//! corpus can be swapped in without rebuilding.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// The five major body parts, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    LeftArm,
    RightArm,
    Trunk,
    LeftLeg,
    RightLeg,
}

impl BodyPart {
    pub const ALL: [BodyPart; 5] = [
        BodyPart::LeftArm,
        BodyPart::RightArm,
        BodyPart::Trunk,
        BodyPart::LeftLeg,
        BodyPart::RightLeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::LeftArm => "left_arm",
            BodyPart::RightArm => "right_arm",
            BodyPart::Trunk => "trunk",
            BodyPart::LeftLeg => "left_leg",
            BodyPart::RightLeg => "right_leg",
        }
    }

    pub fn index(self) -> usize {
        match self {
            BodyPart::LeftArm => 0,
            BodyPart::RightArm => 1,
            BodyPart::Trunk => 2,
            BodyPart::LeftLeg => 3,
            BodyPart::RightLeg => 4,
        }
    }
}

/// On-disk form of a skeleton definition. Joints are referenced by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SkeletonFile {
    name: String,
    version: u32,
    joint_names: Vec<String>,
    /// part name -> joint names
    parts: std::collections::BTreeMap<String, Vec<String>>,
    /// (parent, child) joint-name pairs for stick-figure rendering
    bones: Vec<(String, String)>,
    /// evaluation table rows: (label, joint names)
    report_groups: Vec<(String, Vec<String>)>,
}

/// A validated skeleton: 21 named joints, each assigned to exactly one of
/// the five body parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    name: String,
    version: u32,
    joint_names: Vec<String>,
    /// joint indices per part, canonical part order, skeleton joint order within
    part_joints: [Vec<usize>; 5],
    /// joint index -> part
    assignment: Vec<BodyPart>,
    bones: Vec<(usize, usize)>,
    report_groups: Vec<(String, Vec<usize>)>,
    canonical_json: String,
}

/// Joint count required by the motion representation.
pub const JOINT_COUNT: usize = 21;

const DEFAULT_SKELETON_JSON: &str = include_str!("../assets/kit21_skeleton.json");

impl Skeleton {
    /// The default 21-joint reduction of the KIT whole-body recordings.
    pub fn default_kit() -> Skeleton {
        Skeleton::from_json(DEFAULT_SKELETON_JSON).expect("embedded skeleton is valid")
    }

    pub fn from_json_file(path: &Path) -> Result<Skeleton> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Resource {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Skeleton::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Skeleton> {
        let file: SkeletonFile = serde_json::from_str(text)?;
        Self::resolve(file)
    }

    fn resolve(file: SkeletonFile) -> Result<Skeleton> {
        let joint_index = |name: &str| -> Result<usize> {
            file.joint_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("unknown joint name '{name}' in skeleton")))
        };

        if file.joint_names.len() != JOINT_COUNT {
            return Err(Error::Config(format!(
                "skeleton must define {JOINT_COUNT} joints, got {}",
                file.joint_names.len()
            )));
        }

        let mut part_joints: [Vec<usize>; 5] = Default::default();
        let mut assignment: Vec<Option<BodyPart>> = vec![None; file.joint_names.len()];
        for part in BodyPart::ALL {
            let names = file
                .parts
                .get(part.name())
                .ok_or_else(|| Error::Config(format!("skeleton missing part '{}'", part.name())))?;
            if names.is_empty() {
                return Err(Error::Config(format!("skeleton part '{}' is empty", part.name())));
            }
            let mut ids: Vec<usize> = Vec::with_capacity(names.len());
            for n in names {
                let id = joint_index(n)?;
                if let Some(prev) = assignment[id] {
                    return Err(Error::Config(format!(
                        "joint '{n}' assigned to both {} and {}",
                        prev.name(),
                        part.name()
                    )));
                }
                assignment[id] = Some(part);
                ids.push(id);
            }
            ids.sort_unstable(); // skeleton order within the part
            part_joints[part.index()] = ids;
        }
        let assignment: Vec<BodyPart> = assignment
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                p.ok_or_else(|| {
                    Error::Config(format!("joint '{}' not assigned to any part", file.joint_names[i]))
                })
            })
            .collect::<Result<_>>()?;

        let bones = file
            .bones
            .iter()
            .map(|(a, b)| Ok((joint_index(a)?, joint_index(b)?)))
            .collect::<Result<Vec<_>>>()?;
        let report_groups = file
            .report_groups
            .iter()
            .map(|(label, names)| {
                let ids = names.iter().map(|n| joint_index(n)).collect::<Result<Vec<_>>>()?;
                Ok((label.clone(), ids))
            })
            .collect::<Result<Vec<_>>>()?;

        let canonical_json = serde_json::to_string(&file)?;
        Ok(Skeleton {
            name: file.name,
            version: file.version,
            joint_names: file.joint_names,
            part_joints,
            assignment,
            bones,
            report_groups,
            canonical_json,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_id(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Joint indices belonging to `part`, in skeleton order.
    pub fn part(&self, part: BodyPart) -> &[usize] {
        &self.part_joints[part.index()]
    }

    pub fn part_of(&self, joint: usize) -> BodyPart {
        self.assignment[joint]
    }

    /// (parent, child) bone list for rendering.
    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    /// Evaluation table rows: (label, member joint indices).
    pub fn report_groups(&self) -> &[(String, Vec<usize>)] {
        &self.report_groups
    }

    pub fn to_json(&self) -> &str {
        &self.canonical_json
    }

    /// SHA-256 of the canonical JSON; pinned in preprocessing manifests.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_json.as_bytes());
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeleton_validates() {
        let sk = Skeleton::default_kit();
        assert_eq!(sk.joint_count(), 21);
        // five parts, disjoint, covering
        let mut seen = vec![false; 21];
        for part in BodyPart::ALL {
            let ids = sk.part(part);
            assert!(!ids.is_empty());
            for &i in ids {
                assert!(!seen[i], "joint {i} in two parts");
                seen[i] = true;
                assert_eq!(sk.part_of(i), part);
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn part_sizes_match_kit_reduction() {
        let sk = Skeleton::default_kit();
        assert_eq!(sk.part(BodyPart::LeftArm).len(), 3);
        assert_eq!(sk.part(BodyPart::RightArm).len(), 3);
        assert_eq!(sk.part(BodyPart::Trunk).len(), 5);
        assert_eq!(sk.part(BodyPart::LeftLeg).len(), 5);
        assert_eq!(sk.part(BodyPart::RightLeg).len(), 5);
    }

    #[test]
    fn checksum_is_stable() {
        let a = Skeleton::default_kit();
        let b = Skeleton::default_kit();
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(a.checksum().len(), 64);
    }

    #[test]
    fn report_groups_cover_all_joints() {
        let sk = Skeleton::default_kit();
        let mut seen = vec![false; 21];
        for (_, ids) in sk.report_groups() {
            for &i in ids {
                seen[i] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s), "every joint appears in a report row");
    }

    #[test]
    fn rejects_incomplete_assignment() {
        let sk = Skeleton::default_kit();
        let mut file: serde_json::Value = serde_json::from_str(sk.to_json()).unwrap();
        // drop one joint from left_arm
        file["parts"]["left_arm"].as_array_mut().unwrap().pop();
        let text = serde_json::to_string(&file).unwrap();
        assert!(Skeleton::from_json(&text).is_err());
    }

    #[test]
    fn bvh_bone_list_is_a_tree_over_joints() {
        let sk = Skeleton::default_kit();
        assert_eq!(sk.bones().len(), sk.joint_count() - 1);
    }
}
