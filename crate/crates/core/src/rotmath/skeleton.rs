//! Joint hierarchy, rest offsets and forward kinematics.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quat::{Quaternion, Vec3};
use crate::error::{Error, Result};

pub const SKELETON_FORMAT_VERSION: u32 = 1;

const HANDS32_ASSET: &str = include_str!("../../assets/skeleton_hands32.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub id: usize,
    pub name: String,
    /// `None` marks a chain root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    /// Offset from the parent joint in the parent's frame.
    pub rest_offset: Vec3,
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    format_version: u32,
    id: String,
    joints: Vec<Joint>,
}

/// A validated forest of joints. Frame rotations are stored in `joints` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    id: String,
    joints: Vec<Joint>,
    /// Parent as an index into `joints`.
    parent_index: Vec<Option<usize>>,
    /// Indices into `joints`, parents before children, ordered by (depth, id).
    topo: Vec<usize>,
    depth: Vec<usize>,
}

impl Skeleton {
    pub fn new(id: impl Into<String>, joints: Vec<Joint>) -> Result<Self> {
        let id = id.into();
        if joints.is_empty() {
            return Err(Error::validation("skeleton has no joints"));
        }
        let mut by_id = HashMap::with_capacity(joints.len());
        for (i, j) in joints.iter().enumerate() {
            if by_id.insert(j.id, i).is_some() {
                return Err(Error::validation(format!("duplicate joint id {}", j.id)));
            }
            if !j.rest_offset.is_finite() {
                return Err(Error::validation(format!("joint {}: non-finite rest offset", j.id)));
            }
        }
        let mut parent_index = Vec::with_capacity(joints.len());
        for j in &joints {
            parent_index.push(match j.parent {
                None => None,
                Some(p) => Some(*by_id.get(&p).ok_or_else(|| {
                    Error::validation(format!("joint {}: parent {} does not exist", j.id, p))
                })?),
            });
        }
        let depth = depths(&joints, &parent_index)?;
        let mut topo: Vec<usize> = (0..joints.len()).collect();
        topo.sort_by_key(|&i| (depth[i], joints[i].id));
        Ok(Skeleton {
            id,
            joints,
            parent_index,
            topo,
            depth,
        })
    }

    /// Two hands of 16 joints each (wrist plus three joints per finger).
    pub fn hands32() -> Self {
        Skeleton::from_toml_str(HANDS32_ASSET).expect("bundled skeleton asset is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SkeletonFile = toml::from_str(text)
            .map_err(|e| Error::parse(line_of(text, e.span().map(|s| s.start)), e.message()))?;
        if file.format_version != SKELETON_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported skeleton format_version {}",
                file.format_version
            )));
        }
        Skeleton::new(file.id, file.joints)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Skeleton::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&SkeletonFile {
            format_version: SKELETON_FORMAT_VERSION,
            id: self.id.clone(),
            joints: self.joints.clone(),
        })
        .expect("skeleton serializes")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parent_of(&self, index: usize) -> Option<usize> {
        self.parent_index[index]
    }

    pub fn depth_of(&self, index: usize) -> usize {
        self.depth[index]
    }

    /// Joint indices (into `joints()`) in topological order.
    pub fn topological_indices(&self) -> &[usize] {
        &self.topo
    }

    /// Whether `ancestor` lies on the path from `index` to its root (inclusive).
    pub fn is_ancestor_or_self(&self, ancestor: usize, index: usize) -> bool {
        let mut cur = Some(index);
        while let Some(i) = cur {
            if i == ancestor {
                return true;
            }
            cur = self.parent_index[i];
        }
        false
    }
}

fn depths(joints: &[Joint], parent: &[Option<usize>]) -> Result<Vec<usize>> {
    let n = joints.len();
    let mut depth = vec![usize::MAX; n];
    for start in 0..n {
        let mut chain = Vec::new();
        let mut cur = start;
        let base = loop {
            if depth[cur] != usize::MAX {
                break depth[cur];
            }
            if chain.len() > n {
                return Err(Error::validation(format!(
                    "joint {}: parent chain contains a cycle",
                    joints[start].id
                )));
            }
            chain.push(cur);
            match parent[cur] {
                None => {
                    chain.pop();
                    depth[cur] = 0;
                    break 0;
                }
                Some(p) => cur = p,
            }
        };
        for (k, &i) in chain.iter().rev().enumerate() {
            depth[i] = base + k + 1;
        }
    }
    Ok(depth)
}

fn line_of(text: &str, offset: Option<usize>) -> usize {
    offset.map_or(0, |o| text[..o.min(text.len())].matches('\n').count() + 1)
}

/// Joint ids with parents before children; ties broken by depth, then id.
pub fn topological_order(skel: &Skeleton) -> Vec<usize> {
    skel.topo.iter().map(|&i| skel.joints[i].id).collect()
}

/// Global joint positions in skeleton order.
///
/// The accumulated rotation of joint `i` is `Q_i = Q_parent ∘ q_i` and its
/// position is `p_i = p_parent + Q_i v_i Q_i⁻¹`, with roots anchored at the origin.
pub fn forward_kinematics(skel: &Skeleton, rotations: &[Quaternion]) -> Result<Vec<Vec3>> {
    if rotations.len() != skel.len() {
        return Err(Error::validation(format!(
            "frame has {} rotations but skeleton {} has {} joints",
            rotations.len(),
            skel.id,
            skel.len()
        )));
    }
    let mut global = vec![Quaternion::IDENTITY; skel.len()];
    let mut pos = vec![Vec3::ZERO; skel.len()];
    for &i in &skel.topo {
        let (q_parent, p_parent) = match skel.parent_index[i] {
            Some(p) => (global[p], pos[p]),
            None => (Quaternion::IDENTITY, Vec3::ZERO),
        };
        global[i] = q_parent.compose(rotations[i]);
        pos[i] = p_parent + global[i].rotate(skel.joints[i].rest_offset);
    }
    Ok(pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::quat::{quat_from_axis_angle, AxisAngle};

    fn joint(id: usize, parent: Option<usize>, off: [f64; 3]) -> Joint {
        Joint {
            id,
            name: format!("j{id}"),
            parent,
            rest_offset: off.into(),
        }
    }

    #[test]
    fn chain_order() {
        let s = Skeleton::new(
            "chain",
            vec![joint(2, Some(1), [0.0; 3]), joint(0, None, [0.0; 3]), joint(1, Some(0), [0.0; 3])],
        )
        .unwrap();
        assert_eq!(topological_order(&s), vec![0, 1, 2]);
    }

    #[test]
    fn two_hands_roots_first() {
        let s = Skeleton::hands32();
        assert_eq!(s.len(), 32);
        let order = topological_order(&s);
        assert_eq!(&order[..2], &[0, 16]);
        assert_eq!(&order[2..7], &[1, 4, 7, 10, 13]);
        assert_eq!(&order[7..12], &[17, 20, 23, 26, 29]);
    }

    #[test]
    fn rejects_cycles_and_missing_parents() {
        let cyc = Skeleton::new("c", vec![joint(0, Some(1), [0.0; 3]), joint(1, Some(0), [0.0; 3])]);
        assert!(matches!(cyc, Err(Error::Validation(m)) if m.contains("cycle")));
        let missing = Skeleton::new("m", vec![joint(0, None, [0.0; 3]), joint(1, Some(7), [0.0; 3])]);
        assert!(matches!(missing, Err(Error::Validation(m)) if m.contains("parent 7")));
        let dup = Skeleton::new("d", vec![joint(0, None, [0.0; 3]), joint(0, None, [0.0; 3])]);
        assert!(dup.is_err());
    }

    #[test]
    fn rest_pose_sums_offsets() {
        let s = Skeleton::new(
            "c",
            vec![
                joint(0, None, [1.0, 0.0, 0.0]),
                joint(1, Some(0), [0.0, 2.0, 0.0]),
                joint(2, Some(1), [0.0, 0.0, 3.0]),
            ],
        )
        .unwrap();
        let p = forward_kinematics(&s, &[Quaternion::IDENTITY; 3]).unwrap();
        assert_eq!(p[2], Vec3::new(1.0, 2.0, 3.0));
        assert!(forward_kinematics(&s, &[Quaternion::IDENTITY; 2]).is_err());
    }

    #[test]
    fn root_quarter_turn_rotates_rest_pose() {
        let s = Skeleton::hands32();
        let rest = forward_kinematics(&s, &vec![Quaternion::IDENTITY; 32]).unwrap();
        let r = quat_from_axis_angle(AxisAngle::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)).unwrap();
        let mut rot = vec![Quaternion::IDENTITY; 32];
        rot[0] = r;
        rot[16] = r;
        let turned = forward_kinematics(&s, &rot).unwrap();
        for (a, b) in rest.iter().zip(&turned) {
            let expect = Vec3::new(-a.y, a.x, a.z);
            assert!((expect - *b).norm() < 1e-12);
        }
    }

    #[test]
    fn toml_round_trip() {
        let s = Skeleton::hands32();
        let again = Skeleton::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
    }
}
