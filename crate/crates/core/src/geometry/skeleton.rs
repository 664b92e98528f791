use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint layout shared by every pose in a dataset or model.
///
/// `parents` is optional kinematic structure; it is only needed for bone
/// length checks and motion synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonFile", into = "SkeletonFile")]
pub struct Skeleton {
    name: String,
    joint_names: Vec<String>,
    root: usize,
    flip_pairs: Vec<(usize, usize)>,
    parents: Option<Vec<Option<usize>>>,
    flip_map: Vec<usize>,
}

/// On-disk form of a skeleton definition (TOML or JSON).
///
/// ```toml
/// name = "h36m-17"
/// root = 0
/// joints = ["pelvis", "r_hip", ...]
/// flip_pairs = [[1, 4], [2, 5]]
/// parents = [-1, 0, 1]   # optional, -1 marks the root
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub name: String,
    pub root: usize,
    pub joints: Vec<String>,
    #[serde(default)]
    pub flip_pairs: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parents: Option<Vec<i64>>,
}

impl TryFrom<SkeletonFile> for Skeleton {
    type Error = Error;

    fn try_from(file: SkeletonFile) -> Result<Self> {
        let parents = match file.parents {
            None => None,
            Some(raw) => Some(
                raw.into_iter()
                    .map(|p| {
                        if p < 0 {
                            Ok(None)
                        } else {
                            usize::try_from(p)
                                .map(Some)
                                .map_err(|_| Error::InvalidSkeleton(format!("bad parent {p}")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Skeleton::new(
            file.name,
            file.joints,
            file.root,
            file.flip_pairs.into_iter().map(|[a, b]| (a, b)).collect(),
            parents,
        )
    }
}

impl From<Skeleton> for SkeletonFile {
    fn from(s: Skeleton) -> Self {
        SkeletonFile {
            name: s.name,
            root: s.root,
            joints: s.joint_names,
            flip_pairs: s.flip_pairs.iter().map(|&(a, b)| [a, b]).collect(),
            parents: s.parents.map(|ps| {
                ps.into_iter()
                    .map(|p| p.map_or(-1, |v| v as i64))
                    .collect()
            }),
        }
    }
}

impl Skeleton {
    pub fn new(
        name: impl Into<String>,
        joint_names: Vec<String>,
        root: usize,
        flip_pairs: Vec<(usize, usize)>,
        parents: Option<Vec<Option<usize>>>,
    ) -> Result<Self> {
        let j = joint_names.len();
        if j == 0 {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        if root >= j {
            return Err(Error::InvalidSkeleton(format!(
                "root index {root} out of range for {j} joints"
            )));
        }
        let mut flip_map: Vec<usize> = (0..j).collect();
        let mut seen = vec![false; j];
        for &(a, b) in &flip_pairs {
            if a >= j || b >= j {
                return Err(Error::InvalidSkeleton(format!(
                    "flip pair ({a}, {b}) out of range"
                )));
            }
            if a == b || seen[a] || seen[b] {
                return Err(Error::InvalidSkeleton(format!(
                    "flip pair ({a}, {b}) overlaps another pair"
                )));
            }
            seen[a] = true;
            seen[b] = true;
            flip_map[a] = b;
            flip_map[b] = a;
        }
        if let Some(ps) = &parents {
            if ps.len() != j {
                return Err(Error::InvalidSkeleton(format!(
                    "{} parents for {j} joints",
                    ps.len()
                )));
            }
            for (i, p) in ps.iter().enumerate() {
                match p {
                    None if i != root => {
                        return Err(Error::InvalidSkeleton(format!(
                            "joint {i} has no parent but is not the root"
                        )))
                    }
                    Some(_) if i == root => {
                        return Err(Error::InvalidSkeleton("root has a parent".into()))
                    }
                    Some(p) if *p >= j => {
                        return Err(Error::InvalidSkeleton(format!(
                            "joint {i} has out-of-range parent {p}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(Skeleton {
            name: name.into(),
            joint_names,
            root,
            flip_pairs,
            parents,
            flip_map,
        })
    }

    /// The 17-joint layout common to Human3.6M-style benchmarks.
    pub fn h36m() -> Self {
        let names = [
            "pelvis",
            "r_hip",
            "r_knee",
            "r_ankle",
            "l_hip",
            "l_knee",
            "l_ankle",
            "spine",
            "thorax",
            "neck",
            "head",
            "l_shoulder",
            "l_elbow",
            "l_wrist",
            "r_shoulder",
            "r_elbow",
            "r_wrist",
        ];
        let parents = [
            None,
            Some(0),
            Some(1),
            Some(2),
            Some(0),
            Some(4),
            Some(5),
            Some(0),
            Some(7),
            Some(8),
            Some(9),
            Some(8),
            Some(11),
            Some(12),
            Some(8),
            Some(14),
            Some(15),
        ];
        Skeleton::new(
            "h36m-17",
            names.iter().map(|s| s.to_string()).collect(),
            0,
            vec![(1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16)],
            Some(parents.to_vec()),
        )
        .expect("built-in skeleton is valid")
    }

    /// Minimal chain skeleton used in tests and tiny configurations.
    pub fn chain(joints: usize, flip_pairs: Vec<(usize, usize)>) -> Result<Self> {
        let names = (0..joints).map(|i| format!("j{i}")).collect();
        let parents = (0..joints)
            .map(|i| if i == 0 { None } else { Some(i - 1) })
            .collect();
        Skeleton::new("chain", names, 0, flip_pairs, Some(parents))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SkeletonFile = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?
        };
        Skeleton::try_from(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&SkeletonFile::from(self.clone())).expect("skeleton serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn flip_pairs(&self) -> &[(usize, usize)] {
        &self.flip_pairs
    }

    /// Index of the joint that `joint` maps to under a horizontal flip.
    pub fn flipped_index(&self, joint: usize) -> usize {
        self.flip_map[joint]
    }

    /// Joints that map to themselves under flipping.
    pub fn fixed_joints(&self) -> Vec<usize> {
        (0..self.joint_count())
            .filter(|&j| self.flip_map[j] == j)
            .collect()
    }

    pub fn parents(&self) -> Option<&[Option<usize>]> {
        self.parents.as_deref()
    }

    /// `(parent, child)` pairs, empty when the skeleton carries no hierarchy.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        self.parents
            .as_ref()
            .map(|ps| {
                ps.iter()
                    .enumerate()
                    .filter_map(|(c, p)| p.map(|p| (p, c)))
                    .collect()
            })
            .unwrap_or_default()
    }
}
