use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A skeleton tree: `edges` are oriented proximal → distal, i.e. away from
/// `center`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub name: String,
    pub num_joints: usize,
    pub edges: Vec<(usize, usize)>,
    pub center: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologySpec {
    /// Kinect v2 joints as recorded in NTU RGB+D; center is the spine middle.
    Ntu25,
    /// OpenPose COCO-18 keypoints; center is the neck.
    Kinetics18,
    /// `0 – 1 – … – n−1`, centered at joint 0.
    Chain(usize),
    Custom {
        name: String,
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        center: usize,
    },
}

/// NTU RGB+D joint tree, 1-based as in the dataset documentation:
///
/// | idx | joint          | idx | joint          |
/// |-----|----------------|-----|----------------|
/// | 1   | spine base     | 14  | left knee      |
/// | 2   | spine middle   | 15  | left ankle     |
/// | 3   | neck           | 16  | left foot      |
/// | 4   | head           | 17  | right hip      |
/// | 5   | left shoulder  | 18  | right knee     |
/// | 6   | left elbow     | 19  | right ankle    |
/// | 7   | left wrist     | 20  | right foot     |
/// | 8   | left hand      | 21  | spine shoulder |
/// | 9   | right shoulder | 22  | left hand tip  |
/// | 10  | right elbow    | 23  | left thumb     |
/// | 11  | right wrist    | 24  | right hand tip |
/// | 12  | right hand     | 25  | right thumb    |
/// | 13  | left hip       |     |                |
const NTU25_EDGES: [(usize, usize); 24] = [
    (1, 2),
    (2, 21),
    (3, 21),
    (4, 3),
    (5, 21),
    (6, 5),
    (7, 6),
    (8, 7),
    (9, 21),
    (10, 9),
    (11, 10),
    (12, 11),
    (13, 1),
    (14, 13),
    (15, 14),
    (16, 15),
    (17, 1),
    (18, 17),
    (19, 18),
    (20, 19),
    (22, 23),
    (23, 8),
    (24, 25),
    (25, 12),
];

/// OpenPose COCO-18 tree, 0-based: 0 nose, 1 neck, 2–4 right shoulder/elbow/
/// wrist, 5–7 left shoulder/elbow/wrist, 8–10 right hip/knee/ankle, 11–13
/// left hip/knee/ankle, 14/15 right/left eye, 16/17 right/left ear.
const KINETICS18_EDGES: [(usize, usize); 17] = [
    (4, 3),
    (3, 2),
    (7, 6),
    (6, 5),
    (13, 12),
    (12, 11),
    (10, 9),
    (9, 8),
    (11, 5),
    (8, 2),
    (5, 1),
    (2, 1),
    (0, 1),
    (15, 0),
    (14, 0),
    (17, 15),
    (16, 14),
];

impl TopologySpec {
    /// Parses `ntu25`, `kinetics18` or `chain<N>`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "ntu25" => Ok(Self::Ntu25),
            "kinetics18" => Ok(Self::Kinetics18),
            _ => name
                .strip_prefix("chain")
                .and_then(|n| n.parse().ok())
                .map(Self::Chain)
                .ok_or_else(|| Error::Topology(format!("unknown topology `{name}`"))),
        }
    }
}

pub fn build_topology(spec: &TopologySpec) -> Result<SkeletonTopology> {
    match spec {
        TopologySpec::Ntu25 => orient(
            "ntu25",
            25,
            NTU25_EDGES.iter().map(|&(a, b)| (a - 1, b - 1)).collect(),
            1,
        ),
        TopologySpec::Kinetics18 => orient("kinetics18", 18, KINETICS18_EDGES.to_vec(), 1),
        TopologySpec::Chain(n) => {
            if *n == 0 {
                return Err(Error::Topology("a chain needs at least one joint".into()));
            }
            orient(&format!("chain{n}"), *n, (1..*n).map(|j| (j - 1, j)).collect(), 0)
        }
        TopologySpec::Custom {
            name,
            num_joints,
            edges,
            center,
        } => orient(name, *num_joints, edges.clone(), *center),
    }
}

/// Validates that `edges` form a spanning tree and orients them away from
/// `center`, in breadth-first order.
fn orient(name: &str, n: usize, edges: Vec<(usize, usize)>, center: usize) -> Result<SkeletonTopology> {
    if n == 0 {
        return Err(Error::Topology("topology has no joints".into()));
    }
    if center >= n {
        return Err(Error::Topology(format!("center {center} out of range for {n} joints")));
    }
    if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n || b >= n || a == b) {
        return Err(Error::Topology(format!("invalid edge ({a}, {b}) for {n} joints")));
    }
    if edges.len() != n - 1 {
        return Err(Error::Topology(format!(
            "a tree on {n} joints has {} edges, got {}",
            n - 1,
            edges.len()
        )));
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut oriented = Vec::with_capacity(n - 1);
    let mut queue = VecDeque::from([center]);
    seen[center] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                oriented.push((u, v));
                queue.push_back(v);
            }
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::Topology(format!(
            "joint {j} is not connected to center {center} (cycle or disconnected graph)"
        )));
    }
    Ok(SkeletonTopology {
        name: name.to_string(),
        num_joints: n,
        edges: oriented,
        center,
    })
}

impl SkeletonTopology {
    /// Re-validates a deserialized topology.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = orient(&self.name, self.num_joints, self.edges.clone(), self.center)?;
        let mut a = rebuilt.edges;
        let mut b = self.edges.clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::Topology(format!(
                "edges of `{}` are not oriented away from center {}",
                self.name, self.center
            )));
        }
        Ok(())
    }

    /// `parent[j]` is the proximal neighbor of `j`; `None` for the center.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut p = vec![None; self.num_joints];
        for &(a, b) in &self.edges {
            p[b] = Some(a);
        }
        p
    }

    /// Hop distance of every pair of joints.
    pub fn hop_distances(&self) -> Vec<Vec<usize>> {
        let n = self.num_joints;
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        (0..n)
            .map(|s| {
                let mut d = vec![usize::MAX; n];
                d[s] = 0;
                let mut q = VecDeque::from([s]);
                while let Some(u) = q.pop_front() {
                    for &v in &adj[u] {
                        if d[v] == usize::MAX {
                            d[v] = d[u] + 1;
                            q.push_back(v);
                        }
                    }
                }
                d
            })
            .collect()
    }

    /// The same skeleton with joint `j` renamed `perm[j]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_joints {
            return Err(Error::Dimension(format!(
                "permutation of length {} for {} joints",
                perm.len(),
                self.num_joints
            )));
        }
        orient(
            &self.name,
            self.num_joints,
            self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect(),
            perm[self.center],
        )
    }
}
