//! Input streams derived from raw joint coordinates, plus temporal padding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{SkeletonSequence, SkeletonTopology};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamKind {
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
    JointLength,
    BoneLength,
}

impl StreamKind {
    pub const ALL: [StreamKind; 6] = [
        StreamKind::Joint,
        StreamKind::Bone,
        StreamKind::JointMotion,
        StreamKind::BoneMotion,
        StreamKind::JointLength,
        StreamKind::BoneLength,
    ];

    /// The four streams of the default ensemble.
    pub const DEFAULT_ENSEMBLE: [StreamKind; 4] = [
        StreamKind::Joint,
        StreamKind::Bone,
        StreamKind::JointMotion,
        StreamKind::BoneMotion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Joint => "joint",
            StreamKind::Bone => "bone",
            StreamKind::JointMotion => "joint-motion",
            StreamKind::BoneMotion => "bone-motion",
            StreamKind::JointLength => "joint-length",
            StreamKind::BoneLength => "bone-length",
        }
    }

    /// Channels of the derived stream given `raw` input channels.
    pub fn channels(self, raw: usize) -> usize {
        match self {
            StreamKind::JointLength | StreamKind::BoneLength => 1,
            _ => raw,
        }
    }

    /// Whether a global translation of the raw joints changes this stream.
    pub fn translation_sensitive(self) -> bool {
        self == StreamKind::Joint
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StreamKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown stream `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthKind {
    /// Distance of every joint to the center joint.
    Joint,
    /// Norm of every bone vector.
    Bone,
}

fn check_joints(seq: &SkeletonSequence, topo: &SkeletonTopology) -> Result<()> {
    if seq.joints() != topo.num_joints {
        return Err(Error::Dimension(format!(
            "sequence `{}` has {} joints but topology `{}` has {}",
            seq.id,
            seq.joints(),
            topo.name,
            topo.num_joints
        )));
    }
    Ok(())
}

/// Bone at the distal joint's slot: `v_distal − v_proximal`. The center slot
/// holds the empty (zero) bone.
pub fn derive_bone_stream(seq: &SkeletonSequence, topo: &SkeletonTopology) -> Result<SkeletonSequence> {
    check_joints(seq, topo)?;
    let [c_n, t_n, _, m_n] = seq.dims();
    let mut out = seq.with_layout(c_n, t_n);
    for &(proximal, distal) in &topo.edges {
        for c in 0..c_n {
            for t in 0..t_n {
                for m in 0..m_n {
                    out.set(c, t, distal, m, seq.get(c, t, distal, m) - seq.get(c, t, proximal, m));
                }
            }
        }
    }
    Ok(out)
}

/// Forward difference `x[t+1] − x[t]`; the last frame's motion is zero.
pub fn derive_motion_stream(seq: &SkeletonSequence) -> SkeletonSequence {
    let [c_n, t_n, n_n, m_n] = seq.dims();
    let mut out = seq.with_layout(c_n, t_n);
    for c in 0..c_n {
        for t in 0..t_n.saturating_sub(1) {
            for n in 0..n_n {
                for m in 0..m_n {
                    out.set(c, t, n, m, seq.get(c, t + 1, n, m) - seq.get(c, t, n, m));
                }
            }
        }
    }
    out
}

/// Single-channel Euclidean lengths.
pub fn derive_length_stream(
    seq: &SkeletonSequence,
    topo: &SkeletonTopology,
    kind: LengthKind,
) -> Result<SkeletonSequence> {
    check_joints(seq, topo)?;
    let vectors = match kind {
        LengthKind::Bone => derive_bone_stream(seq, topo)?,
        LengthKind::Joint => {
            let [c_n, t_n, n_n, m_n] = seq.dims();
            let mut rel = seq.with_layout(c_n, t_n);
            for c in 0..c_n {
                for t in 0..t_n {
                    for n in 0..n_n {
                        for m in 0..m_n {
                            rel.set(c, t, n, m, seq.get(c, t, n, m) - seq.get(c, t, topo.center, m));
                        }
                    }
                }
            }
            rel
        }
    };
    let [c_n, t_n, n_n, m_n] = vectors.dims();
    let mut out = seq.with_layout(1, t_n);
    for t in 0..t_n {
        for n in 0..n_n {
            for m in 0..m_n {
                let sq: f64 = (0..c_n).map(|c| vectors.get(c, t, n, m).powi(2)).sum();
                out.set(0, t, n, m, sq.sqrt());
            }
        }
    }
    Ok(out)
}

pub fn derive_stream(
    seq: &SkeletonSequence,
    topo: &SkeletonTopology,
    kind: StreamKind,
) -> Result<SkeletonSequence> {
    match kind {
        StreamKind::Joint => {
            check_joints(seq, topo)?;
            Ok(seq.clone())
        }
        StreamKind::Bone => derive_bone_stream(seq, topo),
        StreamKind::JointMotion => {
            check_joints(seq, topo)?;
            Ok(derive_motion_stream(seq))
        }
        StreamKind::BoneMotion => Ok(derive_motion_stream(&derive_bone_stream(seq, topo)?)),
        StreamKind::JointLength => derive_length_stream(seq, topo, LengthKind::Joint),
        StreamKind::BoneLength => derive_length_stream(seq, topo, LengthKind::Bone),
    }
}

/// Tiles frames cyclically (`t mod T`) up to `target` frames; longer
/// sequences are returned unchanged.
pub fn pad_repeat(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    if target == 0 {
        return Err(Error::Argument("pad target must be positive".into()));
    }
    let [c_n, t_n, n_n, m_n] = seq.dims();
    if t_n >= target {
        return Ok(seq.clone());
    }
    let mut out = seq.with_layout(c_n, target);
    let block = n_n * m_n;
    for c in 0..c_n {
        for t in 0..target {
            let src = seq.index(c, t % t_n, 0, 0);
            let dst = out.index(c, t, 0, 0);
            out.data_mut()[dst..dst + block].copy_from_slice(&seq.data()[src..src + block]);
        }
    }
    Ok(out)
}

/// Subtracts the first body's center joint, frame by frame, from every body
/// present in that frame. Absent (all-zero) bodies stay zero.
pub fn recenter(seq: &SkeletonSequence, topo: &SkeletonTopology) -> Result<SkeletonSequence> {
    check_joints(seq, topo)?;
    let [c_n, t_n, n_n, m_n] = seq.dims();
    let mut out = seq.clone();
    for t in 0..t_n {
        let origin: Vec<f64> = (0..c_n).map(|c| seq.get(c, t, topo.center, 0)).collect();
        for m in 0..m_n {
            let present = (0..c_n).any(|c| (0..n_n).any(|n| seq.get(c, t, n, m) != 0.0));
            if present {
                for (c, o) in origin.iter().enumerate() {
                    for n in 0..n_n {
                        out.set(c, t, n, m, seq.get(c, t, n, m) - o);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// The centered window of `len` frames.
pub fn center_crop(seq: &SkeletonSequence, len: usize) -> Result<SkeletonSequence> {
    if len > seq.frames() {
        return Err(Error::Argument(format!(
            "crop of {len} frames from a {}-frame sequence",
            seq.frames()
        )));
    }
    seq.frame_range((seq.frames() - len) / 2, len)
}
