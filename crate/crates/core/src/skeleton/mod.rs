//! Skeleton data: topologies, sequences, stream derivation, augmentation,
//! synthetic data and the on-disk dataset format.

mod augment;
mod dataset;
mod ntu;
mod sequence;
mod streams;
mod synth;
mod topology;

pub use augment::{augment, AugmentParams};
pub use dataset::{dataset_read, dataset_write, Dataset, Manifest, SampleEntry, MANIFEST_FILE};
pub use ntu::parse_ntu_skeleton;
pub use sequence::SkeletonSequence;
pub use streams::{
    center_crop, derive_bone_stream, derive_length_stream, derive_motion_stream, derive_stream,
    pad_repeat, recenter, LengthKind, StreamKind,
};
pub use synth::{synth_generate, SynthSpec};
pub use topology::{build_topology, SkeletonTopology, TopologySpec};
