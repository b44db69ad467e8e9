//! Deterministic synthetic actions on a chain skeleton.
//!
//! Class `c` lifts a contiguous group of joints along axis `c mod 3` with a
//! raised-cosine profile of class-specific frequency. Samples differ by
//! phase, amplitude, a small body offset and Gaussian coordinate noise.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{build_topology, Dataset, SkeletonSequence, TopologySpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub joints: usize,
    pub frames: usize,
    pub bodies: usize,
    pub noise_std: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 16,
            joints: 11,
            frames: 32,
            bodies: 1,
            noise_std: 0.01,
        }
    }
}

struct ClassMotion {
    joints: Vec<usize>,
    axis: usize,
    cycles: f64,
}

fn class_motion(c: usize, num_classes: usize, joints: usize) -> ClassMotion {
    let movable = joints - 1;
    let size = (movable / num_classes).max(1).min(3);
    let start = (c * movable / num_classes) % movable;
    ClassMotion {
        joints: (0..size).map(|k| 1 + (start + k) % movable).collect(),
        axis: c % 3,
        cycles: 1.0 + (c / 3) as f64,
    }
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    if spec.num_classes < 2 {
        return Err(Error::Argument("synthetic data needs at least two classes".into()));
    }
    if spec.joints < 2 || spec.frames == 0 || spec.bodies == 0 {
        return Err(Error::Argument(format!(
            "synthetic data needs >= 2 joints and positive frames/bodies, got {spec:?}"
        )));
    }
    if spec.noise_std < 0.0 || !spec.noise_std.is_finite() {
        return Err(Error::Argument(format!("invalid noise std {}", spec.noise_std)));
    }
    let topology = build_topology(&TopologySpec::Chain(spec.joints))?;
    let motions: Vec<ClassMotion> = (0..spec.num_classes)
        .map(|c| class_motion(c, spec.num_classes, spec.joints))
        .collect();
    let noise = Normal::new(0.0, spec.noise_std).expect("finite std");
    let offset = Normal::new(0.0, 0.02).expect("finite std");
    let bone = 1.0 / (spec.joints - 1) as f64;

    let total = spec.num_classes * spec.per_class;
    let mut samples = Vec::with_capacity(total);
    for i in 0..total {
        let label = i % spec.num_classes;
        let motion = &motions[label];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut seq = SkeletonSequence::zeros(format!("s{i:05}"), 3, spec.frames, spec.joints, spec.bodies);
        seq.label = Some(label);
        for m in 0..spec.bodies {
            let phase = rng.random_range(0.0..TAU);
            let amplitude = 0.5 * rng.random_range(0.8..1.2);
            let shift: [f64; 3] = std::array::from_fn(|_| offset.sample(&mut rng) + m as f64 * 0.5);
            for t in 0..spec.frames {
                let angle = TAU * motion.cycles * t as f64 / spec.frames as f64 + phase;
                let lift = amplitude * 0.5 * (1.0 - angle.cos());
                for n in 0..spec.joints {
                    let mut p = [shift[0], shift[1] + bone * n as f64, shift[2]];
                    if motion.joints.contains(&n) {
                        p[motion.axis] += lift;
                    }
                    for (c, v) in p.iter().enumerate() {
                        let jitter = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        seq.set(c, t, n, m, v + jitter);
                    }
                }
            }
        }
        seq.quantize_f32();
        samples.push(seq);
    }
    Ok(Dataset {
        samples,
        topology,
        class_names: (0..spec.num_classes).map(|c| format!("class{c}")).collect(),
    })
}
