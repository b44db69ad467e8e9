use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SkeletonSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    /// Each Euler angle is drawn uniformly from ±`max_rot_deg` degrees.
    pub max_rot_deg: f64,
    /// Each translation component is drawn uniformly from ±`max_trans`.
    pub max_trans: f64,
    /// Length of the random temporal crop; `None` keeps every frame.
    pub crop_len: Option<usize>,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            max_rot_deg: 10.0,
            max_trans: 0.1,
            crop_len: None,
        }
    }
}

impl AugmentParams {
    pub fn none() -> Self {
        Self {
            max_rot_deg: 0.0,
            max_trans: 0.0,
            crop_len: None,
        }
    }
}

fn rotation(rx: f64, ry: f64, rz: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = rx.sin_cos();
    let (sy, cy) = ry.sin_cos();
    let (sz, cz) = rz.sin_cos();
    // Rz · Ry · Rx
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

/// Random temporal crop, then one global rotation, then one global
/// translation.
///
/// Rotation only applies to 3-channel data. Translation skips bodies that are
/// entirely zero so absent bodies stay absent. The random draws happen in a
/// fixed order whether or not a step is active, so the result depends only on
/// the generator state.
pub fn augment<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    rng: &mut R,
    params: &AugmentParams,
) -> Result<SkeletonSequence> {
    let crop_len = params.crop_len.unwrap_or(seq.frames());
    if crop_len == 0 || crop_len > seq.frames() {
        return Err(Error::Argument(format!(
            "crop of {crop_len} frames from a {}-frame sequence",
            seq.frames()
        )));
    }
    let start = rng.random_range(0..=seq.frames() - crop_len);
    let max_rot = params.max_rot_deg.to_radians();
    let angles: [f64; 3] = std::array::from_fn(|_| rng.random_range(-max_rot..=max_rot));
    let shift: [f64; 3] = std::array::from_fn(|_| rng.random_range(-params.max_trans..=params.max_trans));

    let mut out = if crop_len == seq.frames() {
        seq.clone()
    } else {
        seq.frame_range(start, crop_len)?
    };
    let [c_n, t_n, n_n, m_n] = out.dims();
    if c_n != 3 {
        return Ok(out);
    }

    if params.max_rot_deg != 0.0 {
        let r = rotation(angles[0], angles[1], angles[2]);
        for t in 0..t_n {
            for n in 0..n_n {
                for m in 0..m_n {
                    let v = [out.get(0, t, n, m), out.get(1, t, n, m), out.get(2, t, n, m)];
                    for (c, row) in r.iter().enumerate() {
                        out.set(c, t, n, m, row[0] * v[0] + row[1] * v[1] + row[2] * v[2]);
                    }
                }
            }
        }
    }

    if params.max_trans != 0.0 {
        for m in 0..m_n {
            let present = (0..c_n).any(|c| (0..t_n).any(|t| (0..n_n).any(|n| out.get(c, t, n, m) != 0.0)));
            if !present {
                continue;
            }
            for (c, d) in shift.iter().enumerate() {
                for t in 0..t_n {
                    for n in 0..n_n {
                        let v = out.get(c, t, n, m);
                        out.set(c, t, n, m, v + d);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_seq(rng: &mut ChaCha8Rng) -> SkeletonSequence {
        let data = (0..3 * 6 * 4 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        SkeletonSequence::from_data("r", Some(0), [3, 6, 4, 2], data).unwrap()
    }

    #[test]
    fn null_augmentation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_seq(&mut rng);
        let out = augment(&s, &mut rng, &AugmentParams::none()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_seq(&mut rng);
        let p = AugmentParams {
            max_rot_deg: 45.0,
            max_trans: 0.0,
            crop_len: None,
        };
        let out = augment(&s, &mut rng, &p).unwrap();
        let dist = |q: &SkeletonSequence, t, a, b, m| {
            (0..3).map(|c| (q.get(c, t, a, m) - q.get(c, t, b, m)).powi(2)).sum::<f64>().sqrt()
        };
        for t in 0..6 {
            for m in 0..2 {
                for a in 0..4 {
                    for b in 0..4 {
                        assert!((dist(&s, t, a, b, m) - dist(&out, t, a, b, m)).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn translation_keeps_differences_and_absent_bodies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = random_seq(&mut rng);
        for c in 0..3 {
            for t in 0..6 {
                for n in 0..4 {
                    s.set(c, t, n, 1, 0.0);
                }
            }
        }
        let p = AugmentParams {
            max_rot_deg: 0.0,
            max_trans: 0.5,
            crop_len: None,
        };
        let out = augment(&s, &mut rng, &p).unwrap();
        for c in 0..3 {
            for t in 0..6 {
                assert_eq!(out.get(c, t, 3, 1), 0.0);
                let d0 = s.get(c, t, 1, 0) - s.get(c, t, 0, 0);
                let d1 = out.get(c, t, 1, 0) - out.get(c, t, 0, 0);
                assert!((d0 - d1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn crop_is_contiguous_and_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_seq(&mut rng);
        let p = AugmentParams {
            crop_len: Some(4),
            ..AugmentParams::none()
        };
        let out = augment(&s, &mut rng, &p).unwrap();
        assert_eq!(out.frames(), 4);
        let start = (0..=2).find(|&st| s.frame_range(st, 4).unwrap() == out).expect("window");
        assert!(start <= 2);
        let too_long = AugmentParams {
            crop_len: Some(7),
            ..AugmentParams::none()
        };
        assert!(augment(&s, &mut rng, &too_long).is_err());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let s = random_seq(&mut ChaCha8Rng::seed_from_u64(5));
        let p = AugmentParams {
            crop_len: Some(5),
            ..AugmentParams::default()
        };
        let a = augment(&s, &mut ChaCha8Rng::seed_from_u64(9), &p).unwrap();
        let b = augment(&s, &mut ChaCha8Rng::seed_from_u64(9), &p).unwrap();
        assert_eq!(a, b);
    }
}
