//! Reader for NTU RGB+D `.skeleton` text files.
//!
//! Layout: a frame count line; per frame a body count line; per body one info
//! line (body id plus nine tracking fields), a joint count line (`25`) and 25
//! joint lines of 12 numbers, of which the first three are x, y, z and the
//! last is the joint tracking state.

use super::SkeletonSequence;
use crate::error::{Error, Result};

const NTU_JOINTS: usize = 25;
const MAX_BODIES: usize = 2;

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        loop {
            match self.inner.next() {
                Some((i, l)) if l.trim().is_empty() => self.last = i + 1,
                Some((i, l)) => {
                    self.last = i + 1;
                    return Ok((i + 1, l));
                }
                None => {
                    return Err(Error::Parse {
                        line: self.last + 1,
                        msg: "unexpected end of file".into(),
                    })
                }
            }
        }
    }

    fn count(&mut self, what: &str) -> Result<(usize, usize)> {
        let (line, text) = self.next()?;
        let n = text.trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what}, found `{}`", text.trim()),
        })?;
        Ok((line, n))
    }
}

struct Body {
    joints: Vec<[f32; 3]>,
    confidence: f64,
}

fn parse_body(lines: &mut Lines<'_>) -> Result<Body> {
    let (info_line, info) = lines.next()?;
    if info.split_whitespace().count() < 10 {
        return Err(Error::Parse {
            line: info_line,
            msg: "body info line needs 10 fields".into(),
        });
    }
    let (count_line, n) = lines.count("joint count")?;
    if n != NTU_JOINTS {
        return Err(Error::Parse {
            line: count_line,
            msg: format!("expected {NTU_JOINTS} joints, found {n}"),
        });
    }
    let mut joints = Vec::with_capacity(NTU_JOINTS);
    let mut tracking = 0.0;
    for _ in 0..NTU_JOINTS {
        let (line, text) = lines.next()?;
        let fields = text
            .split_whitespace()
            .map(|f| f.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line,
                msg: format!("unparsable number: {e}"),
            })?;
        if fields.len() < 12 {
            return Err(Error::Parse {
                line,
                msg: format!("joint line needs 12 fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: "non-finite joint value".into(),
            });
        }
        joints.push([fields[0], fields[1], fields[2]]);
        tracking += f64::from(fields[11]);
    }
    Ok(Body {
        joints,
        confidence: tracking / NTU_JOINTS as f64,
    })
}

/// Parses one `.skeleton` file into a `[3, T, 25, 2]` sequence.
///
/// Frames with fewer than two bodies are zero-filled. Frames with more keep
/// the two bodies with the highest mean joint tracking state (ties resolved by
/// file order), in file order.
pub fn parse_ntu_skeleton(text: &str, id: &str) -> Result<SkeletonSequence> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (_, frames) = lines.count("frame count")?;
    if frames == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "sequence has no frames".into(),
        });
    }
    let mut seq = SkeletonSequence::zeros(id, 3, frames, NTU_JOINTS, MAX_BODIES);
    for t in 0..frames {
        let (_, n_bodies) = lines.count("body count")?;
        let mut bodies = (0..n_bodies)
            .map(|_| parse_body(&mut lines))
            .collect::<Result<Vec<_>>>()?;
        if bodies.len() > MAX_BODIES {
            let mut order: Vec<usize> = (0..bodies.len()).collect();
            order.sort_by(|&a, &b| bodies[b].confidence.total_cmp(&bodies[a].confidence).then(a.cmp(&b)));
            let mut keep: Vec<usize> = order[..MAX_BODIES].to_vec();
            keep.sort_unstable();
            let mut slots: Vec<Option<Body>> = bodies.into_iter().map(Some).collect();
            bodies = keep.into_iter().map(|i| slots[i].take().expect("kept once")).collect();
        }
        for (m, body) in bodies.iter().enumerate() {
            for (n, xyz) in body.joints.iter().enumerate() {
                for (c, v) in xyz.iter().enumerate() {
                    seq.set(c, t, n, m, f64::from(*v));
                }
            }
        }
    }
    Ok(seq)
}
