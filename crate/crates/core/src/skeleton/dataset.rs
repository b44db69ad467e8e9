//! Dataset directories: `manifest.json` plus one `SKL1` binary per sample.
//!
//! A sample file is the magic `SKL1`, then C, T, N, M as little-endian
//! `u32`, then C·T·N·M little-endian `f32` values in `[C][T][N][M]` order.
//! The manifest records a SHA-256 of every sample file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SkeletonSequence, SkeletonTopology};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SKL1";
const HEADER_LEN: usize = 4 + 4 * 4;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SkeletonSequence>,
    pub topology: SkeletonTopology,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub label: Option<usize>,
    pub file: String,
    pub channels: usize,
    pub frames: usize,
    pub joints: usize,
    pub bodies: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub topology: SkeletonTopology,
    pub class_names: Vec<String>,
    pub samples: Vec<SampleEntry>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        let mut ids = std::collections::BTreeSet::new();
        let shape = self.samples.first().map(|s| (s.channels(), s.joints()));
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Format(format!("duplicate sample id `{}`", s.id)));
            }
            if let Some(l) = s.label {
                if l >= self.class_names.len() {
                    return Err(Error::Format(format!(
                        "sample `{}` has label {l} but only {} classes",
                        s.id,
                        self.class_names.len()
                    )));
                }
            }
            if Some((s.channels(), s.joints())) != shape {
                return Err(Error::Format(format!(
                    "sample `{}` has {} channels and {} joints, unlike the first sample",
                    s.id,
                    s.channels(),
                    s.joints()
                )));
            }
            if s.joints() != self.topology.num_joints {
                return Err(Error::Format(format!(
                    "sample `{}` has {} joints but topology `{}` has {}",
                    s.id,
                    s.joints(),
                    self.topology.name,
                    self.topology.num_joints
                )));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::Argument(format!("sample `{}` has no label", s.id)))
            })
            .collect()
    }

    pub fn find(&self, id: &str) -> Option<&SkeletonSequence> {
        self.samples.iter().find(|s| s.id == id)
    }
}

fn encode(seq: &SkeletonSequence) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * seq.data().len());
    bytes.extend_from_slice(MAGIC);
    for d in seq.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    for &v in seq.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(bytes)
}

fn decode(bytes: &[u8], entry: &SampleEntry) -> Result<SkeletonSequence> {
    let fail = |msg: String| Error::Format(format!("{}: {msg}", entry.file));
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[..4])));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let raw: [u8; 4] = bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes");
        *d = u32::from_le_bytes(raw) as usize;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(format!("dimensions {dims:?} overflow")))?;
    if bytes.len() - HEADER_LEN != count {
        return Err(fail(format!(
            "dimensions {dims:?} need {count} data bytes, file has {}",
            bytes.len() - HEADER_LEN
        )));
    }
    let expected = [entry.channels, entry.frames, entry.joints, entry.bodies];
    if dims != expected {
        return Err(fail(format!("header dimensions {dims:?} differ from manifest {expected:?}")));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    SkeletonSequence::from_data(entry.id.clone(), entry.label, dims, data).map_err(|e| fail(e.to_string()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dataset_write(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(ds.samples.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let file = format!("{i:06}.skl");
        let bytes = encode(s)?;
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        let [channels, frames, joints, bodies] = s.dims();
        entries.push(SampleEntry {
            id: s.id.clone(),
            label: s.label,
            file,
            channels,
            frames,
            joints,
            bodies,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        topology: ds.topology.clone(),
        class_names: ds.class_names.clone(),
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn dataset_read(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        if entry.file.contains(['/', '\\']) || entry.file.starts_with('.') {
            return Err(Error::Format(format!("sample file `{}` must be a plain file name", entry.file)));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Format(format!("{}: checksum mismatch", entry.file)));
        }
        samples.push(decode(&bytes, entry)?);
    }
    let ds = Dataset {
        samples,
        topology: manifest.topology,
        class_names: manifest.class_names,
    };
    ds.validate().map_err(|e| match e {
        Error::Topology(m) => Error::Format(m),
        other => other,
    })?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{synth_generate, SynthSpec};

    fn small() -> Dataset {
        synth_generate(
            &SynthSpec {
                per_class: 2,
                frames: 5,
                ..SynthSpec::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        dataset_write(&ds, dir.path()).unwrap();
        assert_eq!(dataset_read(dir.path()).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset {
            samples: vec![],
            ..small()
        };
        dataset_write(&ds, dir.path()).unwrap();
        let back = dataset_read(dir.path()).unwrap();
        assert!(back.samples.is_empty());
        assert_eq!(back.class_names, ds.class_names);
    }

    #[test]
    fn corrupted_header_is_a_format_error() {
        let ds = small();
        for byte in 0..HEADER_LEN {
            let dir = tempfile::tempdir().unwrap();
            dataset_write(&ds, dir.path()).unwrap();
            let file = dir.path().join("000000.skl");
            let mut bytes = fs::read(&file).unwrap();
            bytes[byte] ^= 0x5a;
            fs::write(&file, &bytes).unwrap();
            assert!(matches!(dataset_read(dir.path()), Err(Error::Format(_))), "byte {byte}");
        }
    }

    #[test]
    fn decode_checks_magic_and_overflow_before_checksum() {
        let entry = SampleEntry {
            id: "x".into(),
            label: None,
            file: "x.skl".into(),
            channels: 1,
            frames: 1,
            joints: 1,
            bodies: 1,
            sha256: String::new(),
        };
        let mut bytes = b"SKL2".to_vec();
        bytes.extend([1, 0, 0, 0].repeat(4));
        bytes.extend(0f32.to_le_bytes());
        assert!(decode(&bytes, &entry).unwrap_err().to_string().contains("magic"));
        let mut huge = b"SKL1".to_vec();
        huge.extend([0xff, 0xff, 0xff, 0xff].repeat(4));
        assert!(decode(&huge, &entry).unwrap_err().to_string().contains("overflow"));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(dataset_read(dir.path()), Err(Error::Io { .. })));
    }
}
