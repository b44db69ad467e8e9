use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample class probabilities from one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSet {
    pub stream: String,
    pub scores: BTreeMap<String, Vec<f64>>,
    /// Ground truth where known, so fused sets can be scored on their own.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, usize>,
}

impl ScoreSet {
    pub fn num_classes(&self) -> Option<usize> {
        self.scores.values().next().map(Vec::len)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("scores serialize");
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: Self =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let n = set.num_classes().unwrap_or(0);
        if let Some((id, _)) = set.scores.iter().find(|(_, v)| v.len() != n) {
            return Err(Error::Format(format!("{}: sample `{id}` has a different class count", path.display())));
        }
        Ok(set)
    }

    /// Top-k accuracy over the labelled samples.
    pub fn accuracy(&self, k: usize) -> Result<f64> {
        if self.labels.is_empty() {
            return Err(Error::Argument(format!("score set `{}` carries no labels", self.stream)));
        }
        let mut hits = 0usize;
        for (id, &label) in &self.labels {
            let probs = self
                .scores
                .get(id)
                .ok_or_else(|| Error::Argument(format!("no scores for labelled sample `{id}`")))?;
            if label >= probs.len() {
                return Err(Error::Argument(format!("label {label} of `{id}` exceeds {} classes", probs.len())));
            }
            hits += usize::from(rank_of(probs, label) < k);
        }
        Ok(hits as f64 / self.labels.len() as f64)
    }
}

/// Position of `class` when classes are sorted by decreasing score, ties
/// going to the lower class index.
pub fn rank_of(scores: &[f64], class: usize) -> usize {
    let s = scores[class];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < class))
        .count()
}

/// Highest-scoring class, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    (0..scores.len()).find(|&c| rank_of(scores, c) == 0).unwrap_or(0)
}

/// Numerically stable softmax of one logit row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Weighted sum of per-stream scores, renormalized to sum to one per sample.
/// Weights default to one per stream.
pub fn ensemble_fuse(sets: &[ScoreSet], weights: Option<&[f64]>) -> Result<ScoreSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Argument("nothing to fuse".into()))?;
    let ones = vec![1.0; sets.len()];
    let weights = weights.unwrap_or(&ones);
    if weights.len() != sets.len() {
        return Err(Error::Argument(format!(
            "{} weights for {} score sets",
            weights.len(),
            sets.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Argument(format!("weights {weights:?} must be non-negative and not all zero")));
    }
    for s in &sets[1..] {
        if !s.scores.keys().eq(first.scores.keys()) {
            return Err(Error::Argument(format!(
                "score sets `{}` and `{}` cover different samples",
                first.stream, s.stream
            )));
        }
    }
    let mut scores = BTreeMap::new();
    for id in first.scores.keys() {
        let n = first.scores[id].len();
        let mut fused = vec![0.0; n];
        for (s, &w) in sets.iter().zip(weights) {
            let v = &s.scores[id];
            if v.len() != n {
                return Err(Error::Argument(format!("sample `{id}` has differing class counts")));
            }
            fused.iter_mut().zip(v).for_each(|(f, x)| *f += w * x);
        }
        let z: f64 = fused.iter().sum();
        if z > 0.0 {
            fused.iter_mut().for_each(|f| *f /= z);
        }
        scores.insert(id.clone(), fused);
    }
    let mut labels = BTreeMap::new();
    for s in sets {
        for (id, &l) in &s.labels {
            if let Some(prev) = labels.insert(id.clone(), l) {
                if prev != l {
                    return Err(Error::Argument(format!("sample `{id}` is labelled {prev} and {l}")));
                }
            }
        }
    }
    Ok(ScoreSet {
        stream: sets.iter().map(|s| s.stream.as_str()).collect::<Vec<_>>().join("+"),
        scores,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(stream: &str, rows: &[(&str, Vec<f64>, usize)]) -> ScoreSet {
        ScoreSet {
            stream: stream.into(),
            scores: rows.iter().map(|(id, v, _)| (id.to_string(), v.clone())).collect(),
            labels: rows.iter().map(|(id, _, l)| (id.to_string(), *l)).collect(),
        }
    }

    #[test]
    fn fuse_example() {
        let a = set("a", &[("x", vec![0.6, 0.4], 1)]);
        let b = set("b", &[("x", vec![0.3, 0.7], 1)]);
        let f = ensemble_fuse(&[a, b], None).unwrap();
        let v = &f.scores["x"];
        assert!((v[0] - 0.45).abs() < 1e-15 && (v[1] - 0.55).abs() < 1e-15);
        assert_eq!(argmax(v), 1);
        assert_eq!(f.stream, "a+b");
    }

    #[test]
    fn singleton_and_duplicate_fusion_keep_argmax() {
        let a = set("a", &[("x", vec![0.2, 0.5, 0.3], 0), ("y", vec![0.7, 0.1, 0.2], 0)]);
        let one = ensemble_fuse(std::slice::from_ref(&a), None).unwrap();
        for (id, v) in &a.scores {
            assert!(one.scores[id].iter().zip(v).all(|(p, q)| (p - q).abs() < 1e-15));
        }
        let two = ensemble_fuse(&[a.clone(), a.clone()], Some(&[1.0, 3.0])).unwrap();
        for (id, v) in &a.scores {
            assert_eq!(argmax(&two.scores[id]), argmax(v));
        }
    }

    #[test]
    fn mismatched_ids_are_rejected() {
        let a = set("a", &[("x", vec![0.5, 0.5], 0)]);
        let b = set("b", &[("y", vec![0.5, 0.5], 0)]);
        assert!(matches!(ensemble_fuse(&[a, b], None), Err(Error::Argument(_))));
    }

    #[test]
    fn uniform_predictor_ties_go_to_class_zero() {
        let rows: Vec<(String, Vec<f64>, usize)> = (0..8).map(|i| (format!("s{i}"), vec![0.25; 4], (i * 3) % 4)).collect();
        let rows: Vec<(&str, Vec<f64>, usize)> = rows.iter().map(|(a, b, c)| (a.as_str(), b.clone(), *c)).collect();
        let s = set("u", &rows);
        assert_eq!(s.accuracy(1).unwrap(), 0.25);
        assert_eq!(s.accuracy(2).unwrap(), 0.5);
        assert_eq!(s.accuracy(4).unwrap(), 1.0);
    }

    #[test]
    fn ranks_and_softmax() {
        assert_eq!(rank_of(&[0.1, 0.5, 0.5], 2), 1);
        assert_eq!(rank_of(&[0.1, 0.5, 0.5], 1), 0);
        let p = softmax_row(&[1000.0, 0.0]);
        assert!(p[0] == 1.0 && p[1] >= 0.0);
        let q = softmax_row(&[1.0, 2.0, 3.0]);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let a = set("joint", &[("x", vec![0.25, 0.75], 1)]);
        let path = dir.path().join("scores_joint.json");
        a.save(&path).unwrap();
        assert_eq!(ScoreSet::load(&path).unwrap(), a);
        assert!(matches!(ScoreSet::load(&dir.path().join("nope.json")), Err(Error::Io { .. })));
    }
}
