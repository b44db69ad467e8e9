//! Multi-epoch training with per-epoch metrics and checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{checkpoint_save, CheckpointMeta};
use super::config::TrainConfig;
use super::engine::{evaluate_topk, train_epoch, EvalOptions};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::skeleton::{Dataset, StreamKind};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_PREFIX: &str = "model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_top1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_top5: Option<f64>,
}

/// Where a run writes and how it evaluates.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions<'a> {
    /// Receives `metrics.jsonl` and the `model` checkpoint after each epoch.
    pub out_dir: Option<&'a Path>,
    /// First epoch to run; earlier epochs are assumed done (resume).
    pub start_epoch: usize,
    pub eval: EvalOptions,
}

fn keep_earlier_metrics(path: &Path, start_epoch: usize) -> Result<String> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(String::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: EpochRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("{}: {e}", path.display()),
        })?;
        if rec.epoch < start_epoch {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    Ok(kept)
}

/// Trains from `opts.start_epoch` up to `cfg.total_epochs`, calling
/// `on_epoch` after each epoch.
pub fn run_training(
    model: &mut Model,
    train: &Dataset,
    eval: Option<&Dataset>,
    stream: StreamKind,
    cfg: &TrainConfig,
    opts: RunOptions<'_>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    model.config.validate()?;
    if opts.start_epoch > cfg.total_epochs {
        return Err(Error::Argument(format!(
            "resume epoch {} is past total_epochs {}",
            opts.start_epoch, cfg.total_epochs
        )));
    }
    let mut metrics = None;
    if let Some(dir) = opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let kept = keep_earlier_metrics(&path, opts.start_epoch)?;
        fs::write(&path, kept).map_err(|e| Error::io(&path, e))?;
        let file = fs::OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        metrics = Some((path, file));
    }
    let top5 = 5.min(model.config.num_classes);
    let mut records = Vec::new();
    for epoch in opts.start_epoch..cfg.total_epochs {
        let stats = train_epoch(model, train, stream, cfg, epoch)?;
        let mut record = EpochRecord {
            epoch,
            lr: stats.lr,
            mean_loss: stats.mean_loss,
            train_top1: stats.train_top1,
            eval_top1: None,
            eval_top5: None,
        };
        if let Some(ds) = eval.filter(|_| cfg.eval_every_epoch || epoch + 1 == cfg.total_epochs) {
            let r = evaluate_topk(model, ds, stream, &[1, top5], opts.eval)?;
            record.eval_top1 = r.accuracy(1);
            record.eval_top5 = r.accuracy(top5);
        }
        if let (Some(dir), Some((path, file))) = (opts.out_dir, metrics.as_mut()) {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(file, "{line}").map_err(|e| Error::io(&*path, e))?;
            let meta = CheckpointMeta {
                epoch: epoch + 1,
                stream: Some(stream),
                train: Some(cfg.clone()),
            };
            checkpoint_save(model, &meta, &dir.join(CHECKPOINT_PREFIX))?;
        }
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}
