//! Sample preparation, the training epoch and top-k evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{lr_at_epoch, TrainConfig};
use super::optim::{sgd_nesterov_step, SgdParams};
use super::scores::{argmax, softmax_row, ScoreSet};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{apply_bn_updates, Ctx, LearnedGraphInit, Mode, Model};
use crate::param::Binding;
use crate::skeleton::{
    augment, center_crop, derive_stream, pad_repeat, AugmentParams, Dataset, SkeletonSequence, SkeletonTopology,
    StreamKind,
};
use crate::tensor::Tensor;

/// Generator for the shuffle of `epoch`.
pub fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((epoch as u64) << 32);
    rng
}

/// Generator for the augmentation of dataset sample `index` in `epoch`.
pub fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | (index as u64 + 1));
    rng
}

/// Derive the stream, tile to `window` frames, then crop/rotate/translate.
/// Translation is applied to the joint stream only: bone and motion streams
/// are translation invariant and length streams are not spatial.
pub fn prepare_train_sample(
    seq: &SkeletonSequence,
    topo: &SkeletonTopology,
    stream: StreamKind,
    window: usize,
    aug: &AugmentParams,
    rng: &mut ChaCha8Rng,
) -> Result<SkeletonSequence> {
    let padded = pad_repeat(&derive_stream(seq, topo, stream)?, window)?;
    let params = AugmentParams {
        max_rot_deg: aug.max_rot_deg,
        max_trans: if stream.translation_sensitive() { aug.max_trans } else { 0.0 },
        crop_len: Some(window),
    };
    augment(&padded, rng, &params)
}

/// Derive the stream, tile to `window` frames and take the centered window.
pub fn prepare_eval_sample(
    seq: &SkeletonSequence,
    topo: &SkeletonTopology,
    stream: StreamKind,
    window: usize,
) -> Result<SkeletonSequence> {
    center_crop(&pad_repeat(&derive_stream(seq, topo, stream)?, window)?, window)
}

/// Checks that the model can consume `stream` derived from `ds`.
pub fn check_compatible(model: &Model, ds: &Dataset, stream: StreamKind) -> Result<()> {
    let Some(first) = ds.samples.first() else {
        return Err(Error::Argument("dataset is empty".into()));
    };
    let cfg = &model.config;
    let channels = stream.channels(first.channels());
    if channels != cfg.in_channels {
        return Err(Error::Config(format!(
            "stream `{stream}` has {channels} channels but the model expects in_channels = {}",
            cfg.in_channels
        )));
    }
    if first.bodies() != cfg.bodies {
        return Err(Error::Config(format!(
            "dataset has {} bodies but the model expects bodies = {}",
            first.bodies(),
            cfg.bodies
        )));
    }
    if ds.topology.num_joints != model.topology.num_joints {
        return Err(Error::Config(format!(
            "dataset topology `{}` has {} joints, model topology `{}` has {}",
            ds.topology.name, ds.topology.num_joints, model.topology.name, model.topology.num_joints
        )));
    }
    if ds.num_classes() > cfg.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model has num_classes = {}",
            ds.num_classes(),
            cfg.num_classes
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub lr: f64,
    pub mean_loss: f64,
    pub train_top1: f64,
    pub batch_losses: Vec<f64>,
}

/// One pass over `ds` in a (seed, epoch)-determined order.
pub fn train_epoch(
    model: &mut Model,
    ds: &Dataset,
    stream: StreamKind,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    cfg.validate()?;
    check_compatible(model, ds, stream)?;
    let labels = ds.labels()?;
    if model.config.learned_graph_init == LearnedGraphInit::CopyFixed {
        let frozen = epoch < model.config.freeze_epochs;
        model.set_learned_graphs_frozen(frozen);
    }
    let lr = lr_at_epoch(cfg, epoch);
    let sgd = SgdParams {
        lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        exempt_norm_and_gates: cfg.exempt_norm_and_gates,
    };
    let mut order: Vec<usize> = (0..ds.samples.len()).collect();
    order.shuffle(&mut shuffle_rng(cfg.seed, epoch));

    let mut batch_losses = Vec::new();
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for chunk in order.chunks(cfg.batch_size) {
        let prepared = chunk
            .iter()
            .map(|&i| {
                let mut rng = sample_rng(cfg.seed, epoch, i);
                prepare_train_sample(
                    &ds.samples[i],
                    &ds.topology,
                    stream,
                    model.config.window,
                    &cfg.augment,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let x = Model::stack(&prepared.iter().collect::<Vec<_>>())?;
        let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

        let tape = Tape::new();
        let bind = Binding::new(&tape, &model.store);
        let (loss, logits, grads, updates) = {
            let ctx = Ctx::new(&bind, &model.store, Mode::Train);
            let logits = model.forward(&ctx, tape.constant(x))?;
            let loss = logits.cross_entropy(&batch_labels)?;
            let grads = tape.backward(loss)?;
            (loss.item(), logits.value(), grads, ctx.take_bn_updates())
        };
        if !loss.is_finite() {
            return Err(Error::Argument(format!("training diverged: loss {loss} at epoch {epoch}")));
        }
        bind.write_grads(&mut model.store, &grads);
        apply_bn_updates(&mut model.store, &updates, model.config.bn_momentum);
        sgd_nesterov_step(&mut model.store, sgd);

        let classes = logits.shape()[1];
        for (row, &l) in logits.data().chunks(classes).zip(&batch_labels) {
            correct += usize::from(argmax(row) == l);
        }
        loss_sum += loss * chunk.len() as f64;
        batch_losses.push(loss);
    }
    let n = ds.samples.len() as f64;
    Ok(EpochStats {
        lr,
        mean_loss: loss_sum / n,
        train_top1: correct as f64 / n,
        batch_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub batch_size: usize,
    /// Worker threads; samples are independent in eval mode, so the result
    /// does not depend on this.
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// `(k, accuracy)` for every requested `k`; empty for unlabelled data.
    pub topk: Vec<(usize, f64)>,
    pub scores: ScoreSet,
}

impl EvalResult {
    pub fn accuracy(&self, k: usize) -> Option<f64> {
        self.topk.iter().find(|(kk, _)| *kk == k).map(|(_, a)| *a)
    }
}

fn eval_chunk(model: &Model, ds: &Dataset, stream: StreamKind, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
    let prepared = idx
        .iter()
        .map(|&i| prepare_eval_sample(&ds.samples[i], &ds.topology, stream, model.config.window))
        .collect::<Result<Vec<_>>>()?;
    let logits: Tensor = model.logits(&Model::stack(&prepared.iter().collect::<Vec<_>>())?)?;
    let classes = logits.shape()[1];
    Ok(logits.data().chunks(classes).map(softmax_row).collect())
}

/// Eval-mode scores for every sample and top-k accuracy for each `k`.
pub fn evaluate_topk(
    model: &Model,
    ds: &Dataset,
    stream: StreamKind,
    ks: &[usize],
    opts: EvalOptions,
) -> Result<EvalResult> {
    check_compatible(model, ds, stream)?;
    if ks.contains(&0) {
        return Err(Error::Argument("top-k needs k >= 1".into()));
    }
    let order: Vec<usize> = (0..ds.samples.len()).collect();
    let chunks: Vec<&[usize]> = order.chunks(opts.batch_size.max(1)).collect();
    let threads = opts.threads.clamp(1, chunks.len());
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(order.len());
    if threads == 1 {
        for c in &chunks {
            probs.extend(eval_chunk(model, ds, stream, c)?);
        }
    } else {
        let per = chunks.len().div_ceil(threads);
        let results = std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .chunks(per)
                .map(|group| {
                    s.spawn(move || {
                        let mut out = Vec::new();
                        for c in group {
                            out.extend(eval_chunk(model, ds, stream, c)?);
                        }
                        Ok::<_, Error>(out)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect::<Vec<_>>()
        });
        for r in results {
            probs.extend(r?);
        }
    }
    let mut scores = ScoreSet {
        stream: stream.name().to_string(),
        scores: Default::default(),
        labels: Default::default(),
    };
    for (s, p) in ds.samples.iter().zip(probs) {
        if let Some(l) = s.label {
            scores.labels.insert(s.id.clone(), l);
        }
        if scores.scores.insert(s.id.clone(), p).is_some() {
            return Err(Error::Argument(format!("duplicate sample id `{}`", s.id)));
        }
    }
    let topk = if scores.labels.is_empty() {
        Vec::new()
    } else {
        ks.iter().map(|&k| Ok((k, scores.accuracy(k)?))).collect::<Result<_>>()?
    };
    Ok(EvalResult { topk, scores })
}
