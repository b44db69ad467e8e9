//! Optimization, evaluation, score fusion and persistence.

mod checkpoint;
mod config;
mod engine;
mod gradcheck;
mod optim;
mod run;
mod scores;

pub use checkpoint::{checkpoint_load, checkpoint_paths, checkpoint_save, Checkpoint, CheckpointMeta};
pub use config::{lr_at_epoch, TrainConfig};
pub use engine::{
    check_compatible, evaluate_topk, prepare_eval_sample, prepare_train_sample, sample_rng, shuffle_rng,
    train_epoch, EpochStats, EvalOptions, EvalResult,
};
pub use gradcheck::{
    grad_check_components, grad_check_components_with_eps, grad_check_model, grad_check_suite, ComponentDims, GradCheckReport, ParamCheck, GRADCHECK_EPS,
};
pub use optim::{sgd_nesterov_step, SgdParams};
pub use run::{run_training, EpochRecord, RunOptions, CHECKPOINT_PREFIX, METRICS_FILE};
pub use scores::{argmax, ensemble_fuse, rank_of, softmax_row, ScoreSet};
