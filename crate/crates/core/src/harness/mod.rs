//! Training, evaluation and synthetic data.

mod checks;
mod config;
mod optim;
mod synth;
mod train;

pub use checks::{
    calibrate, check_store, check_target, gradient_suite, CheckTarget, TargetReport, GRAD_STEP, GRAD_TOLERANCE,
};
pub use config::{lr_at, LrSchedule, Precision, RunConfig, TrainConfig};
pub use optim::{cross_entropy, sgd_update, Sgd};
pub use synth::{generate_synthetic, synthesize, window_recall, Signature, SyntheticSpec};
pub use train::{
    accuracy_from_logits, evaluate, in_top_k, load_dataset, predict_all, train, train_step, Control, Dataset, EpochLog,
    Evaluation, TrainOutcome,
};
