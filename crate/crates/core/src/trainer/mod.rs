//! Two-phase training: adversarial translation with supervised depth, then
//! alternating supervised and self-supervised depth and pose updates.

mod config;
mod optim;
mod train;

pub use config::{is_supervised_step, Regimen, TrainConfig};
pub use optim::{adam_step, AdamHyper, AdamState};
pub use train::{
    probe_task_loss, train_phase1, train_phase2, write_log, LogRow, StepKind, TrainData, TrainOutcome, LOG_COLUMNS,
};
