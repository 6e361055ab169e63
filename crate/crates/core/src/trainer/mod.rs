//! Optimisation loop, deterministic data pipeline, checkpoints and
//! evaluation over manifest splits.

mod adam;
mod checkpoint;
mod config;
mod data;
mod eval;
mod run;

pub use adam::Adam;
pub use checkpoint::{
    load_model, read_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, TensorEntry, TrainingSnapshot,
    CHECKPOINT_SCHEMA,
};
pub use config::{lr_schedule, TrainConfig};
pub use data::{Batch, Redraw, TrainData};
pub use eval::{
    evaluate, EvalFailure, EvalItem, EvalOptions, EvalReport, GroupSummary, IdentityRestorer, Restorer, Stat,
};
pub use run::{JsonlWriter, StepLog, Trainer};
