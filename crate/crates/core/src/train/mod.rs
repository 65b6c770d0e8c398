//! Optimisation loop: Adam with a step learning-rate decay, checkpointing
//! and the module ablation matrix.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod optimizer;
pub mod run;
pub mod step;

pub use ablation::{run_ablation_matrix, AblationRow};
pub use checkpoint::{checkpoint_dtype, Checkpoint, CHECKPOINT_SCHEMA};
pub use config::{lr_schedule, Precision, TrainConfig};
pub use optimizer::{AdamHyper, AdamState};
pub use run::{
    batch_rng, initial_checkpoint, prepare_batch, run_training, LossRow, TrainOutcome, LATEST_CHECKPOINT, LOSS_CSV,
    LOSS_CSV_HEADER,
};
pub use step::{batch_gradients, train_step, StepInput};
