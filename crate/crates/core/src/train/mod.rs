//! Mixed-dataset optimization, evaluation, persistence and the depth
//! ablation harness.

mod ablation;
mod adam;
pub mod checkpoint;
mod config;
mod model;
mod trainer;

pub use ablation::{ablate_depth, AblationRow, AblationTable};
pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{checkpoint_load, checkpoint_save, RawCheckpoint};
pub use config::{widths_for_depth, RunConfigFile, TrainConfig};
pub use model::QualityModel;
pub use trainer::{
    batch_gradients, evaluate, evaluate_in, load_dataset_dirs, load_training_data, run_splits,
    train, train_in, EvalMode, LogRecord, ModelGrads, SplitRuns, TrainOutcome,
};
