//! Optimisation: Adam, the plateau schedule, the warmup-then-adversarial
//! loop, checkpoints and the three-variant ablation.

mod ablation;
mod adam;
mod checkpoint;
mod config;
mod schedule;
mod trainer;

pub use ablation::{run_ablation, score_predictions, AblationReport, AblationRow};
pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{TrainConfig, Variant};
pub use schedule::{improved, plateau_update, PlateauConfig, LR_FLOOR};
pub use trainer::{discriminator_step, EpochSummary, StepRecord, Trainer};
