//! Losses, the stage schedule, the answer head, the full model with its
//! backward pass, and the staged training driver.

pub mod checkpoint;
pub mod head;
pub mod losses;
pub mod model;
pub mod plan;
pub mod schedule;
pub mod train;

pub use checkpoint::Checkpoint;
pub use losses::{cross_entropy, dice_loss, focal_loss, FocalConfig};
pub use model::{predict, EncodedSample, ModelConfig, ModelParams, Prediction, PromptContext};
pub use plan::{total_loss, ParamGroup, StagePlan};
pub use schedule::lr_at;
pub use train::{train, train_stage, LogRow, TrainOutcome};
