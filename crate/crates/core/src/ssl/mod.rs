//! Self-distillation finetuning: loss, views, positive pairs, the epoch loop
//! and the iterate-train/filter/match pipeline.

pub mod loss;
pub mod pairs;
pub mod pipeline;
pub mod train;
pub mod views;

pub use loss::{ssl_loss, update_center};
pub use pairs::{sample_pairs, MatchTable, Pair};
pub use pipeline::{run_pipeline, IterationSummary, PipelineOutput};
pub use train::{pair_loss, pair_loss_grad, train_iteration, EpochLog};
pub use views::{make_views, AugmentConfig, ViewGroups};
