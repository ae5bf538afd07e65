pub mod assign;
pub mod loss;
pub mod objective;
pub mod optim;
pub mod trainer;

pub use assign::{assign_targets, Assignment, FrameAction, LevelAssignment};
pub use objective::{loss_graph, total_loss, LossBreakdown, LossNodes};
pub use optim::{clip_grad_norm, optimizer_step, OptimizerState, Schedule};
pub use trainer::{train, EpochMetrics, TrainOptions, TrainOutcome};
