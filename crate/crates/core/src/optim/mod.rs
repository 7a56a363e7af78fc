//! Toy encoders and their optimizer: hashed text features, linear bi-encoders,
//! AdamW, cosine annealing with warm restarts, and the training loops.

mod adamw;
mod checkpoint;
mod encoder;
mod features;
mod schedule;
mod train;

pub use adamw::{adamw_step, AdamWState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use encoder::{Encoded, Input, LinearStack, ModelConfig, ModelGrads, ToyModel, ToyTextEncoder, ToyVisualEncoder};
pub use features::{featurize_text, SparseVec, TextFeaturizer};
pub use schedule::{cosine_warm_restarts_lr, SchedulerConfig};
pub use train::{
    clip_batch_loss_and_grad, embed_pooled, pretrain_toy, supcon_batch_loss_and_grad, train_supervised_toy,
    LabeledViews, PlanSchedule, TraceRow, TrainTrace, View,
};
