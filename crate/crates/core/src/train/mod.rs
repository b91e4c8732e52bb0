//! Losses, the assembled pipeline, joint training, checkpoints and
//! held-out evaluation.

mod checkpoint;
mod desk;
mod eval;
mod loss;
mod pipeline;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, PipelineCheckpoint, FORMAT_NAME, FORMAT_VERSION};
pub use desk::{
    desk_model, desk_train, DeskVariant, DESK_HELDOUT_IMAGES, DESK_IMAGE_SIZE, DESK_ITERATIONS, DESK_TRAIN_IMAGES,
};
pub use eval::{evaluate, evaluate_one, score, AttackKind, EvalConfig, EvalSample};
pub use loss::{
    image_loss, loss_e, loss_e_tensor, loss_total, loss_total_tensor, loss_w, loss_w_tensor, mse, LossComponents,
    LossWeights, PerceptualLoss, COMPONENT_NAMES,
};
pub use pipeline::{Embedded, ModelConfig, Pipeline, Recovered, Recovery};
pub use trainer::{sample_rng, LogRecord, TrainConfig, Trainer};
