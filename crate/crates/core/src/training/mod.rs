//! Learning rules as surrogate losses, the optimizer and the training loop.

mod baseline;
mod losses;
mod mc;
mod optim;
mod trainer;

pub use baseline::{BaselineState, Baselines};
pub use losses::{
    loss_base, loss_contrastive, loss_per_feature, surrogate_base, surrogate_per_feature, LossWeights, RewardRecord,
};
pub use mc::{mc_enumerate, mc_gradient_check, ordered_selections, toy_problem, McReport};
pub use optim::{Adam, AdamConfig, LrDecay};
pub use trainer::{StepMetrics, TrainConfig, Trainer};
