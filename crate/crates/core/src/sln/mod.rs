//! Joint-level adversarial predictor: encoder, temporal unit, recurrent decoder and critic.

pub mod model;
pub mod tiu;
pub mod train;

pub use model::{critic_loss, generator_loss, joint_loss, Critic, Ltf, Sln, SlnConfig, SlnVariant};
pub use tiu::{Tiu, TiuConfig};
pub use train::{critic_train_step, mean_mpjpe, predict_windows, sln_train, write_loss_curve, LossRecord, SlnTrainSettings, DIVERGENCE_LIMIT};
