//! Hard-joint selection from validation errors and a dedicated network retrained on them.

pub mod dtc;
pub mod map;

pub use dtc::{dln_train, dtc_tcn_config, DlnRecord, DlnTrainSettings, Dtc};
pub use map::{default_hard_count, errors_from_predictions, fuse_predictions, memorize_errors, rank_joints, DeliberateMap};
