//! Skeletons, motion sequences, windowing, the synthetic corpus and MPJPE.

pub mod metrics;
pub mod sequence;
pub mod skeleton;
pub mod split;
pub mod synth;
pub mod windows;

pub use metrics::{horizon_frames, mpjpe, per_joint_error, zero_velocity_baseline};
pub use sequence::{downsample, load_csv, load_csv_full, parse_csv, save_csv, write_csv, CsvMotion, MotionSequence};
pub use skeleton::SkeletonSpec;
pub use split::Split;
pub use synth::{synth_corpus, SynthConfig};
pub use windows::{make_windows, stack_batch, unstack_item, WindowPair};
